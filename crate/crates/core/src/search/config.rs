use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{SigmaSchedule, StepSchedule};
use crate::verifiers::{Verifier, VerifierConfig};

/// Search hyperparameters, read from JSON with the keys
/// `K, N, M, S, T, sigma_schedule, intervention_times, keep_parents,
/// mutate_fraction, verifiers, blind`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TtsConfig {
    /// Intervention rounds.
    #[serde(rename = "K")]
    pub k: usize,
    /// Candidates per round, parents included.
    #[serde(rename = "N")]
    pub n: usize,
    /// Survivors per round.
    #[serde(rename = "M")]
    pub m: usize,
    /// ODE steps in each candidate rollout.
    #[serde(rename = "S")]
    pub s: usize,
    /// Base step count of the uniform schedule.
    #[serde(rename = "T")]
    pub t: usize,
    pub sigma_schedule: SigmaSchedule,
    /// Explicit grid times; defaults to `K` times spread over `(0.15, 0.95]`.
    pub intervention_times: Option<Vec<f64>>,
    pub keep_parents: bool,
    /// Fraction of non-parent candidates that receive noise; the rest are copies.
    pub mutate_fraction: f64,
    pub verifiers: Vec<Verifier>,
    pub blind: bool,
}

impl Default for TtsConfig {
    fn default() -> Self {
        Self {
            k: 4,
            n: 7,
            m: 2,
            s: 5,
            t: 50,
            sigma_schedule: SigmaSchedule::Linear { start: 0.3, end: 0.1 },
            intervention_times: None,
            keep_parents: true,
            mutate_fraction: 1.0,
            verifiers: Verifier::ALL.to_vec(),
            blind: true,
        }
    }
}

impl TtsConfig {
    /// Plain ODE sampling expressed as a zero-round search.
    pub fn no_search() -> Self {
        Self {
            k: 0,
            n: 2,
            m: 1,
            ..Self::default()
        }
    }

    pub fn ladder_point(k: usize, n: usize) -> Self {
        Self {
            k,
            n,
            ..Self::default()
        }
    }

    pub fn label(&self) -> String {
        if self.k == 0 {
            "no_tts".to_string()
        } else {
            format!("tts_K{}_N{}", self.k, self.n)
        }
    }

    pub fn verifier_config(&self) -> Result<VerifierConfig> {
        VerifierConfig::new(self.verifiers.clone(), self.blind)
    }

    pub fn schedule(&self) -> Result<StepSchedule> {
        StepSchedule::uniform(self.t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m < 1 || self.m >= self.n {
            return Err(Error::InvalidConfig(format!(
                "need 1 <= M < N, got M={} N={}",
                self.m, self.n
            )));
        }
        if !(0.0..=1.0).contains(&self.mutate_fraction) {
            return Err(Error::InvalidConfig("mutate_fraction must lie in [0, 1]".into()));
        }
        self.sigma_schedule.validate()?;
        self.verifier_config()?;
        let schedule = self.schedule()?;
        let idx = resolve_interventions(self.k, self.intervention_times.as_deref(), &schedule)?;
        if let Some(&last) = idx.last() {
            if last + self.s > schedule.steps() {
                return Err(Error::InvalidConfig(format!(
                    "rollout of {} steps from t={} passes t=0",
                    self.s,
                    schedule.times()[last]
                )));
            }
        }
        Ok(())
    }

    /// Grid indices of the intervention times.
    pub fn intervention_indices(&self) -> Result<Vec<usize>> {
        resolve_interventions(self.k, self.intervention_times.as_deref(), &self.schedule()?)
    }
}

/// Grid indices for `k` intervention times.
///
/// Explicit times must sit on the grid, decrease strictly and stay above 0.
/// Without them, `t_j = 0.95 - j * 0.8 / k` is snapped to the nearest grid time.
pub fn resolve_interventions(
    k: usize,
    explicit: Option<&[f64]>,
    schedule: &StepSchedule,
) -> Result<Vec<usize>> {
    let idx: Vec<usize> = match explicit {
        Some(times) => {
            if times.len() != k {
                return Err(Error::InvalidConfig(format!(
                    "{} intervention times given for K={k}",
                    times.len()
                )));
            }
            times
                .iter()
                .map(|&t| {
                    schedule.index_of(t).ok_or_else(|| {
                        Error::InvalidConfig(format!("intervention time {t} is not on the step grid"))
                    })
                })
                .collect::<Result<_>>()?
        }
        None => (0..k)
            .map(|j| schedule.nearest_index(0.95 - j as f64 * 0.8 / k as f64))
            .collect(),
    };
    if idx.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidConfig(
            "intervention times must be strictly decreasing (grid too coarse for K?)".into(),
        ));
    }
    if idx.last().is_some_and(|&i| i >= schedule.steps()) {
        return Err(Error::InvalidConfig("last intervention time must be > 0".into()));
    }
    Ok(idx)
}
