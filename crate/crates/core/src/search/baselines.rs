//! Matched-compute baselines: best-of-N and SDE particle resampling.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::budget::{BudgetLedger, Phase};
use crate::error::{Error, Result};
use crate::flow::{lookahead, solve_ode, solve_sde, FlowSpec, LatentState, SigmaSchedule, StepSchedule};
use crate::rng;
use crate::task::RestorationInstance;
use crate::verifiers::{rank_ensemble, score_candidate, RawScores, VerifierConfig};

use super::config::resolve_interventions;

#[derive(Debug, Clone)]
pub struct BaselineOutcome {
    pub x0: DVector<f64>,
    pub raw: RawScores,
    /// Index of the chosen sample or particle.
    pub chosen: usize,
    pub ledger: BudgetLedger,
}

/// `n` independent full ODE solves from noises `[seed, INIT_NOISE, i]`,
/// keeping the ensemble argmax (ties to the lower index).
///
/// Scoring happens at `t = 0`, so it costs nothing: NFE is `n * T`.
pub fn best_of_n(
    instance: &RestorationInstance,
    spec: &FlowSpec,
    n: usize,
    steps: usize,
    verifiers: &VerifierConfig,
    seed: u64,
) -> Result<BaselineOutcome> {
    if n == 0 {
        return Err(Error::InvalidConfig("best-of-n needs n >= 1".into()));
    }
    verifiers.validate()?;
    let schedule = StepSchedule::uniform(steps)?;
    let mut ledger = BudgetLedger::new();
    ledger.enter(Phase::Final);
    let mut finals = Vec::with_capacity(n);
    let mut raws = Vec::with_capacity(n);
    for i in 0..n {
        let z = LatentState::initial_noise(spec.dim(), seed, i as u64);
        let end = solve_ode(&z, spec, &schedule, 0, schedule.steps(), &mut ledger)?;
        raws.push(score_candidate(&end.value, instance, verifiers.blind)?);
        finals.push(end.value);
    }
    let ids: Vec<u64> = (0..n as u64).collect();
    let reports = rank_ensemble(&ids, &raws, &verifiers.verifiers)?;
    let chosen = argmax(reports.iter().map(|r| r.ensemble));
    Ok(BaselineOutcome {
        x0: finals.swap_remove(chosen),
        raw: raws[chosen],
        chosen,
        ledger,
    })
}

fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Population resampling on SDE paths, without a perturbation operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParticleConfig {
    pub particles: usize,
    pub survivors: usize,
    pub rounds: usize,
    pub steps: usize,
    pub sigma: SigmaSchedule,
    pub intervention_times: Option<Vec<f64>>,
    pub verifiers: VerifierConfig,
}

impl Default for ParticleConfig {
    fn default() -> Self {
        Self {
            particles: 7,
            survivors: 2,
            rounds: 4,
            steps: 50,
            sigma: SigmaSchedule::Constant(0.5),
            intervention_times: None,
            verifiers: VerifierConfig::default(),
        }
    }
}

impl ParticleConfig {
    pub fn validate(&self) -> Result<Vec<usize>> {
        if self.particles == 0 || self.survivors == 0 || self.survivors > self.particles {
            return Err(Error::InvalidConfig(format!(
                "need 1 <= survivors <= particles, got {} of {}",
                self.survivors, self.particles
            )));
        }
        self.sigma.validate()?;
        self.verifiers.validate()?;
        let schedule = StepSchedule::uniform(self.steps)?;
        resolve_interventions(self.rounds, self.intervention_times.as_deref(), &schedule)
    }
}

/// Velocity evaluations spent by [`particle_sampling`].
///
/// `n * i_K` for propagating the population, `n` per round for lookahead
/// scoring and `T - i_K` for the closing solve of the best particle.
pub fn particle_nfe(config: &ParticleConfig) -> Result<u64> {
    let idx = config.validate()?;
    let n = config.particles as u64;
    let last = idx.last().copied().unwrap_or(0) as u64;
    let scoring: u64 = idx.iter().map(|&i| if i < config.steps { n } else { 0 }).sum();
    let propagate = if idx.is_empty() { 0 } else { n * last };
    Ok(propagate + scoring + config.steps as u64 - last)
}

/// SDE propagation of `particles` copies of `[seed, INIT_NOISE, 0]`.
///
/// At each intervention time the particles are scored by lookahead, the best
/// `survivors` are kept and copied round-robin back to full size. After the
/// last round the best particle is solved alone to `t = 0`. Brownian noise for
/// particle slot `p` in segment `j` comes from `[seed, SDE, j, p]`.
pub fn particle_sampling(
    instance: &RestorationInstance,
    spec: &FlowSpec,
    config: &ParticleConfig,
    seed: u64,
) -> Result<BaselineOutcome> {
    let stops = config.validate()?;
    let schedule = StepSchedule::uniform(config.steps)?;
    let n = config.particles;
    let mut ledger = BudgetLedger::new();
    let z1 = LatentState::initial_noise(spec.dim(), seed, 0);
    let mut particles: Vec<LatentState> = vec![z1; n];
    let mut cursor = 0;
    let mut chosen = 0;

    for (j, &stop) in stops.iter().enumerate() {
        ledger.enter(Phase::Advance);
        for (p, state) in particles.iter_mut().enumerate() {
            let mut r = rng::stream_rng(&[seed, rng::stream::SDE, j as u64, p as u64]);
            *state = solve_sde(state, spec, &schedule, cursor, stop, &config.sigma, &mut r, &mut ledger)
                .map_err(|e| e.in_round(j + 1))?;
        }
        cursor = stop;

        ledger.enter(Phase::Rollout);
        let mut raws = Vec::with_capacity(n);
        for state in &particles {
            let est = lookahead(state, spec, &mut ledger)?;
            raws.push(score_candidate(&est, instance, config.verifiers.blind)?);
        }
        let ids: Vec<u64> = (0..n as u64).collect();
        let reports = rank_ensemble(&ids, &raws, &config.verifiers.verifiers)?;
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| reports[b].ensemble.total_cmp(&reports[a].ensemble).then(a.cmp(&b)));
        let keep = &order[..config.survivors];
        chosen = keep[0];
        particles = (0..n).map(|p| particles[keep[p % keep.len()]].clone()).collect();
    }

    ledger.enter(Phase::Final);
    let mut r = rng::stream_rng(&[seed, rng::stream::SDE, stops.len() as u64, 0]);
    let end = solve_sde(&particles[0], spec, &schedule, cursor, schedule.steps(), &config.sigma, &mut r, &mut ledger)?;
    let raw = score_candidate(&end.value, instance, config.verifiers.blind)?;
    Ok(BaselineOutcome {
        x0: end.value,
        raw,
        chosen,
        ledger,
    })
}
