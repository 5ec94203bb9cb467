//! Analytic reward functions and their rank-based ensemble.
//!
//! Three verifiers look at a candidate restoration from different angles:
//!
//! * `fid` - fidelity. Against the hidden truth, `-||x - truth||^2`; in blind
//!   mode, observation consistency `-||A x - y||^2 / noise_std^2`.
//! * `like` - log-density under the exact posterior.
//! * `smooth` - negative total variation.
//!
//! Their scales have nothing in common, so they are combined through ranks:
//! within a candidate set each verifier ranks the candidates (1 = best, ties
//! share the average position) and the ensemble reward is minus the mean rank.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::task::RestorationInstance;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Verifier {
    #[serde(rename = "fid")]
    Fidelity,
    #[serde(rename = "like")]
    Likelihood,
    #[serde(rename = "smooth")]
    Smoothness,
}

impl Verifier {
    pub const ALL: [Verifier; 3] = [Verifier::Fidelity, Verifier::Likelihood, Verifier::Smoothness];

    pub fn column(self) -> usize {
        match self {
            Verifier::Fidelity => 0,
            Verifier::Likelihood => 1,
            Verifier::Smoothness => 2,
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            Verifier::Fidelity => "fid",
            Verifier::Likelihood => "like",
            Verifier::Smoothness => "smooth",
        }
    }
}

impl fmt::Display for Verifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for Verifier {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fid" => Ok(Verifier::Fidelity),
            "like" => Ok(Verifier::Likelihood),
            "smooth" => Ok(Verifier::Smoothness),
            other => Err(Error::InvalidConfig(format!("unknown verifier `{other}`"))),
        }
    }
}

/// Which verifiers vote, and whether fidelity may see the truth.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifierConfig {
    pub verifiers: Vec<Verifier>,
    pub blind: bool,
}

impl Default for VerifierConfig {
    fn default() -> Self {
        Self {
            verifiers: Verifier::ALL.to_vec(),
            blind: true,
        }
    }
}

impl VerifierConfig {
    pub fn new(mut verifiers: Vec<Verifier>, blind: bool) -> Result<Self> {
        verifiers.sort();
        verifiers.dedup();
        if verifiers.is_empty() {
            return Err(Error::InvalidConfig("verifier subset must be nonempty".into()));
        }
        Ok(Self { verifiers, blind })
    }

    pub fn validate(&self) -> Result<()> {
        Self::new(self.verifiers.clone(), self.blind).map(|_| ())
    }

    /// `fid+like+smooth` style label.
    pub fn label(&self) -> String {
        self.verifiers
            .iter()
            .map(|v| v.key())
            .collect::<Vec<_>>()
            .join("+")
    }
}

/// Raw verifier outputs for one candidate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawScores {
    pub fid: f64,
    pub like: f64,
    pub smooth: f64,
}

impl RawScores {
    pub fn get(&self, v: Verifier) -> f64 {
        match v {
            Verifier::Fidelity => self.fid,
            Verifier::Likelihood => self.like,
            Verifier::Smoothness => self.smooth,
        }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.fid, self.like, self.smooth]
    }
}

fn check_len(x: &DVector<f64>, d: usize) -> Result<()> {
    if x.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: x.len(),
        });
    }
    Ok(())
}

/// `-||x - truth||^2`. Evaluation only: it reads the hidden truth.
pub fn v_fidelity(x: &DVector<f64>, inst: &RestorationInstance) -> Result<f64> {
    check_len(x, inst.truth.len())?;
    Ok(-(x - &inst.truth).norm_squared())
}

/// `-||A x - y||^2 / noise_std^2`, usable without the truth.
pub fn v_fidelity_blind(x: &DVector<f64>, inst: &RestorationInstance) -> Result<f64> {
    let r = inst.op.apply(x)? - &inst.observation;
    let s = inst.op.noise_std();
    Ok(-r.norm_squared() / (s * s))
}

/// Log-density under the exact anisotropic posterior.
pub fn v_likelihood(x: &DVector<f64>, inst: &RestorationInstance) -> Result<f64> {
    inst.exact.log_density(x)
}

/// Negative total variation `-sum |x[i+1] - x[i]|`.
pub fn v_smooth(x: &DVector<f64>) -> f64 {
    -x.as_slice().windows(2).map(|w| (w[1] - w[0]).abs()).sum::<f64>()
}

pub fn score_candidate(
    x: &DVector<f64>,
    inst: &RestorationInstance,
    blind: bool,
) -> Result<RawScores> {
    let fid = if blind {
        v_fidelity_blind(x, inst)?
    } else {
        v_fidelity(x, inst)?
    };
    Ok(RawScores {
        fid,
        like: v_likelihood(x, inst)?,
        smooth: v_smooth(x),
    })
}

/// Ranks with 1 = largest value; tied values share the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Result<Vec<f64>> {
    if let Some(i) = values.iter().position(|v| v.is_nan()) {
        return Err(Error::NanScore(i));
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // Positions i..=j (0-based) hold rank (i+1 + j+1) / 2.
        let r = (i + j + 2) as f64 / 2.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    Ok(ranks)
}

/// Ensemble verdict for one candidate within its set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardReport {
    pub candidate: u64,
    pub raw: RawScores,
    /// Rank per verifier column (`fid`, `like`, `smooth`); `None` when that
    /// verifier is not part of the active subset.
    pub ranks: [Option<f64>; 3],
    pub ensemble: f64,
}

/// Ranks each active verifier column and averages: `-(sum of ranks) / |subset|`.
///
/// Output order follows input order.
pub fn rank_ensemble(
    ids: &[u64],
    raws: &[RawScores],
    verifiers: &[Verifier],
) -> Result<Vec<RewardReport>> {
    if raws.is_empty() {
        return Err(Error::InvalidConfig("rank ensemble needs at least one candidate".into()));
    }
    if ids.len() != raws.len() {
        return Err(Error::DimensionMismatch {
            expected: raws.len(),
            found: ids.len(),
        });
    }
    if verifiers.is_empty() {
        return Err(Error::InvalidConfig("verifier subset must be nonempty".into()));
    }
    for (i, r) in raws.iter().enumerate() {
        if r.as_array().iter().any(|v| v.is_nan()) {
            return Err(Error::NanScore(i));
        }
    }
    let mut columns: [Option<Vec<f64>>; 3] = [None, None, None];
    for &v in verifiers {
        let col: Vec<f64> = raws.iter().map(|r| r.get(v)).collect();
        columns[v.column()] = Some(average_ranks(&col)?);
    }
    let active = columns.iter().filter(|c| c.is_some()).count() as f64;
    Ok((0..raws.len())
        .map(|i| {
            let ranks = [0, 1, 2].map(|c| columns[c].as_ref().map(|col| col[i]));
            let sum: f64 = ranks.iter().flatten().sum();
            RewardReport {
                candidate: ids[i],
                raw: raws[i],
                ranks,
                ensemble: -sum / active,
            }
        })
        .collect())
}
