//! Comparing methods on a suite: cross-method rank ensembles and paired tests.
//!
//! A single restoration has ensemble reward `-1` on its own, so methods are
//! compared by ranking their outputs against each other instance by instance
//! and averaging the resulting ensemble rewards.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::task::RestorationInstance;
use crate::verifiers::{rank_ensemble, score_candidate, RawScores, VerifierConfig};

/// Ensemble rewards `[method][instance]` from ranking, per instance, the
/// outputs `outputs[method][instance]` against each other.
pub fn cross_method_rewards(
    outputs: &[Vec<DVector<f64>>],
    instances: &[RestorationInstance],
    verifiers: &VerifierConfig,
) -> Result<Vec<Vec<f64>>> {
    let raws: Vec<Vec<RawScores>> = outputs
        .iter()
        .map(|per| {
            if per.len() != instances.len() {
                return Err(Error::DimensionMismatch {
                    expected: instances.len(),
                    found: per.len(),
                });
            }
            per.iter()
                .zip(instances)
                .map(|(x, inst)| score_candidate(x, inst, verifiers.blind))
                .collect()
        })
        .collect::<Result<_>>()?;
    cross_method_from_raw(&raws, &verifiers.verifiers)
}

/// As [`cross_method_rewards`], from precomputed raw scores `[method][instance]`.
pub fn cross_method_from_raw(
    raws: &[Vec<RawScores>],
    verifiers: &[crate::verifiers::Verifier],
) -> Result<Vec<Vec<f64>>> {
    let methods = raws.len();
    if methods == 0 {
        return Ok(Vec::new());
    }
    let count = raws[0].len();
    let mut out = vec![vec![0.0; count]; methods];
    let ids: Vec<u64> = (0..methods as u64).collect();
    for i in 0..count {
        let column: Vec<RawScores> = raws.iter().map(|m| m[i]).collect();
        for (m, r) in rank_ensemble(&ids, &column, verifiers)?.into_iter().enumerate() {
            out[m][i] = r.ensemble;
        }
    }
    Ok(out)
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// One-sided paired t-test of `treated > baseline`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedTest {
    pub n: usize,
    pub mean_diff: f64,
    pub std_diff: f64,
    pub t: f64,
    pub p_value: f64,
}

pub fn paired_t_test(baseline: &[f64], treated: &[f64]) -> Result<PairedTest> {
    if baseline.len() != treated.len() {
        return Err(Error::DimensionMismatch {
            expected: baseline.len(),
            found: treated.len(),
        });
    }
    if baseline.len() < 2 {
        return Err(Error::InvalidConfig("paired test needs at least two pairs".into()));
    }
    let diffs: Vec<f64> = treated.iter().zip(baseline).map(|(t, b)| t - b).collect();
    let (mean_diff, std_diff) = mean_std(&diffs);
    let n = diffs.len();
    let (t, p_value) = if std_diff == 0.0 {
        let p = if mean_diff > 0.0 {
            0.0
        } else if mean_diff < 0.0 {
            1.0
        } else {
            0.5
        };
        (f64::INFINITY.copysign(mean_diff), p)
    } else {
        let t = mean_diff / (std_diff / (n as f64).sqrt());
        let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("df >= 1");
        (t, 1.0 - dist.cdf(t))
    };
    Ok(PairedTest {
        n,
        mean_diff,
        std_diff,
        t,
        p_value,
    })
}
