use crate::error::Result;

use super::config::TtsConfig;

/// Velocity evaluations a [`tts_run`](super::tts_run) with `config` will spend.
///
/// ```text
/// T                                  one trajectory from t = 1 to t = 0
/// + sum_k N * (S + [t_k - S dt > 0]) rollouts, lookahead free at t = 0
/// + (M - 1) * (i_K - i_1)            extra survivors advanced between rounds
/// ```
///
/// where `i_k` is the grid index of `t_k`. The ledger of every run matches
/// this exactly.
pub fn nfe_formula(config: &TtsConfig) -> Result<u64> {
    config.validate()?;
    let steps = config.t;
    let idx = config.intervention_indices()?;
    let base = steps as u64;
    let rollouts: u64 = idx
        .iter()
        .map(|&i| {
            let lookahead = u64::from(i + config.s < steps);
            config.n as u64 * (config.s as u64 + lookahead)
        })
        .sum();
    let span = match (idx.first(), idx.last()) {
        (Some(&a), Some(&b)) => (b - a) as u64,
        _ => 0,
    };
    Ok(base + rollouts + (config.m as u64 - 1) * span)
}
