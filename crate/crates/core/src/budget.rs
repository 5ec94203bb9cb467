//! Velocity / score evaluation counters, the compute currency of search.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Moving survivors between intervention times.
    Advance,
    /// Partial denoising and lookahead used to score candidates.
    Rollout,
    /// The closing solve of the selected trajectory.
    Final,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::Advance, Phase::Rollout, Phase::Final];

    fn slot(self) -> usize {
        match self {
            Phase::Advance => 0,
            Phase::Rollout => 1,
            Phase::Final => 2,
        }
    }
}

/// Function-evaluation ledger, partitioned by [`Phase`].
///
/// Charges go to the current phase. Workers keep their own ledgers and
/// [`merge`](Self::merge) them at the end; the merge is associative, so the
/// totals do not depend on scheduling.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetLedger {
    velocity: [u64; 3],
    score: [u64; 3],
    #[serde(skip, default = "default_phase")]
    phase: Phase,
}

fn default_phase() -> Phase {
    Phase::Final
}

impl Default for BudgetLedger {
    fn default() -> Self {
        Self {
            velocity: [0; 3],
            score: [0; 3],
            phase: Phase::Final,
        }
    }
}

impl BudgetLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    /// Switches the phase future charges go to, returning the previous one.
    pub fn enter(&mut self, phase: Phase) -> Phase {
        std::mem::replace(&mut self.phase, phase)
    }

    pub fn charge_velocity(&mut self, n: u64) {
        self.velocity[self.phase.slot()] += n;
    }

    pub fn charge_score(&mut self, n: u64) {
        self.score[self.phase.slot()] += n;
    }

    pub fn velocity_evals(&self, phase: Phase) -> u64 {
        self.velocity[phase.slot()]
    }

    pub fn score_evals(&self, phase: Phase) -> u64 {
        self.score[phase.slot()]
    }

    /// Total velocity evaluations: the NFE figure reported everywhere.
    pub fn total_velocity(&self) -> u64 {
        self.velocity.iter().sum()
    }

    pub fn total_score(&self) -> u64 {
        self.score.iter().sum()
    }

    pub fn merge(&mut self, other: &BudgetLedger) {
        for i in 0..3 {
            self.velocity[i] += other.velocity[i];
            self.score[i] += other.score[i];
        }
    }

    pub fn summary(&self) -> NfeSummary {
        NfeSummary {
            advance: self.velocity_evals(Phase::Advance),
            rollout: self.velocity_evals(Phase::Rollout),
            final_solve: self.velocity_evals(Phase::Final),
            total: self.total_velocity(),
            score_evals: self.total_score(),
        }
    }
}

/// Flat view of a ledger for reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NfeSummary {
    pub advance: u64,
    pub rollout: u64,
    #[serde(rename = "final")]
    pub final_solve: u64,
    pub total: u64,
    pub score_evals: u64,
}
