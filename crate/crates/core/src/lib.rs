//! Test-time search over flow-matching ODE trajectories.
//!
//! Everything runs on closed-form linear-interpolant flows
//! `x_t = (1 - t) x0 + t eps` over isotropic Gaussian mixtures, so every
//! velocity, score and posterior has an exact reference value. On top of the
//! flow core sit toy restoration problems with conjugate posteriors, analytic
//! verifiers combined by a rank ensemble, the perturb / rollout / evaluate /
//! select search loop with its matched-compute baselines, a shape-level
//! unified-sequence transformer block and Bradley-Terry preference statistics.
//!
//! Time runs from `t = 1` (pure noise) down to `t = 0` (data).

pub mod budget;
pub mod error;
pub mod eval;
pub mod flow;
pub mod harness;
pub mod rng;
pub mod search;
pub mod study;
pub mod task;
pub mod umf;
pub mod verifiers;

pub use budget::{BudgetLedger, Phase};
pub use error::{Error, Result};
pub use flow::{FlowSpec, LatentState, SigmaSchedule, StepSchedule};
pub use search::{TtsConfig, TtsOutcome};
pub use task::{DegradationOp, RestorationInstance, Suite, SuiteConfig};
pub use verifiers::{RawScores, RewardReport, Verifier, VerifierConfig};
