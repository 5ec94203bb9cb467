//! Perturb / rollout / evaluate / select search over ODE trajectories.
//!
//! At each intervention time `t_k` the current population is perturbed into
//! `N` candidates, each candidate is previewed by a short ODE rollout plus a
//! lookahead to `t = 0`, the previews are scored by the verifier ensemble and
//! the best `M` survive. Survivors advance along the plain ODE to the next
//! intervention; after the last round the best survivor is solved to `t = 0`.
//!
//! Baselines with the same accounting live in [`baselines`].

pub mod baselines;
mod candidates;
mod config;
mod nfe;
mod run;

pub use baselines::{best_of_n, particle_nfe, particle_sampling, BaselineOutcome, ParticleConfig};
pub use candidates::{
    mspde, perturb, select_top_m, Candidate, CandidateSet, IdAllocator, PerturbOptions,
};
pub use config::{resolve_interventions, TtsConfig};
pub use nfe::nfe_formula;
pub use run::{plain_solve, tts_run, FinalRecord, RoundTrace, Trace, TraceRow, TtsOutcome};
