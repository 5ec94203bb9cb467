use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::budget::{BudgetLedger, Phase};
use crate::error::{Error, Result};
use crate::flow::{lookahead, solve_ode, FlowSpec, LatentState, StepSchedule};
use crate::rng;
use crate::verifiers::RewardReport;

/// Hands out run-unique candidate ids in creation order.
#[derive(Debug, Default, Clone)]
pub struct IdAllocator(u64);

impl IdAllocator {
    pub fn new() -> Self {
        Self(0)
    }

    pub fn next_id(&mut self) -> u64 {
        let id = self.0;
        self.0 += 1;
        id
    }
}

#[derive(Debug, Clone)]
pub struct Candidate {
    pub id: u64,
    pub state: LatentState,
    /// `x0` preview the report was computed from.
    pub estimate: Option<DVector<f64>>,
    pub report: Option<RewardReport>,
}

impl Candidate {
    pub fn new(id: u64, state: LatentState) -> Self {
        Self {
            id,
            state,
            estimate: None,
            report: None,
        }
    }
}

/// Population at a common time.
#[derive(Debug, Clone)]
pub struct CandidateSet {
    pub time: f64,
    /// Round index the set belongs to.
    pub generation: usize,
    pub members: Vec<Candidate>,
}

impl CandidateSet {
    pub fn new(time: f64, generation: usize, members: Vec<Candidate>) -> Result<Self> {
        if members.iter().any(|c| c.state.time != time) {
            return Err(Error::InvalidConfig("candidate set members disagree on time".into()));
        }
        Ok(Self {
            time,
            generation,
            members,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PerturbOptions {
    pub keep_parents: bool,
    pub mutate_fraction: f64,
    /// Top-level seed of the run; child noise comes from `[seed, PERTURB, ..seed_path]`.
    pub run_seed: u64,
}

impl Default for PerturbOptions {
    fn default() -> Self {
        Self {
            keep_parents: true,
            mutate_fraction: 1.0,
            run_seed: 0,
        }
    }
}

/// Expands `parents` into exactly `n` candidates `z + sigma * eps`.
///
/// With `keep_parents` the first `|parents|` slots are unperturbed copies of
/// the parents; the remaining slots cycle over the parents round-robin. Of
/// those, the first `round(mutate_fraction * count)` receive noise and the
/// rest are exact copies. Every candidate gets a fresh id and a seed path
/// extending its parent's with `[generation, slot]`.
pub fn perturb(
    parents: &CandidateSet,
    sigma: f64,
    n: usize,
    opts: &PerturbOptions,
    ids: &mut IdAllocator,
) -> Result<CandidateSet> {
    if parents.members.is_empty() {
        return Err(Error::InvalidConfig("perturb needs at least one parent".into()));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidConfig(format!("sigma_k must be nonnegative, got {sigma}")));
    }
    let p = parents.members.len();
    let kept = if opts.keep_parents { p.min(n) } else { 0 };
    let children = n - kept;
    let mutated = (opts.mutate_fraction * children as f64).round() as usize;
    let generation = parents.generation;

    let mut members = Vec::with_capacity(n);
    for slot in 0..n {
        let (parent, noisy) = if slot < kept {
            (&parents.members[slot], false)
        } else {
            let j = slot - kept;
            (&parents.members[j % p], j < mutated)
        };
        let mut seed_path = parent.state.seed_path.clone();
        seed_path.extend([generation as u64, slot as u64]);
        let mut value = parent.state.value.clone();
        if noisy && sigma > 0.0 {
            let mut path = vec![opts.run_seed, rng::stream::PERTURB];
            path.extend(&seed_path);
            let mut r = rng::stream_rng(&path);
            for v in value.iter_mut() {
                *v += sigma * r.sample::<f64, _>(StandardNormal);
            }
        }
        let state = LatentState {
            value,
            time: parent.state.time,
            seed_path,
            parent: Some(parent.id),
        };
        members.push(Candidate::new(ids.next_id(), state));
    }
    CandidateSet::new(parents.time, generation, members)
}

/// Multi-step partial denoising estimate of `x0`.
///
/// `s` ODE steps along `schedule` from the candidate's grid time, then a
/// lookahead. Charged to [`Phase::Rollout`]: `s` evaluations for the steps
/// plus one for the lookahead unless the rollout ended exactly at `t = 0`.
pub fn mspde(
    candidate: &LatentState,
    spec: &FlowSpec,
    schedule: &StepSchedule,
    s: usize,
    ledger: &mut BudgetLedger,
) -> Result<DVector<f64>> {
    let start = schedule.index_of(candidate.time).ok_or_else(|| {
        Error::InvalidConfig(format!("candidate time {} is not on the step grid", candidate.time))
    })?;
    if start + s > schedule.steps() {
        return Err(Error::StepPastZero {
            time: candidate.time,
            dt: -(s as f64) / schedule.steps() as f64,
        });
    }
    let prev = ledger.enter(Phase::Rollout);
    let out = solve_ode(candidate, spec, schedule, start, start + s, ledger)
        .and_then(|end| lookahead(&end, spec, ledger));
    ledger.enter(prev);
    out
}

/// Keeps the `m` highest ensembles, ties to the lower id, sorted best first.
pub fn select_top_m(set: &CandidateSet, m: usize) -> Result<CandidateSet> {
    if m == 0 || m > set.members.len() {
        return Err(Error::InvalidConfig(format!(
            "cannot keep {m} of {} candidates",
            set.members.len()
        )));
    }
    let mut scored = Vec::with_capacity(set.members.len());
    for c in &set.members {
        let r = c.report.ok_or(Error::MissingReport(c.id))?;
        scored.push((r.ensemble, c.id, c));
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let members: Vec<Candidate> = scored.iter().take(m).map(|(_, _, c)| (*c).clone()).collect();

    if cfg!(debug_assertions) {
        let floor = members.last().and_then(|c| c.report).map(|r| r.ensemble);
        if let Some(floor) = floor {
            let kept: Vec<u64> = members.iter().map(|c| c.id).collect();
            for c in &set.members {
                if !kept.contains(&c.id) {
                    debug_assert!(c.report.unwrap().ensemble <= floor);
                }
            }
        }
    }
    CandidateSet::new(set.time, set.generation, members)
}
