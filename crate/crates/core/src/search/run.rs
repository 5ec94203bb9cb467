use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::budget::{BudgetLedger, NfeSummary, Phase};
use crate::error::Result;
use crate::flow::{solve_ode, FlowSpec, LatentState, StepSchedule};
use crate::task::RestorationInstance;
use crate::verifiers::{rank_ensemble, score_candidate, RawScores, RewardReport};

use super::candidates::{mspde, perturb, select_top_m, Candidate, CandidateSet, IdAllocator, PerturbOptions};
use super::config::TtsConfig;

/// One scored candidate as it appears in the trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub round: usize,
    pub candidate: u64,
    pub parent: Option<u64>,
    pub time: f64,
    pub report: RewardReport,
    pub survived: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundTrace {
    /// 1-based round number.
    pub round: usize,
    pub time: f64,
    pub sigma: f64,
    pub rows: Vec<TraceRow>,
    /// Cumulative evaluations after the round's selection.
    pub nfe: NfeSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalRecord {
    /// Candidate the final solve started from, if any search happened.
    pub source: Option<u64>,
    pub x0: Vec<f64>,
    pub raw: RawScores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub rounds: Vec<RoundTrace>,
    pub final_record: FinalRecord,
}

impl Trace {
    pub fn rows(&self) -> impl Iterator<Item = &TraceRow> {
        self.rounds.iter().flat_map(|r| r.rows.iter())
    }
}

#[derive(Debug, Clone)]
pub struct TtsOutcome {
    pub x0: DVector<f64>,
    /// Verifier outputs on the final restoration (blind or not, per config).
    pub raw: RawScores,
    pub trace: Trace,
    pub ledger: BudgetLedger,
}

/// Plain Euler solve of `spec` from the noise `[seed, INIT_NOISE, 0]`.
pub fn plain_solve(
    spec: &FlowSpec,
    schedule: &StepSchedule,
    seed: u64,
    ledger: &mut BudgetLedger,
) -> Result<LatentState> {
    let z = LatentState::initial_noise(spec.dim(), seed, 0);
    let prev = ledger.enter(Phase::Final);
    let out = solve_ode(&z, spec, schedule, 0, schedule.steps(), ledger);
    ledger.enter(prev);
    out
}

/// Runs the search on `spec` (normally `instance.posterior`).
///
/// Deterministic in `seed`: initial noise is `[seed, INIT_NOISE, 0]` and all
/// perturbations come from per-candidate streams under `seed`.
pub fn tts_run(
    instance: &RestorationInstance,
    spec: &FlowSpec,
    config: &TtsConfig,
    seed: u64,
) -> Result<TtsOutcome> {
    config.validate()?;
    let schedule = config.schedule()?;
    let verifiers = config.verifier_config()?;
    let stops = config.intervention_indices()?;
    let times = schedule.times();
    let opts = PerturbOptions {
        keep_parents: config.keep_parents,
        mutate_fraction: config.mutate_fraction,
        run_seed: seed,
    };

    let mut ledger = BudgetLedger::new();
    let mut ids = IdAllocator::new();
    let mut rounds = Vec::with_capacity(stops.len());

    let z1 = LatentState::initial_noise(spec.dim(), seed, 0);
    let mut population: Vec<Candidate> = vec![Candidate::new(ids.next_id(), z1)];
    let mut cursor = 0usize;

    for (k, &stop) in stops.iter().enumerate() {
        let round = k + 1;
        let step = (|| -> Result<RoundTrace> {
            ledger.enter(Phase::Advance);
            for c in &mut population {
                c.state = solve_ode(&c.state, spec, &schedule, cursor, stop, &mut ledger)?;
            }
            cursor = stop;

            let sigma = config.sigma_schedule.at_round(k, config.k);
            let parents = CandidateSet::new(times[stop], k, population.clone())?;
            let mut cands = perturb(&parents, sigma, config.n, &opts, &mut ids)?;

            let mut raws = Vec::with_capacity(cands.members.len());
            for c in &mut cands.members {
                let est = mspde(&c.state, spec, &schedule, config.s, &mut ledger)?;
                raws.push(score_candidate(&est, instance, verifiers.blind)?);
                c.estimate = Some(est);
            }
            let idv: Vec<u64> = cands.members.iter().map(|c| c.id).collect();
            let reports = rank_ensemble(&idv, &raws, &verifiers.verifiers)?;
            for (c, r) in cands.members.iter_mut().zip(reports) {
                c.report = Some(r);
            }

            let survivors = select_top_m(&cands, config.m)?;
            let kept: Vec<u64> = survivors.members.iter().map(|c| c.id).collect();
            let rows = cands
                .members
                .iter()
                .map(|c| TraceRow {
                    round,
                    candidate: c.id,
                    parent: c.state.parent,
                    time: c.state.time,
                    report: c.report.expect("scored above"),
                    survived: kept.contains(&c.id),
                })
                .collect();
            population = survivors.members;
            Ok(RoundTrace {
                round,
                time: times[stop],
                sigma,
                rows,
                nfe: ledger.summary(),
            })
        })()
        .map_err(|e| e.in_round(round))?;
        rounds.push(step);
    }

    ledger.enter(Phase::Final);
    let best = &population[0];
    let source = if stops.is_empty() { None } else { Some(best.id) };
    let end = solve_ode(&best.state, spec, &schedule, cursor, schedule.steps(), &mut ledger)?;
    let raw = score_candidate(&end.value, instance, verifiers.blind)?;

    Ok(TtsOutcome {
        trace: Trace {
            rounds,
            final_record: FinalRecord {
                source,
                x0: end.value.as_slice().to_vec(),
                raw,
            },
        },
        x0: end.value,
        raw,
        ledger,
    })
}
