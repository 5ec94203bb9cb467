//! Search loop and baselines against brute-force and degenerate-case references.

use std::collections::HashSet;

use flowtts::flow::{lookahead, solve_ode};
use flowtts::rng::stream_rng;
use flowtts::search::{
    best_of_n, mspde, nfe_formula, particle_nfe, particle_sampling, perturb, plain_solve, select_top_m,
    tts_run, Candidate, CandidateSet, IdAllocator, ParticleConfig, PerturbOptions,
};
use flowtts::task::make_suite;
use flowtts::verifiers::{rank_ensemble, score_candidate, RawScores};
use flowtts::{
    BudgetLedger, Error, FlowSpec, LatentState, RewardReport, SigmaSchedule, StepSchedule, Suite, SuiteConfig,
    TtsConfig, Verifier, VerifierConfig,
};
use nalgebra::DVector;
use rand::Rng;


fn suite(count: usize) -> Suite {
    make_suite(0, count, &SuiteConfig::default()).unwrap()
}

#[test]
fn zero_rounds_is_the_plain_solve() {
    let s = suite(3);
    for inst in &s.instances {
        let cfg = TtsConfig::no_search();
        let out = tts_run(inst, &inst.posterior, &cfg, 5 + inst.id).unwrap();
        let mut ledger = BudgetLedger::new();
        let plain = plain_solve(&inst.posterior, &cfg.schedule().unwrap(), 5 + inst.id, &mut ledger).unwrap();
        assert_eq!(out.x0, plain.value);
        assert!(out.trace.rounds.is_empty());
        assert_eq!(out.trace.final_record.source, None);
        assert_eq!(out.ledger.total_velocity(), 50);
    }
}

#[test]
fn noiseless_pair_without_parents_is_the_plain_solve() {
    let s = suite(1);
    let inst = &s.instances[0];
    let cfg = TtsConfig {
        k: 1,
        n: 2,
        m: 1,
        s: 3,
        t: 20,
        sigma_schedule: SigmaSchedule::Constant(0.0),
        keep_parents: false,
        ..TtsConfig::default()
    };
    let out = tts_run(inst, &inst.posterior, &cfg, 9).unwrap();
    let rows = &out.trace.rounds[0].rows;
    assert_eq!(rows[0].report.raw, rows[1].report.raw);
    let mut ledger = BudgetLedger::new();
    let plain = plain_solve(&inst.posterior, &cfg.schedule().unwrap(), 9, &mut ledger).unwrap();
    assert_eq!(out.x0, plain.value);
}

#[test]
fn noiseless_search_keeps_the_parents() {
    let s = suite(1);
    let inst = &s.instances[0];
    let cfg = TtsConfig { sigma_schedule: SigmaSchedule::Constant(0.0), ..TtsConfig::default() };
    let out = tts_run(inst, &inst.posterior, &cfg, 3).unwrap();
    let mut parents: HashSet<u64> = HashSet::from([0]);
    for round in &out.trace.rounds {
        for row in round.rows.iter().filter(|r| r.survived) {
            // A survivor is either a kept parent or an exact copy chosen ahead of it by id.
            assert!(parents.contains(&row.parent.unwrap()));
        }
        let kept: Vec<u64> = round.rows.iter().filter(|r| r.survived).map(|r| r.candidate).collect();
        let firsts: Vec<u64> = round.rows.iter().take(kept.len()).map(|r| r.candidate).collect();
        assert_eq!(kept, firsts, "ties go to the lowest ids, which are the kept parents");
        parents = kept.into_iter().collect();
    }
}

#[test]
fn trace_lists_every_candidate_once() {
    let s = suite(2);
    for cfg in [TtsConfig::default(), TtsConfig::ladder_point(10, 15), TtsConfig { m: 3, ..TtsConfig::ladder_point(2, 5) }] {
        let out = tts_run(&s.instances[1], &s.instances[1].posterior, &cfg, 17).unwrap();
        let ids: Vec<u64> = out.trace.rows().map(|r| r.candidate).collect();
        let unique: HashSet<u64> = ids.iter().copied().collect();
        assert_eq!(ids.len(), cfg.k * cfg.n);
        assert_eq!(unique.len(), ids.len());
        assert_eq!(unique, (1..=(cfg.k * cfg.n) as u64).collect());
        let mut alive: HashSet<u64> = HashSet::from([0]);
        for round in &out.trace.rounds {
            assert_eq!(round.rows.len(), cfg.n);
            assert_eq!(round.rows.iter().filter(|r| r.survived).count(), cfg.m);
            for row in &round.rows {
                assert!(alive.contains(&row.parent.unwrap()));
                assert_eq!(row.time, round.time);
            }
            alive = round.rows.iter().filter(|r| r.survived).map(|r| r.candidate).collect();
        }
        assert!(alive.contains(&out.trace.final_record.source.unwrap()));
    }
}

#[test]
fn trace_replay_reproduces_reports_and_final() {
    let s = suite(2);
    let cfg = TtsConfig::default();
    for inst in &s.instances {
        let out = tts_run(inst, &inst.posterior, &cfg, 1).unwrap();
        for round in &out.trace.rounds {
            let ids: Vec<u64> = round.rows.iter().map(|r| r.candidate).collect();
            let raws: Vec<RawScores> = round.rows.iter().map(|r| r.report.raw).collect();
            let replay = rank_ensemble(&ids, &raws, &Verifier::ALL).unwrap();
            for (row, r) in round.rows.iter().zip(&replay) {
                assert_eq!(&row.report, r);
            }
            // Survivors are exactly the top M of the replayed ensembles.
            let mut order: Vec<&RewardReport> = replay.iter().collect();
            order.sort_by(|a, b| b.ensemble.total_cmp(&a.ensemble).then(a.candidate.cmp(&b.candidate)));
            let top: HashSet<u64> = order.iter().take(cfg.m).map(|r| r.candidate).collect();
            let kept: HashSet<u64> = round.rows.iter().filter(|r| r.survived).map(|r| r.candidate).collect();
            assert_eq!(top, kept);
        }
        let x0 = DVector::from_vec(out.trace.final_record.x0.clone());
        assert_eq!(score_candidate(&x0, inst, true).unwrap(), out.raw);
    }
}

#[test]
fn ledger_matches_formula_on_grid() {
    let s = suite(1);
    let inst = &s.instances[0];
    for k in [1, 3, 6] {
        for n in [2, 4, 9] {
            for sd in [0, 4, 20] {
                for m in [1, 2] {
                    let cfg = TtsConfig { m, s: sd, ..TtsConfig::ladder_point(k, n) };
                    if cfg.validate().is_err() {
                        continue;
                    }
                    let out = tts_run(inst, &inst.posterior, &cfg, 2).unwrap();
                    assert_eq!(out.ledger.total_velocity(), nfe_formula(&cfg).unwrap(), "K{k} N{n} S{sd} M{m}");
                    let last = out.trace.rounds.last().unwrap();
                    assert_eq!(last.nfe.rollout, out.ledger.summary().rollout);
                }
            }
        }
    }
    // Rollouts that end exactly at t = 0 skip the lookahead.
    let cfg = TtsConfig { k: 1, n: 2, m: 1, s: 2, t: 4, intervention_times: Some(vec![0.5]), ..TtsConfig::default() };
    let out = tts_run(inst, &inst.posterior, &cfg, 0).unwrap();
    assert_eq!(nfe_formula(&cfg).unwrap(), 4 + 2 * 2);
    assert_eq!(out.ledger.total_velocity(), 8);
}

#[test]
fn round_errors_carry_the_round() {
    let s = suite(1);
    let wrong = FlowSpec::gaussian(DVector::zeros(4), 1.0).unwrap();
    let err = tts_run(&s.instances[0], &wrong, &TtsConfig::default(), 0).unwrap_err();
    assert!(matches!(err, Error::Round { round: 1, .. }), "{err}");
}

fn gaussian_1d(mu: f64, sigma: f64) -> FlowSpec {
    FlowSpec::gaussian(DVector::from_element(1, mu), sigma).unwrap()
}

#[test]
fn mspde_boundaries() {
    let spec = gaussian_1d(1.0, 0.4);
    let schedule = StepSchedule::uniform(20).unwrap();
    let mut ledger = BudgetLedger::new();
    let z = LatentState::initial_noise(1, 3, 0);
    let x = solve_ode(&z, &spec, &schedule, 0, 12, &mut ledger).unwrap();

    let direct = lookahead(&x, &spec, &mut ledger).unwrap();
    assert_eq!(mspde(&x, &spec, &schedule, 0, &mut ledger).unwrap(), direct);

    let full = solve_ode(&x, &spec, &schedule, 12, 20, &mut ledger).unwrap();
    let rolled = mspde(&x, &spec, &schedule, 8, &mut ledger).unwrap();
    assert!((rolled - full.value).amax() <= 1e-12);

    let mut fresh = BudgetLedger::new();
    mspde(&x, &spec, &schedule, 3, &mut fresh).unwrap();
    assert_eq!(fresh.velocity_evals(flowtts::Phase::Rollout), 4);
    assert!(mspde(&x, &spec, &schedule, 9, &mut ledger).is_err());
}

#[test]
fn mspde_error_shrinks_with_rollout_length() {
    // Error against the terminal value the candidate's own ODE path reaches.
    let spec = gaussian_1d(2.0, 0.3);
    let schedule = StepSchedule::uniform(40).unwrap();
    let start = 10;
    let mut errs = Vec::new();
    for s in [0, 1, 2, 4, 8] {
        let mut total = 0.0;
        for seed in 0..1000 {
            let mut ledger = BudgetLedger::new();
            let z = LatentState::initial_noise(1, seed, 0);
            let x = solve_ode(&z, &spec, &schedule, 0, start, &mut ledger).unwrap();
            let end = solve_ode(&x, &spec, &schedule, start, 40, &mut ledger).unwrap();
            let est = mspde(&x, &spec, &schedule, s, &mut ledger).unwrap();
            total += (est - end.value).norm_squared();
        }
        errs.push(total / 1000.0);
    }
    assert!(errs.windows(2).all(|w| w[1] <= w[0]), "{errs:?}");
}

#[test]
fn perturbation_has_the_requested_spread() {
    let parent = Candidate::new(0, LatentState::new(DVector::from_vec(vec![0.5, -1.0]), 0.6, vec![]).unwrap());
    let set = CandidateSet::new(0.6, 0, vec![parent]).unwrap();
    let reps = 33_334;
    let mut vals = Vec::new();
    for seed in 0..reps {
        let opts = PerturbOptions { keep_parents: false, mutate_fraction: 1.0, run_seed: seed };
        let kids = perturb(&set, 1.0, 3, &opts, &mut IdAllocator::new()).unwrap();
        for c in kids.members {
            vals.push(c.state.value);
        }
    }
    let n = vals.len() as f64;
    for (k, target) in [0.5, -1.0].iter().enumerate() {
        let mean = vals.iter().map(|v| v[k]).sum::<f64>() / n;
        let var = vals.iter().map(|v| (v[k] - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((mean - target).abs() < 3.0 / n.sqrt());
        assert!((var - 1.0).abs() < 3.0 * (2.0 / n).sqrt());
    }
    let zero = perturb(&set, 0.0, 3, &PerturbOptions { keep_parents: false, ..PerturbOptions::default() }, &mut IdAllocator::new()).unwrap();
    assert!(zero.members.iter().all(|c| c.state.value == set.members[0].state.value));
    assert!(perturb(&set, -0.1, 3, &PerturbOptions::default(), &mut IdAllocator::new()).is_err());
}

#[test]
fn top_m_matches_sort_and_slice() {
    let mut r = stream_rng(&[77]);
    for _ in 0..300 {
        let n = r.random_range(2..12);
        let m = r.random_range(1..=n);
        let members: Vec<Candidate> = (0..n)
            .map(|i| {
                let mut c = Candidate::new(i as u64, LatentState::new(DVector::zeros(1), 0.5, vec![]).unwrap());
                // Coarse values so ties happen.
                let e = -(r.random_range(1..6) as f64);
                c.report = Some(RewardReport {
                    candidate: i as u64,
                    raw: RawScores { fid: 0.0, like: 0.0, smooth: 0.0 },
                    ranks: [None; 3],
                    ensemble: e,
                });
                c
            })
            .collect();
        let set = CandidateSet::new(0.5, 0, members.clone()).unwrap();
        let got: Vec<u64> = select_top_m(&set, m).unwrap().members.iter().map(|c| c.id).collect();
        let mut brute: Vec<(f64, u64)> = members.iter().map(|c| (c.report.unwrap().ensemble, c.id)).collect();
        brute.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        let expected: Vec<u64> = brute.iter().take(m).map(|p| p.1).collect();
        assert_eq!(got, expected);
    }
    let bare = CandidateSet::new(0.5, 0, vec![Candidate::new(4, LatentState::new(DVector::zeros(1), 0.5, vec![]).unwrap())]).unwrap();
    assert!(matches!(select_top_m(&bare, 1), Err(Error::MissingReport(4))));
}

#[test]
fn best_of_one_is_the_plain_solve_and_more_draws_help() {
    let s = suite(1);
    let inst = &s.instances[0];
    let v = VerifierConfig::default();
    let one = best_of_n(inst, &inst.posterior, 1, 50, &v, 8).unwrap();
    let mut ledger = BudgetLedger::new();
    let plain = plain_solve(&inst.posterior, &StepSchedule::uniform(50).unwrap(), 8, &mut ledger).unwrap();
    assert_eq!(one.x0, plain.value);
    assert_eq!(best_of_n(inst, &inst.posterior, 4, 50, &v, 8).unwrap().ledger.total_velocity(), 200);

    // Expected reward of the chosen sample, by likelihood, is nondecreasing in n.
    let small = make_suite(4, 1, &SuiteConfig::default()).unwrap();
    let inst = &small.instances[0];
    let like_only = VerifierConfig::new(vec![Verifier::Likelihood], true).unwrap();
    let schedule = 10;
    let means: Vec<f64> = [1, 2, 4, 8]
        .iter()
        .map(|&n| {
            (0..500)
                .map(|seed| best_of_n(inst, &inst.posterior, n, schedule, &like_only, seed).unwrap().raw.like)
                .sum::<f64>()
                / 500.0
        })
        .collect();
    assert!(means.windows(2).all(|w| w[1] >= w[0]), "{means:?}");
}

#[test]
fn particle_baseline_degenerate_cases() {
    let s = suite(1);
    let inst = &s.instances[0];
    let single = ParticleConfig { particles: 1, survivors: 1, ..ParticleConfig::default() };
    let out = particle_sampling(inst, &inst.posterior, &single, 4).unwrap();
    assert_eq!(out.ledger.total_velocity(), particle_nfe(&single).unwrap());

    let quiet = ParticleConfig { sigma: SigmaSchedule::Constant(0.0), ..ParticleConfig::default() };
    let a = particle_sampling(inst, &inst.posterior, &quiet, 4).unwrap();
    let mut ledger = BudgetLedger::new();
    let plain = plain_solve(&inst.posterior, &StepSchedule::uniform(50).unwrap(), 4, &mut ledger).unwrap();
    // Without diffusion every particle follows the same ODE path.
    assert!((a.x0 - plain.value).amax() < 1e-12);
    assert_eq!(a.chosen, 0);

    let default = ParticleConfig::default();
    let out = particle_sampling(inst, &inst.posterior, &default, 4).unwrap();
    assert_eq!(out.ledger.total_velocity(), particle_nfe(&default).unwrap());
}

#[test]
fn runs_are_deterministic() {
    let s = suite(1);
    let inst = &s.instances[0];
    let a = tts_run(inst, &inst.posterior, &TtsConfig::default(), 12).unwrap();
    let b = tts_run(inst, &inst.posterior, &TtsConfig::default(), 12).unwrap();
    assert_eq!(a.x0, b.x0);
    assert_eq!(a.trace, b.trace);
    let c = tts_run(inst, &inst.posterior, &TtsConfig::default(), 13).unwrap();
    assert_ne!(a.x0, c.x0);
}
