//! Property tests for the ranking, budget, study and sequence invariants.

use flowtts::flow::{ode_step, sde_step};
use flowtts::rng::stream_rng;
use flowtts::study::{bt_fit, BtOptions, ComparisonMatrix, SelectionTable};
use flowtts::umf::{block_forward, build_sequence, encode_positions, rotate, BlockWeights, ModalityEmbedding};
use flowtts::verifiers::{average_ranks, rank_ensemble, RawScores};
use flowtts::{BudgetLedger, FlowSpec, LatentState, Verifier};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn raws_strategy() -> impl Strategy<Value = Vec<RawScores>> {
    prop::collection::vec(
        (-20i32..20, -20i32..20, -20i32..20).prop_map(|(a, b, c)| RawScores {
            fid: a as f64 * 0.5,
            like: b as f64 * 0.25,
            smooth: c as f64,
        }),
        1..12,
    )
}

fn subset_strategy() -> impl Strategy<Value = Vec<Verifier>> {
    (1u8..8).prop_map(|mask| {
        Verifier::ALL
            .iter()
            .enumerate()
            .filter(|(i, _)| mask & (1 << i) != 0)
            .map(|(_, v)| *v)
            .collect()
    })
}

fn ensembles(raws: &[RawScores], subset: &[Verifier]) -> Vec<f64> {
    let ids: Vec<u64> = (0..raws.len() as u64).collect();
    rank_ensemble(&ids, raws, subset).unwrap().iter().map(|r| r.ensemble).collect()
}

proptest! {
    #[test]
    fn ensemble_ignores_monotone_rescaling(raws in raws_strategy(), subset in subset_strategy(),
                                           scale in 0.01f64..100.0, shift in -50.0f64..50.0, col in 0usize..3) {
        let before = ensembles(&raws, &subset);
        let warped: Vec<RawScores> = raws.iter().map(|r| {
            let mut a = r.as_array();
            a[col] = (a[col] * scale + shift).powi(3);
            RawScores { fid: a[0], like: a[1], smooth: a[2] }
        }).collect();
        prop_assert_eq!(before, ensembles(&warped, &subset));
    }

    #[test]
    fn ensemble_is_permutation_equivariant(raws in raws_strategy(), subset in subset_strategy(), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let mut perm: Vec<usize> = (0..raws.len()).collect();
        perm.shuffle(&mut stream_rng(&[seed]));
        let ids: Vec<u64> = perm.iter().map(|&i| i as u64).collect();
        let shuffled: Vec<RawScores> = perm.iter().map(|&i| raws[i]).collect();
        let base = ensembles(&raws, &subset);
        let out = rank_ensemble(&ids, &shuffled, &subset).unwrap();
        for (pos, r) in out.iter().enumerate() {
            prop_assert_eq!(r.candidate, perm[pos] as u64);
            prop_assert_eq!(r.ensemble, base[perm[pos]]);
        }
    }

    #[test]
    fn ensemble_bounds_and_rank_sums(raws in raws_strategy(), subset in subset_strategy()) {
        let n = raws.len() as f64;
        for e in ensembles(&raws, &subset) {
            prop_assert!(e >= -n && e <= -1.0);
        }
        for v in Verifier::ALL {
            let col: Vec<f64> = raws.iter().map(|r| r.get(v)).collect();
            let ranks = average_ranks(&col).unwrap();
            prop_assert!((ranks.iter().sum::<f64>() - n * (n + 1.0) / 2.0).abs() < 1e-9);
        }
    }

    #[test]
    fn ledger_counts_steps_exactly(ops in prop::collection::vec(any::<bool>(), 0..40), seed in any::<u64>()) {
        let spec = FlowSpec::gaussian(DVector::from_element(2, 0.5), 0.7).unwrap();
        let mut ledger = BudgetLedger::new();
        let mut r = stream_rng(&[seed]);
        let mut x = LatentState::initial_noise(2, seed, 0);
        let dt = -1.0 / 50.0;
        for &stochastic in &ops {
            x = if stochastic {
                sde_step(&x, &spec, dt, 0.3, &mut r, &mut ledger).unwrap()
            } else {
                ode_step(&x, &spec, dt, &mut ledger).unwrap()
            };
        }
        let m = ops.iter().filter(|s| **s).count() as u64;
        prop_assert_eq!(ledger.total_velocity(), ops.len() as u64);
        prop_assert_eq!(ledger.total_score(), m);
    }

    #[test]
    fn bt_fit_gauge_invariant(w in prop::collection::vec(1u64..40, 6), c in 0.001f64..1000.0) {
        let wins = vec![vec![0, w[0], w[1]], vec![w[2], 0, w[3]], vec![w[4], w[5], 0]];
        let m = ComparisonMatrix::new(vec!["a".into(), "b".into(), "c".into()], wins).unwrap();
        let start = vec![0.2, 0.5, 0.3];
        let a = bt_fit(&m, &BtOptions { initial: Some(start.clone()), ..BtOptions::default() }).unwrap();
        let scaled: Vec<f64> = start.iter().map(|s| s * c).collect();
        let b = bt_fit(&m, &BtOptions { initial: Some(scaled), ..BtOptions::default() }).unwrap();
        for (x, y) in a.scores.iter().zip(&b.scores) {
            prop_assert!((x - y).abs() < 1e-9);
        }
        prop_assert!((a.scores.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(a.log_likelihood.windows(2).all(|p| p[1] >= p[0] - 1e-9 * p[0].abs()));
        let mm = bt_fit(&m, &BtOptions { initial: Some(start), newton: false, ..BtOptions::default() }).unwrap();
        prop_assert!(mm.log_likelihood.windows(2).all(|p| p[1] >= p[0] - 1e-9 * p[0].abs()));
        for (x, y) in a.scores.iter().zip(&mm.scores) {
            prop_assert!((x - y).abs() < 1e-8);
        }
    }

    #[test]
    fn top_k_is_monotone_and_counts_membership(scores in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 4), 1..30)) {
        let methods: Vec<String> = (0..4).map(|i| format!("m{i}")).collect();
        let table = SelectionTable::from_scores(methods.clone(), &scores).unwrap();
        for (i, m) in methods.iter().enumerate() {
            let mut prev = 0.0;
            for k in 1..=4 {
                let r = table.top_k_ratio(m, k).unwrap();
                prop_assert!(r >= prev);
                prev = r;
                let brute = scores.iter().filter(|s| {
                    let better = s.iter().enumerate().filter(|(j, v)| **v > s[i] || (**v == s[i] && *j < i)).count();
                    better < k
                }).count() as f64 / scores.len() as f64;
                prop_assert!((r - brute).abs() < 1e-12);
            }
            prop_assert_eq!(table.top_k_ratio(m, 4).unwrap(), 1.0);
        }
    }

    #[test]
    fn rotation_preserves_norm(pos in 0usize..10_000, seed in any::<u64>()) {
        use rand::Rng;
        let mut r = stream_rng(&[seed]);
        let mut row: Vec<f64> = (0..8).map(|_| r.random_range(-3.0..3.0)).collect();
        let before: f64 = row.iter().map(|v| v * v).sum();
        rotate(&mut row, pos, 10_000.0);
        let after: f64 = row.iter().map(|v| v * v).sum();
        prop_assert!((before - after).abs() < 1e-9);
    }

    #[test]
    fn block_keeps_shape_when_stacked(lz in 0usize..4, li in 0usize..4, lt in 1usize..4, depth in 1usize..4, seed in any::<u64>()) {
        use rand::Rng;
        let d = 8;
        let mut r = stream_rng(&[seed]);
        let mut mat = |n: usize| DMatrix::from_fn(n, d, |_, _| r.random_range(-1.0..1.0));
        let seq = build_sequence(&mat(lz), &mat(li), &mat(lt)).unwrap();
        let mut x = encode_positions(&seq, &ModalityEmbedding::random(d, seed)).unwrap();
        for layer in 0..depth {
            let w = BlockWeights::random(d, 16, 2, seed ^ layer as u64).unwrap();
            x = block_forward(&x, &w).unwrap();
        }
        prop_assert_eq!(x.tokens.shape(), (lz + li + lt, d));
        prop_assert!(x.tokens.iter().all(|v| v.is_finite()));
    }
}
