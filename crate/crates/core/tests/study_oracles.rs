//! Bradley-Terry and top-K ratios against closed forms and simulation.

use flowtts::rng::stream_rng;
use flowtts::study::{bt_fit, BtOptions, ComparisonMatrix, SelectionTable, DEFAULT_SMOOTHING};
use flowtts::Error;
use rand::Rng;

fn labels(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("m{i}")).collect()
}

#[test]
fn two_items_three_to_one() {
    let m = ComparisonMatrix::new(labels(2), vec![vec![0, 3], vec![1, 0]]).unwrap();
    let fit = bt_fit(&m, &BtOptions::default()).unwrap();
    assert!((fit.scores[0] / fit.scores[1] - 3.0).abs() < 1e-12);
    assert!((fit.scores[0] - 0.75).abs() < 1e-12);
}

#[test]
fn symmetric_wins_give_equal_scores() {
    let m = ComparisonMatrix::new(labels(4), vec![vec![0, 5, 5, 5], vec![5, 0, 5, 5], vec![5, 5, 0, 5], vec![5, 5, 5, 0]]).unwrap();
    let fit = bt_fit(&m, &BtOptions::default()).unwrap();
    assert!(fit.scores.iter().all(|s| (s - 0.25).abs() < 1e-12));
}

#[test]
fn planted_scores_are_recovered() {
    let pi = [0.5, 0.3, 0.2];
    let mut r = stream_rng(&[2718]);
    let mut wins = vec![vec![0u64; 3]; 3];
    for i in 0..3 {
        for j in i + 1..3 {
            for _ in 0..100_000 {
                if r.random::<f64>() < pi[i] / (pi[i] + pi[j]) {
                    wins[i][j] += 1;
                } else {
                    wins[j][i] += 1;
                }
            }
        }
    }
    let fit = bt_fit(&ComparisonMatrix::new(labels(3), wins).unwrap(), &BtOptions::default()).unwrap();
    assert!(fit.converged);
    for (got, want) in fit.scores.iter().zip(pi) {
        assert!((got - want).abs() < 1e-2, "{got} vs {want}");
    }
    assert!(fit.log_likelihood.windows(2).all(|w| w[1] >= w[0] - 1e-9 * w[0].abs()));
    assert_eq!(fit.ranks(), vec![1, 2, 3]);
}

#[test]
fn unidentifiable_inputs_are_reported() {
    // m2 never loses: no finite maximizer.
    let m = ComparisonMatrix::new(labels(3), vec![vec![0, 4, 0], vec![2, 0, 0], vec![3, 1, 0]]).unwrap();
    assert!(matches!(bt_fit(&m, &BtOptions::default()), Err(Error::Unidentifiable(_))));
    let fit = bt_fit(&m, &BtOptions { smoothing: Some(DEFAULT_SMOOTHING), ..BtOptions::default() }).unwrap();
    assert!(fit.scores[2] > fit.scores[0]);

    let isolated = ComparisonMatrix::new(labels(3), vec![vec![0, 1, 0], vec![1, 0, 0], vec![0, 0, 0]]).unwrap();
    assert!(matches!(bt_fit(&isolated, &BtOptions::default()), Err(Error::Unidentifiable(_))));
}

#[test]
fn top_k_ratio_examples() {
    // Method 0 first in 80 of 100 groups and second in the other 20.
    let mut groups = Vec::new();
    for g in 0..100 {
        groups.push(if g < 80 { vec![0, 1, 2] } else { vec![1, 0, 2] });
    }
    let t = SelectionTable::from_rankings(labels(3), groups).unwrap();
    assert_eq!(t.top_k_ratio("m0", 1).unwrap(), 0.8);
    assert_eq!(t.top_k_ratio("m0", 2).unwrap(), 1.0);
    assert_eq!(t.top_k_ratio("m2", 3).unwrap(), 1.0);
    assert!(matches!(t.top_k_ratio("nope", 1), Err(Error::UnknownMethod(_))));
    assert!(t.top_k_ratio("m0", 0).is_err());
}

#[test]
fn csv_inputs_and_diagnostics() {
    let wide = "method_a,method_b,wins_a,wins_b\nx,y,3,1\n";
    let m = ComparisonMatrix::from_csv(wide, "wide.csv").unwrap();
    let fit = bt_fit(&m, &BtOptions::default()).unwrap();
    assert!((fit.scores[0] - 0.75).abs() < 1e-12);

    let long = "winner,loser\nx,y\nx,y\nx,y\ny,x\n";
    let m2 = ComparisonMatrix::from_csv(long, "long.csv").unwrap();
    assert_eq!(m2.wins(), m.wins());

    let bad = "method_a,method_b,wins_a,wins_b\nx,y,3,1\nx,z,two,1\n";
    let err = ComparisonMatrix::from_csv(bad, "bad.csv").unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("bad.csv") && msg.contains('3'), "{msg}");
}
