//! Bradley-Terry scores and top-K ratios from simulated preference votes.
//!
//! `cargo run --release --example preference_study`

use flowtts::rng;
use flowtts::study::{bt_fit, BtOptions, ComparisonMatrix, SelectionTable};
use rand::Rng;

fn main() -> flowtts::Result<()> {
    let methods: Vec<String> = ["ours", "sampler_a", "sampler_b", "sampler_c"].iter().map(|s| s.to_string()).collect();
    let strength = [0.4, 0.3, 0.2, 0.1];
    let mut r = rng::stream_rng(&[2024]);
    let n = methods.len();
    let mut wins = vec![vec![0u64; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            for _ in 0..500 {
                if r.random::<f64>() < strength[i] / (strength[i] + strength[j]) {
                    wins[i][j] += 1;
                } else {
                    wins[j][i] += 1;
                }
            }
        }
    }
    let fit = bt_fit(&ComparisonMatrix::new(methods.clone(), wins)?, &BtOptions::default())?;
    println!("{} MM iterations, converged {}", fit.iterations, fit.converged);
    for ((m, p), rank) in methods.iter().zip(&fit.scores).zip(fit.ranks()) {
        println!("{rank}. {m:<10} pi {p:.4}");
    }

    // Each group: a voter scores every method once, noisily.
    let scores: Vec<Vec<f64>> = (0..300)
        .map(|_| strength.iter().map(|s| s.ln() + 0.8 * r.random::<f64>()).collect())
        .collect();
    let table = SelectionTable::from_scores(methods.clone(), &scores)?;
    for k in 1..=3 {
        println!("top-{k} ratio of ours: {:.3}", table.top_k_ratio("ours", k)?);
    }
    Ok(())
}
