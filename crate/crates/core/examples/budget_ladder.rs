//! Reward against compute: the search ladder next to matched baselines.
//!
//! `cargo run --release --example budget_ladder [instances]`

use flowtts::harness::{run_sweep, SweepConfig};

fn main() -> flowtts::Result<()> {
    let count = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(200);
    let mut config = SweepConfig::default();
    config.suite.count = count;
    config.ablation = true;
    let result = run_sweep(&config)?;

    println!("{:<16} {:>6} {:>9} {:>8} {:>10}", "method", "nfe", "reward", "std", "truth mse");
    for r in &result.pareto {
        println!(
            "{:<16} {:>6} {:>9.4} {:>8.4} {:>10.4}",
            r.method, r.nfe, r.mean_reward, r.std_reward, r.mean_truth_sq_error
        );
    }
    println!("\nverifier ablation at the reference point");
    for r in &result.ablation {
        println!("{:<16} {:>9.4} {:>10.4}", r.verifiers, r.mean_reward, r.mean_truth_sq_error);
    }
    println!(
        "\nbudget ratio {:.1}x (reference ladder: {:.0}x)",
        result.nfe_ratio, result.reference_nfe_ratio
    );
    for t in &result.tests {
        println!("{}: {} vs {} diff {:.4} p {:.2e}", t.name, t.treated, t.baseline, t.test.mean_diff, t.test.p_value);
    }
    for c in &result.checks {
        println!("{} {}: {}", if c.passed { "pass" } else { "FAIL" }, c.name, c.detail);
    }
    Ok(())
}
