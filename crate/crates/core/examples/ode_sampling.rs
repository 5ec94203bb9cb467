//! Euler sampling of a closed-form flow, checked against its exact marginal.
//!
//! `cargo run --release --example ode_sampling`

use flowtts::flow::sample_ode;
use flowtts::{BudgetLedger, FlowSpec, StepSchedule};
use nalgebra::DVector;

fn main() -> flowtts::Result<()> {
    let spec = FlowSpec::gaussian(DVector::from_element(1, 3.0), 0.5)?;
    let schedule = StepSchedule::uniform(200)?;
    let mut ledger = BudgetLedger::new();
    let n = 10_000;
    let xs: Vec<f64> = (0..n)
        .map(|i| sample_ode(&spec, &schedule, 7, i, &mut ledger).map(|s| s.value[0]))
        .collect::<flowtts::Result<_>>()?;
    let mean = xs.iter().sum::<f64>() / n as f64;
    let std = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    println!("target  mean 3.0000  std 0.5000");
    println!("sampled mean {mean:.4}  std {std:.4}  ({} velocity evaluations)", ledger.total_velocity());

    // The velocity field along one trajectory.
    let x = DVector::from_element(1, 0.8);
    for t in [1.0, 0.75, 0.5, 0.25, 0.01] {
        let u = spec.velocity(&x, t)?;
        let score = spec.score(&x, t)?;
        println!("t={t:<5} u(0.8)={:+.4}  score(0.8)={:+.4}", u[0], score[0]);
    }
    Ok(())
}
