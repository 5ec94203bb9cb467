//! The reverse SDE with any diffusion level keeps the ODE's marginals.
//!
//! `cargo run --release --example sde_marginals`

use flowtts::flow::{sample_ode, sample_sde, Component};
use flowtts::{BudgetLedger, FlowSpec, SigmaSchedule, StepSchedule};
use nalgebra::DVector;

fn moments(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (m, xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
}

fn main() -> flowtts::Result<()> {
    let spec = FlowSpec::new(
        1,
        vec![
            Component { weight: 0.3, mean: DVector::from_element(1, -2.0), scale: 0.4 },
            Component { weight: 0.7, mean: DVector::from_element(1, 1.5), scale: 0.6 },
        ],
    )?;
    let schedule = StepSchedule::uniform(400)?;
    let n = 5_000;
    let mut ledger = BudgetLedger::new();
    let ode: Vec<f64> = (0..n)
        .map(|i| sample_ode(&spec, &schedule, 1, i, &mut ledger).map(|s| s.value[0]))
        .collect::<flowtts::Result<_>>()?;
    let (m0, v0) = moments(&ode);
    println!("ode           mean {m0:+.4} var {v0:.4}");
    for sigma in [0.25, 0.5, 1.0] {
        let sched = SigmaSchedule::Constant(sigma);
        let sde: Vec<f64> = (0..n)
            .map(|i| sample_sde(&spec, &schedule, &sched, 1, i, &mut ledger).map(|s| s.value[0]))
            .collect::<flowtts::Result<_>>()?;
        let (m, v) = moments(&sde);
        println!("sde sigma={sigma:<4} mean {m:+.4} var {v:.4}  ratio {:.3}", v / v0);
    }
    let exact = spec.mean()[0];
    println!("exact mean {exact:+.4}");
    Ok(())
}
