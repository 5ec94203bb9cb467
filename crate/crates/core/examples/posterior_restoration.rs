//! A blurred, downsampled signal and the exact posterior over its source.
//!
//! `cargo run --release --example posterior_restoration`

use flowtts::flow::sample_ode;
use flowtts::task::make_suite;
use flowtts::{BudgetLedger, StepSchedule, SuiteConfig};

fn main() -> flowtts::Result<()> {
    let suite = make_suite(3, 4, &SuiteConfig::default())?;
    let schedule = StepSchedule::uniform(50)?;
    for inst in &suite.instances {
        let post_mean = inst.exact.mean();
        let mut ledger = BudgetLedger::new();
        let draws: Vec<_> = (0..64)
            .map(|i| sample_ode(&inst.posterior, &schedule, inst.id, i, &mut ledger))
            .collect::<flowtts::Result<_>>()?;
        let mc = draws.iter().fold(post_mean.clone() * 0.0, |acc, s| acc + &s.value) / draws.len() as f64;
        println!(
            "instance {}: |truth - posterior mean| {:.3}, |posterior mean - flow sample mean| {:.3}, components {}",
            inst.id,
            (&inst.truth - &post_mean).norm(),
            (&post_mean - mc).norm(),
            inst.exact.components().len()
        );
    }
    let inst = &suite.instances[0];
    println!("\nobservation of instance 0 ({} values):", inst.observation.len());
    println!("{:.3?}", inst.observation.as_slice());
    Ok(())
}
