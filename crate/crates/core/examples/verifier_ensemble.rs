//! Three verifiers with incomparable scales merged by average rank.
//!
//! `cargo run --release --example verifier_ensemble`

use flowtts::flow::sample_ode;
use flowtts::task::make_suite;
use flowtts::verifiers::{rank_ensemble, score_candidate};
use flowtts::{BudgetLedger, StepSchedule, SuiteConfig, Verifier};

fn main() -> flowtts::Result<()> {
    let suite = make_suite(5, 1, &SuiteConfig::default())?;
    let inst = &suite.instances[0];
    let schedule = StepSchedule::uniform(50)?;
    let mut ledger = BudgetLedger::new();
    let mut raws = Vec::new();
    for i in 0..6 {
        let x = sample_ode(&inst.posterior, &schedule, 11, i, &mut ledger)?.value;
        raws.push(score_candidate(&x, inst, true)?);
    }
    let ids: Vec<u64> = (0..raws.len() as u64).collect();
    let reports = rank_ensemble(&ids, &raws, &Verifier::ALL)?;
    println!("{:>3} {:>10} {:>10} {:>8} {:>14} {:>9}", "id", "fid", "like", "smooth", "ranks", "ensemble");
    for r in &reports {
        let ranks: Vec<String> = r.ranks.iter().map(|x| format!("{:.1}", x.unwrap_or(f64::NAN))).collect();
        println!(
            "{:>3} {:>10.3} {:>10.3} {:>8.3} {:>14} {:>9.3}",
            r.candidate,
            r.raw.fid,
            r.raw.like,
            r.raw.smooth,
            ranks.join("/"),
            r.ensemble
        );
    }
    let smooth_only = rank_ensemble(&ids, &raws, &[Verifier::Smoothness])?;
    let best = smooth_only.iter().max_by(|a, b| a.ensemble.total_cmp(&b.ensemble)).unwrap();
    println!("\nsmoothness alone prefers candidate {}", best.candidate);
    Ok(())
}
