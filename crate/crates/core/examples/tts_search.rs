//! One search run, round by round.
//!
//! `cargo run --release --example tts_search`

use flowtts::search::{nfe_formula, plain_solve, tts_run};
use flowtts::task::make_suite;
use flowtts::verifiers::score_candidate;
use flowtts::{BudgetLedger, SuiteConfig, TtsConfig};

fn main() -> flowtts::Result<()> {
    let suite = make_suite(0, 1, &SuiteConfig::default())?;
    let inst = &suite.instances[0];
    let config = TtsConfig::default();
    let seed = 42;
    let out = tts_run(inst, &inst.posterior, &config, seed)?;

    for round in &out.trace.rounds {
        let best = round.rows.iter().max_by(|a, b| a.report.ensemble.total_cmp(&b.report.ensemble)).unwrap();
        let kept: Vec<u64> = round.rows.iter().filter(|r| r.survived).map(|r| r.candidate).collect();
        println!(
            "round {} t={:.2} sigma={:.3}: {} candidates, best {} ({:.2}), kept {:?}, nfe so far {}",
            round.round,
            round.time,
            round.sigma,
            round.rows.len(),
            best.candidate,
            best.report.ensemble,
            kept,
            round.nfe.total
        );
    }
    let nfe = out.ledger.summary();
    println!(
        "final from candidate {:?}: advance {} rollout {} final {} total {} (formula {})",
        out.trace.final_record.source,
        nfe.advance,
        nfe.rollout,
        nfe.final_solve,
        nfe.total,
        nfe_formula(&config)?
    );

    let mut ledger = BudgetLedger::new();
    let plain = plain_solve(&inst.posterior, &config.schedule()?, seed, &mut ledger)?;
    let plain_raw = score_candidate(&plain.value, inst, true)?;
    println!("plain solve  fid {:.3} like {:.3} smooth {:.3}", plain_raw.fid, plain_raw.like, plain_raw.smooth);
    println!("searched     fid {:.3} like {:.3} smooth {:.3}", out.raw.fid, out.raw.like, out.raw.smooth);
    println!(
        "distance to truth: plain {:.3}, searched {:.3}",
        (&plain.value - &inst.truth).norm(),
        (&out.x0 - &inst.truth).norm()
    );
    Ok(())
}
