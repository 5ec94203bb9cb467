use std::path::PathBuf;

use rayon::prelude::*;
use serde::Serialize;

use crate::budget::NfeSummary;
use crate::error::Result;
use crate::rng::item_seed;
use crate::search::{nfe_formula, tts_run, Trace, TtsConfig, TtsOutcome};
use crate::study::finish_csv;
use crate::task::Suite;
use crate::verifiers::{RawScores, Verifier};

use super::{read_file, write_file, Check, Report};

#[derive(Debug, Clone, Serialize)]
pub struct InstanceSummary {
    pub instance: u64,
    pub seed: u64,
    pub x0: Vec<f64>,
    pub raw: RawScores,
    /// Squared distance to the hidden truth; never seen by the search.
    pub truth_sq_error: f64,
    pub final_source: Option<u64>,
    pub nfe: NfeSummary,
}

#[derive(Debug, Clone, Serialize)]
pub struct TtsSummary {
    pub label: String,
    pub config: TtsConfig,
    pub seed: u64,
    pub nfe_formula: u64,
    pub mean_raw: RawScores,
    pub mean_truth_sq_error: f64,
    pub instances: Vec<InstanceSummary>,
    pub checks: Vec<Check>,
}

/// Runs the search on every suite instance; instance `i` uses `item_seed(seed, i)`.
pub fn run_suite(suite: &Suite, config: &TtsConfig, seed: u64) -> Result<Vec<TtsOutcome>> {
    suite
        .instances
        .par_iter()
        .map(|inst| tts_run(inst, &inst.posterior, config, item_seed(seed, inst.id)))
        .collect()
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// One row per scored candidate plus a `final` row per instance.
///
/// Columns: `instance, round, candidate, parent, time, fid, like, smooth,
/// rank_fid, rank_like, rank_smooth, ensemble, survived`.
pub fn trace_csv(traces: &[(u64, &Trace)]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "instance", "round", "candidate", "parent", "time", "fid", "like", "smooth", "rank_fid",
        "rank_like", "rank_smooth", "ensemble", "survived",
    ])?;
    for (instance, trace) in traces {
        for row in trace.rows() {
            let r = &row.report;
            let mut rec = vec![
                instance.to_string(),
                row.round.to_string(),
                row.candidate.to_string(),
                opt(row.parent),
                row.time.to_string(),
                r.raw.fid.to_string(),
                r.raw.like.to_string(),
                r.raw.smooth.to_string(),
            ];
            rec.extend(r.ranks.iter().map(|x| opt(*x)));
            rec.push(r.ensemble.to_string());
            rec.push(row.survived.to_string());
            w.write_record(&rec)?;
        }
        let f = &trace.final_record;
        w.write_record([
            instance.to_string(),
            "final".into(),
            String::new(),
            opt(f.source),
            "0".into(),
            f.raw.fid.to_string(),
            f.raw.like.to_string(),
            f.raw.smooth.to_string(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
        ])?;
    }
    finish_csv(w)
}

pub(crate) fn mean_raw(raws: impl Iterator<Item = RawScores>) -> RawScores {
    let mut acc = [0.0; 3];
    let mut n = 0usize;
    for r in raws {
        for v in Verifier::ALL {
            acc[v.column()] += r.get(v);
        }
        n += 1;
    }
    let n = n.max(1) as f64;
    RawScores {
        fid: acc[0] / n,
        like: acc[1] / n,
        smooth: acc[2] / n,
    }
}

pub(crate) fn truth_sq_error(x: &nalgebra::DVector<f64>, truth: &nalgebra::DVector<f64>) -> f64 {
    (x - truth).norm_squared()
}

pub fn summarize(suite: &Suite, config: &TtsConfig, seed: u64, outcomes: &[TtsOutcome]) -> Result<TtsSummary> {
    let formula = nfe_formula(config)?;
    let instances: Vec<InstanceSummary> = suite
        .instances
        .iter()
        .zip(outcomes)
        .map(|(inst, o)| InstanceSummary {
            instance: inst.id,
            seed: item_seed(seed, inst.id),
            x0: o.x0.as_slice().to_vec(),
            raw: o.raw,
            truth_sq_error: truth_sq_error(&o.x0, &inst.truth),
            final_source: o.trace.final_record.source,
            nfe: o.ledger.summary(),
        })
        .collect();
    let mismatched: Vec<u64> = instances
        .iter()
        .filter(|s| s.nfe.total != formula)
        .map(|s| s.instance)
        .collect();
    let checks = vec![Check::new(
        "nfe_formula",
        mismatched.is_empty(),
        if mismatched.is_empty() {
            format!("every instance spent {formula} evaluations")
        } else {
            format!("ledger disagrees with {formula} on instances {mismatched:?}")
        },
    )];
    let mean_err = instances.iter().map(|s| s.truth_sq_error).sum::<f64>() / instances.len() as f64;
    Ok(TtsSummary {
        label: config.label(),
        config: config.clone(),
        seed,
        nfe_formula: formula,
        mean_raw: mean_raw(instances.iter().map(|s| s.raw)),
        mean_truth_sq_error: mean_err,
        instances,
        checks,
    })
}

#[derive(Debug, Clone)]
pub struct TtsArgs {
    pub suite: PathBuf,
    pub config: Option<PathBuf>,
    pub seed: u64,
    pub blind: bool,
    pub out: PathBuf,
}

/// Writes `summary.json` and `trace.csv` under `args.out`.
pub fn cmd_tts(args: &TtsArgs) -> Result<Report> {
    let suite = Suite::from_json(&read_file(&args.suite)?)?;
    let mut config = match &args.config {
        Some(p) => serde_json::from_str(&read_file(p)?)?,
        None => TtsConfig::default(),
    };
    if args.blind {
        config.blind = true;
    }
    let outcomes = run_suite(&suite, &config, args.seed)?;
    let summary = summarize(&suite, &config, args.seed, &outcomes)?;
    let traces: Vec<(u64, &Trace)> = suite.instances.iter().map(|i| i.id).zip(outcomes.iter().map(|o| &o.trace)).collect();

    let mut report = Report::default();
    write_file(&args.out, "summary.json", &serde_json::to_string_pretty(&summary)?, &mut report)?;
    write_file(&args.out, "trace.csv", &trace_csv(&traces)?, &mut report)?;
    report.checks = summary.checks;
    Ok(report)
}
