use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;

use crate::budget::BudgetLedger;
use crate::error::{Error, Result};
use crate::flow::{sample_ode, sample_sde, FlowSpec, SigmaSchedule, StepSchedule};
use crate::rng::item_seed;
use crate::study::finish_csv;

use super::{read_file, write_file, Check, Report};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMode {
    Ode,
    Sde,
}

impl FromStr for SampleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ode" => Ok(SampleMode::Ode),
            "sde" => Ok(SampleMode::Sde),
            other => Err(Error::InvalidConfig(format!("mode must be ode or sde, got `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SampleArgs {
    pub spec: PathBuf,
    pub steps: usize,
    pub seeds: usize,
    pub seed: u64,
    pub mode: SampleMode,
    pub sigma: f64,
    pub out: PathBuf,
}

/// Terminal samples as CSV: `seed, x_0 .. x_{d-1}, nfe`.
///
/// Row `j` starts from the noise of `item_seed(seed, j)`, the same noise
/// `tts` uses for suite instance `j`.
pub fn sample_csv(
    spec: &FlowSpec,
    steps: usize,
    seeds: usize,
    seed: u64,
    mode: SampleMode,
    sigma: f64,
) -> Result<String> {
    let schedule = StepSchedule::uniform(steps)?;
    let sigma = SigmaSchedule::Constant(sigma);
    sigma.validate()?;
    let rows: Vec<(Vec<f64>, u64)> = (0..seeds as u64)
        .into_par_iter()
        .map(|j| {
            let s = item_seed(seed, j);
            let mut ledger = BudgetLedger::new();
            let end = match mode {
                SampleMode::Ode => sample_ode(spec, &schedule, s, 0, &mut ledger)?,
                SampleMode::Sde => sample_sde(spec, &schedule, &sigma, s, 0, &mut ledger)?,
            };
            Ok((end.value.as_slice().to_vec(), ledger.total_velocity()))
        })
        .collect::<Result<_>>()?;

    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["seed".to_string()];
    header.extend((0..spec.dim()).map(|i| format!("x_{i}")));
    header.push("nfe".into());
    w.write_record(&header)?;
    for (j, (x, nfe)) in rows.iter().enumerate() {
        let mut rec = vec![j.to_string()];
        rec.extend(x.iter().map(|v| v.to_string()));
        rec.push(nfe.to_string());
        w.write_record(&rec)?;
    }
    finish_csv(w)
}

pub fn cmd_sample(args: &SampleArgs) -> Result<Report> {
    let text = read_file(&args.spec)?;
    let spec: FlowSpec = serde_json::from_str(&text)?;
    let csv = sample_csv(&spec, args.steps, args.seeds, args.seed, args.mode, args.sigma)?;
    let mut report = Report::default();
    let (dir, name) = split_out(&args.out, "samples.csv");
    write_file(&dir, &name, &csv, &mut report)?;
    report.checks.push(Check::new("rows", csv.lines().count() == args.seeds + 1, format!("{} samples", args.seeds)));
    Ok(report)
}

/// `--out` may name a file or a directory.
pub(crate) fn split_out(out: &Path, default_name: &str) -> (PathBuf, String) {
    if out.extension().is_some() {
        let dir = out.parent().map(Path::to_path_buf).unwrap_or_default();
        let name = out.file_name().unwrap().to_string_lossy().into_owned();
        (if dir.as_os_str().is_empty() { PathBuf::from(".") } else { dir }, name)
    } else {
        (out.to_path_buf(), default_name.to_string())
    }
}
