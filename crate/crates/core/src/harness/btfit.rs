use std::path::PathBuf;

use crate::error::Result;
use crate::study::{bt_fit, BtOptions, ComparisonMatrix, SelectionTable};

use super::{read_file, write_file, Check, Report};

#[derive(Debug, Clone)]
pub struct BtfitArgs {
    pub comparisons: PathBuf,
    /// Optional `group,method,score` table for top-K ratios.
    pub selections: Option<PathBuf>,
    pub options: BtOptions,
    pub out: PathBuf,
}

/// Writes `scores.csv` (`method, pi, rank`) and, with selections, `topk.csv`
/// (`method, k, ratio`).
pub fn cmd_btfit(args: &BtfitArgs) -> Result<Report> {
    let source = args.comparisons.display().to_string();
    let matrix = ComparisonMatrix::from_csv(&read_file(&args.comparisons)?, &source)?;
    let fit = bt_fit(&matrix, &args.options)?;
    let mut report = Report::default();
    write_file(&args.out, "scores.csv", &fit.to_csv()?, &mut report)?;

    let monotone = fit.log_likelihood.windows(2).all(|w| w[1] >= w[0] - 1e-9 * w[0].abs().max(1.0));
    report.checks.push(Check::new(
        "converged",
        fit.converged,
        format!("{} iterations", fit.iterations),
    ));
    report.checks.push(Check::new("likelihood_monotone", monotone, "log-likelihood never decreased"));

    if let Some(path) = &args.selections {
        let table = SelectionTable::from_csv(&read_file(path)?, &path.display().to_string())?;
        write_file(&args.out, "topk.csv", &table.to_csv()?, &mut report)?;
    }
    Ok(report)
}
