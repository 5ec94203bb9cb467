//! Command implementations behind the `flowtts` binary.
//!
//! Each command reads its inputs, writes deterministic CSV/JSON files and
//! returns a [`Report`] listing the checks it ran. The binary exits non-zero
//! iff a check failed; the files are written either way.

mod btfit;
mod sample;
mod sweep;
mod tts;
mod umf_demo;

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::Result;

pub use btfit::{cmd_btfit, BtfitArgs};
pub use sample::{cmd_sample, sample_csv, SampleArgs, SampleMode};
pub use sweep::{
    cmd_sweep, default_ladder, run_sweep, AblationRow, BaselineKind, ParetoRow, SweepConfig,
    SweepResult, SuiteSpec,
};
pub use tts::{cmd_tts, run_suite, summarize, trace_csv, InstanceSummary, TtsArgs, TtsSummary};
pub use umf_demo::{cmd_umf_demo, umf_demo, UmfDemoArgs, UmfDemoReport};

/// Environment variable holding the default worker count.
pub const WORKERS_ENV: &str = "FLOWTTS_WORKERS";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.to_string(),
            passed,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Report {
    pub checks: Vec<Check>,
    pub files: Vec<String>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Runs `f` on a pool of `workers` threads (0 = rayon default).
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> T {
    if workers == 0 {
        return f();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

pub(crate) fn write_file(dir: &Path, name: &str, contents: &str, report: &mut Report) -> Result<()> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    fs::write(&path, contents)?;
    report.files.push(path.display().to_string());
    Ok(())
}

pub(crate) fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| {
        std::io::Error::new(e.kind(), format!("{}: {e}", path.display())).into()
    })
}
