use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{cross_method_from_raw, mean_std, paired_t_test, PairedTest};
use crate::rng::item_seed;
use crate::search::{best_of_n, nfe_formula, particle_nfe, particle_sampling, tts_run, ParticleConfig, TtsConfig};
use crate::study::finish_csv;
use crate::task::{make_suite, Suite, SuiteConfig};
use crate::verifiers::{RawScores, Verifier, VerifierConfig};

use super::tts::{mean_raw, truth_sq_error};
use super::{write_file, Check, Report};

/// Ratio of the `(K=4, N=7)` budget to plain sampling in the reference ladder.
pub const REFERENCE_NFE_RATIO: f64 = 15.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteSpec {
    pub seed: u64,
    pub count: usize,
    pub config: SuiteConfig,
}

impl Default for SuiteSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            count: 200,
            config: SuiteConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    BestOfN,
    Particle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub suite: SuiteSpec,
    /// Ladder points in budget order; the first is the reference for the trend test.
    pub ladder: Vec<TtsConfig>,
    /// Index of the ladder point the baselines are matched against.
    pub reference: usize,
    pub verifier_subsets: Vec<Vec<Verifier>>,
    pub baselines: Vec<BaselineKind>,
    /// Rerun the reference point with every nonempty verifier subset.
    pub ablation: bool,
    pub repetitions: usize,
    pub seed: u64,
    pub blind: bool,
    pub trend_alpha: f64,
    pub matched_alpha: f64,
    /// Allowed relative NFE gap between a baseline and the reference point.
    pub nfe_tolerance: f64,
    pub particle: ParticleConfig,
    pub out: Option<PathBuf>,
}

/// `none, (2,5), (4,7), (10,15)`.
pub fn default_ladder() -> Vec<TtsConfig> {
    vec![
        TtsConfig::no_search(),
        TtsConfig::ladder_point(2, 5),
        TtsConfig::ladder_point(4, 7),
        TtsConfig::ladder_point(10, 15),
    ]
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            suite: SuiteSpec::default(),
            ladder: default_ladder(),
            reference: 2,
            verifier_subsets: vec![Verifier::ALL.to_vec()],
            baselines: vec![BaselineKind::BestOfN, BaselineKind::Particle],
            ablation: true,
            repetitions: 1,
            seed: 0,
            blind: true,
            trend_alpha: 0.01,
            matched_alpha: 0.05,
            nfe_tolerance: 0.05,
            particle: ParticleConfig::default(),
            out: None,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ladder.is_empty() {
            return Err(Error::InvalidConfig("sweep ladder is empty".into()));
        }
        if self.repetitions == 0 {
            return Err(Error::InvalidConfig("repetitions must be at least 1".into()));
        }
        if self.reference >= self.ladder.len() {
            return Err(Error::InvalidConfig(format!(
                "reference index {} outside ladder of {}",
                self.reference,
                self.ladder.len()
            )));
        }
        if self.verifier_subsets.is_empty() {
            return Err(Error::InvalidConfig("no verifier subsets".into()));
        }
        for s in &self.verifier_subsets {
            VerifierConfig::new(s.clone(), self.blind)?;
        }
        for c in &self.ladder {
            c.validate()?;
        }
        Ok(())
    }
}

/// One method evaluated under one verifier subset.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParetoRow {
    pub verifiers: String,
    pub method: String,
    #[serde(rename = "K")]
    pub k: Option<usize>,
    #[serde(rename = "N")]
    pub n: Option<usize>,
    #[serde(rename = "M")]
    pub m: Option<usize>,
    #[serde(rename = "S")]
    pub s: Option<usize>,
    #[serde(rename = "T")]
    pub t: usize,
    /// Evaluations per instance, from the ledger.
    pub nfe: u64,
    /// Closed-form prediction of `nfe`.
    pub nfe_formula: u64,
    pub mean_reward: f64,
    pub std_reward: f64,
    pub mean_fid: f64,
    pub mean_like: f64,
    pub mean_smooth: f64,
    pub mean_truth_sq_error: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    /// Verifiers steering the search.
    pub verifiers: String,
    pub nfe: u64,
    /// Reward under the full verifier set, ranked across the ablation rows.
    pub mean_reward: f64,
    pub std_reward: f64,
    pub mean_fid: f64,
    pub mean_like: f64,
    pub mean_smooth: f64,
    pub mean_truth_sq_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NamedTest {
    pub name: String,
    pub baseline: String,
    pub treated: String,
    pub test: PairedTest,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepResult {
    pub config: SweepConfig,
    pub pareto: Vec<ParetoRow>,
    pub ablation: Vec<AblationRow>,
    pub tests: Vec<NamedTest>,
    /// Reference-point NFE over the first ladder point's NFE.
    pub nfe_ratio: f64,
    pub reference_nfe_ratio: f64,
    pub checks: Vec<Check>,
}

impl SweepResult {
    pub fn pareto_csv(&self) -> Result<String> {
        rows_csv(&self.pareto)
    }

    pub fn ablation_csv(&self) -> Result<String> {
        rows_csv(&self.ablation)
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn test(&self, name: &str) -> Option<&PairedTest> {
        self.tests.iter().find(|t| t.name == name).map(|t| &t.test)
    }
}

fn rows_csv<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    finish_csv(w)
}

/// A method to run on every instance, with its own steering verifiers.
#[derive(Debug, Clone)]
enum Method {
    Search(TtsConfig),
    BestOfN { n: usize, steps: usize, verifiers: VerifierConfig },
    Particle(ParticleConfig),
}

impl Method {
    fn label(&self) -> String {
        match self {
            Method::Search(c) => c.label(),
            Method::BestOfN { n, .. } => format!("best_of_{n}"),
            Method::Particle(c) => format!("particle_{}", c.particles),
        }
    }

    fn predicted_nfe(&self) -> Result<u64> {
        match self {
            Method::Search(c) => nfe_formula(c),
            Method::BestOfN { n, steps, .. } => Ok((*n * *steps) as u64),
            Method::Particle(c) => particle_nfe(c),
        }
    }

    fn shape(&self, row: &mut ParetoRow) {
        match self {
            Method::Search(c) => {
                row.k = Some(c.k);
                row.n = Some(c.n);
                row.m = Some(c.m);
                row.s = Some(c.s);
                row.t = c.t;
            }
            Method::BestOfN { n, steps, .. } => {
                row.n = Some(*n);
                row.t = *steps;
            }
            Method::Particle(c) => {
                row.k = Some(c.rounds);
                row.n = Some(c.particles);
                row.m = Some(c.survivors);
                row.t = c.steps;
            }
        }
    }
}

/// What one method produced on one (repetition, instance) pair.
#[derive(Debug, Clone, Copy)]
struct Cell {
    raw: RawScores,
    truth_err: f64,
    nfe: u64,
}

fn run_method(method: &Method, suite: &Suite, index: usize, seed: u64) -> Result<Cell> {
    let inst = &suite.instances[index];
    let spec = &inst.posterior;
    let (x0, raw, nfe) = match method {
        Method::Search(c) => {
            let o = tts_run(inst, spec, c, seed)?;
            (o.x0, o.raw, o.ledger.total_velocity())
        }
        Method::BestOfN { n, steps, verifiers } => {
            let o = best_of_n(inst, spec, *n, *steps, verifiers, seed)?;
            (o.x0, o.raw, o.ledger.total_velocity())
        }
        Method::Particle(c) => {
            let o = particle_sampling(inst, spec, c, seed)?;
            (o.x0, o.raw, o.ledger.total_velocity())
        }
    };
    Ok(Cell {
        raw,
        truth_err: truth_sq_error(&x0, &inst.truth),
        nfe,
    })
}

/// Runs every method on every (repetition, instance) pair, in parallel, and
/// returns cells indexed `[method][sample]` in a fixed order.
fn run_grid(methods: &[Method], suite: &Suite, repetitions: usize, seed: u64) -> Result<Vec<Vec<Cell>>> {
    let count = suite.instances.len();
    let jobs: Vec<(usize, usize)> = (0..repetitions)
        .flat_map(|r| (0..count).map(move |i| (r, i)))
        .collect();
    let per_job: Vec<Vec<Cell>> = jobs
        .par_iter()
        .map(|&(r, i)| {
            let s = item_seed(item_seed(seed, r as u64), suite.instances[i].id);
            methods.iter().map(|m| run_method(m, suite, i, s)).collect()
        })
        .collect::<Result<_>>()?;
    Ok((0..methods.len())
        .map(|m| per_job.iter().map(|cells| cells[m]).collect())
        .collect())
}

fn summarize_cells(cells: &[Cell], rewards: &[f64]) -> (f64, f64, RawScores, f64) {
    let (mean, std) = mean_std(rewards);
    let raw = mean_raw(cells.iter().map(|c| c.raw));
    let err = cells.iter().map(|c| c.truth_err).sum::<f64>() / cells.len() as f64;
    (mean, std, raw, err)
}

/// Particle count whose budget lands closest to `target`.
fn matched_particles(base: &ParticleConfig, target: u64) -> Result<ParticleConfig> {
    let mut best: Option<(u64, ParticleConfig)> = None;
    for p in base.survivors.max(1)..=base.survivors.max(1) + 512 {
        let c = ParticleConfig {
            particles: p,
            ..base.clone()
        };
        let gap = particle_nfe(&c)?.abs_diff(target);
        if best.as_ref().is_none_or(|(g, _)| gap < *g) {
            best = Some((gap, c));
        }
    }
    Ok(best.expect("range is nonempty").1)
}

fn methods_for(config: &SweepConfig, verifiers: &VerifierConfig) -> Result<Vec<Method>> {
    let mut methods: Vec<Method> = config
        .ladder
        .iter()
        .map(|c| {
            Method::Search(TtsConfig {
                verifiers: verifiers.verifiers.clone(),
                blind: verifiers.blind,
                ..c.clone()
            })
        })
        .collect();
    let reference = &config.ladder[config.reference];
    let target = nfe_formula(reference)?;
    for b in &config.baselines {
        methods.push(match b {
            BaselineKind::BestOfN => {
                let n = ((target as f64 / reference.t as f64).round() as usize).max(1);
                Method::BestOfN {
                    n,
                    steps: reference.t,
                    verifiers: verifiers.clone(),
                }
            }
            BaselineKind::Particle => {
                let base = ParticleConfig {
                    steps: reference.t,
                    verifiers: verifiers.clone(),
                    ..config.particle.clone()
                };
                Method::Particle(matched_particles(&base, target)?)
            }
        });
    }
    Ok(methods)
}

fn nonempty_subsets() -> Vec<Vec<Verifier>> {
    (1u8..8)
        .map(|mask| {
            Verifier::ALL
                .iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, v)| *v)
                .collect()
        })
        .collect()
}

/// Runs the ladder, baselines and ablation on a freshly built suite.
pub fn run_sweep(config: &SweepConfig) -> Result<SweepResult> {
    config.validate()?;
    let suite = make_suite(config.suite.seed, config.suite.count, &config.suite.config)?;
    let mut pareto = Vec::new();
    let mut tests = Vec::new();
    let mut checks = Vec::new();
    let ladder_len = config.ladder.len();

    for (g, subset) in config.verifier_subsets.iter().enumerate() {
        let verifiers = VerifierConfig::new(subset.clone(), config.blind)?;
        let methods = methods_for(config, &verifiers)?;
        let cells = run_grid(&methods, &suite, config.repetitions, config.seed)?;
        let raws: Vec<Vec<RawScores>> = cells.iter().map(|m| m.iter().map(|c| c.raw).collect()).collect();
        let rewards = cross_method_from_raw(&raws, &verifiers.verifiers)?;

        let mut nfe_ok = true;
        for (mi, method) in methods.iter().enumerate() {
            let predicted = method.predicted_nfe()?;
            let nfe = cells[mi][0].nfe;
            nfe_ok &= cells[mi].iter().all(|c| c.nfe == predicted);
            let (mean, std, raw, err) = summarize_cells(&cells[mi], &rewards[mi]);
            let mut row = ParetoRow {
                verifiers: verifiers.label(),
                method: method.label(),
                k: None,
                n: None,
                m: None,
                s: None,
                t: 0,
                nfe,
                nfe_formula: predicted,
                mean_reward: mean,
                std_reward: std,
                mean_fid: raw.fid,
                mean_like: raw.like,
                mean_smooth: raw.smooth,
                mean_truth_sq_error: err,
                samples: cells[mi].len(),
            };
            method.shape(&mut row);
            pareto.push(row);
        }

        // Checks are stated on the first (primary) subset; later subsets are reported only.
        if g > 0 {
            continue;
        }
        checks.push(Check::new(
            "nfe_formula",
            nfe_ok,
            "ledger totals equal the closed-form budget for every method and sample",
        ));

        let means: Vec<f64> = rewards[..ladder_len].iter().map(|r| mean_std(r).0).collect();
        let monotone = means.windows(2).all(|w| w[1] >= w[0]);
        checks.push(Check::new("monotone_ladder", monotone, format!("mean rewards {means:?}")));

        let base_label = methods[0].label();
        let ref_label = methods[config.reference].label();
        if config.reference != 0 {
            let t = paired_t_test(&rewards[0], &rewards[config.reference])?;
            checks.push(Check::new(
                "trend_significant",
                t.p_value < config.trend_alpha,
                format!("p = {:.3e} (alpha {})", t.p_value, config.trend_alpha),
            ));
            tests.push(NamedTest {
                name: "trend".into(),
                baseline: base_label,
                treated: ref_label.clone(),
                test: t,
            });
        }

        let ref_nfe = cells[config.reference][0].nfe as f64;
        for (bi, kind) in config.baselines.iter().enumerate() {
            let mi = ladder_len + bi;
            let nfe = cells[mi][0].nfe as f64;
            let gap = (nfe - ref_nfe).abs() / ref_nfe;
            let t = paired_t_test(&rewards[mi], &rewards[config.reference])?;
            let name = match kind {
                BaselineKind::BestOfN => "matched_best_of_n",
                BaselineKind::Particle => "matched_particle",
            };
            let matched = gap <= config.nfe_tolerance;
            if *kind == BaselineKind::BestOfN {
                checks.push(Check::new(
                    name,
                    matched && t.mean_diff >= 0.0 && t.p_value < config.matched_alpha,
                    format!(
                        "NFE {nfe} vs {ref_nfe} (gap {:.1}%), mean diff {:.4}, p = {:.3e}",
                        gap * 100.0,
                        t.mean_diff,
                        t.p_value
                    ),
                ));
            }
            tests.push(NamedTest {
                name: name.into(),
                baseline: methods[mi].label(),
                treated: ref_label.clone(),
                test: t,
            });
        }
    }

    let first_nfe = nfe_formula(&config.ladder[0])? as f64;
    let nfe_ratio = nfe_formula(&config.ladder[config.reference])? as f64 / first_nfe;

    let ablation = if config.ablation {
        run_ablation(config, &suite)?
    } else {
        Vec::new()
    };

    Ok(SweepResult {
        config: config.clone(),
        pareto,
        ablation,
        tests,
        nfe_ratio,
        reference_nfe_ratio: REFERENCE_NFE_RATIO,
        checks,
    })
}

fn run_ablation(config: &SweepConfig, suite: &Suite) -> Result<Vec<AblationRow>> {
    let reference = &config.ladder[config.reference];
    let subsets = nonempty_subsets();
    let methods: Vec<Method> = subsets
        .iter()
        .map(|s| {
            Method::Search(TtsConfig {
                verifiers: s.clone(),
                blind: config.blind,
                ..reference.clone()
            })
        })
        .collect();
    let cells = run_grid(&methods, suite, config.repetitions, config.seed)?;
    let raws: Vec<Vec<RawScores>> = cells.iter().map(|m| m.iter().map(|c| c.raw).collect()).collect();
    let rewards = cross_method_from_raw(&raws, &Verifier::ALL)?;
    Ok(subsets
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let (mean, std, raw, err) = summarize_cells(&cells[i], &rewards[i]);
            AblationRow {
                verifiers: VerifierConfig {
                    verifiers: s.clone(),
                    blind: config.blind,
                }
                .label(),
                nfe: cells[i][0].nfe,
                mean_reward: mean,
                std_reward: std,
                mean_fid: raw.fid,
                mean_like: raw.like,
                mean_smooth: raw.smooth,
                mean_truth_sq_error: err,
            }
        })
        .collect())
}

#[derive(Serialize)]
struct SweepSummary<'a> {
    passed: bool,
    nfe_ratio: f64,
    reference_nfe_ratio: f64,
    tests: &'a [NamedTest],
    checks: &'a [Check],
    config: &'a SweepConfig,
}

/// Writes `pareto.csv`, `ablation.csv` and `summary.json` under `out`.
pub fn cmd_sweep(config: &SweepConfig, out: &std::path::Path) -> Result<Report> {
    let result = run_sweep(config)?;
    let mut report = Report::default();
    write_file(out, "pareto.csv", &result.pareto_csv()?, &mut report)?;
    if config.ablation {
        write_file(out, "ablation.csv", &result.ablation_csv()?, &mut report)?;
    }
    let summary = SweepSummary {
        passed: result.passed(),
        nfe_ratio: result.nfe_ratio,
        reference_nfe_ratio: result.reference_nfe_ratio,
        tests: &result.tests,
        checks: &result.checks,
        config,
    };
    write_file(out, "summary.json", &serde_json::to_string_pretty(&summary)?, &mut report)?;
    report.checks = result.checks;
    Ok(report)
}
