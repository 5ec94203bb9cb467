use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use flowtts::harness::{
    cmd_btfit, cmd_sample, cmd_sweep, cmd_tts, cmd_umf_demo, with_workers, BtfitArgs, Report, SampleArgs,
    SampleMode, SweepConfig, TtsArgs, UmfDemoArgs, WORKERS_ENV,
};
use flowtts::study::{BtOptions, DEFAULT_SMOOTHING};
use flowtts::task::{make_suite, SuiteConfig};
use flowtts::Result;

#[derive(Parser)]
#[command(name = "flowtts", version, about = "Flow sampling, test-time search and study statistics")]
struct Cli {
    /// Worker threads; 0 lets rayon decide.
    #[arg(long, global = true, env = WORKERS_ENV, default_value_t = 0)]
    workers: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Terminal samples of a flow spec.
    Sample(SampleCli),
    /// Generate a restoration suite file.
    Suite(SuiteCli),
    /// Run the search over a suite.
    Tts(TtsCli),
    /// Budget ladder, matched baselines and verifier ablation.
    Sweep(SweepCli),
    /// Bradley-Terry fit of pairwise comparisons.
    Btfit(BtfitCli),
    /// Shape and structure report for one fusion block.
    UmfDemo(UmfCli),
}

#[derive(Args)]
struct SampleCli {
    /// Flow spec JSON.
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value_t = 50)]
    steps: usize,
    #[arg(long, default_value_t = 1)]
    seeds: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "ode")]
    mode: SampleMode,
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct SuiteCli {
    /// Suite parameters JSON; defaults when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct TtsCli {
    #[arg(long)]
    suite: PathBuf,
    /// Search config JSON; defaults when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    blind: bool,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct SweepCli {
    /// Sweep config JSON; defaults when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    blind: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BtfitCli {
    /// Comparisons CSV: `method_a,method_b,wins_a,wins_b` or `winner,loser`.
    #[arg(long)]
    config: PathBuf,
    /// Per-group scores CSV (`group,method,score`) for top-K ratios.
    #[arg(long)]
    selections: Option<PathBuf>,
    /// Add pseudo-wins to every pair.
    #[arg(long)]
    smooth: bool,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct UmfCli {
    /// Token counts `latent,image,text`.
    #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [2, 3, 4])]
    lengths: Vec<usize>,
    #[arg(long, default_value_t = 8)]
    d_model: usize,
    #[arg(long, default_value_t = 1)]
    heads: usize,
    #[arg(long, default_value_t = 16)]
    hidden: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    zero_weights: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn read_json<T: serde::de::DeserializeOwned + Default>(path: &Option<PathBuf>) -> Result<T> {
    match path {
        Some(p) => Ok(serde_json::from_str(&std::fs::read_to_string(p)?)?),
        None => Ok(T::default()),
    }
}

fn run(command: Command) -> Result<Report> {
    match command {
        Command::Sample(a) => cmd_sample(&SampleArgs {
            spec: a.config,
            steps: a.steps,
            seeds: a.seeds,
            seed: a.seed,
            mode: a.mode,
            sigma: a.sigma,
            out: a.out,
        }),
        Command::Suite(a) => {
            let cfg: SuiteConfig = read_json(&a.config)?;
            let suite = make_suite(a.seed, a.count, &cfg)?;
            std::fs::create_dir_all(&a.out)?;
            let mut report = Report::default();
            for (name, text) in [("suite.json", suite.to_json()?), ("suite.csv", suite.to_csv()?)] {
                let p = a.out.join(name);
                std::fs::write(&p, text)?;
                report.files.push(p.display().to_string());
            }
            Ok(report)
        }
        Command::Tts(a) => cmd_tts(&TtsArgs {
            suite: a.suite,
            config: a.config,
            seed: a.seed,
            blind: a.blind,
            out: a.out,
        }),
        Command::Sweep(a) => {
            let mut cfg: SweepConfig = read_json(&a.config)?;
            if let Some(s) = a.seed {
                cfg.seed = s;
            }
            if a.blind {
                cfg.blind = true;
            }
            let out = a.out.or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("out"));
            cmd_sweep(&cfg, &out)
        }
        Command::Btfit(a) => cmd_btfit(&BtfitArgs {
            comparisons: a.config,
            selections: a.selections,
            options: BtOptions {
                smoothing: a.smooth.then_some(DEFAULT_SMOOTHING),
                ..BtOptions::default()
            },
            out: a.out,
        }),
        Command::UmfDemo(a) => cmd_umf_demo(&UmfDemoArgs {
            lengths: [a.lengths[0], a.lengths[1], a.lengths[2]],
            d_model: a.d_model,
            heads: a.heads,
            hidden: a.hidden,
            seed: a.seed,
            zero_weights: a.zero_weights,
            out: a.out,
        }),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match with_workers(cli.workers, || run(cli.command)) {
        Ok(report) => {
            for f in &report.files {
                eprintln!("wrote {f}");
            }
            for c in report.checks.iter().filter(|c| !c.passed) {
                eprintln!("check failed: {}: {}", c.name, c.detail);
            }
            if report.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
