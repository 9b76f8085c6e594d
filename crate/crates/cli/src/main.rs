use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use pass_cli::stream::{parse_stream_csv, run_stream, StreamLimits};
use pass_cli::{calibrate, preset, report, simulate, RunConfig};

#[derive(Parser)]
#[command(name = "pass", version, about = "Budgeted drift monitoring with adaptive sampling")]
struct Cli {
    /// Worker threads for replicated runs (default: all cores).
    #[arg(long, global = true)]
    parallelism: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Source {
    /// Run configuration (JSON).
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in configuration: table1-subset, table2-subset or branin-demo.
    #[arg(long)]
    preset: Option<String>,
    /// Master seed; overrides the configuration.
    #[arg(long)]
    seed: Option<u64>,
}

impl Source {
    fn load(&self) -> Result<RunConfig> {
        let cfg = match (&self.config, &self.preset) {
            (Some(p), _) => RunConfig::load(p)?,
            (None, Some(name)) => preset(name)?,
            (None, None) => RunConfig::default(),
        };
        Ok(cfg.with_seed(self.seed))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Calibrate control limits for the base experiment.
    Calibrate {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a grid of replicated experiments.
    Simulate {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        out: PathBuf,
    },
    /// Monitor a recorded stream under the labeling budget.
    Stream {
        /// CSV with columns t,x1..xd,y[,prediction].
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        source: Source,
        /// Limits from an earlier run; bootstrapped from the baseline if absent.
        #[arg(long)]
        calibration: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Summarize a results table.
    Report {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.parallelism {
        if n == 0 {
            bail!("--parallelism must be positive");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match cli.command {
        Command::Calibrate { source, out } => {
            let cfg = source.load()?;
            let (a, v) = calibrate::calibrate(&cfg, &out)?;
            println!("{}", serde_json::to_string_pretty(&a)?);
            if let Some(v) = v {
                println!("verified ARL0 {:.1} over {} runs", v.arl0, v.runs);
            }
        }
        Command::Simulate { source, out } => {
            let cfg = source.load()?;
            let r = simulate::simulate(&cfg, &out)?;
            println!(
                "{} cells: {} computed, {} resumed, {} failed",
                r.cells, r.computed, r.resumed, r.failed
            );
            println!("results: {}", out.join("results.csv").display());
        }
        Command::Stream {
            data,
            source,
            calibration,
            out,
        } => {
            let cfg = source.load()?;
            let text = std::fs::read_to_string(&data)
                .with_context(|| format!("reading {}", data.display()))?;
            let parsed = parse_stream_csv(&text).with_context(|| format!("in {}", data.display()))?;
            let limits = match calibration {
                Some(p) => {
                    let s = std::fs::read_to_string(&p)
                        .with_context(|| format!("reading {}", p.display()))?;
                    Some(serde_json::from_str::<StreamLimits>(&s)
                        .with_context(|| format!("parsing {}", p.display()))?)
                }
                None => None,
            };
            let outcome = run_stream(&parsed, &cfg.stream, limits)?;
            outcome.write(&out)?;
            let revealed: usize = outcome.log.iter().map(|r| r.revealed).sum();
            println!(
                "{} batches monitored, {} labels revealed, {} alarms",
                outcome.log.len(),
                revealed,
                outcome.alarms.len()
            );
        }
        Command::Report { results, out } => {
            print!("{}", report::report(&results, &out)?);
        }
    }
    Ok(())
}
