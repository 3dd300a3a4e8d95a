use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use calab::harness::{
    cmd_ablate, cmd_compare, cmd_metrics, cmd_probe, cmd_train, cmd_unigram, AblateMode, ExperimentConfig,
    HarnessError, TrainOptions,
};
use calab::stats::format_table;

#[derive(Debug, Parser)]
#[command(name = "calab", version, about = "Embedding anisotropy lab: Adam versus Coupled Adam on small language models")]
struct Cli {
    /// JSON experiment config; defaults apply to missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `out_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Run a single seed (overrides `seeds`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Only log warnings and errors.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build the vocabulary and write the unigram distribution.
    Unigram,
    /// Train every seed of the configured variant.
    Train {
        /// Continue from existing checkpoints.
        #[arg(long)]
        resume: bool,
        /// Stop after this many steps.
        #[arg(long)]
        stop_at: Option<u64>,
    },
    /// Embedding metrics of a trained seed directory.
    Metrics {
        #[arg(long)]
        run: PathBuf,
        /// Extra similarity benchmark TSV (repeatable).
        #[arg(long = "benchmark")]
        benchmarks: Vec<PathBuf>,
    },
    /// Second-moment probe of a trained seed directory.
    Probe {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        batches: Option<usize>,
    },
    /// Compare two variant directories seed by seed.
    Compare {
        dir0: PathBuf,
        dir1: PathBuf,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Run an ablation grid.
    Ablate {
        #[arg(long, default_value = "scale")]
        mode: AblateMode,
    },
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.seeds = vec![seed];
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), HarnessError> {
    match &cli.command {
        Command::Unigram => {
            let cfg = load_config(cli)?;
            let dist = cmd_unigram(&cfg)?;
            println!("{} tokens, {} types -> {}", dist.total(), dist.probs.len(), cfg.out_dir.display());
        }
        Command::Train { resume, stop_at } => {
            let cfg = load_config(cli)?;
            let opts = TrainOptions { resume: *resume, stop_at: *stop_at };
            for m in cmd_train(&cfg, opts)? {
                let loss = m.final_loss.map_or_else(|| "n/a".to_string(), |l| format!("{l:.6}"));
                let status = m.aborted_at.map_or_else(String::new, |s| format!(" (aborted at step {s})"));
                println!("{} seed {}: {} steps, final loss {loss}{status}", m.variant, m.seed, m.steps_completed);
            }
        }
        Command::Metrics { run, benchmarks } => {
            let report = cmd_metrics(run, benchmarks)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Probe { run, batches } => {
            let (_, summary) = cmd_probe(run, *batches)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Compare { dir0, dir1, csv } => {
            let rows = cmd_compare(dir0, dir1, csv.as_deref())?;
            let label = |p: &PathBuf| p.file_name().map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned());
            print!("{}", format_table(&rows, &label(dir0), &label(dir1)));
        }
        Command::Ablate { mode } => {
            let cfg = load_config(cli)?;
            for row in cmd_ablate(&cfg, *mode)? {
                let cells: Vec<String> = row.means.iter().map(|(n, v)| format!("{n}={v:.4}")).collect();
                println!("{:>10} {:<24} {}", row.grid_value, row.variant, cells.join(" "));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
