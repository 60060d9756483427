use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use cdiff_cli::commands::{evaluate, report, sweep, synth, train};
use cdiff_cli::config::RunConfig;
use cdiff_cli::pipeline;

#[derive(Parser)]
#[command(name = "cdiff", version, about = "Collaborative diffusion recommender")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override a config key, e.g. `--set neighbors.k=20`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        RunConfig::load(&self.config, &self.overrides)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Build the split, pseudo-users and neighbor cache.
    Prepare(ConfigArgs),
    /// Train and write the best-validation checkpoint.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Test-set metrics of a checkpoint.
    Evaluate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_delimiter = ',')]
        cutoffs: Option<Vec<usize>>,
    },
    /// Train one model per grid cell and tabulate the results.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        grid: PathBuf,
    },
    /// Write a clustered synthetic ratings + reviews dataset.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Consolidate the results under a run directory.
    Report {
        #[arg(long)]
        run: PathBuf,
    },
}

fn init_threads() -> Result<()> {
    let Ok(raw) = std::env::var("CDIFF_THREADS") else { return Ok(()) };
    let n: usize = raw.parse().with_context(|| format!("CDIFF_THREADS must be a positive integer, got `{raw}`"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global()?;
    // matrixmultiply reads this once, before its first product
    std::env::set_var("MATMUL_NUM_THREADS", n.max(1).to_string());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    init_threads()?;
    match cli.command {
        Command::Prepare(args) => {
            let layout = pipeline::prepare(&args.load()?)?;
            println!("{}", layout.manifest().display());
        }
        Command::Train { cfg, seed } => {
            let out = train::run(&cfg.load()?, seed)?;
            println!("{}", out.checkpoint.display());
        }
        Command::Evaluate { cfg, checkpoint, cutoffs } => {
            let out = evaluate::run(&cfg.load()?, &checkpoint, cutoffs)?;
            print!("{}", out.metrics.report());
        }
        Command::Sweep { cfg, grid } => {
            let out = sweep::run(&cfg.load()?, &sweep::GridSpec::load(&grid)?)?;
            print!("{}", out.to_tsv());
        }
        Command::Synth { spec, out } => {
            synth::run(&synth::load_spec(&spec)?, &out)?;
            println!("{}", out.display());
        }
        Command::Report { run } => print!("{}", report::run(&run)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
