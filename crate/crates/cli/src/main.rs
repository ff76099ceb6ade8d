mod cache;
mod commands;
mod config;
mod histogram;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use specprint::Precision;

use commands::Ctx;

/// Bad user input: reported with exit code 2.
#[derive(Debug)]
pub struct InputError(pub String);

impl fmt::Display for InputError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

pub fn is_input_error(err: &anyhow::Error) -> bool {
    err.chain().any(|c| {
        c.downcast_ref::<InputError>().is_some()
            || c.downcast_ref::<specprint::Error>().is_some_and(specprint::Error::is_input_error)
    })
}

#[derive(Parser)]
#[command(name = "specprint", version, about = "Packet-length spectrogram device fingerprinting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Global seed (overrides the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    /// Config override, e.g. --set train.peak_lr=0.002 (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Spectrogram cache directory.
    #[arg(long, global = true)]
    cache: Option<PathBuf>,
    #[arg(long, short, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Per-device packet statistics and a length histogram image.
    Ingest {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// Write synthetic traces from the configured profiles.
    Synth,
    /// Render spectrogram images with normalization sidecars.
    Spectrogram {
        /// Also export every spectrogram as CSV.
        #[arg(long)]
        csv: bool,
    },
    /// Split, fit statistics and train; writes a run directory.
    Train,
    /// Test-set report for a run directory.
    Evaluate { run: PathBuf },
    /// Train and evaluate all 24 factorial configurations.
    Sweep,
    /// Held-out evaluation across segment lengths and overlaps.
    Crosseval { run: PathBuf },
}

fn need_out(out: &Option<PathBuf>) -> Result<PathBuf> {
    out.clone()
        .ok_or_else(|| InputError("--out is required for this command".into()).into())
}

macro_rules! dispatch {
    ($prec:expr, $f:ident($($arg:expr),*)) => {
        match $prec {
            Precision::F32 => commands::$f::<f32>($($arg),*),
            Precision::F64 => commands::$f::<f64>($($arg),*),
        }
    };
}

fn run(cli: Cli) -> Result<()> {
    rayon::ThreadPoolBuilder::new().num_threads(cli.jobs).build_global().ok();
    let ctx = Ctx {
        quiet: cli.quiet,
        cache: cli.cache.clone(),
    };
    let load = || config::load(cli.config.as_deref(), &cli.set, cli.seed);
    match &cli.command {
        Command::Ingest { files } => commands::ingest(&ctx, files, &need_out(&cli.out)?),
        Command::Synth => commands::synth(&ctx, &load()?, &need_out(&cli.out)?),
        Command::Spectrogram { csv } => {
            let cfg = load()?;
            dispatch!(cfg.precision, spectrogram(&ctx, &cfg, &need_out(&cli.out)?, *csv))
        }
        Command::Train => {
            let cfg = load()?;
            dispatch!(cfg.precision, train_cmd(&ctx, &cfg, &need_out(&cli.out)?))
        }
        Command::Sweep => {
            let cfg = load()?;
            dispatch!(cfg.precision, sweep(&ctx, &cfg, &need_out(&cli.out)?))
        }
        Command::Evaluate { run } => {
            let cfg = config::RunConfig::read_run(run)?;
            let out = cli.out.clone().unwrap_or_else(|| run.clone());
            dispatch!(cfg.precision, evaluate_cmd(&ctx, run, &out))
        }
        Command::Crosseval { run } => {
            let cfg = config::RunConfig::read_run(run)?;
            let out = cli.out.clone().unwrap_or_else(|| run.clone());
            dispatch!(cfg.precision, crosseval_cmd(&ctx, run, &out))
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if is_input_error(&e) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
