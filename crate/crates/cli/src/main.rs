mod commands;
mod config;
mod error;
mod provenance;

use clap::{Args, Parser, Subcommand};
use error::CliError;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "medsyn", version, about = "Understanding-dataset forging, synthesis metrics and toy two-stage training")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// JSON config file (forge, ssim, toy, train sections).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config field, e.g. `--set train.stage1.epochs=5`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Worker threads (outputs do not depend on it).
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Forge CTS/MI/TIA instances from a corpus manifest.
    Forge {
        #[arg(long)]
        manifest: PathBuf,
        /// Route description pools (JSON); the built-in pools by default.
        #[arg(long)]
        pools: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score letter predictions against forged instances.
    Score {
        #[arg(long, required = true, num_args = 1..)]
        instances: Vec<PathBuf>,
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare predicted slices against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Group slices by route using this manifest's target volumes.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate the synthetic paired corpus.
    Toygen {
        #[arg(long)]
        out: PathBuf,
    },
    /// Train Stage I, Stage II, or both.
    Train {
        #[arg(long, value_parser = ["1", "2", "both"])]
        stage: String,
        #[arg(long)]
        corpus: PathBuf,
        /// Checkpoint to start from (default: fresh weights).
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Synthesize one slice with a trained checkpoint.
    Sample {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        src: PathBuf,
        #[arg(long)]
        route: String,
        /// Defaults to train.seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the training-schedule ablation.
    Ablate {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value = "1,2,3,4,5")]
        seeds: String,
        #[arg(long, default_value = "baseline,stage2_only,stage1_only,stage1_plus_2")]
        schedules: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sweep the CTS hard-negative window K.
    Ksweep {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value = "2,5,10")]
        k: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.common.jobs {
        if n == 0 {
            return Err(CliError::usage("--jobs must be >= 1"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| CliError::usage(e.to_string()))?;
    }
    let env_seed = std::env::var(config::SEED_ENV).ok();
    let cfg = config::resolve(cli.common.config.as_deref(), env_seed.as_deref(), &cli.common.overrides)?;
    match cli.command {
        Command::Forge { manifest, pools, out } => commands::forge(&cfg, &manifest, pools.as_deref(), &out),
        Command::Score { instances, predictions, out } => commands::score(&cfg, &instances, &predictions, &out),
        Command::Eval { pred, gt, manifest, out } => commands::eval(&cfg, &pred, &gt, manifest.as_deref(), &out),
        Command::Toygen { out } => commands::toygen(&cfg, &out),
        Command::Train { stage, corpus, init, out } => commands::train(&cfg, &stage, &corpus, init.as_deref(), &out),
        Command::Sample { ckpt, src, route, seed, out } => commands::sample(&cfg, &ckpt, &src, &route, seed, &out),
        Command::Ablate { corpus, seeds, schedules, out } => commands::ablate(&cfg, &corpus, &seeds, &schedules, &out),
        Command::Ksweep { corpus, k, out } => commands::ksweep(&cfg, &corpus, &k, &out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.render().to_string();
            let first = msg.lines().next().unwrap_or("usage error").trim_start_matches("error: ").to_owned();
            eprintln!("{}", CliError::usage(first).to_json_line());
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json_line());
            ExitCode::from(e.kind.exit_code() as u8)
        }
    }
}
