use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use featcomp::config::RunConfig;
use featcomp::pipeline::{self, BANK_FILE, EVAL_FILE, MODEL_FILE, TRAIN_FILE};
use featcomp::{par, Result};

#[derive(Parser)]
#[command(
    name = "featcomp",
    version,
    about = "Occluded-pedestrian feature completion on a synthetic feature world"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Run configuration (key = value lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to the configured one.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; 1 runs everything sequentially.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the training split and evaluation benchmark.
    SynthData {
        #[command(flatten)]
        common: Common,
    },
    /// Cluster fully visible training pedestrians into prototypes.
    BuildPrototypes {
        #[command(flatten)]
        common: Common,
        /// Training dataset; defaults to train.fcds in the output directory.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Train the scoring head and the completion networks.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        bank: Option<PathBuf>,
    },
    /// Miss rates with and without completion, plus feature diagnostics.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        bank: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Correlation map and occlusion mask of one proposal.
    Inspect {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        bank: Option<PathBuf>,
        /// Proposal id.
        #[arg(long)]
        id: u64,
    },
}

fn load(common: &Common) -> Result<(RunConfig, PathBuf)> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg = cfg.with_seed(seed);
    }
    if let Some(out) = &common.out {
        cfg.out = out.clone();
    }
    if let Some(threads) = common.threads {
        cfg.threads = threads;
    }
    cfg.validate()?;
    let out = cfg.out.clone();
    Ok((cfg, out))
}

fn or(path: &Option<PathBuf>, out: &Path, default: &str) -> PathBuf {
    path.clone().unwrap_or_else(|| out.join(default))
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::SynthData { common } => {
            let (cfg, out) = load(&common)?;
            let result = par::with_threads(cfg.threads, || pipeline::cmd_synth(&cfg, &out))?;
            print!("{}", result.manifest);
        }
        Command::BuildPrototypes { common, dataset } => {
            let (cfg, out) = load(&common)?;
            let dataset = or(&dataset, &out, TRAIN_FILE);
            let bank = par::with_threads(cfg.threads, || pipeline::cmd_build_prototypes(&cfg, &dataset, &out))?;
            print!("{}", bank.scale_summary());
        }
        Command::Train { common, dataset, bank } => {
            let (cfg, out) = load(&common)?;
            let dataset = or(&dataset, &out, TRAIN_FILE);
            let bank = or(&bank, &out, BANK_FILE);
            par::with_threads(cfg.threads, || pipeline::cmd_train(&cfg, &dataset, &bank, &out))?;
            println!("wrote {}", out.join(MODEL_FILE).display());
        }
        Command::Eval {
            common,
            dataset,
            bank,
            model,
        } => {
            let (cfg, out) = load(&common)?;
            let dataset = or(&dataset, &out, EVAL_FILE);
            let bank = or(&bank, &out, BANK_FILE);
            let model = or(&model, &out, MODEL_FILE);
            let report = par::with_threads(cfg.threads, || pipeline::cmd_eval(&cfg, &dataset, &bank, &model, &out))?;
            print!("{}", report.to_csv());
        }
        Command::Inspect {
            common,
            dataset,
            bank,
            id,
        } => {
            let (cfg, out) = load(&common)?;
            let dataset = or(&dataset, &out, EVAL_FILE);
            let bank = or(&bank, &out, BANK_FILE);
            let report = pipeline::cmd_inspect(&cfg, &dataset, &bank, id, &out)?;
            println!(
                "proposal {id}: prototype {}, {} of {} cells flagged",
                report.prototype_id,
                report.mask.count(),
                report.mask.len()
            );
            if let Some(iou) = report.iou {
                println!("mask IoU against ground truth: {iou:.3}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FEATCOMP_LOG", "error")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
