//! `spatr`: synthetic data, hierarchy, two-stage training, evaluation,
//! verification and sweeps.
//!
//! Exit codes: 0 success, 1 failed check or evaluation, 2 usage or
//! configuration error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};
use spatr::temporal::{HeadKind, PeMode};
use spatr::verify::Fault;

use commands::{Failed, SweepAxis, Usage};
use config::RunConfig;

#[derive(Parser)]
#[command(name = "spatr", version, about = "Mesh-sequence action recognition with a spiral autoencoder and a temporal transformer")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat key = value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Frames sampled per sequence for the classifier.
    #[arg(long, global = true)]
    frames: Option<usize>,
    /// Heads per attention layer, e.g. 2,2,2.
    #[arg(long, global = true, value_delimiter = ',')]
    heads: Option<Vec<usize>>,
    #[arg(long, global = true)]
    pe: Option<PeMode>,
    #[arg(long, global = true)]
    head: Option<HeadKind>,
    /// Worker threads; 1 gives bit-reproducible runs.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory for artifacts.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FaultArg {
    CorruptGradient,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset and its manifest.
    GenData,
    /// Build (or load from cache) the mesh hierarchy.
    BuildHierarchy {
        /// Ignore any cached hierarchy.
        #[arg(long)]
        rebuild: bool,
    },
    /// Train the spiral autoencoder on training-split frames.
    TrainSpae,
    /// Encode every sequence into per-frame embeddings.
    Encode,
    /// Train the temporal classifier on cached embeddings.
    TrainClassifier,
    /// Evaluate the trained classifier on the test split.
    Eval {
        /// Evaluate time-reversed test sequences.
        #[arg(long)]
        reverse: bool,
        /// Exit with status 1 below this accuracy.
        #[arg(long)]
        min_accuracy: Option<f64>,
    },
    /// Run the gradient, oracle and invariant checks.
    Verify {
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        /// Deliberately break one check (test fixture).
        #[arg(long, hide = true)]
        inject_fault: Option<FaultArg>,
    },
    /// Train and evaluate across frame counts, head counts or head kinds.
    Sweep {
        #[arg(long, value_enum)]
        axis: SweepAxis,
    },
}

fn run_config(common: &Common) -> Result<RunConfig> {
    let mut c = match &common.config {
        Some(path) => RunConfig::load(path).map_err(|e| Usage(format!("{e:#}")))?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        c.seed = s;
    }
    if let Some(n) = common.frames {
        c.frames = n;
    }
    if let Some(h) = &common.heads {
        c.heads = h.clone();
    }
    if let Some(pe) = common.pe {
        c.pe = pe;
    }
    if let Some(head) = common.head {
        c.head = head;
    }
    if let Some(t) = common.threads {
        c.threads = t;
    }
    if let Some(out) = &common.out {
        c.out_dir = out.clone();
    }
    c.validate().map_err(|e| Usage(e.to_string()))?;
    Ok(c)
}

fn run(cli: Cli) -> Result<()> {
    if let Command::Verify { seeds, inject_fault } = cli.command {
        let fault = inject_fault.map(|FaultArg::CorruptGradient| Fault::CorruptGradient);
        return commands::verify_cmd(seeds, fault);
    }
    let c = run_config(&cli.common)?;
    rayon::ThreadPoolBuilder::new().num_threads(c.threads).build_global()?;
    std::fs::create_dir_all(&c.out_dir)?;
    std::fs::write(c.out_dir.join("run.conf"), c.to_text())?;
    match cli.command {
        Command::GenData => commands::gen_data(&c),
        Command::BuildHierarchy { rebuild } => commands::build_hierarchy_cmd(&c, rebuild),
        Command::TrainSpae => commands::train_spae_cmd(&c),
        Command::Encode => commands::encode_cmd(&c),
        Command::TrainClassifier => commands::train_classifier_cmd(&c),
        Command::Eval { reverse, min_accuracy } => commands::eval_cmd(&c, reverse, min_accuracy),
        Command::Sweep { axis } => commands::sweep_cmd(&c, axis),
        Command::Verify { .. } => unreachable!("handled above"),
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.is::<Usage>() {
            return 2;
        }
        if cause.is::<Failed>() {
            return 1;
        }
        if let Some(spatr::Error::Config(_)) = cause.downcast_ref::<spatr::Error>() {
            return 2;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
