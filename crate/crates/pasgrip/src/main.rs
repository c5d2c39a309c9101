use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pasgrip::pipeline::{
    run_gcgen, run_pipeline, run_topopt, run_trajopt, PipelineConfig, PipelineError,
};

/// Generative design of passive grippers and insert trajectories.
#[derive(Parser)]
#[command(name = "pasgrip", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Path to the pipeline config JSON.
    #[arg(short = 'c', long = "config")]
    config: PathBuf,
    /// Override the run seed from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run all stages, resuming completed ones when inputs are unchanged.
    Pipeline(Common),
    /// Generate, evaluate, and rank grasp configurations.
    Gcgen(Common),
    /// Co-optimize gripper skeleton and insert trajectory.
    Trajopt {
        #[command(flatten)]
        common: Common,
        /// Read grasp configurations from this file instead of the output dir.
        #[arg(long = "gc-file")]
        gc_file: Option<PathBuf>,
    },
    /// Optimize and extract the printable gripper body.
    Topopt(Common),
}

fn load(common: &Common) -> Result<PipelineConfig, PipelineError> {
    if let Some(n) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| PipelineError::Config(format!("thread pool: {e}")))?;
    }
    let mut cfg = PipelineConfig::load(&common.config)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), PipelineError> {
    match &cli.command {
        Command::Pipeline(c) => run_pipeline(&load(c)?),
        Command::Gcgen(c) => run_gcgen(&load(c)?).map(|_| ()),
        Command::Trajopt { common, gc_file } => {
            run_trajopt(&load(common)?, gc_file.as_deref()).map(|_| ())
        }
        Command::Topopt(c) => run_topopt(&load(c)?),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(
        env_logger::Env::new().filter_or("PASGRIP_LOG", "info"),
    )
    .init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
