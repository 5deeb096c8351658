use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mofid_core::{FidelityError, Result};
use mofid_harness::config::{ReportFormat, RunConfig};
use mofid_harness::pipeline;

#[derive(Parser)]
#[command(name = "mofid", version, about = "Physical and perceptual fidelity evaluation for human motion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (the dataset directory for `synth`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dataset directory, overriding `paths.dataset_dir`.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<ReportFormat>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic benchmark.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: u64,
    },
    /// Project every motion and write physical annotations.
    Annotate {
        #[command(flatten)]
        common: Common,
    },
    /// Train the learned scorer.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: u64,
    },
    /// Correlate a score source with the physical annotations.
    Eval {
        #[command(flatten)]
        common: Common,
        /// `model`, `physical`, a metric name, or `all`.
        #[arg(long)]
        source: Option<String>,
        /// Model file, overriding `paths.model`.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Merge eval outputs into one report.
    Report {
        #[command(flatten)]
        common: Common,
    },
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(d) = &common.dataset {
        cfg.paths.dataset_dir = d.clone();
    }
    if let Some(f) = common.format {
        cfg.format = f;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { common, seed } => {
            let mut cfg = load_config(&common)?;
            if let Some(o) = common.out {
                cfg.paths.dataset_dir = o;
            }
            pipeline::run_synth(&cfg, seed)?;
        }
        Command::Annotate { common } => {
            let mut cfg = load_config(&common)?;
            if let Some(o) = common.out {
                cfg.paths.output_dir = o;
            }
            pipeline::run_annotate(&cfg)?;
        }
        Command::Train { common, seed } => {
            let mut cfg = load_config(&common)?;
            if let Some(o) = common.out {
                cfg.paths.output_dir = o;
            }
            cfg.training.seed = seed;
            pipeline::run_train(&cfg)?;
        }
        Command::Eval { common, source, model } => {
            let mut cfg = load_config(&common)?;
            if let Some(o) = common.out {
                cfg.paths.output_dir = o;
            }
            if model.is_some() {
                cfg.paths.model = model;
            }
            let source = source.unwrap_or_else(|| cfg.eval.source.clone());
            for r in pipeline::run_eval(&cfg, &source)? {
                print!("{}", r.to_markdown());
            }
        }
        Command::Report { common } => {
            let mut cfg = load_config(&common)?;
            if let Some(o) = common.out {
                cfg.paths.output_dir = o;
            }
            print!("{}", pipeline::run_report(&cfg)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &FidelityError) -> u8 {
    if e.is_io() {
        2
    } else {
        1
    }
}
