use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fpstab::commands::{self, CommandError};
use fpstab::config::RunConfig;
use serde::Serialize;

#[derive(Parser)]
#[command(name = "fpstab", version, about = "Floating-point stability benchmark and detector")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long, short, global = true, default_value = "fpstab.toml")]
    config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file (or directory for detect/report) for this stage.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Build the composed dataset from the corpus.
    Compose,
    /// Re-measure every dataset record.
    Measure,
    /// Ask each backend to rewrite every dataset record.
    Rewrite {
        /// Only run these backends; others keep their existing candidates.
        #[arg(long = "backend")]
        backends: Vec<String>,
    },
    /// Search the kernel suite for inputs with large error.
    Detect {
        /// Kernel to search (repeatable); default is the configured list or the whole suite
        #[arg(long = "kernel")]
        kernels: Vec<String>,
        /// Wall-clock budget per kernel in seconds.
        #[arg(long)]
        budget: Option<f64>,
        /// Stop each kernel after this many trials
        #[arg(long)]
        max_trials: Option<usize>,
    },
    /// Aggregate rewrite candidates into CSV and JSON.
    Report,
}

fn print_json<T: Serialize>(v: &T) {
    println!("{}", serde_json::to_string_pretty(v).expect("summary serializes"));
}

fn run(cli: Cli) -> Result<(), CommandError> {
    let mut cfg = RunConfig::load(&cli.common.config)?;
    if let Some(s) = cli.common.seed {
        cfg.seed = s;
    }
    if let Some(t) = cli.common.threads {
        if t == 0 {
            return Err(CommandError::Usage("--threads must be positive".into()));
        }
        cfg.threads = Some(t);
    }
    let out = cli.common.out;
    match cli.command {
        Command::Compose => {
            if let Some(o) = out {
                cfg.paths.dataset = o;
            }
            let s = commands::cmd_compose(&cfg)?;
            for w in &s.warnings {
                log::warn!("{w}");
            }
            print_json(&s);
        }
        Command::Measure => {
            if let Some(o) = out {
                cfg.paths.measurements = o;
            }
            let rows = commands::cmd_measure(&cfg)?;
            let failed = rows.iter().filter(|r| r.report.is_none()).count();
            print_json(&serde_json::json!({ "records": rows.len(), "failed": failed }));
        }
        Command::Rewrite { backends } => {
            if let Some(o) = out {
                cfg.paths.candidates = o;
            }
            let cands = commands::cmd_rewrite(&cfg, &backends)?;
            print_json(&serde_json::json!({ "candidates": cands.len() }));
        }
        Command::Detect { kernels, budget, max_trials } => {
            if let Some(o) = out {
                cfg.paths.trace_dir = o;
            }
            if !kernels.is_empty() {
                cfg.detector.kernels = kernels;
            }
            if let Some(b) = budget {
                cfg.detector.budget_secs = b;
            }
            if max_trials.is_some() {
                cfg.detector.max_trials = max_trials;
            }
            cfg.validate()?;
            print_json(&commands::cmd_detect(&cfg)?);
        }
        Command::Report => {
            if let Some(o) = out {
                cfg.paths.report_dir = o;
            }
            let r = commands::cmd_report(&cfg)?;
            print_json(&serde_json::json!({
                "cells": r.cells.len(),
                "baseline_failures": r.baseline_failures.len(),
                "improved_by_any": r.improved_by_any.len(),
            }));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
