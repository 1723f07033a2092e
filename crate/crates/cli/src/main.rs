//! `sentgram`: train, evaluate and verify sentiment grammars.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::Failure;

#[derive(Parser)]
#[command(name = "sentgram", version, about = "Sentiment grammars over Tree-LSTM encoders")]
struct Cli {
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and save the best-on-dev checkpoint.
    Train {
        /// Flat `key = value` config file.
        #[arg(long)]
        config: Option<PathBuf>,
        /// `KEY=VALUE` overrides applied after the file.
        overrides: Vec<String>,
    },
    /// Decode a treebank and report root, phrase and per-height accuracy.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        trees: PathBuf,
        /// sst5 or sst2 label mapping.
        #[arg(long, default_value = "sst5")]
        task: String,
        /// Directory for the CSV reports.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print predicted labeled trees as s-expressions.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        trees: PathBuf,
        #[arg(long, default_value = "sst5")]
        task: String,
    },
    /// Compare analytic gradients with central differences.
    Gradcheck {
        /// baseline, wg, lvg, lveg or all.
        #[arg(long, default_value = "all")]
        kind: String,
        /// Random configurations per kind.
        #[arg(long, default_value_t = 20)]
        cases: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Overrides the per-kind default (1e-4 discrete, 1e-3 Gaussian).
        #[arg(long)]
        tolerance: Option<f64>,
    },
    /// Check charts against brute-force enumeration and quadrature.
    Oracle {
        #[arg(long, default_value_t = 240)]
        cases: usize,
        #[arg(long, default_value_t = 50)]
        gm_cases: usize,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
        /// Relative tolerance for both suites (defaults: 1e-9 enumeration,
        /// 1e-3 quadrature).
        #[arg(long)]
        tolerance: Option<f64>,
    },
    /// Emission means of correctly classified short phrases (LVeG only).
    ExportSubtypes {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        trees: PathBuf,
        #[arg(long, default_value = "sst5")]
        task: String,
        /// Label name (e.g. strong-negative) or index.
        #[arg(long)]
        label: Option<String>,
        #[arg(long, default_value_t = 5)]
        max_length: usize,
        /// Output CSV (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a generated composition-language corpus.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        train: usize,
        #[arg(long, default_value_t = 500)]
        dev: usize,
        #[arg(long, default_value_t = 500)]
        test: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| Failure::usage(e.to_string()))?;
    }
    match cli.command {
        Command::Train { config, overrides } => commands::train(config.as_deref(), &overrides),
        Command::Eval {
            checkpoint,
            trees,
            task,
            out,
        } => commands::eval(&checkpoint, &trees, &task, out.as_deref()),
        Command::Predict {
            checkpoint,
            trees,
            task,
        } => commands::predict(&checkpoint, &trees, &task),
        Command::Gradcheck {
            kind,
            cases,
            seed,
            tolerance,
        } => commands::gradcheck(&kind, cases, seed, tolerance),
        Command::Oracle {
            cases,
            gm_cases,
            seed,
            tolerance,
        } => commands::oracle(cases, gm_cases, seed, tolerance),
        Command::ExportSubtypes {
            checkpoint,
            trees,
            task,
            label,
            max_length,
            out,
        } => commands::export_subtypes(&checkpoint, &trees, &task, label.as_deref(), max_length, out.as_deref()),
        Command::Synth {
            out,
            train,
            dev,
            test,
            seed,
        } => commands::synth(&out, train, dev, test, seed),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            if !f.message.is_empty() {
                eprintln!("error: {}", f.message);
            }
            ExitCode::from(f.code)
        }
    }
}
