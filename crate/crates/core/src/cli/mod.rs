//! Command-line front end. The binary only forwards to [`run`].

mod commands;
mod config;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::{load_pretrained, run_flat, save_pretrained, FlatRun, FlatSummary, SweepRow};
pub use config::{FlatLevel, ModelKind, RunConfig, Text};

use crate::error::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INTERNAL: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "bertcnn", version, about = "Hierarchical BERT-CNN patent classification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    /// Run configuration file (key = value lines).
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override one configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Read a CSV export into the JSON Lines corpus format.
    Ingest {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Write a synthetic keyword corpus (synth.* keys).
    Synth {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        output: PathBuf,
    },
    /// MLM + NSP pretraining of a fresh encoder on a corpus.
    Pretrain {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and test one classifier over sections or classes.
    TrainFlat {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the two-level model; writes the model and the train/test split.
    TrainHier {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a hierarchical model, or recompute the published weighted accuracies.
    Eval {
        /// Directory written by train-hier (its model/ subdirectory or the run root).
        #[arg(long, required_unless_present = "table2_check")]
        model: Option<PathBuf>,
        /// Test records; defaults to test.jsonl of the run directory.
        #[arg(long)]
        test: Option<PathBuf>,
        /// Where metrics.json and summary.csv go; defaults to the run directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Recompute the weighted average and overall accuracy from the embedded published tables.
        #[arg(long)]
        table2_check: bool,
    },
    /// Classify one text with a flat or hierarchical model.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        text: String,
    },
    /// Dump per-layer, per-head attention for a sentence pair as JSON.
    ExportAttention {
        /// Pretrained encoder, BERT-CNN classifier, or hierarchical run directory.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        text_a: String,
        #[arg(long, default_value = "")]
        text_b: String,
        /// Sequence length; defaults to the shortest that holds both texts.
        #[arg(long)]
        max_len: Option<usize>,
        #[arg(long)]
        output: PathBuf,
    },
    /// train-flat for every n_top_layers from 1 to encoder.n_layers on one split.
    LayerSweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

pub fn exit_code(err: &Error) -> i32 {
    if err.is_config_error() {
        return EXIT_CONFIG;
    }
    match err {
        Error::ShapeMismatch { .. } | Error::NotOnTape => EXIT_INTERNAL,
        _ => EXIT_DATA,
    }
}

/// Parses `args` (program name first) and runs the command, writing
/// results to `out`. Returns the process exit code.
pub fn run_with<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match commands::execute(cli.command, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_with(args, &mut std::io::stdout().lock())
}
