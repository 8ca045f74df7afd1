mod commands;
mod config;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Tool-necessity diagnosis pipeline.
#[derive(Debug, Parser)]
#[command(name = "toolgap", version)]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// JSON pipeline config; flags override its fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory holding stage inputs and outputs.
    #[arg(long, global = true)]
    pub work: Option<PathBuf>,
    /// Model identifier recorded in outputs.
    #[arg(long, global = true)]
    pub model_id: Option<String>,
    /// Use a scripted mock backend instead of the configured one.
    #[arg(long, global = true)]
    pub mock: Option<PathBuf>,
    /// Worker threads for per-sample and per-cell parallelism.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the arithmetic corpus.
    Gen {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        total: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Ingest a factual QA CSV into a corpus.
    Ingest {
        #[arg(long)]
        csv: PathBuf,
        /// `multiple-choice` or `generative`.
        #[arg(long, default_value = "multiple-choice")]
        form: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a mock script, planted hidden-state dump and ground truth for the corpus.
    Synth {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 4)]
        layers: usize,
        #[arg(long, default_value_t = 16)]
        dim: usize,
    },
    /// Label per-sample tool necessity from repeated no-tool runs.
    Label {
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        temperature: Option<f64>,
        /// `choice-match`, `reference-match` or `external-judge`.
        #[arg(long)]
        grading: Option<String>,
    },
    /// Record greedy tool-call behavior with tools exposed.
    Collect {
        #[arg(long)]
        max_tool_rounds: Option<usize>,
        /// Skip decision-point probability capture.
        #[arg(long)]
        no_decision: bool,
    },
    /// Run the two-stage yes/no self-assessment protocol.
    Verbal,
    /// Train cognition and action probes over the hidden-state grid.
    Probe {
        #[arg(long)]
        dump: Option<PathBuf>,
        #[arg(long)]
        split_seed: Option<u64>,
        /// Continue when some labeled samples have no hidden states.
        #[arg(long)]
        allow_partial: bool,
    },
    /// Cosine grid between cognition and action probe directions.
    Cosine,
    /// Trace each sample through necessity, cognition and action.
    Diagnose {
        #[arg(long)]
        dump: Option<PathBuf>,
    },
    /// Emit every report from persisted stage outputs.
    Report {
        /// Other work directories over the same corpus, for boundary ordering.
        #[arg(long)]
        compare: Vec<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
