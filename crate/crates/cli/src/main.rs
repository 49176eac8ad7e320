mod commands;
mod config;
mod failure;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::{FileConfig, RunConfig};
use crate::failure::classify;

/// Corpus selection by AI-predicted fecundity, saturation curves and regression tables.
#[derive(Debug, Parser)]
#[command(name = "fecund", version)]
struct Cli {
    /// Seed for every stochastic step; required by synth, code, select, sweep and bootstrap runs.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Flat TOML file of run settings; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Input directory holding documents.jsonl, codes.csv and friends (defaults to --out).
    #[arg(long, global = true)]
    input: Option<PathBuf>,
    /// Also write SVG plots.
    #[arg(long, global = true)]
    plot: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic corpus or observation table.
    Synth(SynthArgs),
    /// Validate a collection and report per-document fecundity.
    Ingest,
    /// Code article passages with an AI backend.
    Code(CodeArgs),
    /// Choose the AI-selected and random corpora and a blinded reading order.
    Select(SelectArgs),
    /// Cumulative code/theme curves, stopping rule and bootstrap bands.
    Saturate(SaturateArgs),
    /// Arm-effect, length and length-residual regression tables.
    Analyze(AnalyzeArgs),
    /// Superset-size sweep of predicted fecundity.
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SynthKind {
    /// Articles with text and positioned human codes plus a theme map.
    Articles,
    /// Text-free documents with Zipf AI codes.
    Zipf,
    /// A two-round experiment observation table.
    Experiment,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value = "articles")]
    pub kind: SynthKind,
    /// Number of articles or documents.
    #[arg(long)]
    pub n: Option<usize>,
}

#[derive(Debug, Args)]
pub struct CodeArgs {
    /// `mock` or `remote`.
    #[arg(long)]
    pub backend: Option<String>,
    /// `socratic`, `fewshot` or `round1`.
    #[arg(long)]
    pub chain: Option<String>,
    /// Passage-to-cluster CSV (passage_id,cluster_id) for few-shot exemplars
    #[arg(long)]
    pub clusters: Option<PathBuf>,
    /// Cluster exemplar codes CSV (cluster_id,code_label), paired with `--clusters`
    #[arg(long)]
    pub exemplars: Option<PathBuf>,
    /// Article summaries CSV (article_id,summary)
    #[arg(long)]
    pub summaries: Option<PathBuf>,
    /// Chat-completion endpoint URL for the remote backend.
    #[arg(long)]
    pub endpoint: Option<String>,
    /// Model name sent to the remote backend
    #[arg(long)]
    pub model: Option<String>,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    /// Strict budget: corpora must total fewer characters than this.
    #[arg(long, conflicts_with = "budget_docs")]
    pub budget_chars: Option<u64>,
    /// Budget in mean document lengths.
    #[arg(long)]
    pub budget_docs: Option<f64>,
    /// Size of the random control corpus (defaults to the AI selection's size).
    #[arg(long)]
    pub control_docs: Option<usize>,
    /// `sqrt`, `log1p` or `unique`
    #[arg(long)]
    pub value_function: Option<String>,
    /// `lazy-greedy`, `naive-greedy` or `exact`
    #[arg(long)]
    pub selector: Option<String>,
}

#[derive(Debug, Args)]
pub struct SaturateArgs {
    /// Counting regime(s): unique, hf_retrospective, hf_iterative, themes.
    #[arg(long = "regime")]
    pub regimes: Vec<String>,
    /// Add bootstrap mean and 95% band columns
    #[arg(long)]
    pub bootstrap: bool,
    /// Bootstrap resamples
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Mention count at which a code becomes high-frequency
    #[arg(long)]
    pub hf_threshold: Option<u32>,
    /// Reading order (a manifest or unblinding CSV); defaults to document order.
    #[arg(long)]
    pub order: Option<PathBuf>,
    /// Restrict to one arm of an unblinding file: treatment or control.
    #[arg(long, requires = "order")]
    pub arm: Option<String>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Arm assignments; defaults to unblinding.csv in the input directory.
    #[arg(long)]
    pub unblinding: Option<PathBuf>,
    /// Analyse a ready-made observation table instead of a collection.
    #[arg(long)]
    pub observations: Option<PathBuf>,
    /// HC1 standard errors.
    #[arg(long)]
    pub robust: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Comma-separated subset sizes; `full` is the whole corpus.
    #[arg(long)]
    pub sizes: Option<String>,
    /// Random subsets drawn per size
    #[arg(long)]
    pub replicates: Option<usize>,
    /// `identity` or `a,b,c` for a + b x + c x^2.
    #[arg(long, conflicts_with = "observations")]
    pub map: Option<String>,
    /// Fit the quadratic map from ai_density and fecundity columns.
    #[arg(long)]
    pub observations: Option<PathBuf>,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let input_in_file = file.input.is_some();
    let mut cfg = RunConfig::from_file(file);
    if let Some(s) = cli.seed {
        cfg.seed = Some(s);
    }
    if let Some(o) = cli.out {
        if cli.input.is_none() && !input_in_file {
            cfg.input = o.clone();
        }
        cfg.out = o;
    }
    if let Some(i) = cli.input {
        cfg.input = i;
    }
    cfg.plot |= cli.plot;
    match cli.command {
        Command::Synth(a) => commands::synth(&cfg, a),
        Command::Ingest => commands::ingest(&cfg),
        Command::Code(a) => commands::code(cfg, a),
        Command::Select(a) => commands::select(cfg, a),
        Command::Saturate(a) => commands::saturate(cfg, a),
        Command::Analyze(a) => commands::analyze(cfg, a),
        Command::Sweep(a) => commands::sweep(cfg, a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(classify(&e).code() as u8)
        }
    }
}
