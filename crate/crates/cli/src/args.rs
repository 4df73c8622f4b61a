use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use flowmine::evaluator::{Policy, DEFAULT_BUDGET};
use flowmine::miner::{DEFAULT_MIN_SUPPORT, DEFAULT_THETA};
use flowmine::seqmodel::DEFAULT_SAMPLES;
use flowmine::slice::SliceMode;
use flowmine::Predicate;

#[derive(Debug, Parser)]
#[command(name = "flowmine", version, about = "Mine message-flow specifications from interleaved SoC traces")]
pub struct Cli {
    /// Seed for every random choice (generation, initialization, shuffling).
    #[arg(long, global = true, default_value_t = 42)]
    pub seed: u64,

    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    /// Write run manifests here instead of next to the outputs.
    #[arg(long, global = true)]
    pub manifest_dir: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate an interleaved trace from flow specifications.
    Gen(GenArgs),
    /// Export the causality graph of a catalog as Graphviz.
    Graph(GraphArgs),
    /// Train a scorer on traces.
    Train(TrainArgs),
    /// Mine one flow per (start, end) pair.
    Mine(MineArgs),
    /// Replay traces on mined flows and report the acceptance rate.
    Eval(EvalArgs),
    /// Summarize evaluation reports in one table.
    Report(ReportArgs),
    /// Run gen → train → mine → eval → report from a config file.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Clone, Args)]
pub struct GenArgs {
    /// Comma-separated .flow files.
    #[arg(long, value_delimiter = ',', required_unless_present = "preset", conflicts_with = "preset")]
    pub flows: Vec<PathBuf>,
    /// Built-in scenario: case-study, small-10, small-20, large-10 or large-20.
    /// The output is then a directory holding catalog.cat, truth.flow and trace.trc.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub cores: Option<usize>,
    /// Flow instances to complete.
    #[arg(long)]
    pub runs: Option<usize>,
    /// Corrupt the trace so that it cannot be fully accepted.
    #[arg(long, value_name = "RATE")]
    pub negative: Option<f64>,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct GraphArgs {
    #[arg(long)]
    pub catalog: PathBuf,
    #[arg(long, default_value_t = Predicate::Union)]
    pub predicate: Predicate,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SliceArgs {
    /// Causality predicate used to slice traces.
    #[arg(long, default_value_t = Predicate::Union)]
    pub predicate: Predicate,
    /// How traces are cut into sequences: chains or components.
    #[arg(long, default_value_t = SliceMode::Chains)]
    pub slicing: SliceMode,
    /// Look-back window for slicing (default depends on the mode).
    #[arg(long)]
    pub slice_window: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub traces: PathBuf,
    #[arg(long)]
    pub catalog: PathBuf,
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
    #[arg(long, default_value_t = 64)]
    pub window: usize,
    #[arg(long, default_value_t = 0.15)]
    pub mask_prob: f64,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    /// Raise the epoch count until at least this many optimizer steps are taken.
    #[arg(long, default_value_t = 0)]
    pub min_steps: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    /// Offset between training windows cut from one sequence.
    #[arg(long, default_value_t = 16)]
    pub stride: usize,
    /// Train an n-gram scorer of this order instead of the attention model.
    #[arg(long, value_name = "ORDER")]
    pub ngram: Option<usize>,
    /// Additive smoothing constant of the n-gram scorer.
    #[arg(long, default_value_t = 0.1)]
    pub smoothing: f64,
    #[command(flatten)]
    pub slice: SliceArgs,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct MineArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub catalog: PathBuf,
    #[arg(long)]
    pub traces: PathBuf,
    #[arg(long, default_value_t = DEFAULT_THETA)]
    pub theta: f64,
    /// Occurrences of each message sampled per scorer query.
    #[arg(long, default_value_t = DEFAULT_SAMPLES)]
    pub samples: usize,
    /// Skip pairs whose end follows their start in fewer slices than this share.
    #[arg(long, default_value_t = DEFAULT_MIN_SUPPORT)]
    pub min_support: f64,
    #[command(flatten)]
    pub slice: SliceArgs,
    /// Output directory.
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// A directory of .flow files or comma-separated .flow files.
    #[arg(long, value_delimiter = ',', required = true)]
    pub flows: Vec<PathBuf>,
    #[arg(long)]
    pub catalog: PathBuf,
    #[arg(long)]
    pub traces: PathBuf,
    #[arg(long, default_value_t = Policy::GreedyOldest, value_parser = parse_policy)]
    pub policy: Policy,
    /// Node budget of the exhaustive search.
    #[arg(long, default_value_t = DEFAULT_BUDGET)]
    pub budget: u64,
    /// Ground-truth flows for edge precision/recall.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Row name in summaries (defaults to the output file stem).
    #[arg(long)]
    pub name: Option<String>,
    /// Runtime to report for producing the flows; read from the flows' manifest
    /// when omitted.
    #[arg(long)]
    pub rt: Option<f64>,
    /// Exit successfully even when the search budget runs out.
    #[arg(long)]
    pub allow_lower_bound: bool,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    /// Evaluation reports, comma-separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub inputs: Vec<PathBuf>,
    /// Table destination; a `.kv` sibling gets the machine-readable copy.
    /// Prints the table when omitted.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct PipelineArgs {
    pub config: PathBuf,
}

fn parse_policy(s: &str) -> Result<Policy, String> {
    s.parse().map_err(|e: flowmine::Error| e.to_string())
}
