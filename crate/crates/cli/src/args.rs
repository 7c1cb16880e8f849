use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use sqlflow_core::llm::ReplayMode;
use sqlflow_core::shots::RetrievalMode;
use sqlflow_core::Profile;

#[derive(Debug, Parser)]
#[command(name = "sqlflow", version, about = "Staged LLM text-to-SQL runner and evaluator")]
pub struct Cli {
    /// Log more (repeat for debug output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Few-shot library maintenance.
    #[command(subcommand)]
    Shots(ShotsCommand),
    /// Run the workflow over a dataset.
    Run(RunArgs),
    /// Score predictions by execution accuracy.
    Eval(EvalArgs),
    /// Summarize token and time cost from traces.
    ReportCost(CostArgs),
    /// Convert benchmark files into the JSONL dataset format.
    #[command(subcommand)]
    Convert(ConvertCommand),
}

#[derive(Debug, Subcommand)]
pub enum ShotsCommand {
    /// Build a class-partitioned library from training pairs.
    Build(ShotsBuildArgs),
}

#[derive(Debug, Args)]
pub struct ShotsBuildArgs {
    /// Training pairs: a JSON array or JSON lines with question, query (or sql), db_id.
    #[arg(long)]
    pub train: PathBuf,
    /// Tables catalog in the Spider format.
    #[arg(long)]
    pub catalog: PathBuf,
    /// Library file to write (JSON lines).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Default)]
pub struct RunArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub db_root: Option<PathBuf>,
    #[arg(long)]
    pub catalog: Option<PathBuf>,
    /// Output directory for predictions, traces, usage and the manifest.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Few-shot library built by `shots build`.
    #[arg(long)]
    pub library: Option<PathBuf>,
    /// Replay cache directory (default: <out>/cache).
    #[arg(long)]
    pub cache: Option<PathBuf>,
    /// Comma list of stages to disable: info_filter, classification,
    /// self_correct, active_learning, active_and_correct, hfk.
    #[arg(long)]
    pub ablate: Option<String>,
    /// Few-shot mode: zero_shot, random, ques_sim, tem_sim, tem_sim_wo.
    #[arg(long)]
    pub shots: Option<RetrievalMode>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub profile: Option<Profile>,
    /// off, record or strict.
    #[arg(long)]
    pub replay: Option<ReplayMode>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub model: Option<String>,
    /// OpenAI-compatible endpoint root, e.g. https://api.openai.com/v1.
    #[arg(long)]
    pub base_url: Option<String>,
    /// Run only a seeded sample of this many questions.
    #[arg(long)]
    pub sample: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// predictions.jsonl written by `run`.
    #[arg(long)]
    pub predictions: PathBuf,
    /// Dataset the predictions were made for (same order).
    #[arg(long)]
    pub dataset: PathBuf,
    /// Directory holding <db_id>/<db_id>.sqlite.
    #[arg(long)]
    pub db_root: PathBuf,
    /// Machine-readable report (default: report.json next to the predictions).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Traces to attach token and latency averages from.
    #[arg(long)]
    pub traces: Option<PathBuf>,
    /// Per-statement execution cap.
    #[arg(long, default_value_t = 30)]
    pub timeout_secs: u64,
    /// Parallel evaluators; also caps simultaneously open databases.
    #[arg(long, default_value_t = 4)]
    pub workers: usize,
}

#[derive(Debug, Args)]
pub struct CostArgs {
    /// traces.jsonl written by `run`.
    #[arg(long)]
    pub traces: PathBuf,
    /// Also write the summary as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum ConvertCommand {
    /// Spider dev.json (db_id, question, query) to dataset JSONL.
    SpiderDev(ConvertArgs),
    /// Bird dev.json (db_id, question, evidence, SQL, difficulty) to dataset JSONL.
    BirdDev(ConvertArgs),
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Difficulty labels aligned with the input: a JSON array or one label per line.
    #[arg(long)]
    pub difficulty: Option<PathBuf>,
}
