//! `pagelens` command-line front end.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "pagelens", version, about = "Multi-vector page retrieval with pooled prefetch and exact MaxSim rerank")]
pub struct Cli {
    /// JSON pipeline config; flags override its fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Cap on worker threads.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a seeded synthetic corpus: one bundle per dataset, a query
    /// bundle and qrels.
    Gen(GenArgs),
    /// Crop empty borders from a PGM page image.
    Crop(CropArgs),
    /// Hygiene + pooling + FP16 indexing of an embedding bundle.
    Index(IndexArgs),
    /// Search an index; TREC run lines on stdout.
    Search(SearchArgs),
    /// Compare throughput (and quality, given qrels) across search configs.
    Bench(BenchArgs),
    /// Evaluate NDCG/Recall@{5,10,100} and QPS.
    Eval(EvalArgs),
    /// Multiply-add counts per query for a profile's vector counts.
    Cost(CostArgs),
}

#[derive(Debug, Args)]
pub struct ProfileArgs {
    /// Model profile: colpali, colsmol or colqwen.
    #[arg(long)]
    pub profile: Option<String>,
    /// Override the profile's embedding dim.
    #[arg(long)]
    pub dim: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[command(flatten)]
    pub profile: ProfileArgs,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub datasets: Option<usize>,
    /// Pages per dataset.
    #[arg(long)]
    pub pages: Option<usize>,
    /// Queries per dataset.
    #[arg(long)]
    pub queries: Option<usize>,
    #[arg(long)]
    pub topics: Option<usize>,
    #[arg(long)]
    pub noise: Option<f64>,
    /// Grid size `RxC`: patch grid, merged grid, or tile grid depending on
    /// the profile.
    #[arg(long)]
    pub grid: Option<String>,
    #[arg(long)]
    pub patches_per_tile: Option<usize>,
    #[arg(long)]
    pub query_tokens: Option<usize>,
    /// Store page payloads as FP16.
    #[arg(long)]
    pub f16: bool,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct CropArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub row_thresh: Option<f64>,
    #[arg(long)]
    pub col_thresh: Option<f64>,
    #[arg(long, overrides_with = "no_strip")]
    pub strip: bool,
    #[arg(long, overrides_with = "strip")]
    pub no_strip: bool,
    #[arg(long)]
    pub strip_frac: Option<f64>,
    #[arg(long)]
    pub min_keep: Option<f64>,
}

#[derive(Debug, Args)]
pub struct PoolingArgs {
    /// Smoothed variant: conv1d, gauss or tri.
    #[arg(long)]
    pub smoothing: Option<String>,
    /// Skip the smoothed variant even if the profile has a default.
    #[arg(long, conflicts_with = "smoothing")]
    pub no_smoothing: bool,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Row cap for adaptive pooling.
    #[arg(long)]
    pub max_rows: Option<usize>,
    #[arg(long)]
    pub no_renormalize: bool,
}

#[derive(Debug, Args)]
pub struct IndexArgs {
    #[command(flatten)]
    pub profile: ProfileArgs,
    #[command(flatten)]
    pub pooling: PoolingArgs,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SearchFlags {
    #[arg(long)]
    pub stages: Option<u8>,
    #[arg(long)]
    pub stage1_vector: Option<String>,
    #[arg(long)]
    pub prefetch_k: Option<usize>,
    #[arg(long)]
    pub global_prefetch_k: Option<usize>,
    #[arg(long)]
    pub top_k: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    /// Index file; repeat to search the union of several.
    #[arg(long = "index", required = true)]
    pub indexes: Vec<PathBuf>,
    #[arg(long)]
    pub queries: PathBuf,
    #[command(flatten)]
    pub search: SearchFlags,
    #[arg(long, default_value = "pagelens")]
    pub run_tag: String,
    /// Emit JSON lines with per-stage timings instead of TREC lines.
    #[arg(long)]
    pub jsonl: bool,
    /// Log per-stage candidate sets on stderr.
    #[arg(long)]
    pub verbose: bool,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long = "index", required = true)]
    pub indexes: Vec<PathBuf>,
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long)]
    pub qrels: Option<PathBuf>,
    /// JSON list of `{"label": ..., "search": {...}}`; defaults to 1-, 2-
    /// and 3-stage rows.
    #[arg(long)]
    pub configs: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
    #[arg(long)]
    pub parallel_clients: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ScopeArg {
    PerDataset,
    Union,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long = "index", required = true)]
    pub indexes: Vec<PathBuf>,
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long)]
    pub qrels: PathBuf,
    #[arg(long, value_enum, default_value = "union")]
    pub scope: ScopeArg,
    #[command(flatten)]
    pub search: SearchFlags,
    /// Write the JSON report here.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Zero timing fields so reports are byte-comparable.
    #[arg(long)]
    pub no_timings: bool,
    #[arg(long)]
    pub parallel_clients: bool,
    /// Seed recorded in the report.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct CostArgs {
    #[arg(long)]
    pub profile: Option<String>,
    #[arg(long, default_value_t = 10_000)]
    pub pages: u64,
    #[arg(long, default_value_t = 10)]
    pub query_tokens: u64,
    #[arg(long)]
    pub dim: Option<usize>,
    /// `label=D`; repeatable. The first is the baseline.
    #[arg(long = "variant")]
    pub variants: Vec<String>,
    #[arg(long)]
    pub json: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if commands::is_broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
