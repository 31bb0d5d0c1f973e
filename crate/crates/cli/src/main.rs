//! `q2rec` command-line interface.
//!
//! `run`, `ablate` and `report` drive whole experiments from a TOML config.
//! The remaining subcommands expose single stages over files so a run can be
//! assembled, inspected or resumed by hand.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use q2rec_core::dataset::Phase;
use q2rec_core::fusion::FusionMode;

#[derive(Parser)]
#[command(name = "q2rec", version, about = "Training-free query-to-recommendation engine")]
struct Cli {
    /// Log more (-v info, -vv debug). RUST_LOG overrides.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Split interactions leave-one-out and write split/ plus stats.json.
    Ingest(IngestArgs),
    /// Generate item queries and item documents.
    GenItemQueries(GenItemArgs),
    /// Generate user queries and user documents for one phase.
    GenUserQueries(GenUserArgs),
    /// Embed a documents JSONL file into a vector matrix.
    Embed(EmbedArgs),
    /// Build the item index from item vectors.
    BuildIndex(BuildIndexArgs),
    /// Score every item for every user and write top-k rankings.
    Retrieve(RetrieveArgs),
    /// Produce a CF score table (built-in baseline or imported scores).
    Cf(CfArgs),
    /// Fuse LLM and CF score tables into final rankings.
    Fuse(FuseArgs),
    /// Evaluate a rankings file against held-out targets.
    Eval(EvalArgs),
    /// Run the base configuration plus all single-component ablations.
    Ablate(ConfigArgs),
    /// Run the full pipeline from a config file.
    Run(ConfigArgs),
    /// Print the report of a finished run.
    Report(ReportArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// Pipeline configuration (TOML).
    #[arg(short, long)]
    config: PathBuf,
    /// Override the configured output directory.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Output directory of a finished run.
    dir: PathBuf,
    /// Print the JSON report instead of the table.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    interactions: PathBuf,
    #[arg(long)]
    items: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Users with fewer interactions get no targets (at least 3).
    #[arg(long, default_value_t = 3)]
    min_len: usize,
    /// Drop repeated (user, item) events, keeping the earliest.
    #[arg(long)]
    dedup: bool,
}

#[derive(Args, Clone)]
struct LlmArgs {
    /// Use the deterministic offline mock instead of an endpoint.
    #[arg(long)]
    mock_llm: bool,
    /// OpenAI-compatible chat-completions URL.
    #[arg(long, required_unless_present = "mock_llm")]
    endpoint: Option<String>,
    #[arg(long, default_value = "")]
    model: String,
    /// Environment variable holding the API key.
    #[arg(long, default_value = "QUEREC_LLM_API_KEY")]
    api_key_env: String,
    #[arg(long, default_value_t = 8)]
    concurrency: usize,
    #[arg(long, default_value_t = 3)]
    max_attempts: u32,
    #[arg(long)]
    temperature: Option<f64>,
}

#[derive(Args)]
struct GenItemArgs {
    /// Split directory written by `ingest`.
    #[arg(long)]
    split: PathBuf,
    #[arg(long)]
    items: PathBuf,
    /// Query sets JSONL.
    #[arg(long)]
    out: PathBuf,
    /// Item documents JSONL.
    #[arg(long)]
    docs: PathBuf,
    /// Most recent train reviews listed per item.
    #[arg(long, default_value_t = 10)]
    review_cap: usize,
    /// Write metadata-only documents and skip the LLM.
    #[arg(long)]
    no_item_desc: bool,
    #[command(flatten)]
    llm: LlmArgs,
}

#[derive(Args)]
struct GenUserArgs {
    #[arg(long)]
    split: PathBuf,
    #[arg(long)]
    items: PathBuf,
    #[arg(long, default_value = "test")]
    phase: Phase,
    /// Item documents; their queries are attached to the last history item.
    #[arg(long)]
    item_docs: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    docs: PathBuf,
    #[arg(long, default_value_t = 8)]
    max_history: usize,
    #[arg(long)]
    review_char_budget: Option<usize>,
    /// No emphasized last item; user documents are queries only.
    #[arg(long)]
    no_recent_item: bool,
    /// Skip the LLM; user documents are the last item's metadata only.
    #[arg(long, conflicts_with = "no_recent_item")]
    no_user_queries: bool,
    #[command(flatten)]
    llm: LlmArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum Provider {
    Mock,
    Http,
    File,
}

#[derive(Clone, Copy, ValueEnum)]
enum CfSourceArg {
    Popularity,
    Cooccurrence,
    Import,
}

#[derive(Args, Clone)]
struct EmbeddingArgs {
    #[arg(long, value_enum, default_value_t = Provider::Mock)]
    provider: Provider,
    #[arg(long, default_value_t = 256)]
    dimension: usize,
    /// Mock encoder seed.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Embeddings endpoint (http provider).
    #[arg(long)]
    embed_endpoint: Option<String>,
    #[arg(long)]
    embed_model: Option<String>,
    #[arg(long)]
    embed_api_key_env: Option<String>,
    /// Precomputed vector matrix directory (file provider).
    #[arg(long)]
    embed_path: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
}

#[derive(Args)]
struct EmbedArgs {
    /// Documents JSONL.
    #[arg(long)]
    docs: PathBuf,
    /// Output vector matrix directory.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    embedding: EmbeddingArgs,
}

#[derive(Args)]
struct BuildIndexArgs {
    /// Item vector matrix directory written by `embed`.
    #[arg(long)]
    vectors: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RetrieveArgs {
    #[arg(long)]
    index: PathBuf,
    /// User vector matrix directory.
    #[arg(long)]
    users: PathBuf,
    #[arg(long)]
    split: PathBuf,
    #[arg(long, default_value = "test")]
    phase: Phase,
    #[arg(short, long, default_value_t = 10)]
    k: usize,
    /// Rankings JSONL.
    #[arg(long)]
    out: PathBuf,
    /// Also write the full score table here (input to `fuse`).
    #[arg(long)]
    scores_out: Option<PathBuf>,
    /// Keep already-seen items in the rankings.
    #[arg(long)]
    include_history: bool,
}

#[derive(Args)]
struct CfArgs {
    #[arg(long)]
    split: PathBuf,
    #[arg(long)]
    items: PathBuf,
    #[arg(long, default_value = "test")]
    phase: Phase,
    #[arg(long, value_enum, default_value_t = CfSourceArg::Cooccurrence)]
    source: CfSourceArg,
    /// Score file or matrix directory for `--source import`.
    #[arg(long)]
    import: Option<PathBuf>,
    /// Score table directory.
    #[arg(long)]
    out: PathBuf,
    /// Also write top-k rankings JSONL.
    #[arg(long)]
    rankings_out: Option<PathBuf>,
    #[arg(short, long, default_value_t = 10)]
    k: usize,
    #[arg(long)]
    include_history: bool,
}

#[derive(Args)]
struct FuseArgs {
    /// LLM score table for the phase being ranked.
    #[arg(long)]
    llm: PathBuf,
    /// CF score table for the phase being ranked.
    #[arg(long)]
    cf: PathBuf,
    #[arg(long)]
    split: PathBuf,
    #[arg(long, default_value = "test")]
    phase: Phase,
    /// adaptive, fixed:<λ>, rrf or rrf:<k>.
    #[arg(long, default_value = "adaptive")]
    mode: FusionMode,
    /// Validation LLM score table (adaptive mode).
    #[arg(long)]
    llm_valid: Option<PathBuf>,
    /// Validation CF score table (adaptive mode).
    #[arg(long)]
    cf_valid: Option<PathBuf>,
    #[arg(short, long, default_value_t = 10)]
    k: usize,
    #[arg(long)]
    out: PathBuf,
    /// Where to write λ_init, ω and λ.
    #[arg(long)]
    diagnostics_out: Option<PathBuf>,
    #[arg(long)]
    include_history: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// One or more rankings files, each evaluated separately.
    #[arg(long, required = true, num_args = 1..)]
    rankings: Vec<PathBuf>,
    #[arg(long)]
    split: PathBuf,
    #[arg(long, default_value = "test")]
    phase: Phase,
    /// Catalog, used for the skewness denominator.
    #[arg(long)]
    items: PathBuf,
    /// Extra cutoffs beyond 5 and 10.
    #[arg(long, value_delimiter = ',')]
    ks: Vec<usize>,
    /// Directory for per-run recommendation histograms (CSV).
    #[arg(long)]
    histograms: Option<PathBuf>,
    #[arg(long)]
    json: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match commands::dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
