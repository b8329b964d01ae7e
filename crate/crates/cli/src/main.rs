//! `qgctx`: ingest QA corpora, synthesize contexts, mix and emit training
//! sets, score predictions, profile context quality and render reports.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use qgctx::corpus::CorpusError;
use qgctx::gateway::GatewayError;
use qgctx::jsonl::JsonlError;
use qgctx::metrics::MetricsError;
use qgctx::mixer::{MixError, MixStrategy};
use qgctx::prompt::PromptError;
use qgctx::quality::QualityError;
use qgctx::report::ReportError;
use qgctx::synthesis::{ContainmentMode, SynthesisError};

#[derive(Debug, Parser)]
#[command(
    name = "qgctx",
    version,
    about = "Synthetic contexts for question generation"
)]
struct Cli {
    /// TOML config file; flags and QGCTX_* variables take precedence over it.
    #[arg(long, global = true, env = "QGCTX_CONFIG")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load a SQuAD JSON or QA JSONL file into a canonical corpus.
    Ingest(IngestArgs),
    /// Seeded train/test split of a corpus.
    Split(SplitArgs),
    /// Seeded subset of a corpus.
    Sample(SampleArgs),
    /// Turn a corpus with contexts into real-context triplets.
    RealContexts(RealContextsArgs),
    /// Generate a synthetic context for every pair (resumable).
    Synthesize(SynthesizeArgs),
    /// Interpolate real and synthetic contexts at a fraction.
    Mix(MixArgs),
    /// Nested subsets of a triplet file at several sizes.
    Sweep(SweepArgs),
    /// Write a {input, target, meta} training set from triplets.
    Emit(EmitArgs),
    /// Score predictions against gold questions.
    Score(ScoreArgs),
    /// Length, perplexity, containment and QA-probe profile of contexts.
    Quality(QualityArgs),
    /// Comparison tables, curve data and manifest verification.
    #[command(subcommand)]
    Report(ReportCommand),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum InputFormat {
    Squad,
    Jsonl,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long, value_enum)]
    pub format: InputFormat,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    pub test_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub train_out: PathBuf,
    #[arg(long)]
    pub test_out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RealContextsArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Zero,
    Few,
}

/// Endpoint settings shared by the commands that call a model.
#[derive(Debug, Args)]
pub struct GatewayArgs {
    /// Chat/logprob endpoint: `mock:` or an OpenAI-compatible base URL.
    #[arg(long, env = "QGCTX_ENDPOINT")]
    pub endpoint: Option<String>,
    /// Extractive QA endpoint for the probe.
    #[arg(long, env = "QGCTX_QA_ENDPOINT")]
    pub qa_endpoint: Option<String>,
    /// Name of the environment variable holding the API key.
    #[arg(long, env = "QGCTX_API_KEY_ENV")]
    pub api_key_env: Option<String>,
    #[arg(long, env = "QGCTX_CACHE_DIR")]
    pub cache_dir: Option<PathBuf>,
    #[arg(long, env = "QGCTX_REQUESTS_PER_MINUTE")]
    pub requests_per_minute: Option<u32>,
    #[arg(long, env = "QGCTX_MAX_RETRIES")]
    pub max_retries: Option<u32>,
    #[arg(long, env = "QGCTX_PARALLELISM")]
    pub parallelism: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SynthesizeArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Built-in preset: squad_wiki or osbio_science.
    #[arg(long, default_value = "squad_wiki")]
    pub style: String,
    /// TOML preset file (overrides --style; may carry exemplars).
    #[arg(long)]
    pub preset_file: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "zero")]
    pub mode: ModeArg,
    /// JSONL exemplars {title?, context, question, answer} for few-shot mode.
    #[arg(long)]
    pub exemplars: Option<PathBuf>,
    #[command(flatten)]
    pub gateway: GatewayArgs,
    #[arg(long, env = "QGCTX_MODEL")]
    pub model: Option<String>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub top_p: Option<f64>,
    #[arg(long)]
    pub max_output_tokens: Option<u32>,
    #[arg(long)]
    pub failure_threshold: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MixArgs {
    #[arg(long)]
    pub real: PathBuf,
    #[arg(long)]
    pub synthetic: PathBuf,
    #[arg(long)]
    pub fraction: f64,
    #[arg(long, env = "QGCTX_SEED")]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub strategy: Option<StrategyArg>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StrategyArg {
    Prefix,
    Independent,
}

impl From<StrategyArg> for MixStrategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Prefix => MixStrategy::Prefix,
            StrategyArg::Independent => MixStrategy::Independent,
        }
    }
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub triplets: PathBuf,
    /// Comma-separated subset sizes, e.g. 1000,5000,10000.
    #[arg(long, value_delimiter = ',', required = true)]
    pub sizes: Vec<usize>,
    #[arg(long, env = "QGCTX_SEED")]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct EmitArgs {
    #[arg(long)]
    pub triplets: PathBuf,
    #[arg(long, default_value = "squad_wiki")]
    pub style: String,
    #[arg(long)]
    pub preset_file: Option<PathBuf>,
    #[arg(long, env = "QGCTX_MAX_INPUT_TOKENS")]
    pub max_input_tokens: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// Predictions JSONL {pair_id, text}.
    #[arg(long)]
    pub pred: PathBuf,
    /// Gold JSONL with {pair_id, question}; triplet files qualify.
    #[arg(long)]
    pub gold: PathBuf,
    /// Report JSON; a CSV with the same stem is written beside it.
    #[arg(long)]
    pub out: PathBuf,
    /// External per-example scores: JSON object or JSONL {pair_id, score}.
    #[arg(long)]
    pub external_scores: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ContainmentArg {
    Normalized,
    Raw,
}

impl From<ContainmentArg> for ContainmentMode {
    fn from(c: ContainmentArg) -> Self {
        match c {
            ContainmentArg::Normalized => ContainmentMode::Normalized,
            ContainmentArg::Raw => ContainmentMode::RawSubstring,
        }
    }
}

#[derive(Debug, Args)]
pub struct QualityArgs {
    #[arg(long)]
    pub triplets: PathBuf,
    #[command(flatten)]
    pub gateway: GatewayArgs,
    /// Model name used for token logprobs.
    #[arg(long, env = "QGCTX_SCORER")]
    pub scorer: Option<String>,
    #[arg(long)]
    pub bins: Option<usize>,
    #[arg(long)]
    pub review_cap: Option<usize>,
    #[arg(long, env = "QGCTX_SEED")]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub containment: Option<ContainmentArg>,
    #[arg(long)]
    pub skip_perplexity: bool,
    #[arg(long)]
    pub skip_probe: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum ReportCommand {
    /// One row per labelled report.
    Table(TableArgs),
    /// Long-format (fraction, metric, value) CSV.
    Curve(CurveArgs),
    /// Re-hash a manifest's files and check its run id.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
pub struct TableArgs {
    /// LABEL=REPORT_JSON, repeated; rows keep this order.
    #[arg(long = "input", required = true)]
    pub inputs: Vec<String>,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: TableFormatArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TableFormatArg {
    Csv,
    Markdown,
}

#[derive(Debug, Args)]
pub struct CurveArgs {
    /// FRACTION=REPORT_JSON, repeated.
    #[arg(long = "point", required = true)]
    pub points: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "meteor,bleu4")]
    pub metrics: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, required = true)]
    pub manifest: Vec<PathBuf>,
}

/// Exit codes, one per failure class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Failure {
    Internal = 1,
    Config = 2,
    Input = 3,
    Endpoint = 4,
    Verify = 5,
}

impl Failure {
    fn name(self) -> &'static str {
        match self {
            Failure::Internal => "internal",
            Failure::Config => "config",
            Failure::Input => "input",
            Failure::Endpoint => "endpoint",
            Failure::Verify => "verify",
        }
    }
}

fn classify(err: &anyhow::Error) -> Failure {
    for cause in err.chain() {
        if cause.is::<commands::VerifyFailed>() {
            return Failure::Verify;
        }
        if cause.is::<config::ConfigError>() {
            return Failure::Config;
        }
        if let Some(g) = cause.downcast_ref::<GatewayError>() {
            return match g {
                GatewayError::Config(_) => Failure::Config,
                _ => Failure::Endpoint,
            };
        }
        if let Some(s) = cause.downcast_ref::<SynthesisError>() {
            return match s {
                SynthesisError::FailureRateExceeded { .. } => Failure::Endpoint,
                SynthesisError::Argument(_) => Failure::Config,
                _ => Failure::Input,
            };
        }
        if cause.is::<std::io::Error>()
            || cause.is::<CorpusError>()
            || cause.is::<JsonlError>()
            || cause.is::<PromptError>()
            || cause.is::<MetricsError>()
            || cause.is::<MixError>()
            || cause.is::<QualityError>()
            || cause.is::<ReportError>()
            || cause.is::<serde_json::Error>()
        {
            return Failure::Input;
        }
    }
    Failure::Internal
}

/// The error chain joined by ": ", skipping causes whose text the previous
/// message already ends with.
fn message(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if out.ends_with(&text) {
            continue;
        }
        if !out.is_empty() {
            out.push_str(": ");
        }
        out.push_str(&text);
    }
    out
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result =
        config::FileConfig::load(cli.config.as_deref()).and_then(|cfg| match cli.command {
            Command::Ingest(a) => commands::ingest(&a),
            Command::Split(a) => commands::split(&a),
            Command::Sample(a) => commands::sample(&a),
            Command::RealContexts(a) => commands::real_contexts(&a),
            Command::Synthesize(a) => commands::synthesize(&a, &cfg),
            Command::Mix(a) => commands::mix(&a, &cfg),
            Command::Sweep(a) => commands::sweep(&a, &cfg),
            Command::Emit(a) => commands::emit(&a, &cfg),
            Command::Score(a) => commands::score(&a),
            Command::Quality(a) => commands::quality(&a, &cfg),
            Command::Report(ReportCommand::Table(a)) => commands::table(&a),
            Command::Report(ReportCommand::Curve(a)) => commands::curve(&a),
            Command::Report(ReportCommand::Verify(a)) => commands::verify(&a),
        });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let failure = classify(&err);
            let line = serde_json::json!({
                "error": {
                    "kind": failure.name(),
                    "code": failure as u8,
                    "message": message(&err),
                }
            });
            eprintln!("{line}");
            ExitCode::from(failure as u8)
        }
    }
}
