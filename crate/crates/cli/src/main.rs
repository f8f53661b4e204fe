mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rebut_core::model::{ElementKind, VeracityLabel};
use rebut_core::orchestrator::CriticMode;
use serde_json::json;

use crate::config::ConfigError;

const EXIT_RUNTIME: u8 = 1;
const EXIT_CONFIG: u8 = 2;

#[derive(Parser, Debug)]
#[command(name = "rebut", version, about = "Evidence-grounded counter-responses with element-level critiques")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Maximum number of articles processed concurrently.
    #[arg(long, global = true)]
    parallelism: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Entity tagger service; the built-in heuristic is used without one.
    #[arg(long, global = true)]
    tagger_endpoint: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Load a dataset, filter labels, split it and report statistics.
    Ingest(IngestArgs),
    /// Build critic training data as JSON lines.
    Datagen(DatagenArgs),
    /// Generate and refine counter-responses.
    Respond(RespondArgs),
    /// Run the critics over existing responses.
    Critique(CritiqueArgs),
    /// Score responses with an LLM judge.
    Eval(EvalArgs),
    /// Measure critique throughput.
    Bench(BenchArgs),
}

#[derive(Args, Debug, Default)]
struct InputArgs {
    /// Articles as TSV, or JSON lines written by `ingest`.
    #[arg(long = "in")]
    input: PathBuf,
    /// Pair every claim with this single evidence document.
    #[arg(long)]
    evidence_file: Option<PathBuf>,
    /// Keep only these labels (comma separated).
    #[arg(long, value_delimiter = ',', value_parser = parse_label)]
    labels: Option<Vec<VeracityLabel>>,
}

#[derive(Args, Debug)]
struct IngestArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    out: PathBuf,
    /// Train/dev/test ratios, e.g. 0.8,0.1,0.1.
    #[arg(long, value_delimiter = ',')]
    split: Option<Vec<f64>>,
}

#[derive(Args, Debug)]
struct DatagenArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Output JSON lines file.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    number_cap: Option<usize>,
    #[arg(long)]
    entity_cap: Option<usize>,
    #[arg(long)]
    offtopic_count: Option<usize>,
    /// Chat endpoint for off-topic rewrites.
    #[arg(long)]
    offtopic_endpoint: Option<String>,
    #[arg(long)]
    offtopic_model: Option<String>,
}

#[derive(Args, Debug, Default)]
struct CriticArgs {
    /// Critic kinds to disable (comma separated: number, entity, topic).
    #[arg(long, value_delimiter = ',', value_parser = parse_kind)]
    no_critics: Option<Vec<ElementKind>>,
    #[arg(long, value_enum)]
    critic_mode: Option<ModeArg>,
    /// Critique service base address.
    #[arg(long)]
    critic_endpoint: Option<String>,
    #[arg(long)]
    topic_threshold: Option<f64>,
}

#[derive(Args, Debug)]
struct RespondArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    critics: CriticArgs,
    /// Generation chat endpoint.
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    max_rounds: Option<usize>,
    /// Re-run the critics on the final response.
    #[arg(long)]
    verify: bool,
}

#[derive(Args, Debug)]
struct CritiqueArgs {
    /// Responses as JSON lines with id, claim, evidence and response.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    critics: CriticArgs,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Responses as JSON lines with id, claim, evidence and response.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    judge_endpoint: Option<String>,
    #[arg(long)]
    judge_model: Option<String>,
    #[arg(long)]
    gamma: Option<f64>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Articles to build the workload from; a built-in example otherwise.
    #[arg(long = "in")]
    input: Option<PathBuf>,
    #[arg(long)]
    evidence_file: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    items: Option<usize>,
    #[arg(long, value_enum, default_value_t = BenchMode::Measured)]
    mode: BenchMode,
    #[command(flatten)]
    critics: CriticArgs,
    /// Chat endpoint for a measured self-feedback baseline.
    #[arg(long)]
    baseline_endpoint: Option<String>,
    #[arg(long)]
    baseline_model: Option<String>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Rule,
    Model,
    Mixed,
}

impl From<ModeArg> for CriticMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Rule => CriticMode::Rule,
            ModeArg::Model => CriticMode::Model,
            ModeArg::Mixed => CriticMode::Mixed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BenchMode {
    /// Time the critics for real; the baseline is simulated unless an
    /// endpoint is given.
    Measured,
    /// Charge configured latencies to a virtual clock for both subjects.
    Simulated,
}

fn parse_kind(raw: &str) -> Result<ElementKind, String> {
    ElementKind::parse(raw).ok_or_else(|| format!("unknown critic kind {raw:?}"))
}

fn parse_label(raw: &str) -> Result<VeracityLabel, String> {
    VeracityLabel::ALL
        .into_iter()
        .find(|l| l.as_str() == raw.trim().to_lowercase())
        .ok_or_else(|| format!("unknown label {raw:?}"))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let (kind, code) = match err.downcast_ref::<ConfigError>() {
                Some(_) => ("config", EXIT_CONFIG),
                None => ("runtime", EXIT_RUNTIME),
            };
            let causes: Vec<String> = err.chain().skip(1).map(|c| c.to_string()).collect();
            eprintln!("{}", json!({ "error": kind, "message": err.to_string(), "causes": causes }));
            ExitCode::from(code)
        }
    }
}
