mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::FileConfig;

pub const DEFAULT_SEED: u64 = 42;

#[derive(Parser, Debug)]
#[command(
    name = "s2v",
    version,
    about = "Search action embeddings: training, cold start, matching and evaluation",
    args_override_self = true
)]
pub struct Cli {
    /// `key = value` file with defaults for any long flag.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every randomized step.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Upper bound on worker threads.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Segment an event log into sessions.
    Ingest(IngestArgs),
    /// Count tokens and write the vocabulary.
    Vocab(VocabArgs),
    /// Train input and output vectors.
    Train(TrainArgs),
    /// Content vectors for ads from their creatives.
    #[command(name = "coldstart-ads")]
    ColdstartAds(ColdstartArgs),
    /// Build or query the tail-query index.
    Elastic {
        #[command(subcommand)]
        command: ElasticCommand,
    },
    /// Broad-match ads for queries.
    Match(MatchArgs),
    /// Relevance metrics against graded judgments.
    Eval(EvalArgs),
    /// Score distribution per grade, for box plots.
    #[command(name = "export-plot")]
    ExportPlot(ExportPlotArgs),
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    #[arg(long)]
    pub events: Option<PathBuf>,
    /// Sessions output file.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the ingest report here.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct VocabArgs {
    #[arg(long)]
    pub sessions: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub min_count: Option<u64>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub sessions: Option<PathBuf>,
    /// Vocabulary file; built from the sessions when absent.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub min_count: Option<u64>,
    /// Directory for input.vec, output.vec and manifest.txt.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// reference, hogwild or ps.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub negatives: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub min_lr: Option<f64>,
    /// Downsampling threshold, or `none`.
    #[arg(long)]
    pub subsample: Option<String>,
    /// Sessions per minibatch.
    #[arg(long)]
    pub minibatch: Option<usize>,
    /// sequential or synchronous updates within a minibatch.
    #[arg(long)]
    pub schedule: Option<String>,
    /// unigram or uniform.
    #[arg(long)]
    pub negative_distribution: Option<String>,
    #[arg(long)]
    pub no_implicit_negatives: bool,
    #[arg(long)]
    pub no_dwell_weighting: bool,
    #[arg(long)]
    pub shards: Option<usize>,
    #[arg(long)]
    pub clients: Option<usize>,
    /// inproc or tcp.
    #[arg(long)]
    pub transport: Option<String>,
    /// Take client batches one at a time, round-robin.
    #[arg(long)]
    pub serialized: bool,
    #[arg(long)]
    pub checkpoint_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ColdstartArgs {
    /// Trained input vectors.
    #[arg(long)]
    pub vectors: Option<PathBuf>,
    #[arg(long)]
    pub catalog: Option<PathBuf>,
    /// Elastic index for bid terms without a vector.
    #[arg(long)]
    pub index: Option<PathBuf>,
    #[arg(long)]
    pub tau_c: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub provenance: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum ElasticCommand {
    /// Index head queries expanded with their nearest neighbors.
    Build(ElasticBuildArgs),
    /// Rank head queries for a tail query.
    Match(ElasticMatchArgs),
}

#[derive(Args, Debug)]
pub struct ElasticBuildArgs {
    #[arg(long)]
    pub vectors: Option<PathBuf>,
    /// Neighbors per head query.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Text dump of the postings.
    #[arg(long)]
    pub dump: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ElasticMatchArgs {
    #[arg(long)]
    pub index: Option<PathBuf>,
    #[arg(long)]
    pub query: String,
    /// Leave this head query out of the ranking.
    #[arg(long)]
    pub exclude: Option<String>,
    #[arg(long)]
    pub top: Option<usize>,
}

#[derive(Args, Debug)]
pub struct MatchArgs {
    #[arg(long)]
    pub vectors: Option<PathBuf>,
    /// Extra ad vectors (content vectors), used for ads absent from --vectors.
    #[arg(long)]
    pub ads: Option<PathBuf>,
    #[arg(long)]
    pub query: Option<String>,
    /// File with one query per line.
    #[arg(long)]
    pub queries: Option<PathBuf>,
    /// Elastic index for queries without a vector.
    #[arg(long)]
    pub index: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub lsh: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ScoringArgs {
    #[arg(long)]
    pub vectors: Option<PathBuf>,
    #[arg(long)]
    pub judgments: Option<PathBuf>,
    /// context, content or elastic.
    #[arg(long)]
    pub mode: Option<String>,
    /// Content ad vectors (content mode).
    #[arg(long)]
    pub ads: Option<PathBuf>,
    /// Elastic index (elastic mode).
    #[arg(long)]
    pub index: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub scoring: ScoringArgs,
    /// Metrics report.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// NDCG@K rows for K = 2..9.
    #[arg(long)]
    pub curve: Option<PathBuf>,
    /// Scored pairs.
    #[arg(long)]
    pub scores: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ExportPlotArgs {
    #[command(flatten)]
    pub scoring: ScoringArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn init_logging() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("S2V_LOG", "warn"))
        .format_timestamp(None)
        .init();
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging();
    let file = match cli.config.as_deref().map(FileConfig::load).transpose() {
        Ok(f) => f.unwrap_or_default(),
        Err(e) => {
            eprintln!("error: {:#}", e);
            return ExitCode::FAILURE;
        }
    };
    match commands::run(&cli, &file) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {:#}", e);
            ExitCode::FAILURE
        }
    }
}
