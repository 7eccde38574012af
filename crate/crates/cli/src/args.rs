use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use stylesearch_core::engine::Method;
use stylesearch_core::evalkit::PairMode;

/// Multimodal style search: synthetic data, training, retrieval, evaluation
/// and the HTTP service.
///
/// Exit codes: 0 success, 1 usage error, 2 data error, 3 training failure.
/// Logs go to standard error (`RUST_LOG` selects the level, default `info`).
#[derive(Debug, Parser)]
#[command(name = "stylesearch", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic catalog with latent styles.
    Synth(SynthArgs),
    /// Validate a catalog and write it canonically with a unit-norm feature file.
    Ingest(IngestArgs),
    /// Train the description word embedding (CBOW).
    TrainEmbed(EmbedArgs),
    /// Train the product-context embedding on compatible sets.
    TrainContext(EmbedArgs),
    /// Train the classification-based joint image-text network.
    TrainDeepstyle(DeepStyleArgs),
    /// Train the siamese joint image-text network.
    TrainSiamese(SiameseArgs),
    /// Write per-item vectors of a retrieval space as an embedding table.
    Index(IndexArgs),
    /// Run one multimodal query.
    Query(QueryArgs),
    /// Score methods with mean AILS over the protocol queries.
    Eval(EvalArgs),
    /// Early-fusion grid over n1 x n2, written as a CSV matrix.
    Sweep(SweepArgs),
    /// Serve the JSON API.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 500)]
    pub items: usize,
    #[arg(long, default_value_t = 8)]
    pub styles: usize,
    #[arg(long, default_value_t = 120)]
    pub sets: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 32)]
    pub feature_dim: usize,
    /// Per-coordinate standard deviation of visual feature noise.
    #[arg(long, default_value_t = 1.6)]
    pub feature_noise: f64,
    /// Output catalog (JSON lines).
    #[arg(short, long, default_value = "catalog.jsonl")]
    pub output: PathBuf,
    /// Item -> latent style map (JSON) [default: none]
    #[arg(long)]
    pub styles_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Input catalog (JSON lines).
    #[arg(long)]
    pub catalog: PathBuf,
    /// Feature file resolving the catalog's feature keys [default: none]
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Canonical catalog output.
    #[arg(short, long, default_value = "catalog.jsonl")]
    pub output: PathBuf,
    /// Unit-norm feature file for every item.
    #[arg(long, default_value = "features.jsonl")]
    pub features_out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[arg(long, env = "STYLESEARCH_CATALOG")]
    pub catalog: PathBuf,
    /// Output table [default: text.emb for train-embed, context.emb for train-context].
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    pub dim: usize,
    /// Context radius [default: 5 for train-embed, 3 for train-context].
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long, default_value_t = 5)]
    pub negatives: usize,
    /// Passes over the corpus.
    #[arg(long, default_value_t = 15)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.025)]
    pub lr: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub min_lr: f64,
    /// Minimum token count (train-embed only; context training keeps every item).
    #[arg(long, default_value_t = 2)]
    pub min_count: u64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

/// Catalog and feature inputs plus the train/test split used for training.
#[derive(Debug, Args)]
pub struct TrainInputs {
    #[arg(long, env = "STYLESEARCH_CATALOG")]
    pub catalog: PathBuf,
    /// Feature file for keyed catalog features [default: none, inline features]
    #[arg(long, env = "STYLESEARCH_FEATURES")]
    pub features: Option<PathBuf>,
    /// Description word embedding.
    #[arg(long, env = "STYLESEARCH_TEXT_EMB")]
    pub text_emb: PathBuf,
    #[command(flatten)]
    pub split: SplitArgs,
    /// Train on every item instead of the training split.
    #[arg(long)]
    pub all_items: bool,
}

#[derive(Debug, Clone, Copy, Args)]
pub struct SplitArgs {
    #[arg(long, default_value_t = 0.1)]
    pub test_fraction: f64,
    #[arg(long, default_value_t = 1)]
    pub split_seed: u64,
}

#[derive(Debug, Args)]
pub struct SgdArgs {
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.0)]
    pub momentum: f64,
    /// Width of each branch; the joint embedding is twice this.
    #[arg(long, default_value_t = 128)]
    pub branch_dim: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct DeepStyleArgs {
    #[command(flatten)]
    pub inputs: TrainInputs,
    #[command(flatten)]
    pub sgd: SgdArgs,
    #[arg(short, long, default_value = "deepstyle.json")]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct SiameseArgs {
    #[command(flatten)]
    pub inputs: TrainInputs,
    #[command(flatten)]
    pub sgd: SgdArgs,
    #[arg(long, default_value_t = 1.0)]
    pub margin: f64,
    /// Contrastive term weight.
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    /// Left cross-entropy weight.
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
    /// Right cross-entropy weight.
    #[arg(long, default_value_t = 1.0)]
    pub gamma: f64,
    #[arg(short, long, default_value = "siamese.json")]
    pub output: PathBuf,
}

/// Artifacts an engine is built from. Only the catalog is required; methods
/// whose inputs are missing report themselves unavailable.
#[derive(Debug, Clone, Args)]
pub struct Artifacts {
    #[arg(long, env = "STYLESEARCH_CATALOG")]
    pub catalog: PathBuf,
    /// Feature file for keyed catalog features [default: none, inline features]
    #[arg(long, env = "STYLESEARCH_FEATURES")]
    pub features: Option<PathBuf>,
    /// Description word embedding; enables late and early fusion [default: none]
    #[arg(long, env = "STYLESEARCH_TEXT_EMB")]
    pub text_emb: Option<PathBuf>,
    /// Product-context embedding; enables early fusion [default: none]
    #[arg(long, env = "STYLESEARCH_CONTEXT")]
    pub context: Option<PathBuf>,
    /// Classification model [default: none]
    #[arg(long, env = "STYLESEARCH_DEEPSTYLE")]
    pub deepstyle: Option<PathBuf>,
    /// Siamese model [default: none]
    #[arg(long, env = "STYLESEARCH_SIAMESE")]
    pub siamese: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Space {
    /// Mean-word-vector description embeddings.
    Description,
    Deepstyle,
    Siamese,
}

#[derive(Debug, Args)]
pub struct IndexArgs {
    #[command(flatten)]
    pub artifacts: Artifacts,
    #[arg(long, value_enum, default_value_t = Space::Description)]
    pub space: Space,
    #[arg(short, long, default_value = "index.emb")]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Table,
    Json,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    #[command(flatten)]
    pub artifacts: Artifacts,
    /// Catalog item whose image is the visual query.
    #[arg(long)]
    pub item: String,
    /// Text query.
    #[arg(long)]
    pub text: String,
    #[arg(long, default_value_t = Method::Early)]
    pub method: Method,
    #[arg(short, long, default_value_t = 4)]
    pub k: usize,
    /// Early fusion: visual candidates [default: 3].
    #[arg(long)]
    pub n1: Option<usize>,
    /// Early fusion: context neighbours per candidate [default: 4].
    #[arg(long)]
    pub n2: Option<usize>,
    /// Early fusion: final results [default: k].
    #[arg(long)]
    pub n3: Option<usize>,
    /// Seed of the random baseline.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    pub format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PairModeArg {
    /// Retrieved items plus the query item.
    WithQuery,
    /// Retrieved items only.
    RetrievedOnly,
}

impl From<PairModeArg> for PairMode {
    fn from(m: PairModeArg) -> Self {
        match m {
            PairModeArg::WithQuery => PairMode::WithQuery,
            PairModeArg::RetrievedOnly => PairMode::RetrievedOnly,
        }
    }
}

/// How the protocol queries and the style-similarity ground truth are built.
#[derive(Debug, Args)]
pub struct ProtocolArgs {
    #[command(flatten)]
    pub split: SplitArgs,
    /// Size of the frequent-word lists (text queries and name similarity).
    #[arg(long, default_value_t = 50)]
    pub top_words: usize,
    #[arg(long, value_enum, default_value_t = PairModeArg::WithQuery)]
    pub pair_mode: PairModeArg,
    /// Seeds the text-query draw and the random baseline.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub artifacts: Artifacts,
    #[command(flatten)]
    pub protocol: ProtocolArgs,
    /// Methods to score, comma separated [default: every method whose inputs are loaded].
    #[arg(long, value_delimiter = ',')]
    pub method: Vec<Method>,
    #[arg(short, long, default_value_t = 4)]
    pub k: usize,
    /// JSON file receiving the full reports, one per method [default: none]
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub artifacts: Artifacts,
    #[command(flatten)]
    pub protocol: ProtocolArgs,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
    pub n1: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
    pub n2: Vec<usize>,
    #[arg(long, default_value_t = 4)]
    pub n3: usize,
    /// CSV output [default: standard output].
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub artifacts: Artifacts,
    #[arg(long, env = "STYLESEARCH_HOST", default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, env = "STYLESEARCH_PORT", default_value_t = 8080)]
    pub port: u16,
    /// Seed of the random baseline.
    #[arg(long, env = "STYLESEARCH_SEED", default_value_t = 1)]
    pub seed: u64,
}
