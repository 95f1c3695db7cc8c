use std::net::IpAddr;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use vbfi_core::{BoostingConfig, Trait, ViewAgg};

#[derive(Debug, Parser)]
#[command(name = "vbfi", version, about = "Visual Big-Five questionnaire pipeline")]
pub struct Cli {
    /// Log level (error, warn, info, debug, trace); VBFI_LOG overrides it.
    #[arg(long, global = true, default_value = "info")]
    pub log_level: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset with planted signal.
    Synth(SynthArgs),
    /// Add hypernym ancestors to every image's concepts.
    ExpandConcepts(ExpandArgs),
    /// Train one ensemble per trait and write model_<T>.json files.
    Train(TrainArgs),
    /// Repeated k-fold cross-validation against single-view trees and the mean.
    Evaluate(EvaluateArgs),
    /// Cross-validate over a range of rounds (M) or leaves (J).
    Sweep(SweepArgs),
    /// Compile trained models into questionnaire.json.
    Design(DesignArgs),
    /// Score response sheets against a questionnaire.
    Score(ScoreArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = 104)]
    pub users: usize,
    /// Number of concepts (views).
    #[arg(long, default_value_t = 36)]
    pub views: usize,
    #[arg(long, default_value_t = 16)]
    pub feature_dim: usize,
    /// Informative view indices [default: 3,10,17,24,31 for 32+ views, else evenly spaced]
    #[arg(long, value_delimiter = ',')]
    pub informative: Option<Vec<usize>>,
    /// One amplitude per informative view [default: 1.4,1.0,0.7,0.5,0.35]
    #[arg(long, value_delimiter = ',')]
    pub amplitudes: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0.5)]
    pub noise_std: f64,
    /// Steps per planted staircase.
    #[arg(long, default_value_t = 2)]
    pub levels: usize,
    /// Unfavored images per concept.
    #[arg(long, default_value_t = 100)]
    pub pool_images: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExpandArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// JSON file {"edges": [{"child": .., "parent": ..}]} [default: <data>/hierarchy.json]
    #[arg(long)]
    pub hierarchy: Option<PathBuf>,
    /// Parent steps to follow.
    #[arg(long, default_value_t = 3)]
    pub levels: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Agg {
    Mean,
    First,
}

impl From<Agg> for ViewAgg {
    fn from(a: Agg) -> Self {
        match a {
            Agg::Mean => ViewAgg::Mean,
            Agg::First => ViewAgg::First,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Dataset directory (images.jsonl, favorites.csv, traits.csv).
    #[arg(long)]
    pub data: PathBuf,
    /// Concept list, one per line, in view order [default: <data>/concepts.txt if present, else co-favored selection]
    #[arg(long)]
    pub concepts: Option<PathBuf>,
    /// Users every selected concept must share when selecting concepts.
    #[arg(long, default_value_t = 104)]
    pub min_common_users: usize,
    /// How several favorites under one concept are combined.
    #[arg(long, value_enum, default_value_t = Agg::Mean)]
    pub agg: Agg,
}

#[derive(Debug, Clone, Args)]
pub struct TraitArgs {
    /// Trait code (O, C, E, A, N); repeatable.
    #[arg(long = "trait", value_parser = parse_trait)]
    pub traits: Vec<Trait>,
    #[arg(long)]
    pub all_traits: bool,
}

fn parse_trait(s: &str) -> Result<Trait, String> {
    s.parse().map_err(|_| format!("unknown trait `{s}` (expected O, C, E, A or N)"))
}

#[derive(Debug, Clone, Args)]
pub struct BoostArgs {
    /// Boosting rounds (questions per trait).
    #[arg(long = "M", default_value_t = 5)]
    pub rounds: usize,
    /// Leaves per tree (options per question).
    #[arg(long = "J", default_value_t = 5)]
    pub leaves: usize,
    #[arg(long, default_value_t = 0.5)]
    pub shrinkage: f64,
    #[arg(long, default_value_t = 2)]
    pub min_leaf: usize,
    /// Never reuse a view in later rounds.
    #[arg(long)]
    pub distinct_views: bool,
}

impl BoostArgs {
    pub fn config(&self) -> BoostingConfig {
        BoostingConfig {
            rounds: self.rounds,
            max_leaves: self.leaves,
            shrinkage: self.shrinkage,
            min_leaf: self.min_leaf,
            distinct_views: self.distinct_views,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub traits: TraitArgs,
    #[command(flatten)]
    pub boost: BoostArgs,
    /// Output directory for model_<T>.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CvArgs {
    #[arg(long, default_value_t = 10)]
    pub folds: usize,
    #[arg(long, default_value_t = 10)]
    pub repeats: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Traits to evaluate [default: all]
    #[command(flatten)]
    pub traits: TraitArgs,
    #[command(flatten)]
    pub boost: BoostArgs,
    #[command(flatten)]
    pub cv: CvArgs,
    /// Skip the single-view tree comparison.
    #[arg(long)]
    pub no_single_view: bool,
    /// Per-fold CSV (trait,learner,repeat,fold,rmse); stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Summary CSV with paired p-values.
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Param {
    #[value(name = "M")]
    M,
    #[value(name = "J")]
    J,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub traits: TraitArgs,
    #[command(flatten)]
    pub boost: BoostArgs,
    #[command(flatten)]
    pub cv: CvArgs,
    #[arg(long, value_enum, default_value_t = Param::M)]
    pub param: Param,
    #[arg(long, value_delimiter = ',', default_value = "1,3,5,7,10")]
    pub values: Vec<usize>,
    /// CSV (param,value,trait,mean_rmse,std_rmse,p_value); stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// SVG line plot of mean RMSE.
    #[arg(long)]
    pub plot: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DesignArgs {
    /// Directory holding model_<T>.json files.
    #[arg(long)]
    pub models: PathBuf,
    /// Dataset directory supplying the option images.
    #[arg(long)]
    pub data: PathBuf,
    /// 1 = options from the largest cluster, 2 = second largest, ...
    #[arg(long, default_value_t = 1)]
    pub cluster_choice: usize,
    /// Version id [default: v<cluster-choice>]
    #[arg(long)]
    pub version_id: Option<String>,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.9)]
    pub ap_damping: f64,
    #[arg(long, default_value_t = 500)]
    pub ap_max_iter: usize,
    #[arg(long, default_value_t = 25)]
    pub ap_convergence_iter: usize,
    /// Self-similarity; the median similarity when absent.
    #[arg(long, allow_hyphen_values = true)]
    pub ap_preference: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub questionnaire: PathBuf,
    /// responses.jsonl, one sheet per line.
    #[arg(long)]
    pub responses: PathBuf,
    /// CSV (subject_id,version_id,O,C,E,A,N); stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1")]
    pub host: IpAddr,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    /// Questionnaire manifest; repeat for several versions, the first is the default.
    #[arg(long, required = true)]
    pub questionnaire: Vec<PathBuf>,
    #[arg(long, default_value = "images")]
    pub images_dir: PathBuf,
    #[arg(long, default_value = "responses.jsonl")]
    pub journal: PathBuf,
    /// Origin allowed by CORS, e.g. http://localhost:5173.
    #[arg(long)]
    pub allow_origin: Option<String>,
    /// Directory of static files served under /.
    #[arg(long)]
    pub static_dir: Option<PathBuf>,
}
