use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use igd::world::Variant;
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(
    name = "igd",
    version,
    about = "In-generation NSFW detection on a synthetic diffusion world"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a synthetic concept world.
    GenWorld(GenWorldArgs),
    /// Sample denoiser training pairs from a world.
    GenData(GenDataArgs),
    /// Train the conditional noise predictor.
    TrainDenoiser(TrainDenoiserArgs),
    /// Train the predicted-noise classifier on clean and naive prompts.
    TrainClassifier(TrainClassifierArgs),
    /// Generate one sample with the in-generation gate.
    ///
    /// Prints a JSON summary. Exit status 0 = completed, 3 = blocked, 1 = error.
    Gate(GateArgs),
    /// Score held-out clean, naive and adversarial prompts.
    Eval(EvalArgs),
    /// Classifier sweeps over steps, concatenations, depth and class count.
    Ablate(AblateArgs),
    /// 2-D PCA projections of predicted-noise features and prompt embeddings.
    Project(ProjectArgs),
    /// Run the whole pipeline end to end and write every artifact.
    Reference(ReferenceArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct RunArgs {
    /// JSON experiment config; flags override its values.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Seed for this command's randomness.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Disable data parallelism.
    #[arg(long)]
    pub sequential: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct WorldShape {
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub concepts_clean: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub concepts_nsfw: Option<u64>,
    /// Latent dimension D.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub dim: Option<u64>,
    /// Prompt embedding dimension.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub embed_dim: Option<u64>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct Artifacts {
    #[arg(long, value_name = "FILE")]
    pub world: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub denoiser: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ClassifierFlags {
    /// Training epochs [default: 100].
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Adam learning rate [default: 0.001].
    #[arg(long)]
    pub lr: Option<f64>,
    /// Number of weight layers [default: 5].
    #[arg(long, value_parser = clap::value_parser!(u64).range(2..))]
    pub layers: Option<u64>,
    /// Decision threshold on the NSFW probability [default: 0.5].
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GenWorldArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[command(flatten)]
    pub shape: WorldShape,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, value_name = "FILE")]
    pub world: PathBuf,
    /// Records per (concept, variant).
    #[arg(long)]
    pub per_variant: Option<usize>,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainDenoiserArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, value_name = "FILE")]
    pub dataset: PathBuf,
    /// Adam steps (one minibatch each) [default: 20000].
    #[arg(long, visible_alias = "train-steps")]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainClassifierArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[command(flatten)]
    pub artifacts: Artifacts,
    #[command(flatten)]
    pub classifier: ClassifierFlags,
    /// Feature steps, e.g. `5` or `5,15,25` [default: 5].
    #[arg(long, value_delimiter = ',', alias = "steps")]
    pub gate_step: Option<Vec<usize>>,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GateArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[command(flatten)]
    pub artifacts: Artifacts,
    #[arg(long, value_name = "FILE")]
    pub classifier: PathBuf,
    /// JSON array with the prompt embedding.
    #[arg(long, value_name = "FILE", conflicts_with_all = ["concept", "variant"])]
    pub prompt_embedding: Option<PathBuf>,
    /// Sample the embedding from this concept of the world.
    #[arg(long, requires = "variant")]
    pub concept: Option<usize>,
    #[arg(long, requires = "concept")]
    pub variant: Option<VariantArg>,
    /// Must match the classifier's feature steps [default: the classifier's].
    #[arg(long, value_delimiter = ',')]
    pub gate_step: Option<Vec<usize>>,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Also write the summary and a run manifest here.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum VariantArg {
    Clean,
    Naive,
    Adversarial,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Clean => Variant::Clean,
            VariantArg::Naive => Variant::Naive,
            VariantArg::Adversarial => Variant::Adversarial,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvalArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[command(flatten)]
    pub artifacts: Artifacts,
    #[arg(long, value_name = "FILE")]
    pub classifier: PathBuf,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum AblationKind {
    Timesteps,
    Concat,
    Depth,
    Multiclass,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct AblateArgs {
    pub kind: AblationKind,
    #[command(flatten)]
    pub run: RunArgs,
    #[command(flatten)]
    pub artifacts: Artifacts,
    #[command(flatten)]
    pub classifier: ClassifierFlags,
    /// timesteps: steps to sweep [default: 5,10,...,50]; depth and multiclass:
    /// feature steps [default: 5].
    #[arg(long, value_delimiter = ',')]
    pub steps: Option<Vec<usize>>,
    /// concat: one step set per flag, e.g. `--set 5 --set 5,15,25 --set all`.
    #[arg(long = "set")]
    pub sets: Vec<String>,
    /// depth: layer counts [default: 3,5,10].
    #[arg(long = "layer-counts", value_delimiter = ',')]
    pub layer_counts: Option<Vec<usize>>,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ProjectArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[command(flatten)]
    pub artifacts: Artifacts,
    #[arg(long, value_delimiter = ',')]
    pub gate_step: Option<Vec<usize>>,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ReferenceArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[command(flatten)]
    pub shape: WorldShape,
    #[command(flatten)]
    pub classifier: ClassifierFlags,
    #[arg(long, value_delimiter = ',')]
    pub gate_step: Option<Vec<usize>>,
    /// Skip the ablation sweeps.
    #[arg(long)]
    pub no_ablations: bool,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}
