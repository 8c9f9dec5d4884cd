use std::path::PathBuf;

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use hypattn::attention::{AttentionConfig, AttentionGeometry, RadiusInit, Weighting};
use hypattn::graphgen::{DiskRadius, GeneratorConfig, Task};
use hypattn::model::ModelConfig;
use hypattn::training::TrainConfig;

use crate::UsageError;

#[derive(Debug, Parser)]
#[command(
    name = "hypattn",
    version,
    about = "Hyperbolic attention on hyperbolic random graphs",
    after_help = "Every subcommand accepts --config FILE: a flat JSON object keyed by flag name \
                  (e.g. {\"steps\": 500, \"geometry\": \"euclidean\"}). Flags given on the \
                  command line take precedence over the file."
)]
pub struct Cli {
    /// JSON file of flag values
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample hyperbolic random graphs and write them as JSON lines
    GenGraphs(GenGraphsArgs),
    /// Train a model, writing a metrics CSV and a checkpoint
    Train(Box<TrainArgs>),
    /// Report the accuracy of a checkpoint on freshly sampled graphs
    Eval(EvalArgs),
    /// Run the finite-difference gradient suite
    Gradcheck(SeedArgs),
    /// Run the randomized geometry invariant suite
    GeomSelftest(SelftestArgs),
    /// Write the histogram of lift radii of a checkpoint as JSON
    ExportRadiusHist(HistArgs),
    /// Print the accuracy of the optimal constant predictor
    Baseline(BaselineArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    Lp,
    Splp,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Lp => Task::Lp,
            TaskArg::Splp => Task::Splp,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GeometryArg {
    Euclidean,
    Hyperbolic,
    /// Hyperbolic matching with a plain weighted average of values
    HyperbolicEuclideanAggregation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum WeightingArg {
    Softmax,
    Sigmoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PseudoPolarArg {
    /// On for hyperbolic geometries, off for Euclidean
    Auto,
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RadiusInitArg {
    Random,
    Zero,
}

#[derive(Debug, Clone, Args)]
pub struct GeneratorArgs {
    /// Radial density exponent of the node distribution
    #[arg(long, default_value_t = GeneratorConfig::default().alpha)]
    pub alpha: f64,
    /// Edge threshold as a fraction of the disk radius
    #[arg(long, default_value_t = GeneratorConfig::default().edge_radius_factor)]
    pub edge_radius_factor: f64,
    /// Choose the disk radius so the expected average degree is this value
    #[arg(long, default_value_t = 4.0)]
    pub target_degree: f64,
    /// Fixed disk radius
    #[arg(long, conflicts_with_all = ["disk_radius_offset", "target_degree"])]
    pub disk_radius: Option<f64>,
    /// Disk radius 2 ln n + OFFSET
    #[arg(long, value_name = "OFFSET", allow_hyphen_values = true, conflicts_with = "target_degree")]
    pub disk_radius_offset: Option<f64>,
}

impl GeneratorArgs {
    pub fn config(&self) -> GeneratorConfig {
        let disk_radius = match (self.disk_radius, self.disk_radius_offset) {
            (Some(radius), _) => DiskRadius::Fixed { radius },
            (None, Some(offset)) => DiskRadius::Scaled { offset },
            (None, None) => DiskRadius::TargetDegree {
                degree: self.target_degree,
            },
        };
        GeneratorConfig {
            alpha: self.alpha,
            edge_radius_factor: self.edge_radius_factor,
            disk_radius,
        }
    }
}

/// Flags that conflict with each other; a command-line flag from one of
/// these groups drops the whole group from the config file.
pub const EXCLUSIVE_GROUPS: &[&[&str]] = &[&["disk-radius", "disk-radius-offset", "target-degree"]];

#[derive(Debug, Clone, Args)]
pub struct GenGraphsArgs {
    /// Nodes per graph
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    /// Number of graphs
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output file [default: standard output]
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub generator: GeneratorArgs,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    #[arg(long, value_enum, default_value_t = GeometryArg::Hyperbolic)]
    pub geometry: GeometryArg,
    #[arg(long, value_enum, default_value_t = WeightingArg::Sigmoid)]
    pub weighting: WeightingArg,
    #[arg(long, default_value_t = AttentionConfig::default().heads)]
    pub heads: usize,
    #[arg(long, default_value_t = AttentionConfig::default().head_dim)]
    pub head_dim: usize,
    /// Recursion depth of the tied block
    #[arg(long, default_value_t = ModelConfig::default().layers)]
    pub layers: usize,
    /// Width of the residual stream [default: heads x head-dim]
    #[arg(long)]
    pub model_dim: Option<usize>,
    /// Hidden width of the feed-forward sublayer [default: 4 x model-dim]
    #[arg(long)]
    pub ffn_dim: Option<usize>,
    /// Width of the random node identifier
    #[arg(long, default_value_t = ModelConfig::default().node_id_dim)]
    pub node_id_dim: usize,
    /// Learn an explicit radius per projection
    #[arg(long, value_enum, default_value_t = PseudoPolarArg::Auto)]
    pub pseudo_polar: PseudoPolarArg,
    /// Initialization of the learned radius weights
    #[arg(long, value_enum, default_value_t = RadiusInitArg::Random)]
    pub radius_init: RadiusInitArg,
}

impl ModelArgs {
    pub fn config(&self, task: Task) -> Result<ModelConfig, UsageError> {
        let geometry = match self.geometry {
            GeometryArg::Euclidean => AttentionGeometry::Euclidean,
            GeometryArg::Hyperbolic => AttentionGeometry::Hyperbolic,
            GeometryArg::HyperbolicEuclideanAggregation => AttentionGeometry::HyperbolicEuclideanAggregation,
        };
        let use_pseudo_polar = match self.pseudo_polar {
            PseudoPolarArg::Auto => geometry.is_hyperbolic(),
            PseudoPolarArg::On if !geometry.is_hyperbolic() => {
                return Err(UsageError(
                    "--pseudo-polar on needs a hyperbolic geometry; Euclidean attention has no radius".into(),
                ))
            }
            PseudoPolarArg::On => true,
            PseudoPolarArg::Off => false,
        };
        if self.radius_init == RadiusInitArg::Zero && !use_pseudo_polar {
            return Err(UsageError("--radius-init zero only applies with pseudo-polar inputs".into()));
        }
        let attention = AttentionConfig {
            geometry,
            weighting: match self.weighting {
                WeightingArg::Softmax => Weighting::Softmax,
                WeightingArg::Sigmoid => Weighting::Sigmoid,
            },
            heads: self.heads,
            head_dim: self.head_dim,
            use_pseudo_polar,
        };
        let mut config = ModelConfig::new(attention, task);
        config.layers = self.layers;
        if let Some(d) = self.model_dim {
            config.model_dim = d;
            config.ffn_dim = 4 * d;
        }
        if let Some(f) = self.ffn_dim {
            config.ffn_dim = f;
        }
        config.node_id_dim = self.node_id_dim;
        config.radius_init = match self.radius_init {
            RadiusInitArg::Random => RadiusInit::Random,
            RadiusInitArg::Zero => RadiusInit::Zero,
        };
        config.validate().map_err(|e| UsageError(e.to_string()))?;
        Ok(config)
    }
}

fn defaults() -> TrainConfig {
    TrainConfig::default()
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum, default_value_t = TaskArg::Lp)]
    pub task: TaskArg,
    /// Nodes per sampled graph
    #[arg(long, default_value_t = defaults().graph_size)]
    pub graph_size: usize,
    /// Total optimizer steps
    #[arg(long, default_value_t = defaults().steps)]
    pub steps: usize,
    /// Graphs per batch
    #[arg(long, default_value_t = defaults().batch_size)]
    pub batch_size: usize,
    #[arg(long, default_value_t = defaults().learning_rate)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = defaults().beta1)]
    pub beta1: f64,
    #[arg(long, default_value_t = defaults().beta2)]
    pub beta2: f64,
    #[arg(long, default_value_t = defaults().eps_opt)]
    pub eps_opt: f64,
    /// Global gradient-norm clipping threshold
    #[arg(long, default_value_t = defaults().grad_clip_norm)]
    pub grad_clip_norm: f64,
    #[arg(long, default_value_t = defaults().seed)]
    pub seed: u64,
    /// Train on angular slices that widen lesson by lesson
    #[arg(long, action = ArgAction::Set, num_args = 0..=1, default_missing_value = "true",
          default_value_t = defaults().curriculum)]
    pub curriculum: bool,
    #[arg(long, default_value_t = defaults().lessons)]
    pub lessons: usize,
    #[arg(long, default_value_t = defaults().steps_per_lesson)]
    pub steps_per_lesson: usize,
    /// Steps between metrics rows
    #[arg(long, default_value_t = defaults().eval_every)]
    pub eval_every: usize,
    /// Size of the fixed evaluation sample
    #[arg(long, default_value_t = defaults().eval_examples)]
    pub eval_examples: usize,
    /// Train and evaluate on the first batch only
    #[arg(long, action = ArgAction::Set, num_args = 0..=1, default_missing_value = "true",
          default_value_t = defaults().overfit)]
    pub overfit: bool,
    /// Threads that sample training graphs (0: the training thread)
    #[arg(long, default_value_t = defaults().data_workers)]
    pub data_workers: usize,
    #[arg(long, default_value = "metrics.csv")]
    pub metrics_out: PathBuf,
    #[arg(long, default_value = "checkpoint.hypa")]
    pub checkpoint_out: PathBuf,
    /// Continue from a checkpoint; only --steps and the output paths may be given alongside
    #[arg(long, value_name = "CHECKPOINT")]
    pub resume: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub generator: GeneratorArgs,
}

/// Flags that may accompany --resume.
pub const RESUME_FLAGS: &[&str] = &["steps", "metrics_out", "checkpoint_out", "resume", "config"];

impl TrainArgs {
    pub fn configs(&self) -> Result<(ModelConfig, TrainConfig), UsageError> {
        let task = Task::from(self.task);
        let model = self.model.config(task)?;
        let train = TrainConfig {
            steps: self.steps,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps_opt: self.eps_opt,
            grad_clip_norm: self.grad_clip_norm,
            seed: self.seed,
            curriculum: self.curriculum,
            lessons: self.lessons,
            steps_per_lesson: self.steps_per_lesson,
            eval_every: self.eval_every,
            eval_examples: self.eval_examples,
            graph_size: self.graph_size,
            task,
            generator: self.generator.config(),
            overfit: self.overfit,
            data_workers: self.data_workers,
        };
        train.validate().map_err(|e| UsageError(e.to_string()))?;
        Ok((model, train))
    }
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Number of fresh graphs
    #[arg(long, default_value_t = 512)]
    pub count: usize,
    /// Seed of the fresh sample [default: the training seed + 1]
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct HistArgs {
    #[command(flatten)]
    pub eval: EvalArgs,
    #[arg(long, default_value_t = 20)]
    pub bins: usize,
    /// Output file [default: standard output]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SeedArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct SelftestArgs {
    /// Random instances per property
    #[arg(long, default_value_t = 1000)]
    pub instances: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct BaselineArgs {
    #[arg(long, value_enum, default_value_t = TaskArg::Lp)]
    pub task: TaskArg,
    #[arg(long, default_value_t = defaults().graph_size)]
    pub graph_size: usize,
    /// Size of the evaluation sample; with matching --seed this is the sample `train` evaluates on
    #[arg(long, default_value_t = defaults().eval_examples)]
    pub eval_examples: usize,
    #[arg(long, default_value_t = defaults().seed)]
    pub seed: u64,
    #[command(flatten)]
    pub generator: GeneratorArgs,
}
