//! Online training of the Recursive Transformer: data streams, the optimizer,
//! evaluation, baselines, radius diagnostics and checkpoints.
//!
//! Every example is drawn from its own seed, derived from the run seed and
//! the step, so the example stream does not depend on how it is produced.

mod checkpoint;
mod data;
mod optim;

pub use checkpoint::{Checkpoint, IndexEntry, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use data::{ExampleSource, PreparedExample};
pub use optim::{clip_grad_norm, cross_entropy, global_grad_norm, Adam, AdamConfig};

use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, ParamStore, Tape};
use crate::graphgen::{Curriculum, GeneratorConfig, GraphError, Task};
use crate::model::{argmax, GraphInput, ModelConfig, ModelError, RecursiveTransformer};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },
    #[error("non-finite loss at step {step}\n{dump}")]
    NonFinite { step: usize, dump: String },
    #[error("radius histogram needs a hyperbolic model")]
    NotHyperbolic,
    #[error("empty evaluation sample")]
    EmptySample,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_opt: f64,
    pub grad_clip_norm: f64,
    pub seed: u64,
    pub curriculum: bool,
    pub lessons: usize,
    pub steps_per_lesson: usize,
    pub eval_every: usize,
    /// Examples in the fixed evaluation sample.
    pub eval_examples: usize,
    pub graph_size: usize,
    pub task: Task,
    pub generator: GeneratorConfig,
    /// Train and evaluate on the first batch only.
    pub overfit: bool,
    /// Threads that pre-sample examples; 0 samples on the training thread.
    pub data_workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let curriculum = Curriculum::default();
        Self {
            steps: 20_000,
            batch_size: 32,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps_opt: 1e-8,
            grad_clip_norm: 1.0,
            seed: 0,
            curriculum: false,
            lessons: curriculum.lessons,
            steps_per_lesson: curriculum.steps_per_lesson,
            eval_every: 1000,
            eval_examples: 512,
            graph_size: 100,
            task: Task::Lp,
            generator: GeneratorConfig::default(),
            overfit: false,
            data_workers: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(TrainError::Config(m.into()));
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return fail("beta1 and beta2 must lie in [0, 1)");
        }
        if self.eps_opt.is_nan() || self.eps_opt <= 0.0 || self.grad_clip_norm.is_nan() || self.grad_clip_norm <= 0.0 {
            return fail("eps_opt and grad_clip_norm must be positive");
        }
        if self.eval_every == 0 || self.eval_examples == 0 {
            return fail("eval_every and eval_examples must be at least 1");
        }
        if self.graph_size < 3 {
            return fail("graph_size must be at least 3");
        }
        if self.curriculum && (self.lessons == 0 || self.steps_per_lesson == 0) {
            return fail("curriculum needs at least one lesson of at least one step");
        }
        self.generator.validate()?;
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps_opt,
        }
    }

    pub fn schedule(&self) -> Option<Curriculum> {
        self.curriculum.then_some(Curriculum {
            lessons: self.lessons,
            steps_per_lesson: self.steps_per_lesson,
        })
    }

    /// Curriculum lesson for the 0-based step `step`; 0 without a curriculum.
    pub fn lesson_at(&self, step: usize) -> usize {
        self.schedule().map_or(0, |c| c.lesson_at(step))
    }
}

/// One row of the metrics stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    /// Completed optimizer steps.
    pub step: usize,
    /// Mean batch loss over the steps since the previous row.
    pub train_loss: f64,
    pub eval_accuracy: f64,
    /// Mean `|r|` over every lift on the evaluation sample; NaN for
    /// Euclidean models.
    pub mean_radius: f64,
    pub lesson: usize,
}

pub const METRICS_HEADER: &str = "step,train_loss,eval_accuracy,mean_radius,lesson";

impl Metrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.step, self.train_loss, self.eval_accuracy, self.mean_radius, self.lesson
        )
    }
}

pub fn write_metrics_csv<W: Write>(mut out: W, rows: &[Metrics]) -> std::io::Result<()> {
    writeln!(out, "{METRICS_HEADER}")?;
    for row in rows {
        writeln!(out, "{}", row.csv_row())?;
    }
    Ok(())
}

/// Accuracy and lift radii of a model on a set of examples.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub radii: Vec<f64>,
}

impl Evaluation {
    pub fn mean_radius(&self) -> f64 {
        if self.radii.is_empty() {
            f64::NAN
        } else {
            self.radii.iter().sum::<f64>() / self.radii.len() as f64
        }
    }
}

pub fn evaluate(
    model: &RecursiveTransformer,
    store: &ParamStore,
    examples: &[PreparedExample],
) -> Result<Evaluation> {
    if examples.is_empty() {
        return Err(TrainError::EmptySample);
    }
    let task = model.config().task;
    let mut correct = 0usize;
    let mut radii = Vec::new();
    for ex in examples {
        let input = ex.input()?;
        let tape = Tape::with_finite_checks(false);
        let logits = model.logits(&tape, store, &input, Some(&mut radii))?.value();
        correct += usize::from(argmax(logits.data()) == task.class_of(ex.example.label));
    }
    if !model.config().attention.geometry.is_hyperbolic() {
        radii.clear();
    }
    Ok(Evaluation {
        accuracy: correct as f64 / examples.len() as f64,
        radii,
    })
}

/// Accuracy of always predicting the most frequent label.
pub fn constant_baseline(labels: &[usize]) -> Result<f64> {
    if labels.is_empty() {
        return Err(TrainError::EmptySample);
    }
    let mut counts = std::collections::BTreeMap::new();
    for &l in labels {
        *counts.entry(l).or_insert(0usize) += 1;
    }
    let modal = counts.values().copied().max().unwrap_or(0);
    Ok(modal as f64 / labels.len() as f64)
}

/// Fixed-width histogram of lift radii. `bins` holds the `counts.len() + 1`
/// bin edges, from 0 to the largest observed radius.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadiusHistogram {
    pub bins: Vec<f64>,
    pub counts: Vec<usize>,
}

impl RadiusHistogram {
    pub fn from_radii(radii: &[f64], bins: usize) -> Result<Self> {
        if bins == 0 {
            return Err(TrainError::Config("a histogram needs at least one bin".into()));
        }
        let max = radii.iter().copied().fold(0.0, f64::max);
        let width = if max > 0.0 { max / bins as f64 } else { 1.0 / bins as f64 };
        let edges = (0..=bins).map(|i| i as f64 * width).collect();
        let mut counts = vec![0; bins];
        for &r in radii {
            let b = ((r / width) as usize).min(bins - 1);
            counts[b] += 1;
        }
        Ok(Self { bins: edges, counts })
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

/// Histogram of every `|r|` entering a lift while the model reads `examples`.
pub fn radius_histogram(
    model: &RecursiveTransformer,
    store: &ParamStore,
    examples: &[PreparedExample],
    bins: usize,
) -> Result<RadiusHistogram> {
    if !model.config().attention.geometry.is_hyperbolic() {
        return Err(TrainError::NotHyperbolic);
    }
    let eval = evaluate(model, store, examples)?;
    RadiusHistogram::from_radii(&eval.radii, bins)
}

/// Model, parameters and optimizer state of a run in progress.
pub struct Trainer {
    model: RecursiveTransformer,
    store: ParamStore,
    adam: Adam,
    config: TrainConfig,
    source: ExampleSource,
    eval_set: Vec<PreparedExample>,
    step: usize,
    loss_sum: f64,
    loss_steps: usize,
}

impl Trainer {
    /// Fresh parameters drawn from `train.seed`.
    pub fn new(model_config: ModelConfig, train: TrainConfig) -> Result<Self> {
        let (model, store) = RecursiveTransformer::init(model_config, train.seed)?;
        let adam = Adam::new(&store);
        Self::assemble(model, store, adam, train, 0, 0.0, 0)
    }

    fn assemble(
        model: RecursiveTransformer,
        store: ParamStore,
        adam: Adam,
        config: TrainConfig,
        step: usize,
        loss_sum: f64,
        loss_steps: usize,
    ) -> Result<Self> {
        config.validate()?;
        if model.config().task != config.task {
            return Err(TrainError::Config(format!(
                "model predicts {:?} but training samples {:?}",
                model.config().task,
                config.task
            )));
        }
        let source = ExampleSource::new(model.config(), &config)?;
        let eval_set = if config.overfit {
            source.training_batch(0)?
        } else {
            source.evaluation_set(config.eval_examples)?
        };
        Ok(Self {
            model,
            store,
            adam,
            config,
            source,
            eval_set,
            step,
            loss_sum,
            loss_steps,
        })
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        let (model, store, adam) = ckpt.restore()?;
        Self::assemble(
            model,
            store,
            adam,
            ckpt.train,
            ckpt.step,
            ckpt.loss_sum,
            ckpt.loss_steps,
        )
    }

    pub fn model(&self) -> &RecursiveTransformer {
        &self.model
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Completed optimizer steps.
    pub fn step_count(&self) -> usize {
        self.step
    }

    pub fn eval_set(&self) -> &[PreparedExample] {
        &self.eval_set
    }

    pub fn source(&self) -> &ExampleSource {
        &self.source
    }

    /// Raises or lowers the step budget, e.g. to continue a finished run.
    pub fn set_total_steps(&mut self, steps: usize) {
        self.config.steps = steps;
    }

    pub fn evaluate(&self) -> Result<Evaluation> {
        evaluate(&self.model, &self.store, &self.eval_set)
    }

    /// One optimizer step on a fresh batch; returns the mean batch loss.
    pub fn train_step(&mut self) -> Result<f64> {
        let batch_index = if self.config.overfit { 0 } else { self.step };
        let batch = if self.config.data_workers > 0 {
            self.source.training_batch_parallel(batch_index, self.config.data_workers)?
        } else {
            self.source.training_batch(batch_index)?
        };
        self.store.zero_grad();
        let scale = 1.0 / batch.len() as f64;
        let mut total = 0.0;
        for (i, ex) in batch.iter().enumerate() {
            let input = ex.input()?;
            let tape = Tape::with_finite_checks(false);
            let logits = self.model.logits(&tape, &self.store, &input, None)?;
            let loss = cross_entropy(logits, self.config.task.class_of(ex.example.label))?;
            let value = loss.item();
            if !value.is_finite() {
                return Err(self.non_finite(i, ex, &input, value));
            }
            total += value;
            tape.backward(loss.scale(scale)?)?.accumulate_into(&mut self.store);
        }
        let norm = clip_grad_norm(&mut self.store, self.config.grad_clip_norm);
        if !norm.is_finite() {
            let dump = format!("gradient norm {norm}\n{}", self.parameter_summary());
            return Err(TrainError::NonFinite { step: self.step, dump });
        }
        self.adam.step(&mut self.store, &self.config.adam());
        self.step += 1;
        let mean = total * scale;
        self.loss_sum += mean;
        self.loss_steps += 1;
        Ok(mean)
    }

    fn non_finite(&self, index: usize, ex: &PreparedExample, input: &GraphInput, loss: f64) -> TrainError {
        let mut dump = String::new();
        let _ = writeln!(
            dump,
            "example {index} of the batch: loss {loss}, {} nodes, {} edges, src {} dst {} label {}",
            ex.graph.n(),
            ex.graph.edges().len(),
            input.src,
            input.dst,
            ex.example.label
        );
        dump.push_str(&self.parameter_summary());
        TrainError::NonFinite { step: self.step, dump }
    }

    fn parameter_summary(&self) -> String {
        let mut out = String::new();
        for p in self.store.iter() {
            let max = p.value.data().iter().fold(0.0f64, |m, x| m.max(x.abs()));
            let bad = p.value.data().iter().filter(|x| !x.is_finite()).count();
            let _ = writeln!(out, "  {}: max |value| {max}, non-finite {bad}", p.name);
        }
        out
    }

    /// Evaluates and drains the running loss into a metrics row.
    pub fn metrics(&mut self) -> Result<Metrics> {
        let eval = self.evaluate()?;
        let train_loss = if self.loss_steps == 0 {
            f64::NAN
        } else {
            self.loss_sum / self.loss_steps as f64
        };
        self.loss_sum = 0.0;
        self.loss_steps = 0;
        Ok(Metrics {
            step: self.step,
            train_loss,
            eval_accuracy: eval.accuracy,
            mean_radius: eval.mean_radius(),
            lesson: self.config.lesson_at(self.step.saturating_sub(1)),
        })
    }

    /// Trains until the next metrics row is due and returns it; `None` once
    /// the step budget is spent. Rows fall every `eval_every` steps and after
    /// the last one.
    pub fn next_row(&mut self) -> Result<Option<Metrics>> {
        while self.step < self.config.steps {
            self.train_step()?;
            if self.step.is_multiple_of(self.config.eval_every) || self.step == self.config.steps {
                let row = self.metrics()?;
                log::info!(
                    "step {} loss {:.4} accuracy {:.4} mean radius {:.4}",
                    row.step,
                    row.train_loss,
                    row.eval_accuracy,
                    row.mean_radius
                );
                return Ok(Some(row));
            }
        }
        Ok(None)
    }

    /// Trains up to the configured step budget, collecting every row.
    pub fn run(&mut self, mut on_row: impl FnMut(&Metrics)) -> Result<Vec<Metrics>> {
        let mut rows = Vec::new();
        while let Some(row) = self.next_row()? {
            on_row(&row);
            rows.push(row);
        }
        Ok(rows)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::capture(
            &self.model,
            &self.store,
            &self.adam,
            &self.config,
            self.step,
            self.loss_sum,
            self.loss_steps,
        )
    }
}

/// Result of a complete run.
pub struct TrainOutcome {
    pub metrics: Vec<Metrics>,
    pub checkpoint: Checkpoint,
}

/// Trains from scratch for `train.steps` steps.
pub fn train(model_config: ModelConfig, train: TrainConfig) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(model_config, train)?;
    let metrics = trainer.run(|_| {})?;
    Ok(TrainOutcome {
        metrics,
        checkpoint: trainer.checkpoint(),
    })
}
