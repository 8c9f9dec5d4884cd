use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tensor;
use crate::graphgen::{
    curriculum_slice, sample_lp_example, Curriculum, GraphError, Generator, HypGraph, SplpSampler, Task,
    TaskExample,
};
use crate::model::{node_features, GraphInput, ModelConfig};
use crate::attention::AttentionMask;

use super::{Result, TrainConfig, TrainError};

/// Graph draws allowed per example before giving up, e.g. when every slice
/// of a lesson is too small to hold a query.
const MAX_ATTEMPTS: usize = 1000;
/// Stream reserved for the evaluation sample; training batch `b` uses `b + 1`.
const EVAL_STREAM: u64 = u64::MAX;

/// A sampled graph, query and node features, ready to feed the model.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedExample {
    pub graph: HypGraph,
    pub example: TaskExample,
    pub features: Tensor,
}

impl PreparedExample {
    pub fn input(&self) -> Result<GraphInput> {
        let mask = AttentionMask::from_undirected_edges(self.graph.n(), self.graph.edges())
            .map_err(crate::model::ModelError::from)?;
        Ok(GraphInput {
            features: self.features.clone(),
            mask,
            src: self.example.src,
            dst: self.example.dst,
        })
    }
}

/// Deterministic example stream for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct ExampleSource {
    generator: Generator,
    task: Task,
    node_id_dim: usize,
    seed: u64,
    batch_size: usize,
    schedule: Option<Curriculum>,
}

impl ExampleSource {
    pub fn new(model: &ModelConfig, train: &TrainConfig) -> Result<Self> {
        Ok(Self {
            generator: train.generator.generator(train.graph_size)?,
            task: train.task,
            node_id_dim: model.node_id_dim,
            seed: train.seed,
            batch_size: train.batch_size,
            schedule: train.schedule(),
        })
    }

    pub fn generator(&self) -> &Generator {
        &self.generator
    }

    fn seeds(&self, stream: u64, count: usize) -> Vec<u64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        (0..count).map(|_| rng.next_u64()).collect()
    }

    /// Training batch `batch`: curriculum-sliced graphs with uniformized
    /// path lengths.
    pub fn training_batch(&self, batch: usize) -> Result<Vec<PreparedExample>> {
        self.seeds(batch as u64 + 1, self.batch_size)
            .into_iter()
            .map(|s| self.training_example(batch, s))
            .collect()
    }

    /// Same examples as [`Self::training_batch`], sampled on `workers` threads.
    pub fn training_batch_parallel(&self, batch: usize, workers: usize) -> Result<Vec<PreparedExample>> {
        let seeds = self.seeds(batch as u64 + 1, self.batch_size);
        let chunk = seeds.len().div_ceil(workers.max(1));
        let parts: Vec<Result<Vec<PreparedExample>>> = std::thread::scope(|scope| {
            let handles: Vec<_> = seeds
                .chunks(chunk)
                .map(|part| {
                    scope.spawn(move || {
                        part.iter()
                            .map(|&s| self.training_example(batch, s))
                            .collect::<Result<Vec<_>>>()
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("data worker panicked"))
                .collect()
        });
        let mut out = Vec::with_capacity(seeds.len());
        for part in parts {
            out.extend(part?);
        }
        Ok(out)
    }

    /// Fixed evaluation sample on full graphs with the natural length
    /// distribution.
    pub fn evaluation_set(&self, count: usize) -> Result<Vec<PreparedExample>> {
        self.fresh_examples(EVAL_STREAM, count)
    }

    /// `count` evaluation-style examples from an arbitrary stream.
    pub fn fresh_examples(&self, stream: u64, count: usize) -> Result<Vec<PreparedExample>> {
        self.seeds(stream, count)
            .into_iter()
            .map(|s| self.example_from(s, None, false))
            .collect()
    }

    fn training_example(&self, batch: usize, seed: u64) -> Result<PreparedExample> {
        let theta = self.schedule.map(|c| c.state_at(batch).theta);
        self.example_from(seed, theta, true)
    }

    fn example_from(&self, seed: u64, theta: Option<f64>, uniformize: bool) -> Result<PreparedExample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..MAX_ATTEMPTS {
            let full = self.generator.sample(rng.random());
            let graph = match theta {
                Some(theta) => match curriculum_slice(&full, theta, 0.0) {
                    Ok(slice) => slice.largest_component(),
                    Err(GraphError::SliceTooSmall(_)) => continue,
                    Err(e) => return Err(e.into()),
                },
                None => full,
            };
            let example = match self.task {
                Task::Lp => match sample_lp_example(&graph, &mut rng) {
                    Ok(ex) => ex,
                    Err(GraphError::NoEdges | GraphError::CompleteGraph) => continue,
                    Err(e) => return Err(e.into()),
                },
                Task::Splp => match SplpSampler::new(&graph) {
                    Ok(sampler) => sampler.sample(&mut rng, uniformize),
                    Err(GraphError::NoEligiblePair) => continue,
                    Err(e) => return Err(e.into()),
                },
            };
            let features = node_features(&graph, example.src, example.dst, self.node_id_dim, &mut rng)?;
            return Ok(PreparedExample {
                graph,
                example,
                features,
            });
        }
        Err(TrainError::Config(format!(
            "no usable graph in {MAX_ATTEMPTS} draws of {} nodes",
            self.generator.n()
        )))
    }
}
