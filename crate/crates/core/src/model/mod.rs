//! The Recursive Transformer: a node encoder, one self-attention block whose
//! weights are reused at every depth, and a pairwise readout for link and
//! path-length prediction.

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attention::{AttentionConfig, AttentionError, AttentionMask, MultiHeadAttention, RadiusInit};
use crate::autodiff::{AutodiffError, ParamId, ParamStore, Tape, Tensor, Var};
use crate::graphgen::{HypGraph, Task, TaskExample};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("source and destination are both node {0}")]
    SameNode(usize),
    #[error("node {node} out of range for {n} nodes")]
    InvalidNode { node: usize, n: usize },
    #[error("expected {expected} feature columns, got {got}")]
    FeatureWidth { expected: usize, got: usize },
    #[error(transparent)]
    Attention(#[from] AttentionError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Flags, normalized degree, then the random id.
pub const FIXED_FEATURES: usize = 3;
const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Recursion depth; every step reuses the same block parameters.
    pub layers: usize,
    pub model_dim: usize,
    pub ffn_dim: usize,
    pub attention: AttentionConfig,
    pub task: Task,
    pub node_id_dim: usize,
    #[serde(default)]
    pub radius_init: RadiusInit,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::new(AttentionConfig::default(), Task::Lp)
    }
}

impl ModelConfig {
    /// Three recursions, `model_dim = heads * head_dim`, `ffn_dim = 4 * model_dim`.
    pub fn new(attention: AttentionConfig, task: Task) -> Self {
        let model_dim = attention.heads * attention.head_dim;
        Self {
            layers: 3,
            model_dim,
            ffn_dim: 4 * model_dim,
            attention,
            task,
            node_id_dim: 8,
            radius_init: RadiusInit::Random,
        }
    }

    pub fn heads(&self) -> usize {
        self.attention.heads
    }

    pub fn head_dim(&self) -> usize {
        self.attention.head_dim
    }

    pub fn feature_dim(&self) -> usize {
        FIXED_FEATURES + self.node_id_dim
    }

    pub fn validate(&self) -> Result<()> {
        self.attention.validate()?;
        let inner = self.attention.inner_dim();
        if self.model_dim == 0 || !self.model_dim.is_multiple_of(inner) {
            return Err(ModelError::Config(format!(
                "model_dim {} is not a positive multiple of heads x head_dim = {inner}",
                self.model_dim
            )));
        }
        if self.layers == 0 {
            return Err(ModelError::Config("layers must be at least 1".into()));
        }
        if self.ffn_dim == 0 {
            return Err(ModelError::Config("ffn_dim must be at least 1".into()));
        }
        Ok(())
    }
}

/// Per-node inputs for one example, `[n x (3 + node_id_dim)]`: source flag,
/// destination flag, degree / (n - 1), Gaussian id.
pub fn node_features<R: Rng + ?Sized>(
    g: &HypGraph,
    src: usize,
    dst: usize,
    node_id_dim: usize,
    rng: &mut R,
) -> Result<Tensor> {
    let n = g.n();
    for node in [src, dst] {
        if node >= n {
            return Err(ModelError::InvalidNode { node, n });
        }
    }
    if src == dst {
        return Err(ModelError::SameNode(src));
    }
    let width = FIXED_FEATURES + node_id_dim;
    let mut data = Vec::with_capacity(n * width);
    let denom = (n - 1).max(1) as f64;
    for i in 0..n {
        data.push(f64::from(u8::from(i == src)));
        data.push(f64::from(u8::from(i == dst)));
        data.push(g.degree(i) as f64 / denom);
        data.extend((0..node_id_dim).map(|_| rng.sample::<f64, _>(StandardNormal)));
    }
    Ok(Tensor::matrix(n, width, data)?)
}

/// Everything the model reads for one example.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphInput {
    pub features: Tensor,
    pub mask: AttentionMask,
    pub src: usize,
    pub dst: usize,
}

impl GraphInput {
    /// Features with fresh random ids; attention follows the graph's edges
    /// plus self-loops.
    pub fn new<R: Rng + ?Sized>(
        g: &HypGraph,
        example: &TaskExample,
        node_id_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            features: node_features(g, example.src, example.dst, node_id_dim, rng)?,
            mask: AttentionMask::from_undirected_edges(g.n(), g.edges())?,
            src: example.src,
            dst: example.dst,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Linear {
    w: ParamId,
    b: ParamId,
}

impl Linear {
    fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, (1.0 / fan_in as f64).sqrt()).expect("positive std");
        let data = (0..fan_in * fan_out).map(|_| normal.sample(rng)).collect();
        Self {
            w: store.add(format!("{name}.w"), Tensor::matrix(fan_in, fan_out, data).expect("shape")),
            b: store.add(format!("{name}.b"), Tensor::zeros(&[1, fan_out])),
        }
    }

    fn forward<'t>(&self, tape: &'t Tape, store: &ParamStore, x: Var<'t>) -> Result<Var<'t>> {
        let rows = x.dims2()?.0;
        let b = tape.param(store, self.b).repeat_rows(rows)?;
        Ok(x.matmul(tape.param(store, self.w))?.add(b)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
struct LayerNorm {
    gain: ParamId,
    bias: ParamId,
}

impl LayerNorm {
    fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        Self {
            gain: store.add(format!("{name}.gain"), Tensor::full(&[1, dim], 1.0)),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[1, dim])),
        }
    }

    fn forward<'t>(&self, tape: &'t Tape, store: &ParamStore, x: Var<'t>) -> Result<Var<'t>> {
        let (rows, cols) = x.dims2()?;
        let centered = x.sub(x.mean(1)?.repeat_cols(cols)?)?;
        let std = centered.square()?.mean(1)?.add_const(LAYER_NORM_EPS)?.sqrt()?;
        let normed = centered.div(std.repeat_cols(cols)?)?;
        let gain = tape.param(store, self.gain).repeat_rows(rows)?;
        let bias = tape.param(store, self.bias).repeat_rows(rows)?;
        Ok(normed.mul(gain)?.add(bias)?)
    }
}

/// Model structure; parameter values live in a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct RecursiveTransformer {
    config: ModelConfig,
    encoder: Linear,
    attention: MultiHeadAttention,
    norm_attn: LayerNorm,
    ffn_in: Linear,
    ffn_out: Linear,
    norm_ffn: LayerNorm,
    head_hidden: Linear,
    head_out: Linear,
}

impl RecursiveTransformer {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let d = config.model_dim;
        let encoder = Linear::new(store, "encoder", config.feature_dim(), d, rng);
        let attention = MultiHeadAttention::new(
            store,
            "block.attention",
            d,
            config.attention.clone(),
            config.radius_init,
            rng,
        )?;
        let norm_attn = LayerNorm::new(store, "block.norm_attention", d);
        let ffn_in = Linear::new(store, "block.ffn_in", d, config.ffn_dim, rng);
        let ffn_out = Linear::new(store, "block.ffn_out", config.ffn_dim, d, rng);
        let norm_ffn = LayerNorm::new(store, "block.norm_ffn", d);
        let head_hidden = Linear::new(store, "head.hidden", 2 * d, config.ffn_dim, rng);
        let head_out = Linear::new(store, "head.out", config.ffn_dim, config.task.num_classes(), rng);
        Ok(Self {
            config,
            encoder,
            attention,
            norm_attn,
            ffn_in,
            ffn_out,
            norm_ffn,
            head_hidden,
            head_out,
        })
    }

    /// Builds a model and a fresh parameter store from a seed.
    pub fn init(config: ModelConfig, seed: u64) -> Result<(Self, ParamStore)> {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let model = Self::new(&mut store, config, &mut rng)?;
        Ok((model, store))
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// `relu(features W + b)`, one row per node.
    pub fn encode<'t>(&self, tape: &'t Tape, store: &ParamStore, features: &Tensor) -> Result<Var<'t>> {
        let (_, width) = features.dims2()?;
        if width != self.config.feature_dim() {
            return Err(ModelError::FeatureWidth {
                expected: self.config.feature_dim(),
                got: width,
            });
        }
        let x = tape.constant(features.clone());
        Ok(self.encoder.forward(tape, store, x)?.relu()?)
    }

    /// Applies the shared block `config.layers` times.
    pub fn recursive_forward<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        x: Var<'t>,
        mask: &AttentionMask,
        radii: Option<&mut Vec<f64>>,
    ) -> Result<Var<'t>> {
        self.recursive_forward_depth(tape, store, x, mask, self.config.layers, radii)
    }

    /// Applies the shared block `depth` times; depth 0 is the identity.
    pub fn recursive_forward_depth<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        mut x: Var<'t>,
        mask: &AttentionMask,
        depth: usize,
        mut radii: Option<&mut Vec<f64>>,
    ) -> Result<Var<'t>> {
        for _ in 0..depth {
            let a = self.attention.forward(tape, store, x, mask, radii.as_deref_mut())?;
            x = self.norm_attn.forward(tape, store, x.add(a)?)?;
            let hidden = self.ffn_in.forward(tape, store, x)?.relu()?;
            let f = self.ffn_out.forward(tape, store, hidden)?;
            x = self.norm_ffn.forward(tape, store, x.add(f)?)?;
        }
        Ok(x)
    }

    /// Class logits `[1 x classes]` from the states of the queried pair.
    pub fn task_head<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        h: Var<'t>,
        src: usize,
        dst: usize,
    ) -> Result<Var<'t>> {
        let n = h.dims2()?.0;
        for node in [src, dst] {
            if node >= n {
                return Err(ModelError::InvalidNode { node, n });
            }
        }
        if src == dst {
            return Err(ModelError::SameNode(src));
        }
        let d = self.config.model_dim;
        let pair = h.gather_rows(&std::rc::Rc::from([src, dst]))?.reshape(&[1, 2 * d])?;
        let hidden = self.head_hidden.forward(tape, store, pair)?.relu()?;
        self.head_out.forward(tape, store, hidden)
    }

    /// Encoder, recursion and readout for one example.
    pub fn logits<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        input: &GraphInput,
        radii: Option<&mut Vec<f64>>,
    ) -> Result<Var<'t>> {
        let x = self.encode(tape, store, &input.features)?;
        let h = self.recursive_forward(tape, store, x, &input.mask, radii)?;
        self.task_head(tape, store, h, input.src, input.dst)
    }

    /// Index of the largest logit (lowest index on ties).
    pub fn predict(&self, store: &ParamStore, input: &GraphInput) -> Result<usize> {
        let tape = Tape::new();
        let logits = self.logits(&tape, store, input, None)?.value();
        Ok(argmax(logits.data()))
    }
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
