use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::mask::EdgeIndex;
use super::{AttentionConfig, AttentionError, AttentionGeometry, AttentionMask, Result, Weighting};
use crate::autodiff::{acosh_clamped, row_norms, ParamId, ParamStore, Tape, Tensor, Var};
use crate::geometry::{DIRECTION_FLOOR, EPS_BALL, R_MAX};

/// How the radius column of each pseudo-polar projection starts out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RadiusInit {
    /// Same Gaussian init as every other weight.
    #[default]
    Random,
    /// Radius weights start at zero, so every point starts at the origin.
    Zero,
}

/// Multi-head attention over the edges of an [`AttentionMask`].
///
/// One fused projection produces q, k and v for all heads. Head `h` owns
/// columns `h * 3w .. (h + 1) * 3w` laid out as `[q | k | v]`, each of width
/// `w = head_dim (+1 with pseudo-polar inputs)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiHeadAttention {
    config: AttentionConfig,
    model_dim: usize,
    w_qkv: ParamId,
    b_qkv: ParamId,
    w_out: ParamId,
    b_out: ParamId,
    beta_raw: ParamId,
    offset: ParamId,
}

/// Per-head tensors after projection and (for hyperbolic heads) lifting.
struct HeadInputs<'t> {
    /// Spatial part of the lifted query, or the raw query.
    q: Var<'t>,
    /// Time coordinate of the lifted query.
    q_time: Option<Var<'t>>,
    k: Var<'t>,
    k_time: Option<Var<'t>>,
    /// Klein value points, or raw values.
    v: Var<'t>,
}

impl MultiHeadAttention {
    /// Registers the layer's parameters under `prefix` in `store`.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        model_dim: usize,
        config: AttentionConfig,
        radius_init: RadiusInit,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        if model_dim == 0 {
            return Err(AttentionError::Config("model_dim must be at least 1".into()));
        }
        let width = config.projection_width();
        let qkv_cols = config.heads * 3 * width;
        let mut w_qkv = gaussian(model_dim, qkv_cols, rng);
        if config.use_pseudo_polar && radius_init == RadiusInit::Zero {
            for col in (0..config.heads * 3).map(|block| block * width + config.head_dim) {
                for row in 0..model_dim {
                    w_qkv.data_mut()[row * qkv_cols + col] = 0.0;
                }
            }
        }
        let w_out = gaussian(config.inner_dim(), model_dim, rng);
        // softplus(ln(e - 1)) = 1
        let beta0 = (std::f64::consts::E - 1.0).ln();
        Ok(Self {
            w_qkv: store.add(format!("{prefix}.w_qkv"), w_qkv),
            b_qkv: store.add(format!("{prefix}.b_qkv"), Tensor::zeros(&[1, qkv_cols])),
            w_out: store.add(format!("{prefix}.w_out"), w_out),
            b_out: store.add(format!("{prefix}.b_out"), Tensor::zeros(&[1, model_dim])),
            beta_raw: store.add(format!("{prefix}.beta"), Tensor::full(&[1, config.heads], beta0)),
            offset: store.add(format!("{prefix}.c"), Tensor::zeros(&[1, config.heads])),
            config,
            model_dim,
        })
    }

    pub fn config(&self) -> &AttentionConfig {
        &self.config
    }

    pub fn model_dim(&self) -> usize {
        self.model_dim
    }

    /// `X [nodes x model_dim] -> [nodes x model_dim]`.
    ///
    /// When `radii` is given, the saturated radius of every q, k and v point
    /// of every head is appended to it.
    pub fn forward<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        x: Var<'t>,
        mask: &AttentionMask,
        radii: Option<&mut Vec<f64>>,
    ) -> Result<Var<'t>> {
        let heads = self.head_outputs(tape, store, x, mask, radii)?;
        let n = x.dims2()?.0;
        let concat = Var::concat_cols(&heads)?;
        let w_out = tape.param(store, self.w_out);
        let b_out = tape.param(store, self.b_out).repeat_rows(n)?;
        Ok(concat.matmul(w_out)?.add(b_out)?)
    }

    /// Per-head aggregated outputs `[nodes x head_dim]`, before the output
    /// projection. Hyperbolic heads return Klein coordinates.
    pub fn head_outputs<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        x: Var<'t>,
        mask: &AttentionMask,
        mut radii: Option<&mut Vec<f64>>,
    ) -> Result<Vec<Var<'t>>> {
        let (n, d) = x.dims2()?;
        if d != self.model_dim {
            return Err(AttentionError::Shape(format!(
                "input has {d} columns, layer expects {}",
                self.model_dim
            )));
        }
        if mask.targets() != n || mask.sources() != n {
            return Err(AttentionError::Shape(format!(
                "{}x{} mask over {n} nodes",
                mask.targets(),
                mask.sources()
            )));
        }
        let edges = mask.edge_index();
        let beta = tape.param(store, self.beta_raw).softplus()?;
        let offset = tape.param(store, self.offset);
        let mut out = Vec::with_capacity(self.config.heads);
        for h in 0..self.config.heads {
            let inputs = self.head_inputs(tape, store, x, h, radii.as_deref_mut())?;
            let beta_h = beta.slice_cols(h, 1)?;
            let offset_h = offset.slice_cols(h, 1)?;
            out.push(self.attend(&inputs, beta_h, offset_h, edges)?);
        }
        Ok(out)
    }

    /// Value representation of every node for each head: Klein points for
    /// hyperbolic heads, raw projections for Euclidean ones.
    pub fn head_values<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        x: Var<'t>,
    ) -> Result<Vec<Var<'t>>> {
        (0..self.config.heads)
            .map(|h| Ok(self.head_inputs(tape, store, x, h, None)?.v))
            .collect()
    }

    fn head_inputs<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        x: Var<'t>,
        head: usize,
        mut radii: Option<&mut Vec<f64>>,
    ) -> Result<HeadInputs<'t>> {
        let n = x.dims2()?.0;
        let w = self.config.projection_width();
        let hd = self.config.head_dim;
        let w_qkv = tape.param(store, self.w_qkv);
        let b_qkv = tape.param(store, self.b_qkv);
        let cols = head * 3 * w;
        let weights = w_qkv.slice_cols(cols, 3 * w)?;
        let bias = b_qkv.slice_cols(cols, 3 * w)?.repeat_rows(n)?;
        let proj = x.matmul(weights)?.add(bias)?;
        let block = |role: usize| proj.slice_cols(role * w, w);

        if !self.config.geometry.is_hyperbolic() {
            return Ok(HeadInputs {
                q: block(0)?,
                q_time: None,
                k: block(1)?,
                k_time: None,
                v: block(2)?,
            });
        }

        let mut polar = |role: usize| -> Result<(Var<'t>, Var<'t>)> {
            let b = block(role)?;
            let (raw, r) = if self.config.use_pseudo_polar {
                (b.slice_cols(0, hd)?, b.slice_cols(hd, 1)?)
            } else {
                (b, row_norms(b)?)
            };
            let dir = unit_rows(raw)?;
            let r = r.clamp(-R_MAX, R_MAX)?;
            if let Some(out) = radii.as_deref_mut() {
                out.extend(r.value().data().iter().map(|x| x.abs()));
            }
            Ok((dir, r))
        };
        let (dir_q, r_q) = polar(0)?;
        let (q, q_time) = lift_rows(dir_q, r_q)?;
        let (dir_k, r_k) = polar(1)?;
        let (k, k_time) = lift_rows(dir_k, r_k)?;
        let (dir_v, r_v) = polar(2)?;
        let t = r_v.tanh()?.clamp(-(1.0 - EPS_BALL), 1.0 - EPS_BALL)?;
        let v = dir_v.mul(t.repeat_cols(hd)?)?;
        Ok(HeadInputs {
            q,
            q_time: Some(q_time),
            k,
            k_time: Some(k_time),
            v,
        })
    }

    fn attend<'t>(
        &self,
        inputs: &HeadInputs<'t>,
        beta: Var<'t>,
        offset: Var<'t>,
        edges: &EdgeIndex,
    ) -> Result<Var<'t>> {
        let hd = self.config.head_dim;
        let qe = inputs.q.gather_rows(&edges.targets)?;
        let ke = inputs.k.gather_rows(&edges.sources)?;
        let score = match (inputs.q_time, inputs.k_time) {
            (Some(qt), Some(kt)) => {
                let qt = qt.gather_rows(&edges.targets)?;
                let kt = kt.gather_rows(&edges.sources)?;
                hyperboloid_distance_rows(qe, qt, ke, kt)?.neg()?
            }
            _ => qe.mul(ke)?.sum(1)?.scale(1.0 / (hd as f64).sqrt())?,
        };
        let logits = score.mul(beta)?.sub(offset)?;
        let alpha = match self.config.weighting {
            Weighting::Sigmoid => logits.sigmoid()?,
            Weighting::Softmax => {
                let e = logits.numel();
                logits
                    .reshape(&[e])?
                    .segment_softmax(&edges.offsets)?
                    .reshape(&[e, 1])?
            }
        };
        let ve = inputs.v.gather_rows(&edges.sources)?;
        match self.config.geometry {
            AttentionGeometry::Euclidean => {
                Ok(ve.mul(alpha.repeat_cols(hd)?)?.segment_sum(&edges.offsets)?)
            }
            AttentionGeometry::Hyperbolic => einstein_midpoint_rows(ve, alpha, &edges.offsets),
            AttentionGeometry::HyperbolicEuclideanAggregation => {
                weighted_average(ve, alpha, &edges.offsets, hd)
            }
        }
    }
}

/// Rows scaled to unit length; norms below the direction floor are raised to it.
pub fn unit_rows<'t>(raw: Var<'t>) -> Result<Var<'t>> {
    let width = raw.dims2()?.1;
    let norm = row_norms(raw)?.clamp_min(DIRECTION_FLOOR)?;
    Ok(raw.div(norm.repeat_cols(width)?)?)
}

/// Lifts unit directions and radii `[n x 1]` to `(sinh(r) d, cosh(r))`,
/// returned as the space block and the time column.
pub fn lift_rows<'t>(dir: Var<'t>, r: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
    let width = dir.dims2()?.1;
    let space = dir.mul(r.sinh()?.repeat_cols(width)?)?;
    Ok((space, r.cosh()?))
}

/// Distance between row-aligned hyperboloid points, `arccosh(-<q, k>)`.
pub fn hyperboloid_distance_rows<'t>(
    q_space: Var<'t>,
    q_time: Var<'t>,
    k_space: Var<'t>,
    k_time: Var<'t>,
) -> Result<Var<'t>> {
    let dot = q_space.mul(k_space)?.sum(1)?;
    Ok(acosh_clamped(q_time.mul(k_time)?.sub(dot)?)?)
}

/// `1 / sqrt(1 - |v|^2)` per row.
pub fn lorentz_factors<'t>(v: Var<'t>) -> Result<Var<'t>> {
    let one_minus = v.square()?.sum(1)?.neg()?.add_const(1.0)?;
    Ok(v.tape().scalar(1.0).div(one_minus.sqrt()?)?)
}

/// Einstein midpoint of the Klein rows in each segment, weighted by
/// `weights * gamma`.
pub fn einstein_midpoint_rows<'t>(
    values: Var<'t>,
    weights: Var<'t>,
    offsets: &std::rc::Rc<[usize]>,
) -> Result<Var<'t>> {
    let width = values.dims2()?.1;
    let w = weights.mul(lorentz_factors(values)?)?;
    weighted_average(values, w, offsets, width)
}

/// `sum_e w_e v_e / sum_e w_e` within each target segment.
fn weighted_average<'t>(
    values: Var<'t>,
    weights: Var<'t>,
    offsets: &std::rc::Rc<[usize]>,
    width: usize,
) -> Result<Var<'t>> {
    let num = values.mul(weights.repeat_cols(width)?)?.segment_sum(offsets)?;
    let den = weights.segment_sum(offsets)?;
    Ok(num.div(den.repeat_cols(width)?)?)
}

/// `N(0, 1 / rows)` entries.
fn gaussian<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let normal = Normal::new(0.0, (1.0 / rows as f64).sqrt()).expect("positive std");
    let data = (0..rows * cols).map(|_| normal.sample(rng)).collect();
    Tensor::matrix(rows, cols, data).expect("shape matches data")
}
