//! Attentive reads: query/key matching followed by weighted aggregation of
//! values.
//!
//! Four instantiations are provided, {Euclidean, hyperbolic} matching times
//! {softmax, sigmoid} weighting, plus the ablation that pairs hyperbolic
//! matching with Euclidean aggregation. The multi-head layer evaluates
//! attention only along the edges of an [`AttentionMask`], so its cost scales
//! with the number of allowed (target, source) pairs.

mod layer;
mod mask;
mod suite;

pub use layer::{
    einstein_midpoint_rows, hyperboloid_distance_rows, lift_rows, lorentz_factors, unit_rows, MultiHeadAttention,
    RadiusInit,
};
pub use suite::{gradient_suite, GradientReport, GRADIENT_TOLERANCE};
pub use mask::AttentionMask;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Tensor, Var};
use crate::geometry::{self, GeometryError, HyperboloidPoint, KleinPoint};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AttentionError {
    #[error("attentive read over an empty key set")]
    EmptyKeys,
    #[error("{keys} keys but {values} values")]
    KeyValueMismatch { keys: usize, values: usize },
    #[error("isolated node: target {0} has no allowed source")]
    IsolatedNode(usize),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

pub type Result<T> = std::result::Result<T, AttentionError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttentionGeometry {
    /// Scaled dot-product matching, weighted-sum aggregation.
    Euclidean,
    /// Hyperbolic-distance matching, Einstein-midpoint aggregation.
    Hyperbolic,
    /// Hyperbolic-distance matching with a plain weighted average of the
    /// Klein value points (no Lorentz factors).
    HyperbolicEuclideanAggregation,
}

impl AttentionGeometry {
    pub fn is_hyperbolic(self) -> bool {
        !matches!(self, AttentionGeometry::Euclidean)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Weighting {
    Softmax,
    Sigmoid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionConfig {
    pub geometry: AttentionGeometry,
    pub weighting: Weighting,
    pub heads: usize,
    pub head_dim: usize,
    /// Emit `head_dim + 1` values per projection and read the last one as the
    /// radius; otherwise the radius is the norm of the projection.
    pub use_pseudo_polar: bool,
}

impl AttentionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.head_dim == 0 {
            return Err(AttentionError::Config("heads and head_dim must be at least 1".into()));
        }
        if self.use_pseudo_polar && !self.geometry.is_hyperbolic() {
            return Err(AttentionError::Config(
                "pseudo-polar inputs require a hyperbolic geometry".into(),
            ));
        }
        Ok(())
    }

    /// Width of the concatenated head outputs.
    pub fn inner_dim(&self) -> usize {
        self.heads * self.head_dim
    }

    /// Width of one q, k or v projection.
    pub fn projection_width(&self) -> usize {
        self.head_dim + usize::from(self.use_pseudo_polar)
    }
}

impl Default for AttentionConfig {
    fn default() -> Self {
        Self {
            geometry: AttentionGeometry::Hyperbolic,
            weighting: Weighting::Sigmoid,
            heads: 4,
            head_dim: 4,
            use_pseudo_polar: true,
        }
    }
}

/// The generic attentive read
/// `r(q) = aggregate({a(q, k_j) / Z}, {v_j})`, where `Z` is computed from the
/// raw matching scores.
pub fn attentive_read<Q, K, V, O>(
    query: &Q,
    keys: &[K],
    values: &[V],
    matcher: impl Fn(&Q, &K) -> f64,
    normalizer: impl Fn(&[f64]) -> f64,
    aggregate: impl Fn(&[f64], &[V]) -> O,
) -> Result<O> {
    if keys.is_empty() {
        return Err(AttentionError::EmptyKeys);
    }
    if keys.len() != values.len() {
        return Err(AttentionError::KeyValueMismatch {
            keys: keys.len(),
            values: values.len(),
        });
    }
    let scores: Vec<f64> = keys.iter().map(|k| matcher(query, k)).collect();
    let z = normalizer(&scores);
    let weights: Vec<f64> = scores.iter().map(|s| s / z).collect();
    Ok(aggregate(&weights, values))
}

/// `Z = 1`.
pub fn unit_normalizer(_: &[f64]) -> f64 {
    1.0
}

/// `Z = sum of scores`.
pub fn sum_normalizer(scores: &[f64]) -> f64 {
    scores.iter().sum()
}

/// `sum_j w_j v_j` over equal-length vectors.
pub fn euclidean_aggregate(weights: &[f64], values: &[Vec<f64>]) -> Vec<f64> {
    let mut out = vec![0.0; values.first().map_or(0, Vec::len)];
    for (w, v) in weights.iter().zip(values) {
        for (o, x) in out.iter_mut().zip(v) {
            *o += w * x;
        }
    }
    out
}

/// Hyperbolic matching: `sigmoid(-beta d(q,k) - c)` under sigmoid weighting,
/// or the logit `-beta d(q,k) - c` to be normalized under softmax weighting.
pub fn hyperbolic_match(
    q: &HyperboloidPoint,
    k: &HyperboloidPoint,
    beta: f64,
    c: f64,
    weighting: Weighting,
) -> Result<f64> {
    let logit = -beta * geometry::hyperboloid_distance(q, k)? - c;
    Ok(match weighting {
        Weighting::Sigmoid => crate::autodiff::sigmoid(logit),
        Weighting::Softmax => logit,
    })
}

/// Einstein midpoint of the value points under `weights`.
pub fn hyperbolic_aggregate(weights: &[f64], values: &[KleinPoint]) -> Result<KleinPoint> {
    Ok(geometry::einstein_midpoint(weights, values)?)
}

/// Dense scaled dot-product attention `weights(QK^T / sqrt(d)) V`.
///
/// `mask` is row-major `[targets x sources]`; disallowed pairs get weight
/// zero. Sigmoid weights are used unnormalized.
pub fn scaled_dot_product<'t>(
    q: Var<'t>,
    k: Var<'t>,
    v: Var<'t>,
    mask: Option<&[bool]>,
    weighting: Weighting,
) -> Result<Var<'t>> {
    let (t, d) = q.dims2()?;
    let (s, dk) = k.dims2()?;
    let (sv, _) = v.dims2()?;
    if d != dk || s != sv {
        return Err(AttentionError::Shape(format!(
            "Q {t}x{d}, K {s}x{dk}, V with {sv} rows"
        )));
    }
    let logits = q.matmul(k.transpose()?)?.scale(1.0 / (d as f64).sqrt())?;
    let weights = match weighting {
        Weighting::Softmax => logits.softmax_rows(mask).map_err(|e| match e {
            AutodiffError::IsolatedNode(r) => AttentionError::IsolatedNode(r),
            e => e.into(),
        })?,
        Weighting::Sigmoid => {
            let w = logits.sigmoid()?;
            match mask {
                Some(m) => {
                    if let Some(row) = (0..t).find(|&r| !m[r * s..(r + 1) * s].iter().any(|&a| a)) {
                        return Err(AttentionError::IsolatedNode(row));
                    }
                    let m = Tensor::matrix(t, s, m.iter().map(|&a| f64::from(u8::from(a))).collect())?;
                    w.mul(q.tape().constant(m))?
                }
                None => w,
            }
        }
    };
    Ok(weights.matmul(v)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use crate::geometry::{lift_pseudo_polar, PseudoPolar};
    use approx::assert_abs_diff_eq;

    #[test]
    fn attentive_read_single_key_returns_value() {
        let out = attentive_read(
            &(),
            &[()],
            &[vec![3.0, -1.0]],
            |_, _| 0.37,
            sum_normalizer,
            euclidean_aggregate,
        )
        .unwrap();
        assert_eq!(out, vec![3.0, -1.0]);
    }

    #[test]
    fn attentive_read_relation_network_form_is_plain_sum() {
        let values = vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![-1.0, 0.5]];
        let out = attentive_read(
            &(),
            &[(), (), ()],
            &values,
            |_, _| 1.0,
            unit_normalizer,
            euclidean_aggregate,
        )
        .unwrap();
        assert_eq!(out, vec![3.0, 6.5]);
    }

    #[test]
    fn attentive_read_uniform_over_equal_values() {
        let out = attentive_read(
            &(),
            &[(), ()],
            &[vec![0.25], vec![0.25]],
            |_, _| 2.0,
            sum_normalizer,
            euclidean_aggregate,
        )
        .unwrap();
        assert_abs_diff_eq!(out[0], 0.25, epsilon = 1e-15);
    }

    #[test]
    fn attentive_read_errors() {
        let empty: [(); 0] = [];
        let r = attentive_read(&(), &empty, &[] as &[Vec<f64>], |_, _| 1.0, sum_normalizer, euclidean_aggregate);
        assert_eq!(r, Err(AttentionError::EmptyKeys));
        let r = attentive_read(&(), &[()], &[] as &[Vec<f64>], |_, _| 1.0, sum_normalizer, euclidean_aggregate);
        assert!(matches!(r, Err(AttentionError::KeyValueMismatch { .. })));
    }

    #[test]
    fn attentive_read_with_hyperbolic_instantiation() {
        let pt = |d: &[f64], r: f64| lift_pseudo_polar(&PseudoPolar::new(d.to_vec(), r).unwrap());
        let q = pt(&[1.0, 0.0], 0.5);
        let keys = vec![pt(&[1.0, 0.0], 0.7), pt(&[0.0, 1.0], 1.2)];
        let values = vec![
            KleinPoint::new(vec![0.2, 0.1]).unwrap(),
            KleinPoint::new(vec![-0.4, 0.3]).unwrap(),
        ];
        let out = attentive_read(
            &q,
            &keys,
            &values,
            |q, k| hyperbolic_match(q, k, 1.0, 0.0, Weighting::Sigmoid).unwrap(),
            unit_normalizer,
            |w, v| hyperbolic_aggregate(w, v).unwrap(),
        )
        .unwrap();
        let w: Vec<f64> = keys
            .iter()
            .map(|k| hyperbolic_match(&q, k, 1.0, 0.0, Weighting::Sigmoid).unwrap())
            .collect();
        assert_eq!(out, geometry::einstein_midpoint(&w, &values).unwrap());
    }

    #[test]
    fn hyperbolic_match_examples() {
        let o = HyperboloidPoint::origin(2);
        assert_eq!(hyperbolic_match(&o, &o, 1.0, 0.0, Weighting::Sigmoid).unwrap(), 0.5);
        let k = lift_pseudo_polar(&PseudoPolar::new(vec![0.0, 1.0], 3f64.ln()).unwrap());
        let w = hyperbolic_match(&o, &k, 1.0, 0.0, Weighting::Sigmoid).unwrap();
        assert_abs_diff_eq!(w, 0.25, epsilon = 1e-12);
        let logit = hyperbolic_match(&o, &k, 2.0, 0.5, Weighting::Softmax).unwrap();
        assert_abs_diff_eq!(logit, -2.0 * 3f64.ln() - 0.5, epsilon = 1e-12);
    }

    #[test]
    fn equidistant_keys_get_uniform_softmax_weights() {
        let o = HyperboloidPoint::origin(2);
        let keys: Vec<_> = [[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]]
            .iter()
            .map(|d| lift_pseudo_polar(&PseudoPolar::new(d.to_vec(), 0.8).unwrap()))
            .collect();
        let logits: Vec<f64> = keys
            .iter()
            .map(|k| hyperbolic_match(&o, k, 1.3, 0.2, Weighting::Softmax).unwrap())
            .collect();
        let tape = Tape::new();
        let w = tape
            .constant(Tensor::matrix(1, 3, logits).unwrap())
            .softmax_rows(None)
            .unwrap()
            .value();
        for x in w.data() {
            assert_abs_diff_eq!(*x, 1.0 / 3.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn hyperbolic_aggregate_examples() {
        let k = |c: &[f64]| KleinPoint::new(c.to_vec()).unwrap();
        assert_eq!(hyperbolic_aggregate(&[1.0], &[k(&[0.3, -0.4])]).unwrap(), k(&[0.3, -0.4]));
        let m = hyperbolic_aggregate(&[1., 1.], &[k(&[0.5, 0.]), k(&[-0.5, 0.])]).unwrap();
        assert_abs_diff_eq!(m.norm(), 0.0);
        let m = hyperbolic_aggregate(&[1., 1.], &[k(&[0.8, 0.]), k(&[0., 0.])]).unwrap();
        assert_abs_diff_eq!(m.coords()[0], 0.5, epsilon = 1e-12);
        assert!(matches!(
            hyperbolic_aggregate(&[0.0], &[k(&[0.1, 0.1])]),
            Err(AttentionError::Geometry(GeometryError::DegenerateAttention))
        ));
    }

    fn mat(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn scaled_dot_product_examples() {
        let tape = Tape::new();
        // Single key: output is its value at any scale.
        let q = tape.constant(mat(&[&[5.0, -3.0]]));
        let k = tape.constant(mat(&[&[5.0, -3.0]]));
        let v = tape.constant(mat(&[&[0.1, 0.2]]));
        let out = scaled_dot_product(q, k, v, None, Weighting::Softmax).unwrap().value();
        assert_abs_diff_eq!(out.data()[0], 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(out.data()[1], 0.2, epsilon = 1e-15);

        // Equal logits: mean of values.
        let q = tape.constant(mat(&[&[1.0, 0.0]]));
        let k = tape.constant(mat(&[&[0.0, 1.0], &[0.0, -1.0]]));
        let v = tape.constant(mat(&[&[1.0, 2.0], &[3.0, 6.0]]));
        let out = scaled_dot_product(q, k, v, None, Weighting::Softmax).unwrap().value();
        assert_eq!(out.data(), &[2.0, 4.0]);

        // q.k1 = 4, q.k2 = 0, d = 4: logits (2, 0).
        let q = tape.constant(mat(&[&[2.0, 0.0, 0.0, 0.0]]));
        let k = tape.constant(mat(&[&[2.0, 0.0, 0.0, 0.0], &[0.0, 1.0, 0.0, 0.0]]));
        let v = tape.constant(mat(&[&[1.0, 0.0, 0.0, 0.0], &[0.0, 1.0, 0.0, 0.0]]));
        let out = scaled_dot_product(q, k, v, None, Weighting::Softmax).unwrap().value();
        let e2 = 2f64.exp();
        assert_abs_diff_eq!(out.data()[0], e2 / (e2 + 1.0), epsilon = 1e-15);
        assert_abs_diff_eq!(out.data()[0], 0.8808, epsilon = 1e-4);
        assert_abs_diff_eq!(out.data()[1], 0.1192, epsilon = 1e-4);
    }

    #[test]
    fn scaled_dot_product_masking() {
        let tape = Tape::new();
        let q = tape.constant(mat(&[&[1.0], &[2.0]]));
        let k = tape.constant(mat(&[&[1.0], &[-1.0]]));
        let v = tape.constant(mat(&[&[10.0], &[20.0]]));
        let mask = [true, false, false, true];
        let out = scaled_dot_product(q, k, v, Some(&mask), Weighting::Softmax).unwrap().value();
        assert_eq!(out.data(), &[10.0, 20.0]);
        let out = scaled_dot_product(q, k, v, Some(&mask), Weighting::Sigmoid).unwrap().value();
        assert_abs_diff_eq!(out.data()[0], 10.0 * crate::autodiff::sigmoid(1.0), epsilon = 1e-12);
        let bad = [true, true, false, false];
        for w in [Weighting::Softmax, Weighting::Sigmoid] {
            assert_eq!(
                scaled_dot_product(q, k, v, Some(&bad), w).unwrap_err(),
                AttentionError::IsolatedNode(1)
            );
        }
        let k3 = tape.constant(mat(&[&[1.0, 2.0]]));
        assert!(matches!(
            scaled_dot_product(q, k3, v, None, Weighting::Softmax),
            Err(AttentionError::Shape(_))
        ));
    }

    #[test]
    fn config_validation() {
        assert!(AttentionConfig::default().validate().is_ok());
        let bad = AttentionConfig {
            geometry: AttentionGeometry::Euclidean,
            ..AttentionConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = AttentionConfig {
            heads: 0,
            ..AttentionConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
