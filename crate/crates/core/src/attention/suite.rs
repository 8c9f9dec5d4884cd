//! Finite-difference checks of the differentiable hyperbolic pieces: the
//! distance through the pseudo-polar lift, the Einstein midpoint, and a full
//! multi-head attention block.

use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{
    einstein_midpoint_rows, hyperboloid_distance_rows, lift_rows, unit_rows, AttentionConfig, AttentionMask,
    MultiHeadAttention, RadiusInit, Result,
};
use crate::autodiff::{
    finite_difference_check, finite_difference_probes, ParamProbe, ParamStore, Tensor, Var,
};

const STEP: f64 = 1e-5;
pub const GRADIENT_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct GradientReport {
    pub name: &'static str,
    pub max_relative_error: f64,
    pub tolerance: f64,
}

impl GradientReport {
    pub fn passed(&self) -> bool {
        self.max_relative_error <= self.tolerance
    }
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Tensor::matrix(rows, cols, data).expect("shape matches data")
}

/// Sum of `w_i d(q_i, k_i)` for pseudo-polar rows `[raw direction | radius]`;
/// queries are the first `pairs` rows of `x`, keys the rest.
fn weighted_distances<'t>(x: Var<'t>, pairs: usize, dim: usize) -> Result<Var<'t>> {
    let tape = x.tape();
    let lift = |rows: Vec<usize>| -> Result<(Var<'t>, Var<'t>)> {
        let block = x.gather_rows(&Rc::from(rows))?;
        lift_rows(unit_rows(block.slice_cols(0, dim)?)?, block.slice_cols(dim, 1)?)
    };
    let (qs, qt) = lift((0..pairs).collect())?;
    let (ks, kt) = lift((pairs..2 * pairs).collect())?;
    let d = hyperboloid_distance_rows(qs, qt, ks, kt)?;
    let w = tape.constant(Tensor::matrix(pairs, 1, (1..=pairs).map(|i| i as f64).collect())?);
    Ok(d.mul(w)?.sum_all()?)
}

/// Distance through the lift, differentiated with respect to directions and
/// radii. Pairs are kept apart so the distance is smooth.
fn distance_check(rng: &mut ChaCha8Rng, dim: usize, pairs: usize) -> Result<f64> {
    let mut x = gaussian(rng, 2 * pairs, dim + 1, 1.0);
    for i in 0..2 * pairs {
        x.data_mut()[i * (dim + 1) + dim] = rng.random_range(0.2..2.5);
    }
    Ok(finite_difference_check(|_, v| weighted_distances(v, pairs, dim).map_err(autodiff), &x, STEP)?)
}

/// Midpoints of Klein rows `[point | weight]` grouped in segments, projected
/// on a fixed direction.
fn midpoint_check(rng: &mut ChaCha8Rng, dim: usize, segments: &[usize]) -> Result<f64> {
    let rows: usize = segments.iter().sum();
    let mut offsets = vec![0];
    for s in segments {
        offsets.push(offsets.last().unwrap() + s);
    }
    let offsets: Rc<[usize]> = Rc::from(offsets);
    let mut x = Tensor::zeros(&[rows, dim + 1]);
    for i in 0..rows {
        let dir: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        let radius = rng.random_range(0.05..0.9);
        for (j, d) in dir.iter().enumerate() {
            x.data_mut()[i * (dim + 1) + j] = radius * d / norm;
        }
        x.data_mut()[i * (dim + 1) + dim] = rng.random_range(0.1..1.0);
    }
    let probe = gaussian(rng, dim, 1, 1.0);
    Ok(finite_difference_check(|_, v| midpoint_projection(v, dim, &offsets, &probe), &x, STEP)?)
}

fn midpoint_projection<'t>(
    x: Var<'t>,
    dim: usize,
    offsets: &Rc<[usize]>,
    probe: &Tensor,
) -> crate::autodiff::Result<Var<'t>> {
    let m = einstein_midpoint_rows(x.slice_cols(0, dim)?, x.slice_cols(dim, 1)?, offsets).map_err(autodiff)?;
    m.matmul(x.tape().constant(probe.clone()))?.sum_all()
}

/// Hyperbolic sigmoid attention over a random graph: every parameter entry
/// and every input entry.
fn block_check(seed: u64, nodes: usize, model_dim: usize) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let config = AttentionConfig::default();
    let mut store = ParamStore::new();
    let layer = MultiHeadAttention::new(&mut store, "block", model_dim, config, RadiusInit::Random, &mut rng)?;
    let mut allowed = vec![false; nodes * nodes];
    for i in 0..nodes {
        allowed[i * nodes + i] = true;
        for j in 0..nodes {
            if i != j && rng.random::<f64>() < 0.4 {
                allowed[i * nodes + j] = true;
            }
        }
    }
    let mask = AttentionMask::from_dense(nodes, nodes, allowed)?;
    let x = gaussian(&mut rng, nodes, model_dim, 1.0);
    let readout = gaussian(&mut rng, model_dim, 1, 1.0);
    let input_err =
        finite_difference_check(|_, v| block_readout(&layer, &store, v, &mask, &readout), &x, STEP)?;
    let probes = finite_difference_probes(
        |tape, store| block_readout(&layer, store, tape.constant(x.clone()), &mask, &readout),
        &mut store,
        STEP,
    )?;
    let param_err = probes.iter().map(ParamProbe::relative_error).fold(0.0, f64::max);
    Ok(input_err.max(param_err))
}

fn block_readout<'t>(
    layer: &MultiHeadAttention,
    store: &ParamStore,
    x: Var<'t>,
    mask: &AttentionMask,
    readout: &Tensor,
) -> crate::autodiff::Result<Var<'t>> {
    let out = layer.forward(x.tape(), store, x, mask, None).map_err(autodiff)?;
    out.matmul(x.tape().constant(readout.clone()))?.sum_all()
}

fn autodiff(e: super::AttentionError) -> crate::autodiff::AutodiffError {
    match e {
        super::AttentionError::Autodiff(e) => e,
        other => panic!("unexpected attention error in a gradient check: {other}"),
    }
}

/// Runs the three checks from one seed.
pub fn gradient_suite(seed: u64) -> Result<Vec<GradientReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let report = |name, err| GradientReport {
        name,
        max_relative_error: err,
        tolerance: GRADIENT_TOLERANCE,
    };
    Ok(vec![
        report("hyperboloid distance through the lift", distance_check(&mut rng, 4, 8)?),
        report("einstein midpoint", midpoint_check(&mut rng, 4, &[1, 3, 5])?),
        report("hyperbolic attention block (16-dim inputs)", block_check(seed, 6, 16)?),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes() {
        for seed in 0..2 {
            for r in gradient_suite(seed).unwrap() {
                assert!(r.passed(), "{r:?}");
            }
        }
    }
}
