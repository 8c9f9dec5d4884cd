//! Linear isometries of Minkowski space, used to exercise the equivariance of
//! the Einstein midpoint.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{minkowski_dot, GeometryError, HyperboloidPoint, MinkowskiVector, Result};

/// An `(n+1) x (n+1)` matrix preserving the Minkowski form and the upper sheet.
#[derive(Debug, Clone, PartialEq)]
pub struct LorentzTransform {
    matrix: DMatrix<f64>,
}

impl LorentzTransform {
    pub fn identity(dim: usize) -> Self {
        Self {
            matrix: DMatrix::identity(dim + 1, dim + 1),
        }
    }

    /// Boost with `rapidity` along the unit space direction `axis`.
    pub fn boost(axis: &[f64], rapidity: f64) -> Self {
        let n = axis.len();
        let u = DVector::from_row_slice(&super::normalize_direction(axis));
        let (ch, sh) = (rapidity.cosh(), rapidity.sinh());
        let mut m = DMatrix::identity(n + 1, n + 1);
        let block = &u * u.transpose() * (ch - 1.0);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] += block[(i, j)];
            }
            m[(i, n)] = sh * u[i];
            m[(n, i)] = sh * u[i];
        }
        m[(n, n)] = ch;
        Self { matrix: m }
    }

    /// Embeds an orthogonal `n x n` matrix acting on the space-like block.
    pub fn rotation(orthogonal: &DMatrix<f64>) -> Self {
        let n = orthogonal.nrows();
        let mut m = DMatrix::identity(n + 1, n + 1);
        m.view_mut((0, 0), (n, n)).copy_from(orthogonal);
        Self { matrix: m }
    }

    /// `self` applied after `first`.
    pub fn compose(&self, first: &LorentzTransform) -> Self {
        Self {
            matrix: &self.matrix * &first.matrix,
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows() - 1
    }

    pub fn apply(&self, v: &MinkowskiVector) -> Result<MinkowskiVector> {
        let out = self.apply_raw(v.coords())?;
        MinkowskiVector::new(out)
    }

    pub fn apply_point(&self, x: &HyperboloidPoint) -> Result<HyperboloidPoint> {
        Ok(HyperboloidPoint::from_raw(self.apply_raw(x.coords())?))
    }

    fn apply_raw(&self, coords: &[f64]) -> Result<Vec<f64>> {
        if coords.len() != self.matrix.nrows() {
            return Err(GeometryError::DimensionMismatch(self.matrix.nrows(), coords.len()));
        }
        let v = DVector::from_row_slice(coords);
        Ok((&self.matrix * v).iter().copied().collect())
    }

    /// Largest `|<Bu,Bw>_M - <u,w>_M|` over `pairs` random Gaussian pairs.
    pub fn form_defect(&self, pairs: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = self.matrix.nrows();
        let mut worst: f64 = 0.0;
        for _ in 0..pairs {
            let u: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            let w: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            let bu = self.apply_raw(&u).unwrap();
            let bw = self.apply_raw(&w).unwrap();
            worst = worst.max((minkowski_dot(&bu, &bw) - minkowski_dot(&u, &w)).abs());
        }
        worst
    }
}

/// A random rotation of the space block followed by a boost with rapidity
/// uniform in `[0, 2]` along a random axis.
pub fn random_lorentz_transform(dim: usize, seed: u64) -> LorentzTransform {
    assert!(dim >= 1, "dimension must be at least 1");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = DMatrix::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    // Sign fix so Q is Haar-distributed, then force det = +1.
    for j in 0..dim {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    if q.determinant() < 0.0 {
        q.column_mut(0).neg_mut();
    }
    let axis: Vec<f64> = loop {
        let a: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        if a.iter().any(|x: &f64| x.abs() > 1e-12) {
            break a;
        }
    };
    let rapidity = rng.random_range(0.0..=2.0);
    LorentzTransform::boost(&axis, rapidity).compose(&LorentzTransform::rotation(&q))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{lift_pseudo_polar, PseudoPolar};
    use approx::assert_abs_diff_eq;

    #[test]
    fn zero_boost_and_identity_rotation_is_identity() {
        let b = LorentzTransform::boost(&[1.0, 0.0], 0.0)
            .compose(&LorentzTransform::rotation(&DMatrix::identity(2, 2)));
        assert_eq!(b, LorentzTransform::identity(2));
    }

    #[test]
    fn one_dimensional_boost_matches_standard_form() {
        let phi = 0.7;
        let b = LorentzTransform::boost(&[1.0], phi);
        let m = b.matrix();
        assert_abs_diff_eq!(m[(0, 0)], phi.cosh());
        assert_abs_diff_eq!(m[(0, 1)], phi.sinh());
        assert_abs_diff_eq!(m[(1, 0)], phi.sinh());
        assert_abs_diff_eq!(m[(1, 1)], phi.cosh());
        assert!(b.form_defect(100, 1) < 1e-8);
    }

    #[test]
    fn random_transforms_preserve_form_and_sheet() {
        for seed in 0..20 {
            for dim in 1..6 {
                let b = random_lorentz_transform(dim, seed);
                assert!(b.form_defect(100, seed + 1000) < 1e-8, "seed {seed} dim {dim}");
                let mut d = vec![0.0; dim];
                d[0] = 1.0;
                let x = lift_pseudo_polar(&PseudoPolar::new(d, 2.0).unwrap());
                let y = b.apply_point(&x).unwrap();
                assert!(y.time() > 0.0);
                assert_abs_diff_eq!(y.membership_defect(), 0.0, epsilon = 1e-9 * y.time().powi(2));
            }
        }
    }

    #[test]
    fn apply_rejects_wrong_dimension() {
        let b = LorentzTransform::identity(2);
        let v = MinkowskiVector::new(vec![0.0, 1.0]).unwrap();
        assert!(b.apply(&v).is_err());
    }
}
