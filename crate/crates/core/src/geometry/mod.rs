//! Hyperbolic geometry on plain `f64` arrays.
//!
//! Points live either on the upper sheet of the hyperboloid
//! `{x : <x,x>_M = -1, x_{n+1} > 0}` in Minkowski space, or in the open unit
//! ball of the Klein model. The time-like coordinate is always stored last.
//!
//! Curvature is fixed at -1. The kernels here operate on owned vectors and are
//! mirrored by tape-recorded composites in [`crate::attention`]; both routes are
//! checked against each other in tests.

mod lorentz;
pub mod selftest;

pub use lorentz::{random_lorentz_transform, LorentzTransform};

use thiserror::Error;

/// Klein norms are clamped to at most `1 - EPS_BALL`.
pub const EPS_BALL: f64 = 1e-5;
/// Shift used for the arccosh derivative at coincident points.
pub const EPS_ACOSH: f64 = 1e-7;
/// Saturation bound for pseudo-polar radii.
pub const R_MAX: f64 = 40.0;
/// Floor on the norm used when normalizing raw directions.
pub const DIRECTION_FLOOR: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("expected at least {min} coordinates, got {got}")]
    TooFewCoordinates { min: usize, got: usize },
    #[error("non-finite coordinate")]
    NonFinite,
    #[error("point is not on the hyperboloid (<x,x>_M + 1 = {0:e})")]
    OffHyperboloid(f64),
    #[error("direction has zero norm")]
    ZeroDirection,
    #[error("degenerate attention: all weights are zero")]
    DegenerateAttention,
    #[error("negative weight {value} at index {index}")]
    NegativeWeight { index: usize, value: f64 },
    #[error("{weights} weights for {points} points")]
    LengthMismatch { weights: usize, points: usize },
    #[error("empty point set")]
    Empty,
}

pub type Result<T> = std::result::Result<T, GeometryError>;

fn check_finite(coords: &[f64]) -> Result<()> {
    if coords.iter().all(|c| c.is_finite()) {
        Ok(())
    } else {
        Err(GeometryError::NonFinite)
    }
}

/// Unchecked Minkowski form on raw slices of equal length.
#[inline]
pub fn minkowski_dot(u: &[f64], v: &[f64]) -> f64 {
    debug_assert_eq!(u.len(), v.len());
    let n = u.len() - 1;
    let space: f64 = u[..n].iter().zip(&v[..n]).map(|(a, b)| a * b).sum();
    space - u[n] * v[n]
}

/// `arccosh(max(x, 1))`.
#[inline]
pub fn acosh_clamped(x: f64) -> f64 {
    x.max(1.0).acosh()
}

/// A vector of Minkowski space `R^{n,1}`; the last coordinate is time-like.
#[derive(Debug, Clone, PartialEq)]
pub struct MinkowskiVector {
    coords: Vec<f64>,
}

impl MinkowskiVector {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.len() < 2 {
            return Err(GeometryError::TooFewCoordinates {
                min: 2,
                got: coords.len(),
            });
        }
        check_finite(&coords)?;
        Ok(Self { coords })
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    /// Number of space-like coordinates.
    pub fn dim(&self) -> usize {
        self.coords.len() - 1
    }
}

/// `sum_{i<=n} u_i v_i - u_{n+1} v_{n+1}`.
pub fn minkowski_form(u: &MinkowskiVector, v: &MinkowskiVector) -> Result<f64> {
    if u.coords.len() != v.coords.len() {
        return Err(GeometryError::DimensionMismatch(u.coords.len(), v.coords.len()));
    }
    Ok(minkowski_dot(&u.coords, &v.coords))
}

/// A point on the upper sheet of the unit hyperboloid.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperboloidPoint {
    coords: Vec<f64>,
}

impl HyperboloidPoint {
    /// Relative tolerance of the membership check in [`HyperboloidPoint::new`].
    pub const MEMBERSHIP_TOL: f64 = 1e-9;

    /// Validates membership; the tolerance is relative to `x_{n+1}^2` so that
    /// far-out points are not rejected for rounding.
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        let v = MinkowskiVector::new(coords)?;
        let t = *v.coords.last().unwrap();
        let defect = minkowski_dot(&v.coords, &v.coords) + 1.0;
        if t < 1.0 - Self::MEMBERSHIP_TOL || defect.abs() > Self::MEMBERSHIP_TOL * t * t {
            return Err(GeometryError::OffHyperboloid(defect));
        }
        Ok(Self { coords: v.coords })
    }

    /// `(0, ..., 0, 1)` in `n` space dimensions.
    pub fn origin(n: usize) -> Self {
        let mut coords = vec![0.0; n + 1];
        coords[n] = 1.0;
        Self { coords }
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn dim(&self) -> usize {
        self.coords.len() - 1
    }

    pub fn space(&self) -> &[f64] {
        &self.coords[..self.dim()]
    }

    pub fn time(&self) -> f64 {
        self.coords[self.dim()]
    }

    /// `<x,x>_M + 1`; zero on the manifold.
    pub fn membership_defect(&self) -> f64 {
        minkowski_dot(&self.coords, &self.coords) + 1.0
    }

    pub fn to_minkowski(&self) -> MinkowskiVector {
        MinkowskiVector {
            coords: self.coords.clone(),
        }
    }

    pub(crate) fn from_raw(coords: Vec<f64>) -> Self {
        Self { coords }
    }
}

/// A point of the Klein model: an `n`-vector with norm below one.
#[derive(Debug, Clone, PartialEq)]
pub struct KleinPoint {
    coords: Vec<f64>,
}

impl KleinPoint {
    /// Builds a Klein point, pulling it inside the `1 - EPS_BALL` shell if needed.
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        Ok(Self::new_reporting(coords)?.0)
    }

    /// Like [`KleinPoint::new`], also reporting whether the input was clamped.
    pub fn new_reporting(mut coords: Vec<f64>) -> Result<(Self, bool)> {
        if coords.is_empty() {
            return Err(GeometryError::TooFewCoordinates { min: 1, got: 0 });
        }
        check_finite(&coords)?;
        let clamped = clamp_to_ball(&mut coords);
        if clamped && cfg!(debug_assertions) {
            log::debug!("Klein point clamped to the 1 - {EPS_BALL:e} shell");
        }
        Ok((Self { coords }, clamped))
    }

    pub fn origin(n: usize) -> Self {
        Self {
            coords: vec![0.0; n],
        }
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn norm(&self) -> f64 {
        norm(&self.coords)
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn clamp_to_ball(coords: &mut [f64]) -> bool {
    let limit = 1.0 - EPS_BALL;
    let n = norm(coords);
    if n > limit {
        let s = limit / n;
        coords.iter_mut().for_each(|c| *c *= s);
        true
    } else {
        false
    }
}

/// Pseudo-polar coordinates: a unit direction and an unconstrained radius.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoPolar {
    direction: Vec<f64>,
    radius: f64,
}

impl PseudoPolar {
    /// Normalizes `direction`; a zero direction is rejected.
    pub fn new(direction: Vec<f64>, radius: f64) -> Result<Self> {
        if direction.is_empty() {
            return Err(GeometryError::TooFewCoordinates { min: 1, got: 0 });
        }
        check_finite(&direction)?;
        if !radius.is_finite() {
            return Err(GeometryError::NonFinite);
        }
        let n = norm(&direction);
        if n == 0.0 {
            return Err(GeometryError::ZeroDirection);
        }
        Ok(Self {
            direction: normalize_direction(&direction),
            radius,
        })
    }

    pub fn direction(&self) -> &[f64] {
        &self.direction
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn dim(&self) -> usize {
        self.direction.len()
    }
}

/// `u / max(|u|, DIRECTION_FLOOR)`.
pub fn normalize_direction(raw: &[f64]) -> Vec<f64> {
    let n = norm(raw).max(DIRECTION_FLOOR);
    raw.iter().map(|x| x / n).collect()
}

/// `(sinh(r) d, cosh(r))`, with `r` saturated to `[-R_MAX, R_MAX]`.
pub fn lift_pseudo_polar(p: &PseudoPolar) -> HyperboloidPoint {
    lift_pseudo_polar_reporting(p).0
}

/// Lift that also reports whether the radius was saturated.
pub fn lift_pseudo_polar_reporting(p: &PseudoPolar) -> (HyperboloidPoint, bool) {
    let saturated = p.radius.abs() > R_MAX;
    if saturated && cfg!(debug_assertions) {
        log::debug!("pseudo-polar radius {} saturated to {R_MAX}", p.radius);
    }
    let r = p.radius.clamp(-R_MAX, R_MAX);
    let (s, c) = (r.sinh(), r.cosh());
    let mut coords: Vec<f64> = p.direction.iter().map(|d| s * d).collect();
    coords.push(c);
    (HyperboloidPoint { coords }, saturated)
}

/// `arccosh(max(-<q,k>_M, 1))`.
pub fn hyperboloid_distance(q: &HyperboloidPoint, k: &HyperboloidPoint) -> Result<f64> {
    if q.coords.len() != k.coords.len() {
        return Err(GeometryError::DimensionMismatch(q.coords.len(), k.coords.len()));
    }
    Ok(distance_raw(&q.coords, &k.coords))
}

/// Hyperboloid distance on raw coordinates of equal length.
///
/// Short distances use the chord form `2 asinh(|q - k|_M / 2)`, which equals
/// `arccosh(-<q,k>_M)` on the manifold but keeps full precision near zero.
pub fn distance_raw(q: &[f64], k: &[f64]) -> f64 {
    let x = -minkowski_dot(q, k);
    if x < 1.5 {
        let n = q.len() - 1;
        let mut chord = 0.0;
        for i in 0..n {
            let d = q[i] - k[i];
            chord += d * d;
        }
        let dt = q[n] - k[n];
        chord -= dt * dt;
        2.0 * (0.5 * chord.max(0.0).sqrt()).asinh()
    } else {
        x.acosh()
    }
}

/// `x_i / x_{n+1}`, clamped into the ball.
pub fn project_to_klein(x: &HyperboloidPoint) -> KleinPoint {
    let t = x.time();
    let mut coords: Vec<f64> = x.space().iter().map(|s| s / t).collect();
    clamp_to_ball(&mut coords);
    KleinPoint { coords }
}

/// `(v, 1) / sqrt(1 - |v|^2)`.
pub fn lift_from_klein(v: &KleinPoint) -> HyperboloidPoint {
    let g = lorentz_factor(v);
    let mut coords: Vec<f64> = v.coords.iter().map(|c| g * c).collect();
    coords.push(g);
    HyperboloidPoint { coords }
}

pub fn klein_distance(u: &KleinPoint, v: &KleinPoint) -> Result<f64> {
    hyperboloid_distance(&lift_from_klein(u), &lift_from_klein(v))
}

/// `1 / sqrt(1 - |v|^2)`.
pub fn lorentz_factor(v: &KleinPoint) -> f64 {
    let sq: f64 = v.coords.iter().map(|x| x * x).sum();
    1.0 / (1.0 - sq).sqrt()
}

fn validate_midpoint_inputs(weights: &[f64], points: &[KleinPoint]) -> Result<usize> {
    if weights.len() != points.len() {
        return Err(GeometryError::LengthMismatch {
            weights: weights.len(),
            points: points.len(),
        });
    }
    let first = points.first().ok_or(GeometryError::Empty)?;
    let dim = first.dim();
    for p in points {
        if p.dim() != dim {
            return Err(GeometryError::DimensionMismatch(dim, p.dim()));
        }
    }
    for (index, &value) in weights.iter().enumerate() {
        if !value.is_finite() {
            return Err(GeometryError::NonFinite);
        }
        if value < 0.0 {
            return Err(GeometryError::NegativeWeight { index, value });
        }
    }
    if weights.iter().all(|&w| w == 0.0) {
        return Err(GeometryError::DegenerateAttention);
    }
    Ok(dim)
}

/// Einstein midpoint `sum_j [a_j g(v_j) / sum_l a_l g(v_l)] v_j`.
///
/// Weights need not be normalized; only their ratios matter.
pub fn einstein_midpoint(weights: &[f64], points: &[KleinPoint]) -> Result<KleinPoint> {
    let dim = validate_midpoint_inputs(weights, points)?;
    let mut acc = vec![0.0; dim];
    let mut total = 0.0;
    for (&a, p) in weights.iter().zip(points) {
        let w = a * lorentz_factor(p);
        total += w;
        for (m, c) in acc.iter_mut().zip(&p.coords) {
            *m += w * c;
        }
    }
    acc.iter_mut().for_each(|m| *m /= total);
    KleinPoint::new(acc)
}

/// The same midpoint computed as the Klein projection of the weighted
/// Minkowski sum `sum_j a_j lift(v_j)`.
pub fn einstein_midpoint_minkowski(weights: &[f64], points: &[KleinPoint]) -> Result<KleinPoint> {
    let dim = validate_midpoint_inputs(weights, points)?;
    let mut sum = vec![0.0; dim + 1];
    for (&a, p) in weights.iter().zip(points) {
        for (s, x) in sum.iter_mut().zip(lift_from_klein(p).coords) {
            *s += a * x;
        }
    }
    let t = sum[dim];
    KleinPoint::new(sum[..dim].iter().map(|s| s / t).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn pp(d: &[f64], r: f64) -> PseudoPolar {
        PseudoPolar::new(d.to_vec(), r).unwrap()
    }

    fn klein(c: &[f64]) -> KleinPoint {
        KleinPoint::new(c.to_vec()).unwrap()
    }

    fn mink(c: &[f64]) -> MinkowskiVector {
        MinkowskiVector::new(c.to_vec()).unwrap()
    }

    #[test]
    fn minkowski_form_examples() {
        assert_eq!(minkowski_form(&mink(&[0., 0., 1.]), &mink(&[0., 0., 1.])).unwrap(), -1.0);
        assert_eq!(minkowski_form(&mink(&[1., 0., 0.]), &mink(&[1., 0., 0.])).unwrap(), 1.0);
        let v = minkowski_form(&mink(&[1.175201, 0., 1.543081]), &mink(&[0., 0., 1.])).unwrap();
        assert_abs_diff_eq!(v, -1.543081, epsilon = 1e-12);
        assert_eq!(
            minkowski_form(&mink(&[0., 1.]), &mink(&[0., 0., 1.])),
            Err(GeometryError::DimensionMismatch(2, 3))
        );
        assert!(MinkowskiVector::new(vec![1.0]).is_err());
        assert!(MinkowskiVector::new(vec![f64::NAN, 1.0]).is_err());
    }

    #[test]
    fn lift_examples() {
        assert_eq!(lift_pseudo_polar(&pp(&[1., 0.], 0.)).coords(), &[0., 0., 1.]);
        let x = lift_pseudo_polar(&pp(&[1., 0.], 1.));
        assert_abs_diff_eq!(x.coords()[0], 1.175201, epsilon = 1e-6);
        assert_abs_diff_eq!(x.coords()[1], 0.0);
        assert_abs_diff_eq!(x.coords()[2], 1.543081, epsilon = 1e-6);
        let y = lift_pseudo_polar(&pp(&[0., 1.], -1.));
        assert_abs_diff_eq!(y.coords()[0], 0.0);
        assert_abs_diff_eq!(y.coords()[1], -1.175201, epsilon = 1e-6);
        assert_abs_diff_eq!(y.coords()[2], 1.543081, epsilon = 1e-6);
    }

    #[test]
    fn lift_saturates_large_radius() {
        let (x, saturated) = lift_pseudo_polar_reporting(&pp(&[1.0], 1000.0));
        assert!(saturated);
        assert_abs_diff_eq!(x.time(), R_MAX.cosh(), epsilon = 1e-3 * R_MAX.cosh());
        assert!(x.coords().iter().all(|c| c.is_finite()));
        let (_, saturated) = lift_pseudo_polar_reporting(&pp(&[1.0], -R_MAX));
        assert!(!saturated);
    }

    #[test]
    fn pseudo_polar_normalizes_and_rejects_zero() {
        let p = pp(&[3.0, 4.0], 0.5);
        assert_abs_diff_eq!(norm(p.direction()), 1.0, epsilon = 1e-12);
        assert_eq!(PseudoPolar::new(vec![0.0, 0.0], 1.0), Err(GeometryError::ZeroDirection));
        assert_eq!(normalize_direction(&[0.0, 0.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn distance_examples() {
        let o = HyperboloidPoint::origin(2);
        assert_eq!(hyperboloid_distance(&o, &o).unwrap(), 0.0);
        let k = lift_pseudo_polar(&pp(&[1., 0.], 1.5));
        assert_abs_diff_eq!(hyperboloid_distance(&o, &k).unwrap(), 1.5, epsilon = 1e-12);
        // Two radius-1 points with orthogonal directions: arccosh(cosh^2(1)).
        let q = lift_pseudo_polar(&pp(&[1., 0.], 1.));
        let k = lift_pseudo_polar(&pp(&[0., 1.], 1.));
        assert_abs_diff_eq!(-minkowski_dot(q.coords(), k.coords()), 2.381098, epsilon = 1e-6);
        assert_abs_diff_eq!(hyperboloid_distance(&q, &k).unwrap(), 1.5133740065965, epsilon = 1e-12);
    }

    #[test]
    fn distance_clamps_below_one() {
        // Rounding can push -<x,x>_M slightly under one; the result must stay real.
        let x = lift_pseudo_polar(&pp(&[0.3, -0.7, 0.2], 3.7));
        let d = hyperboloid_distance(&x, &x).unwrap();
        assert!(d.is_finite() && (0.0..1e-6).contains(&d));
    }

    #[test]
    fn hyperboloid_point_validation() {
        assert!(HyperboloidPoint::new(vec![0.75, 0.0, 1.25]).is_ok());
        assert!(matches!(
            HyperboloidPoint::new(vec![1.0, 0.0, 1.0]),
            Err(GeometryError::OffHyperboloid(_))
        ));
        // Lower sheet.
        assert!(HyperboloidPoint::new(vec![0.0, 0.0, -1.0]).is_err());
    }

    #[test]
    fn klein_projection_examples() {
        assert_eq!(project_to_klein(&HyperboloidPoint::origin(2)).coords(), &[0., 0.]);
        let k = project_to_klein(&HyperboloidPoint::from_raw(vec![1.175201, 0., 1.543081]));
        assert_abs_diff_eq!(k.coords()[0], 0.761594, epsilon = 1e-6);
        let k = project_to_klein(&HyperboloidPoint::from_raw(vec![0., -1.175201, 1.543081]));
        assert_abs_diff_eq!(k.coords()[1], -0.761594, epsilon = 1e-6);
    }

    #[test]
    fn klein_lift_examples() {
        assert_eq!(lift_from_klein(&klein(&[0., 0.])).coords(), &[0., 0., 1.]);
        let x = lift_from_klein(&klein(&[0.761594, 0.]));
        assert_abs_diff_eq!(x.coords()[0], 1.175201, epsilon = 1e-5);
        assert_abs_diff_eq!(x.coords()[2], 1.543081, epsilon = 1e-5);
        let x = lift_from_klein(&klein(&[0.6, 0.]));
        assert_abs_diff_eq!(x.coords()[0], 0.75, epsilon = 1e-12);
        assert_abs_diff_eq!(x.coords()[2], 1.25, epsilon = 1e-12);
        assert_abs_diff_eq!(x.membership_defect(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn klein_clamps_boundary() {
        let (k, clamped) = KleinPoint::new_reporting(vec![1.0, 0.0]).unwrap();
        assert!(clamped);
        assert_abs_diff_eq!(k.norm(), 1.0 - EPS_BALL, epsilon = 1e-15);
        assert!(lorentz_factor(&k).is_finite());
        let (_, clamped) = KleinPoint::new_reporting(vec![0.5, 0.0]).unwrap();
        assert!(!clamped);
    }

    #[test]
    fn klein_distance_examples() {
        let u = klein(&[0.3, 0.2]);
        assert_abs_diff_eq!(klein_distance(&u, &u).unwrap(), 0.0, epsilon = 1e-7);
        let d = klein_distance(&klein(&[0., 0.]), &klein(&[0.761594, 0.])).unwrap();
        assert_abs_diff_eq!(d, 1.0, epsilon = 1e-6);
        let d = klein_distance(&klein(&[0.5, 0.]), &klein(&[-0.5, 0.])).unwrap();
        // 2 artanh(0.5) = ln 3.
        assert_abs_diff_eq!(d, 3f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(d, 2.0 * 0.549306144334, epsilon = 1e-9);
    }

    #[test]
    fn lorentz_factor_examples() {
        assert_eq!(lorentz_factor(&klein(&[0., 0.])), 1.0);
        assert_abs_diff_eq!(lorentz_factor(&klein(&[0.8, 0.])), 5.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(lorentz_factor(&klein(&[0.6, 0.])), 1.25, epsilon = 1e-12);
    }

    #[test]
    fn midpoint_examples() {
        let m = einstein_midpoint(&[1.0], &[klein(&[0.3, -0.4])]).unwrap();
        assert_abs_diff_eq!(m.coords()[0], 0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(m.coords()[1], -0.4, epsilon = 1e-15);
        let m = einstein_midpoint(&[1., 1.], &[klein(&[0.5, 0.]), klein(&[-0.5, 0.])]).unwrap();
        assert_abs_diff_eq!(m.norm(), 0.0, epsilon = 1e-15);
        let m = einstein_midpoint(&[1., 1.], &[klein(&[0.8, 0.]), klein(&[0., 0.])]).unwrap();
        assert_abs_diff_eq!(m.coords()[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(m.coords()[1], 0.0);
    }

    #[test]
    fn midpoint_errors() {
        let pts = [klein(&[0.1, 0.]), klein(&[0.2, 0.])];
        assert_eq!(einstein_midpoint(&[0., 0.], &pts), Err(GeometryError::DegenerateAttention));
        assert_eq!(
            einstein_midpoint(&[1., -0.5], &pts),
            Err(GeometryError::NegativeWeight { index: 1, value: -0.5 })
        );
        assert_eq!(einstein_midpoint(&[], &[]), Err(GeometryError::Empty));
        assert!(matches!(
            einstein_midpoint(&[1.0], &pts),
            Err(GeometryError::LengthMismatch { .. })
        ));
        assert!(einstein_midpoint(&[1., 1.], &[klein(&[0.1]), klein(&[0.1, 0.2])]).is_err());
    }

    #[test]
    fn midpoint_routes_agree() {
        let pts = [klein(&[0.8, 0.1]), klein(&[-0.3, 0.5]), klein(&[0.0, -0.9])];
        let w = [0.2, 1.5, 0.7];
        let a = einstein_midpoint(&w, &pts).unwrap();
        let b = einstein_midpoint_minkowski(&w, &pts).unwrap();
        for (x, y) in a.coords().iter().zip(b.coords()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
    }
}
