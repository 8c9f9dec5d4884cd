//! Randomized invariant suite for the geometry kernels.
//!
//! Each property reports the worst error seen over all sampled instances
//! together with the tolerance it is held to.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::*;

#[derive(Debug, Clone, PartialEq)]
pub struct PropertyReport {
    pub name: &'static str,
    pub max_error: f64,
    pub tolerance: f64,
}

impl PropertyReport {
    pub fn passed(&self) -> bool {
        self.max_error <= self.tolerance
    }
}

fn random_direction(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        if norm(&v) > 1e-6 {
            return normalize_direction(&v);
        }
    }
}

fn random_pseudo_polar(rng: &mut ChaCha8Rng, dim: usize, lo: f64, hi: f64) -> PseudoPolar {
    let d = random_direction(rng, dim);
    PseudoPolar::new(d, rng.random_range(lo..=hi)).unwrap()
}

fn random_klein(rng: &mut ChaCha8Rng, dim: usize, max_radius: f64) -> KleinPoint {
    project_to_klein(&lift_pseudo_polar(&random_pseudo_polar(rng, dim, 0.0, max_radius)))
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Runs every geometry invariant over `instances` seeded random samples.
pub fn run(instances: usize, seed: u64) -> Vec<PropertyReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut membership: f64 = 0.0;
    let mut klein_round_trip: f64 = 0.0;
    let mut hyperboloid_round_trip: f64 = 0.0;
    let mut radial: f64 = 0.0;
    let mut symmetry: f64 = 0.0;
    let mut self_distance: f64 = 0.0;
    let mut triangle: f64 = 0.0;
    let mut equivariance: f64 = 0.0;
    let mut weight_scale: f64 = 0.0;
    let mut containment: f64 = 0.0;
    let mut formulation: f64 = 0.0;

    for i in 0..instances {
        let dim = rng.random_range(1..=6);

        let p = random_pseudo_polar(&mut rng, dim, -5.0, 5.0);
        let x = lift_pseudo_polar(&p);
        membership = membership.max(x.membership_defect().abs());
        radial = radial.max(
            (hyperboloid_distance(&HyperboloidPoint::origin(dim), &x).unwrap() - p.radius().abs())
                .abs(),
        );

        let v = project_to_klein(&x);
        klein_round_trip =
            klein_round_trip.max(max_abs_diff(project_to_klein(&lift_from_klein(&v)).coords(), v.coords()));
        hyperboloid_round_trip =
            hyperboloid_round_trip.max(max_abs_diff(lift_from_klein(&v).coords(), x.coords()));

        let y = lift_pseudo_polar(&random_pseudo_polar(&mut rng, dim, -5.0, 5.0));
        let z = lift_pseudo_polar(&random_pseudo_polar(&mut rng, dim, -5.0, 5.0));
        let dxy = hyperboloid_distance(&x, &y).unwrap();
        let dyx = hyperboloid_distance(&y, &x).unwrap();
        let dyz = hyperboloid_distance(&y, &z).unwrap();
        let dxz = hyperboloid_distance(&x, &z).unwrap();
        symmetry = symmetry.max((dxy - dyx).abs());
        self_distance = self_distance.max(hyperboloid_distance(&x, &x).unwrap());
        triangle = triangle.max(dxz - dxy - dyz);

        let count = rng.random_range(1..=8);
        let points: Vec<KleinPoint> = (0..count).map(|_| random_klein(&mut rng, dim, 2.5)).collect();
        let mut weights: Vec<f64> = (0..count).map(|_| rng.random_range(0.0..1.0)).collect();
        if i % 7 == 0 {
            weights[0] = 0.0;
        }
        let last = count - 1;
        weights[last] += 1e-3;
        let m = einstein_midpoint(&weights, &points).unwrap();
        containment = containment.max(m.norm() - (1.0 - EPS_BALL));

        let alt = einstein_midpoint_minkowski(&weights, &points).unwrap();
        formulation = formulation.max(max_abs_diff(m.coords(), alt.coords()));

        let lambda = 10f64.powf(rng.random_range(-3.0..3.0));
        let scaled: Vec<f64> = weights.iter().map(|w| w * lambda).collect();
        let ms = einstein_midpoint(&scaled, &points).unwrap();
        weight_scale = weight_scale.max(max_abs_diff(m.coords(), ms.coords()));

        let b = random_lorentz_transform(dim, rng.random());
        let moved: Vec<KleinPoint> = points
            .iter()
            .map(|v| project_to_klein(&b.apply_point(&lift_from_klein(v)).unwrap()))
            .collect();
        let lhs = einstein_midpoint(&weights, &moved).unwrap();
        let rhs = project_to_klein(&b.apply_point(&lift_from_klein(&m)).unwrap());
        equivariance = equivariance.max(max_abs_diff(lhs.coords(), rhs.coords()));
    }

    vec![
        PropertyReport { name: "hyperboloid membership", max_error: membership, tolerance: 1e-9 },
        PropertyReport { name: "klein round trip", max_error: klein_round_trip, tolerance: 1e-9 },
        PropertyReport {
            name: "hyperboloid round trip",
            max_error: hyperboloid_round_trip,
            tolerance: 1e-9,
        },
        PropertyReport { name: "radial law", max_error: radial, tolerance: 1e-9 },
        PropertyReport { name: "distance symmetry", max_error: symmetry, tolerance: 1e-12 },
        PropertyReport { name: "self distance", max_error: self_distance, tolerance: 1e-12 },
        PropertyReport { name: "triangle inequality", max_error: triangle, tolerance: 1e-9 },
        PropertyReport { name: "midpoint lorentz equivariance", max_error: equivariance, tolerance: 1e-6 },
        PropertyReport { name: "midpoint weight scale invariance", max_error: weight_scale, tolerance: 1e-9 },
        PropertyReport { name: "midpoint containment", max_error: containment, tolerance: 0.0 },
        PropertyReport { name: "midpoint formulations agree", max_error: formulation, tolerance: 1e-9 },
    ]
}
