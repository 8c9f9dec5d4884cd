//! Hyperbolic random graphs, shortest paths, task sampling and the angular
//! curriculum.
//!
//! Points are drawn on a hyperbolic disk of radius `R` with angles uniform
//! and radii from the density `alpha sinh(alpha r) / (cosh(alpha R) - 1)`.
//! Two nodes are joined when their hyperbolic distance is at most
//! `edge_radius_factor * R`.

mod curriculum;
mod io;
mod paths;
mod tasks;

pub use curriculum::{curriculum_slice, Curriculum, CurriculumState};
pub use io::{read_jsonl, write_jsonl};
pub use paths::{all_pairs_bfs, bfs_distances, floyd_warshall, shortest_path_length};
pub use tasks::{sample_lp_example, SplpSampler, Task, TaskExample, MAX_PATH_LENGTH};

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GraphError {
    #[error("invalid generator parameter: {0}")]
    InvalidParameter(String),
    #[error("node {node} out of range for {n} nodes")]
    InvalidNode { node: usize, n: usize },
    #[error("graph has no edges")]
    NoEdges,
    #[error("graph is complete")]
    CompleteGraph,
    #[error("no node pair is eligible")]
    NoEligiblePair,
    #[error("curriculum slice kept {0} nodes")]
    SliceTooSmall(usize),
    #[error("malformed graph record: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, GraphError>;

/// Native polar coordinates of a node on the generating disk.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiskPoint {
    pub radius: f64,
    /// In `[0, 2 pi)`.
    pub angle: f64,
}

/// Hyperbolic distance between two disk points by the law of cosines.
pub fn native_distance(a: &DiskPoint, b: &DiskPoint) -> f64 {
    distance_from_parts(
        (a.radius.cosh(), a.radius.sinh(), a.angle),
        (b.radius.cosh(), b.radius.sinh(), b.angle),
    )
}

/// Law of cosines on precomputed `(cosh r, sinh r, angle)` triples.
fn distance_from_parts(a: (f64, f64, f64), b: (f64, f64, f64)) -> f64 {
    let cosh_d = a.0 * b.0 - a.1 * b.1 * (a.2 - b.2).cos();
    cosh_d.max(1.0).acosh()
}

/// How the disk radius is chosen for a given node count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiskRadius {
    /// `2 ln n + offset`.
    Scaled { offset: f64 },
    /// The radius whose expected average degree equals `degree`.
    TargetDegree { degree: f64 },
    Fixed { radius: f64 },
}

impl Default for DiskRadius {
    fn default() -> Self {
        DiskRadius::TargetDegree { degree: 4.0 }
    }
}

/// Smallest disk radius considered by the degree solver.
pub const MIN_DISK_RADIUS: f64 = 1.0;
const MAX_DISK_RADIUS: f64 = 40.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub alpha: f64,
    pub edge_radius_factor: f64,
    pub disk_radius: DiskRadius,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            alpha: 0.95,
            edge_radius_factor: 0.35,
            disk_radius: DiskRadius::default(),
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(GraphError::InvalidParameter(format!("alpha = {}", self.alpha)));
        }
        if !(self.edge_radius_factor > 0.0 && self.edge_radius_factor <= 1.0) {
            return Err(GraphError::InvalidParameter(format!(
                "edge radius factor = {}",
                self.edge_radius_factor
            )));
        }
        match self.disk_radius {
            DiskRadius::TargetDegree { degree } if !(degree > 0.0 && degree.is_finite()) => Err(
                GraphError::InvalidParameter(format!("target degree = {degree}")),
            ),
            DiskRadius::Fixed { radius } if !(radius > 0.0 && radius.is_finite()) => {
                Err(GraphError::InvalidParameter(format!("disk radius = {radius}")))
            }
            _ => Ok(()),
        }
    }

    /// Disk radius for `n` nodes.
    pub fn disk_radius_for(&self, n: usize) -> Result<f64> {
        self.validate()?;
        if n < 2 {
            return Err(GraphError::InvalidParameter(format!("n = {n}")));
        }
        let r = match self.disk_radius {
            DiskRadius::Scaled { offset } => 2.0 * (n as f64).ln() + offset,
            DiskRadius::Fixed { radius } => radius,
            DiskRadius::TargetDegree { degree } => {
                solve_disk_radius(n, self.alpha, self.edge_radius_factor, degree)
            }
        };
        if !(r > 0.0 && r.is_finite()) {
            return Err(GraphError::InvalidParameter(format!("disk radius = {r}")));
        }
        Ok(r)
    }

    /// Resolves the disk radius once so repeated sampling at one size is cheap.
    pub fn generator(&self, n: usize) -> Result<Generator> {
        let r_disk = self.disk_radius_for(n)?;
        Generator::new(n, self.alpha, r_disk, self.edge_radius_factor * r_disk)
    }
}

/// Expected average degree of the threshold model, by midpoint quadrature
/// over the radial quantiles.
pub fn expected_average_degree(n: usize, alpha: f64, r_disk: f64, edge_radius: f64) -> f64 {
    const GRID: usize = 256;
    let radii: Vec<f64> = (0..GRID)
        .map(|i| radius_from_quantile((i as f64 + 0.5) / GRID as f64, alpha, r_disk))
        .collect();
    let cosh_t = edge_radius.cosh();
    let mut total = 0.0;
    for (i, &r1) in radii.iter().enumerate() {
        for &r2 in &radii[i..] {
            let p = if r1 + r2 <= edge_radius {
                1.0
            } else {
                let c = (r1.cosh() * r2.cosh() - cosh_t) / (r1.sinh() * r2.sinh());
                c.clamp(-1.0, 1.0).acos() / PI
            };
            total += if r1 == r2 { p } else { 2.0 * p };
        }
    }
    (n - 1) as f64 * total / (GRID * GRID) as f64
}

/// Disk radius in `[MIN_DISK_RADIUS, 40]` whose expected average degree is
/// closest to `target`. The degree decreases with the radius.
fn solve_disk_radius(n: usize, alpha: f64, factor: f64, target: f64) -> f64 {
    let degree = |r: f64| expected_average_degree(n, alpha, r, factor * r);
    let (mut lo, mut hi) = (MIN_DISK_RADIUS, MAX_DISK_RADIUS);
    if degree(lo) <= target {
        return lo;
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if degree(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn radius_from_quantile(u: f64, alpha: f64, r_disk: f64) -> f64 {
    (1.0 + u * ((alpha * r_disk).cosh() - 1.0)).acosh() / alpha
}

/// Samples graphs of one size with resolved parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    n: usize,
    alpha: f64,
    r_disk: f64,
    edge_radius: f64,
}

impl Generator {
    pub fn new(n: usize, alpha: f64, r_disk: f64, edge_radius: f64) -> Result<Self> {
        if n < 2 {
            return Err(GraphError::InvalidParameter(format!("n = {n}")));
        }
        for (name, v) in [("alpha", alpha), ("disk radius", r_disk), ("edge radius", edge_radius)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(GraphError::InvalidParameter(format!("{name} = {v}")));
            }
        }
        Ok(Self {
            n,
            alpha,
            r_disk,
            edge_radius,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn r_disk(&self) -> f64 {
        self.r_disk
    }

    pub fn edge_radius(&self) -> f64 {
        self.edge_radius
    }

    pub fn sample(&self, seed: u64) -> HypGraph {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let points = (0..self.n)
            .map(|_| {
                let angle = rng.random::<f64>() * 2.0 * PI;
                let radius = radius_from_quantile(rng.random::<f64>(), self.alpha, self.r_disk);
                DiskPoint { radius, angle }
            })
            .collect();
        HypGraph::from_points(points, self.alpha, self.r_disk, self.edge_radius, Some(seed))
    }
}

/// Convenience wrapper: resolves the disk radius and samples one graph.
pub fn sample_graph(n: usize, config: &GeneratorConfig, seed: u64) -> Result<HypGraph> {
    Ok(config.generator(n)?.sample(seed))
}

/// An undirected threshold graph on disk points.
#[derive(Debug, Clone, PartialEq)]
pub struct HypGraph {
    alpha: f64,
    r_disk: f64,
    edge_radius: f64,
    points: Vec<DiskPoint>,
    /// Sorted `(i, j)` with `i < j`.
    edges: Vec<(usize, usize)>,
    /// Sorted neighbor lists.
    adjacency: Vec<Vec<usize>>,
    seed: Option<u64>,
}

impl HypGraph {
    /// Joins every pair within `edge_radius`.
    pub fn from_points(
        points: Vec<DiskPoint>,
        alpha: f64,
        r_disk: f64,
        edge_radius: f64,
        seed: Option<u64>,
    ) -> Self {
        let n = points.len();
        let parts: Vec<_> = points
            .iter()
            .map(|p| (p.radius.cosh(), p.radius.sinh(), p.angle))
            .collect();
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if distance_from_parts(parts[i], parts[j]) <= edge_radius {
                    edges.push((i, j));
                }
            }
        }
        Self::with_edges(points, edges, alpha, r_disk, edge_radius, seed)
    }

    fn with_edges(
        points: Vec<DiskPoint>,
        edges: Vec<(usize, usize)>,
        alpha: f64,
        r_disk: f64,
        edge_radius: f64,
        seed: Option<u64>,
    ) -> Self {
        let mut adjacency = vec![Vec::new(); points.len()];
        for &(a, b) in &edges {
            adjacency[a].push(b);
            adjacency[b].push(a);
        }
        adjacency.iter_mut().for_each(|l| l.sort_unstable());
        Self {
            alpha,
            r_disk,
            edge_radius,
            points,
            edges,
            adjacency,
            seed,
        }
    }

    /// A graph with explicit structure and no geometry, for tests and tools.
    /// Points are placed at the origin with angles spread over the circle.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut sorted = Vec::with_capacity(edges.len());
        for &(a, b) in edges {
            for node in [a, b] {
                if node >= n {
                    return Err(GraphError::InvalidNode { node, n });
                }
            }
            if a == b {
                return Err(GraphError::InvalidParameter(format!("self-loop at {a}")));
            }
            sorted.push((a.min(b), a.max(b)));
        }
        sorted.sort_unstable();
        sorted.dedup();
        let points = (0..n)
            .map(|i| DiskPoint {
                radius: 0.0,
                angle: 2.0 * PI * i as f64 / n as f64,
            })
            .collect();
        Ok(Self::with_edges(points, sorted, 1.0, 1.0, 1.0, None))
    }

    pub fn n(&self) -> usize {
        self.points.len()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn r_disk(&self) -> f64 {
        self.r_disk
    }

    pub fn edge_radius(&self) -> f64 {
        self.edge_radius
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn points(&self) -> &[DiskPoint] {
        &self.points
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.adjacency[node]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.adjacency[node].len()
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.adjacency.iter().map(Vec::len).collect()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.adjacency[a].binary_search(&b).is_ok()
    }

    /// Subgraph induced by `nodes`, relabeled in ascending original order.
    pub fn induced(&self, nodes: &[usize]) -> HypGraph {
        let mut keep: Vec<usize> = nodes.to_vec();
        keep.sort_unstable();
        keep.dedup();
        let mut relabel = vec![usize::MAX; self.n()];
        for (new, &old) in keep.iter().enumerate() {
            relabel[old] = new;
        }
        let edges = self
            .edges
            .iter()
            .filter(|(a, b)| relabel[*a] != usize::MAX && relabel[*b] != usize::MAX)
            .map(|&(a, b)| (relabel[a], relabel[b]))
            .collect();
        let points = keep.iter().map(|&i| self.points[i]).collect();
        Self::with_edges(points, edges, self.alpha, self.r_disk, self.edge_radius, self.seed)
    }

    /// Connected components as ascending node lists, ordered by smallest node.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let mut label = vec![usize::MAX; self.n()];
        let mut out = Vec::new();
        for start in 0..self.n() {
            if label[start] != usize::MAX {
                continue;
            }
            let mut comp = vec![start];
            label[start] = out.len();
            let mut head = 0;
            while head < comp.len() {
                let u = comp[head];
                head += 1;
                for &v in &self.adjacency[u] {
                    if label[v] == usize::MAX {
                        label[v] = out.len();
                        comp.push(v);
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }

    /// Induced subgraph on the largest component (the earliest on ties).
    pub fn largest_component(&self) -> HypGraph {
        let comps = self.components();
        let best = comps
            .iter()
            .enumerate()
            .max_by_key(|(i, c)| (c.len(), std::cmp::Reverse(*i)))
            .map(|(_, c)| c.clone())
            .unwrap_or_default();
        self.induced(&best)
    }

    pub fn average_degree(&self) -> f64 {
        2.0 * self.edges.len() as f64 / self.n() as f64
    }
}

/// Power-law exponent of the degree tail `P(D >= d) ~ d^(1 - exponent)` for
/// `d >= d_min`, from a least-squares fit of log rank against log degree.
pub fn degree_tail_exponent(degrees: &[usize], d_min: usize) -> Option<f64> {
    let mut tail: Vec<f64> = degrees
        .iter()
        .filter(|&&d| d >= d_min.max(1))
        .map(|&d| d as f64)
        .collect();
    if tail.len() < 3 {
        return None;
    }
    tail.sort_by(|a, b| b.total_cmp(a));
    let n = degrees.len() as f64;
    let pts: Vec<(f64, f64)> = tail
        .iter()
        .enumerate()
        .map(|(rank, &d)| (d.ln(), ((rank + 1) as f64 / n).ln()))
        .collect();
    let m = pts.len() as f64;
    let (mx, my) = pts.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x / m, b + y / m));
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        return None;
    }
    Some(1.0 - sxy / sxx)
}
