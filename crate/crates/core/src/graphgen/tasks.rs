use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{all_pairs_bfs, GraphError, HypGraph, Result};

/// Longest path length used as a shortest-path class.
pub const MAX_PATH_LENGTH: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// Link prediction: does the pair share an edge?
    Lp,
    /// Shortest-path-length prediction, lengths `1..=25`.
    Splp,
}

impl Task {
    pub fn num_classes(self) -> usize {
        match self {
            Task::Lp => 2,
            Task::Splp => MAX_PATH_LENGTH,
        }
    }

    /// Class index of a label (path lengths start at 1).
    pub fn class_of(self, label: usize) -> usize {
        match self {
            Task::Lp => label,
            Task::Splp => label - 1,
        }
    }
}

/// A queried node pair and its label: 0/1 for link prediction, the hop
/// distance for path-length prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskExample {
    pub src: usize,
    pub dst: usize,
    pub label: usize,
}

/// Balanced link-prediction example: with probability 1/2 a uniform edge in
/// random orientation, otherwise a uniform non-adjacent pair.
pub fn sample_lp_example<R: Rng + ?Sized>(g: &HypGraph, rng: &mut R) -> Result<TaskExample> {
    let n = g.n();
    if g.edges().is_empty() {
        return Err(GraphError::NoEdges);
    }
    if g.edges().len() == n * (n - 1) / 2 {
        return Err(GraphError::CompleteGraph);
    }
    if rng.random::<bool>() {
        let (a, b) = g.edges()[rng.random_range(0..g.edges().len())];
        let (src, dst) = if rng.random::<bool>() { (a, b) } else { (b, a) };
        return Ok(TaskExample { src, dst, label: 1 });
    }
    loop {
        let src = rng.random_range(0..n);
        let dst = rng.random_range(0..n);
        if src != dst && !g.has_edge(src, dst) {
            return Ok(TaskExample { src, dst, label: 0 });
        }
    }
}

/// Shortest-path-length sampler over ordered pairs of distinct, connected
/// nodes at most [`MAX_PATH_LENGTH`] apart.
#[derive(Debug, Clone)]
pub struct SplpSampler {
    n: usize,
    dist: Vec<Option<usize>>,
    /// Ordered eligible pairs per length; index 0 unused.
    counts: [usize; MAX_PATH_LENGTH + 1],
    min_count: usize,
}

impl SplpSampler {
    pub fn new(g: &HypGraph) -> Result<Self> {
        let n = g.n();
        let dist = all_pairs_bfs(g);
        let mut counts = [0; MAX_PATH_LENGTH + 1];
        for d in dist.iter().flatten() {
            if (1..=MAX_PATH_LENGTH).contains(d) {
                counts[*d] += 1;
            }
        }
        let min_count = counts[1..].iter().copied().filter(|&c| c > 0).min();
        let min_count = min_count.ok_or(GraphError::NoEligiblePair)?;
        Ok(Self {
            n,
            dist,
            counts,
            min_count,
        })
    }

    pub fn distance(&self, src: usize, dst: usize) -> Option<usize> {
        self.dist[src * self.n + dst]
    }

    /// Ordered eligible pairs at each length `0..=25` (index 0 is always 0).
    pub fn length_counts(&self) -> &[usize] {
        &self.counts
    }

    /// With `uniformize`, a drawn pair of length `l` is kept with probability
    /// `min_count / count(l)`, so every realizable length is equally likely.
    /// Without it, pairs are uniform over all eligible pairs.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, uniformize: bool) -> TaskExample {
        loop {
            let src = rng.random_range(0..self.n);
            let dst = rng.random_range(0..self.n);
            let Some(len) = self.distance(src, dst) else { continue };
            if !(1..=MAX_PATH_LENGTH).contains(&len) {
                continue;
            }
            if uniformize && rng.random::<f64>() * self.counts[len] as f64 >= self.min_count as f64 {
                continue;
            }
            return TaskExample { src, dst, label: len };
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn triangle_positives_come_from_edges() {
        let g = HypGraph::from_edges(4, &[(0, 1), (1, 2), (0, 2)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..500 {
            let ex = sample_lp_example(&g, &mut rng).unwrap();
            assert_eq!(ex.label == 1, g.has_edge(ex.src, ex.dst));
            assert_ne!(ex.src, ex.dst);
        }
    }

    #[test]
    fn star_negatives_are_leaf_pairs() {
        let g = HypGraph::from_edges(4, &[(0, 1), (0, 2), (0, 3)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..500 {
            let ex = sample_lp_example(&g, &mut rng).unwrap();
            if ex.label == 0 {
                assert!(ex.src != 0 && ex.dst != 0);
            }
        }
    }

    #[test]
    fn lp_is_balanced() {
        let g = crate::graphgen::sample_graph(100, &Default::default(), 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pos = (0..10_000)
            .filter(|_| sample_lp_example(&g, &mut rng).unwrap().label == 1)
            .count();
        assert!((pos as f64 / 1e4 - 0.5).abs() <= 0.02, "{pos}");
    }

    #[test]
    fn lp_rejects_empty_and_complete_graphs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let empty = HypGraph::from_edges(3, &[]).unwrap();
        assert_eq!(sample_lp_example(&empty, &mut rng), Err(GraphError::NoEdges));
        let full = HypGraph::from_edges(3, &[(0, 1), (1, 2), (0, 2)]).unwrap();
        assert_eq!(sample_lp_example(&full, &mut rng), Err(GraphError::CompleteGraph));
    }

    #[test]
    fn uniformized_path_lengths_on_a_path_graph() {
        let g = HypGraph::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        let s = SplpSampler::new(&g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ones = (0..10_000).filter(|_| s.sample(&mut rng, true).label == 1).count();
        assert!((ones as f64 / 1e4 - 0.5).abs() <= 0.03, "{ones}");
    }

    #[test]
    fn natural_lengths_on_a_star_match_enumeration() {
        let g = HypGraph::from_edges(5, &[(0, 1), (0, 2), (0, 3), (0, 4)]).unwrap();
        let s = SplpSampler::new(&g).unwrap();
        // 4 center-leaf pairs and 6 leaf pairs.
        let expected = 6.0 / 10.0;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let twos = (0..10_000).filter(|_| s.sample(&mut rng, false).label == 2).count();
        assert!((twos as f64 / 1e4 - expected).abs() <= 0.02, "{twos}");
    }

    #[test]
    fn uniformized_histogram_is_close_to_uniform() {
        let g = crate::graphgen::sample_graph(50, &Default::default(), 6)
            .unwrap()
            .largest_component();
        let s = SplpSampler::new(&g).unwrap();
        let realizable: Vec<usize> = (1..=MAX_PATH_LENGTH).filter(|&l| s.length_counts()[l] > 0).collect();
        let mut hist = [0usize; MAX_PATH_LENGTH + 1];
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let draws = 10_000;
        for _ in 0..draws {
            let ex = s.sample(&mut rng, true);
            assert!(ex.label <= MAX_PATH_LENGTH);
            hist[ex.label] += 1;
        }
        let u = 1.0 / realizable.len() as f64;
        let tv: f64 = realizable
            .iter()
            .map(|&l| (hist[l] as f64 / draws as f64 - u).abs())
            .sum::<f64>()
            / 2.0;
        assert!(tv < 0.05, "total variation {tv}");
    }

    #[test]
    fn splp_needs_an_eligible_pair() {
        let g = HypGraph::from_edges(3, &[]).unwrap();
        assert!(matches!(SplpSampler::new(&g), Err(GraphError::NoEligiblePair)));
    }
}
