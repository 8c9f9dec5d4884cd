use std::collections::VecDeque;

use super::{GraphError, HypGraph, Result};

/// Hop distance from `src` to every node; `None` when unreachable.
pub fn bfs_distances(g: &HypGraph, src: usize) -> Vec<Option<usize>> {
    let mut dist = vec![None; g.n()];
    dist[src] = Some(0);
    let mut queue = VecDeque::from([src]);
    while let Some(u) = queue.pop_front() {
        let next = dist[u].map(|d| d + 1);
        for &v in g.neighbors(u) {
            if dist[v].is_none() {
                dist[v] = next;
                queue.push_back(v);
            }
        }
    }
    dist
}

/// Row-major `n x n` hop distances by one BFS per node.
pub fn all_pairs_bfs(g: &HypGraph) -> Vec<Option<usize>> {
    (0..g.n()).flat_map(|s| bfs_distances(g, s)).collect()
}

pub fn shortest_path_length(g: &HypGraph, src: usize, dst: usize) -> Result<Option<usize>> {
    for node in [src, dst] {
        if node >= g.n() {
            return Err(GraphError::InvalidNode { node, n: g.n() });
        }
    }
    Ok(bfs_distances(g, src)[dst])
}

/// Floyd-Warshall hop distances, row-major `n x n`. Independent of the BFS
/// code path; used as a reference.
pub fn floyd_warshall(g: &HypGraph) -> Vec<Option<usize>> {
    let n = g.n();
    let mut d = vec![None; n * n];
    for i in 0..n {
        d[i * n + i] = Some(0);
    }
    for &(a, b) in g.edges() {
        d[a * n + b] = Some(1);
        d[b * n + a] = Some(1);
    }
    for k in 0..n {
        for i in 0..n {
            let Some(ik) = d[i * n + k] else { continue };
            for j in 0..n {
                if let Some(kj) = d[k * n + j] {
                    let via = ik + kj;
                    if d[i * n + j].is_none_or(|cur| via < cur) {
                        d[i * n + j] = Some(via);
                    }
                }
            }
        }
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphgen::{sample_graph, GeneratorConfig};

    #[test]
    fn trivial_paths() {
        let g = HypGraph::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        assert_eq!(shortest_path_length(&g, 1, 1).unwrap(), Some(0));
        assert_eq!(shortest_path_length(&g, 0, 2).unwrap(), Some(2));
        assert_eq!(shortest_path_length(&g, 2, 0).unwrap(), Some(2));
        let g = HypGraph::from_edges(3, &[(0, 1)]).unwrap();
        assert_eq!(shortest_path_length(&g, 0, 2).unwrap(), None);
        assert!(shortest_path_length(&g, 0, 3).is_err());
    }

    #[test]
    fn bfs_matches_floyd_warshall() {
        let cfg = GeneratorConfig::default();
        for seed in 0..10 {
            let g = sample_graph(50, &cfg, seed).unwrap();
            assert_eq!(all_pairs_bfs(&g), floyd_warshall(&g));
        }
    }
}
