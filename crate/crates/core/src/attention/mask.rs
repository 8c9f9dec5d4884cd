use std::rc::Rc;

use super::{AttentionError, Result};

/// Which sources each target may attend to, stored densely and as a
/// target-sorted edge list.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMask {
    targets: usize,
    sources: usize,
    allowed: Vec<bool>,
    edges: EdgeIndex,
}

/// Edge-list view of a mask: pair `e` connects `targets[e]` to `sources[e]`,
/// with the pairs of target `t` at `offsets[t]..offsets[t+1]`.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct EdgeIndex {
    pub targets: Rc<[usize]>,
    pub sources: Rc<[usize]>,
    pub offsets: Rc<[usize]>,
}

impl AttentionMask {
    /// Row-major `[targets x sources]` boolean matrix. Every target needs at
    /// least one allowed source.
    pub fn from_dense(targets: usize, sources: usize, allowed: Vec<bool>) -> Result<Self> {
        if allowed.len() != targets * sources {
            return Err(AttentionError::Shape(format!(
                "mask of {} entries for {targets}x{sources}",
                allowed.len()
            )));
        }
        let edges = build_edge_index(targets, sources, &allowed);
        let mask = Self {
            targets,
            sources,
            allowed,
            edges,
        };
        if let Some(t) = (0..targets).find(|&t| mask.row(t).iter().all(|a| !a)) {
            return Err(AttentionError::IsolatedNode(t));
        }
        Ok(mask)
    }

    /// Self-attention mask over `n` nodes allowing each undirected edge in both
    /// directions plus every self-loop.
    pub fn from_undirected_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut allowed = vec![false; n * n];
        for i in 0..n {
            allowed[i * n + i] = true;
        }
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(AttentionError::Shape(format!("edge ({a}, {b}) with {n} nodes")));
            }
            allowed[a * n + b] = true;
            allowed[b * n + a] = true;
        }
        Self::from_dense(n, n, allowed)
    }

    /// Every node attends only to itself.
    pub fn self_loops(n: usize) -> Self {
        Self::from_undirected_edges(n, &[]).expect("self loops never isolate a node")
    }

    /// Every node attends to every node.
    pub fn full(n: usize) -> Self {
        Self::from_dense(n, n, vec![true; n * n]).expect("a full mask never isolates a node")
    }

    pub fn targets(&self) -> usize {
        self.targets
    }

    pub fn sources(&self) -> usize {
        self.sources
    }

    pub fn allowed(&self, target: usize, source: usize) -> bool {
        self.allowed[target * self.sources + source]
    }

    pub fn row(&self, target: usize) -> &[bool] {
        &self.allowed[target * self.sources..(target + 1) * self.sources]
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.allowed
    }

    pub fn num_allowed(&self) -> usize {
        self.allowed.iter().filter(|&&a| a).count()
    }

    pub(crate) fn edge_index(&self) -> &EdgeIndex {
        &self.edges
    }
}

fn build_edge_index(n_targets: usize, n_sources: usize, allowed: &[bool]) -> EdgeIndex {
    let mut targets = Vec::new();
    let mut sources = Vec::new();
    let mut offsets = Vec::with_capacity(n_targets + 1);
    offsets.push(0);
    for t in 0..n_targets {
        for s in 0..n_sources {
            if allowed[t * n_sources + s] {
                targets.push(t);
                sources.push(s);
            }
        }
        offsets.push(targets.len());
    }
    EdgeIndex {
        targets: targets.into(),
        sources: sources.into(),
        offsets: offsets.into(),
    }
}
