//! One JSON object per line:
//! `{"n", "alpha", "r_disk", "edge_radius", "points": [[radius, angle], ...],
//! "edges": [[i, j], ...], "seed"}`.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{DiskPoint, GraphError, HypGraph, Result};

#[derive(Serialize, Deserialize)]
struct GraphRecord {
    n: usize,
    alpha: f64,
    r_disk: f64,
    edge_radius: f64,
    points: Vec<[f64; 2]>,
    edges: Vec<[usize; 2]>,
    seed: Option<u64>,
}

impl From<&HypGraph> for GraphRecord {
    fn from(g: &HypGraph) -> Self {
        Self {
            n: g.n(),
            alpha: g.alpha(),
            r_disk: g.r_disk(),
            edge_radius: g.edge_radius(),
            points: g.points().iter().map(|p| [p.radius, p.angle]).collect(),
            edges: g.edges().iter().map(|&(a, b)| [a, b]).collect(),
            seed: g.seed(),
        }
    }
}

impl TryFrom<GraphRecord> for HypGraph {
    type Error = GraphError;

    fn try_from(r: GraphRecord) -> Result<Self> {
        if r.points.len() != r.n {
            return Err(GraphError::Format(format!("{} points for n = {}", r.points.len(), r.n)));
        }
        let points: Vec<DiskPoint> = r
            .points
            .iter()
            .map(|&[radius, angle]| DiskPoint { radius, angle })
            .collect();
        let g = HypGraph::from_points(points, r.alpha, r.r_disk, r.edge_radius, r.seed);
        let edges: Vec<(usize, usize)> = r.edges.iter().map(|&[a, b]| (a, b)).collect();
        if g.edges() != edges.as_slice() {
            return Err(GraphError::Format(
                "edge list disagrees with the distance threshold".into(),
            ));
        }
        Ok(g)
    }
}

pub fn write_jsonl<W: Write>(mut out: W, graphs: &[HypGraph]) -> std::io::Result<()> {
    for g in graphs {
        serde_json::to_writer(&mut out, &GraphRecord::from(g))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Parses graphs and checks that each stored edge list matches its points.
pub fn read_jsonl<R: BufRead>(input: R) -> Result<Vec<HypGraph>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| GraphError::Format(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: GraphRecord = serde_json::from_str(&line)
            .map_err(|e| GraphError::Format(format!("line {}: {e}", i + 1)))?;
        out.push(HypGraph::try_from(record)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphgen::{sample_graph, GeneratorConfig};

    #[test]
    fn round_trip() {
        let cfg = GeneratorConfig::default();
        let graphs: Vec<_> = (0..3).map(|s| sample_graph(40, &cfg, s).unwrap()).collect();
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &graphs).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.starts_with("{\"n\":40,\"alpha\":0.95,\"r_disk\":"));
        assert_eq!(read_jsonl(buf.as_slice()).unwrap(), graphs);
    }

    #[test]
    fn rejects_inconsistent_records() {
        let line = r#"{"n":2,"alpha":1.0,"r_disk":1.0,"edge_radius":0.5,"points":[[0,0],[0,0]],"edges":[],"seed":null}"#;
        assert!(read_jsonl(line.as_bytes()).is_err());
        let line = r#"{"n":3,"alpha":1.0,"r_disk":1.0,"edge_radius":0.5,"points":[[0,0]],"edges":[],"seed":null}"#;
        assert!(read_jsonl(line.as_bytes()).is_err());
    }
}
