//! Transitivity graph: structurally similar node pairs that are not adjacent
//! in the origin graph, optionally pruned to pairs that share a cluster.

use log::warn;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::partition::Partition;
use crate::simrank::SimilarityMatrix;

/// Graph on the origin's nodes (sharing its node data) whose edges join
/// non-adjacent pairs with similarity at or above `threshold_used`.
#[derive(Clone, Debug)]
pub struct TransitivityGraph {
    graph: Graph,
    threshold_used: f64,
    origin_edge_count: usize,
}

impl TransitivityGraph {
    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn into_graph(self) -> Graph {
        self.graph
    }

    pub fn threshold_used(&self) -> f64 {
        self.threshold_used
    }

    pub fn origin_edge_count(&self) -> usize {
        self.origin_edge_count
    }

    pub fn num_edges(&self) -> usize {
        self.graph.num_edges()
    }
}

/// Edges `{u, v}` with `u ≠ v`, `sim(u, v) ≥ threshold` and `{u, v} ∉ E(graph)`.
pub fn build_transitivity_graph(
    graph: &Graph,
    sim: &SimilarityMatrix,
    threshold: f64,
) -> Result<TransitivityGraph> {
    if sim.num_nodes() != graph.num_nodes() {
        return Err(Error::shape(
            "build_transitivity_graph",
            format!(
                "similarity over {} nodes, graph has {}",
                sim.num_nodes(),
                graph.num_nodes()
            ),
        ));
    }
    if !threshold.is_finite() || threshold < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "transitivity threshold {threshold} must be a finite value >= 0"
        )));
    }
    if threshold > 1.0 {
        warn!("threshold {threshold} exceeds every SimRank score; transitivity graph is empty");
    }
    let edges: Vec<(usize, usize)> = sim
        .pairs_at_or_above(threshold)
        .into_iter()
        .filter(|&(u, v, _)| !graph.has_edge(u, v))
        .map(|(u, v, _)| (u, v))
        .collect();
    Ok(TransitivityGraph {
        graph: graph.with_edges(edges)?,
        threshold_used: threshold,
        origin_edge_count: graph.num_edges(),
    })
}

/// Keeps only the edges whose endpoints share a cluster.
pub fn prune_intercluster(
    trans: &TransitivityGraph,
    partition: &Partition,
) -> Result<TransitivityGraph> {
    let g = &trans.graph;
    if partition.len() != g.num_nodes() {
        return Err(Error::shape(
            "prune_intercluster",
            format!(
                "partition covers {} nodes, graph has {}",
                partition.len(),
                g.num_nodes()
            ),
        ));
    }
    let assignment = partition.assignment();
    let kept = g
        .edges()
        .iter()
        .copied()
        .filter(|&(u, v)| assignment[u] == assignment[v]);
    Ok(TransitivityGraph {
        graph: g.with_edges(kept)?,
        threshold_used: trans.threshold_used,
        origin_edge_count: trans.origin_edge_count,
    })
}

/// Default threshold for a known dataset name (case-insensitive).
pub fn default_threshold(dataset: &str) -> Option<f64> {
    let name = dataset.to_ascii_lowercase().replace(['_', ' '], "-");
    Some(match name.as_str() {
        "cora" => 0.4,
        "citeseer" => 0.5,
        "pubmed" => 0.4,
        "airport" | "airport-usa" | "usa-airport" => 0.5,
        "actor" => 0.88,
        "twitch-pt" | "twitch" | "pt" => 0.09,
        _ => return None,
    })
}
