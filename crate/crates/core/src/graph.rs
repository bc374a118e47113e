//! Undirected simple graph with node features, labels and a train/val/test
//! split, plus the tab-separated dataset directory format.
//!
//! A dataset directory holds four UTF-8 files:
//!
//! * `edges.tsv`: one `u<TAB>v` pair per line, 0-indexed. Reversed and
//!   repeated pairs collapse to one undirected edge; self-loops are rejected.
//! * `features.tsv`: line `i` holds the tab-separated features of node `i`.
//!   The number of lines fixes the node count.
//! * `labels.tsv`: line `i` holds the integer class of node `i`.
//! * `split.tsv`: line `i` is one of `train`, `val`, `test`, `none`.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::SparseMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
    None,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::None => "none",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            "none" => Ok(Split::None),
            other => Err(format!(
                "unknown split {other:?} (expected train|val|test|none)"
            )),
        }
    }
}

/// Per-node payload shared between a graph and the graphs derived from it.
#[derive(Debug)]
pub struct NodeData {
    features: SparseMatrix,
    labels: Vec<usize>,
    split: Vec<Split>,
    num_classes: usize,
}

impl NodeData {
    pub fn new(
        features: SparseMatrix,
        labels: Vec<usize>,
        split: Vec<Split>,
        num_classes: usize,
    ) -> Result<Self> {
        let n = features.rows();
        if labels.len() != n || split.len() != n {
            return Err(Error::shape(
                "NodeData::new",
                format!(
                    "{n} feature rows, {} labels, {} split entries",
                    labels.len(),
                    split.len()
                ),
            ));
        }
        if let Some((v, &c)) = labels.iter().enumerate().find(|(_, &c)| c >= num_classes) {
            return Err(Error::InvalidArgument(format!(
                "label out of range: node {v} has class {c} with {num_classes} classes"
            )));
        }
        Ok(Self {
            features,
            labels,
            split,
            num_classes,
        })
    }

    /// Featureless, unlabeled payload for structure-only graphs.
    pub fn empty(num_nodes: usize) -> Self {
        Self {
            features: SparseMatrix::from_triplets(num_nodes, 0, Vec::new()).unwrap(),
            labels: vec![0; num_nodes],
            split: vec![Split::None; num_nodes],
            num_classes: 1,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.labels.len()
    }
}

/// Immutable undirected simple graph. Neighbor lists are sorted.
#[derive(Clone, Debug)]
pub struct Graph {
    offsets: Vec<usize>,
    adjacency: Vec<usize>,
    edges: Vec<(usize, usize)>,
    nodes: Arc<NodeData>,
}

impl PartialEq for Graph {
    fn eq(&self, other: &Self) -> bool {
        self.edges == other.edges
            && (Arc::ptr_eq(&self.nodes, &other.nodes)
                || (self.nodes.labels == other.nodes.labels
                    && self.nodes.split == other.nodes.split
                    && self.nodes.num_classes == other.nodes.num_classes
                    && self.nodes.features == other.nodes.features))
    }
}

impl Graph {
    /// Builds a graph over `nodes`. Edges are deduplicated and stored as
    /// unordered pairs; a self-loop or out-of-range endpoint is an error.
    pub fn new(
        nodes: Arc<NodeData>,
        edges: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        let n = nodes.num_nodes();
        let mut list = Vec::new();
        for (u, v) in edges {
            if u >= n || v >= n {
                return Err(Error::NodeOutOfRange {
                    index: u.max(v),
                    num_nodes: n,
                });
            }
            if u == v {
                return Err(Error::InvalidArgument(format!("self-loop on node {u}")));
            }
            list.push((u.min(v), u.max(v)));
        }
        list.sort_unstable();
        list.dedup();
        Ok(Self::from_canonical_edges(nodes, list))
    }

    /// Structure-only graph with no features and a single class.
    pub fn from_edges(num_nodes: usize, edges: &[(usize, usize)]) -> Result<Self> {
        Self::new(Arc::new(NodeData::empty(num_nodes)), edges.iter().copied())
    }

    /// `edges` must be sorted, unique, `u < v`, and in range.
    fn from_canonical_edges(nodes: Arc<NodeData>, edges: Vec<(usize, usize)>) -> Self {
        let n = nodes.num_nodes();
        let mut degree = vec![0usize; n];
        for &(u, v) in &edges {
            degree[u] += 1;
            degree[v] += 1;
        }
        let mut offsets = vec![0usize; n + 1];
        for i in 0..n {
            offsets[i + 1] = offsets[i] + degree[i];
        }
        let mut fill = offsets.clone();
        let mut adjacency = vec![0usize; offsets[n]];
        for &(u, v) in &edges {
            adjacency[fill[u]] = v;
            fill[u] += 1;
            adjacency[fill[v]] = u;
            fill[v] += 1;
        }
        for i in 0..n {
            adjacency[offsets[i]..offsets[i + 1]].sort_unstable();
        }
        Self {
            offsets,
            adjacency,
            edges,
            nodes,
        }
    }

    /// A graph on the same nodes (sharing feature/label/split storage) with
    /// a different edge set.
    pub fn with_edges(&self, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Graph> {
        Graph::new(Arc::clone(&self.nodes), edges)
    }

    pub fn num_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Sorted unordered edges `(u, v)` with `u < v`.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    fn check(&self, v: usize) -> Result<()> {
        if v < self.num_nodes() {
            Ok(())
        } else {
            Err(Error::NodeOutOfRange {
                index: v,
                num_nodes: self.num_nodes(),
            })
        }
    }

    pub fn neighbors(&self, v: usize) -> Result<&[usize]> {
        self.check(v)?;
        Ok(self.adjacency(v))
    }

    pub fn degree(&self, v: usize) -> Result<usize> {
        self.check(v)?;
        Ok(self.offsets[v + 1] - self.offsets[v])
    }

    pub fn is_edge(&self, u: usize, v: usize) -> Result<bool> {
        self.check(u)?;
        self.check(v)?;
        Ok(self.has_edge(u, v))
    }

    /// Sorted neighbors of `v`. Panics if `v` is out of range.
    #[inline]
    pub fn adjacency(&self, v: usize) -> &[usize] {
        &self.adjacency[self.offsets[v]..self.offsets[v + 1]]
    }

    #[inline]
    pub(crate) fn has_edge(&self, u: usize, v: usize) -> bool {
        self.adjacency(u).binary_search(&v).is_ok()
    }

    pub fn node_data(&self) -> &Arc<NodeData> {
        &self.nodes
    }

    pub fn shares_node_data(&self, other: &Graph) -> bool {
        Arc::ptr_eq(&self.nodes, &other.nodes)
    }

    pub fn features(&self) -> &SparseMatrix {
        &self.nodes.features
    }

    pub fn feature_dim(&self) -> usize {
        self.nodes.features.cols()
    }

    pub fn labels(&self) -> &[usize] {
        &self.nodes.labels
    }

    pub fn split(&self) -> &[Split] {
        &self.nodes.split
    }

    pub fn num_classes(&self) -> usize {
        self.nodes.num_classes
    }

    /// Nodes assigned to `which`, ascending.
    pub fn nodes_in(&self, which: Split) -> Vec<usize> {
        self.nodes
            .split
            .iter()
            .enumerate()
            .filter(|(_, &s)| s == which)
            .map(|(v, _)| v)
            .collect()
    }

    /// SHA-256 over the node count and edge list, hex encoded.
    pub fn structure_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.num_nodes() as u64).to_le_bytes());
        for &(u, v) in &self.edges {
            h.update((u as u64).to_le_bytes());
            h.update((v as u64).to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Symmetrically normalized adjacency with self-loops,
/// `D̃^{-1/2} (A + I) D̃^{-1/2}` where `D̃` is the degree matrix of `A + I`.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedAdjacency(SparseMatrix);

impl NormalizedAdjacency {
    pub fn matrix(&self) -> &SparseMatrix {
        &self.0
    }

    pub fn num_nodes(&self) -> usize {
        self.0.rows()
    }

    /// The operator of an edgeless graph: identity propagation.
    pub fn identity(n: usize) -> Self {
        Self(SparseMatrix::identity(n))
    }
}

pub fn normalized_adjacency(graph: &Graph) -> NormalizedAdjacency {
    let n = graph.num_nodes();
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|v| 1.0 / ((graph.adjacency(v).len() + 1) as f64).sqrt())
        .collect();
    let mut triplets = Vec::with_capacity(n + 2 * graph.num_edges());
    for v in 0..n {
        triplets.push((v, v, inv_sqrt[v] * inv_sqrt[v]));
        for &u in graph.adjacency(v) {
            triplets.push((v, u, inv_sqrt[v] * inv_sqrt[u]));
        }
    }
    NormalizedAdjacency(SparseMatrix::from_triplets(n, n, triplets).expect("indices in range"))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PerturbMode {
    Add,
    Remove,
}

impl PerturbMode {
    pub fn as_str(self) -> &'static str {
        match self {
            PerturbMode::Add => "add",
            PerturbMode::Remove => "remove",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PerturbationSpec {
    pub mode: PerturbMode,
    /// Fraction of the original edge count to add or remove, in `[0, 0.5]`.
    pub rate: f64,
    pub seed: u64,
}

impl PerturbationSpec {
    /// `floor(rate · |E|)`.
    pub fn edge_budget(&self, num_edges: usize) -> usize {
        // The epsilon keeps products like 0.29·100 from flooring to 28.
        (self.rate * num_edges as f64 + 1e-9).floor() as usize
    }
}

/// Adds or removes `floor(rate · |E|)` uniformly sampled edges. Node data is
/// shared with the input graph. Deterministic for a given seed.
pub fn perturb_edges(graph: &Graph, spec: &PerturbationSpec) -> Result<Graph> {
    if !(0.0..=0.5).contains(&spec.rate) {
        return Err(Error::InvalidArgument(format!(
            "perturbation rate {} outside [0, 0.5]",
            spec.rate
        )));
    }
    let m = graph.num_edges();
    let budget = spec.edge_budget(m);
    if budget == 0 {
        return Ok(graph.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    match spec.mode {
        PerturbMode::Remove => {
            let mut edges = graph.edges().to_vec();
            edges.shuffle(&mut rng);
            let kept = edges.split_off(budget);
            graph.with_edges(kept)
        }
        PerturbMode::Add => {
            let n = graph.num_nodes();
            let pairs = n * n.saturating_sub(1) / 2;
            let free = pairs - m;
            if budget > free {
                return Err(Error::InvalidArgument(format!(
                    "cannot add {budget} edges: only {free} non-edges exist"
                )));
            }
            let added = if pairs <= 1 << 22 || free < 2 * budget {
                let candidates: Vec<(usize, usize)> = (0..n)
                    .flat_map(|u| (u + 1..n).map(move |v| (u, v)))
                    .filter(|&(u, v)| !graph.has_edge(u, v))
                    .collect();
                rand::seq::index::sample(&mut rng, candidates.len(), budget)
                    .into_iter()
                    .map(|i| candidates[i])
                    .collect::<Vec<_>>()
            } else {
                let mut chosen = HashSet::with_capacity(budget);
                let mut out = Vec::with_capacity(budget);
                while out.len() < budget {
                    let u = rng.random_range(0..n);
                    let v = rng.random_range(0..n);
                    if u == v {
                        continue;
                    }
                    let e = (u.min(v), u.max(v));
                    if !graph.has_edge(e.0, e.1) && chosen.insert(e) {
                        out.push(e);
                    }
                }
                out
            };
            graph.with_edges(graph.edges().iter().copied().chain(added))
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct LoadOptions {
    /// Declared class count; labels at or above it are rejected. When unset
    /// the count is one more than the largest label.
    pub num_classes: Option<usize>,
}

pub fn load_dataset(dir: &Path) -> Result<Graph> {
    load_dataset_with(dir, &LoadOptions::default())
}

fn read_file(dir: &Path, name: &str) -> Result<(PathBuf, String)> {
    let path = dir.join(name);
    if !path.is_file() {
        return Err(Error::MissingFile(path));
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok((path, text))
}

/// Lines with trailing newline/CR handled; a final empty line is ignored.
fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    let mut lines: Vec<&str> = text.split('\n').map(|l| l.trim_end_matches('\r')).collect();
    if lines.last() == Some(&"") {
        lines.pop();
    }
    lines.into_iter().enumerate().map(|(i, l)| (i + 1, l))
}

pub fn load_dataset_with(dir: &Path, options: &LoadOptions) -> Result<Graph> {
    let (fpath, ftext) = read_file(dir, "features.tsv")?;
    let (lpath, ltext) = read_file(dir, "labels.tsv")?;
    let (spath, stext) = read_file(dir, "split.tsv")?;
    let (epath, etext) = read_file(dir, "edges.tsv")?;

    let mut triplets = Vec::new();
    let mut dim: Option<usize> = None;
    let mut n = 0;
    for (line_no, line) in data_lines(&ftext) {
        let row = n;
        let mut count = 0;
        if !line.is_empty() {
            for (c, tok) in line.split('\t').enumerate() {
                let v: f64 = tok.trim().parse().map_err(|_| {
                    Error::parse(&fpath, line_no, format!("bad feature value {tok:?}"))
                })?;
                if !v.is_finite() {
                    return Err(Error::parse(&fpath, line_no, "non-finite feature value"));
                }
                if v != 0.0 {
                    triplets.push((row, c, v));
                }
                count += 1;
            }
        }
        match dim {
            None => dim = Some(count),
            Some(d) if d != count => {
                return Err(Error::parse(
                    &fpath,
                    line_no,
                    format!("ragged feature row: {count} values, expected {d}"),
                ))
            }
            _ => {}
        }
        n += 1;
    }
    let features = SparseMatrix::from_triplets(n, dim.unwrap_or(0), triplets)?;

    let mut labels = Vec::with_capacity(n);
    for (line_no, line) in data_lines(&ltext) {
        if line_no > n {
            return Err(Error::parse(
                &lpath,
                line_no,
                format!("more labels than the {n} nodes in features.tsv"),
            ));
        }
        let c: usize = line
            .trim()
            .parse()
            .map_err(|_| Error::parse(&lpath, line_no, format!("bad label {line:?}")))?;
        if let Some(k) = options.num_classes {
            if c >= k {
                return Err(Error::parse(
                    &lpath,
                    line_no,
                    format!("label out of range: {c} with {k} classes"),
                ));
            }
        }
        labels.push(c);
    }
    if labels.len() != n {
        return Err(Error::parse(
            &lpath,
            labels.len() + 1,
            format!("expected {n} labels, found {}", labels.len()),
        ));
    }
    let num_classes = options
        .num_classes
        .unwrap_or_else(|| labels.iter().max().map_or(1, |m| m + 1));

    let mut split = Vec::with_capacity(n);
    for (line_no, line) in data_lines(&stext) {
        if line_no > n {
            return Err(Error::parse(
                &spath,
                line_no,
                format!("more split entries than the {n} nodes"),
            ));
        }
        split.push(
            line.trim()
                .parse::<Split>()
                .map_err(|m| Error::parse(&spath, line_no, m))?,
        );
    }
    if split.len() != n {
        return Err(Error::parse(
            &spath,
            split.len() + 1,
            format!("expected {n} split entries, found {}", split.len()),
        ));
    }

    let mut edges = Vec::new();
    for (line_no, line) in data_lines(&etext) {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::parse(&epath, line_no, "expected `u<TAB>v`"));
        };
        let parse = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::parse(&epath, line_no, format!("bad node index {s:?}")))
        };
        let (u, v) = (parse(a)?, parse(b)?);
        for x in [u, v] {
            if x >= n {
                return Err(Error::parse(
                    &epath,
                    line_no,
                    format!("node index {x} >= num_nodes {n}"),
                ));
            }
        }
        if u == v {
            return Err(Error::parse(
                &epath,
                line_no,
                format!("self-loop {u}-{v} rejected"),
            ));
        }
        edges.push((u, v));
    }

    let nodes = NodeData::new(features, labels, split, num_classes)?;
    Graph::new(Arc::new(nodes), edges)
}

/// Writes `graph` in the dataset directory format, creating `dir` if needed.
pub fn save_dataset(graph: &Graph, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, body: String| {
        let p = dir.join(name);
        fs::write(&p, body).map_err(|e| Error::io(&p, e))
    };
    let mut edges = String::new();
    for &(u, v) in graph.edges() {
        edges.push_str(&format!("{u}\t{v}\n"));
    }
    write("edges.tsv", edges)?;

    let x = graph.features();
    let mut feats = String::new();
    let mut row = vec![0.0; x.cols()];
    for r in 0..x.rows() {
        row.iter_mut().for_each(|v| *v = 0.0);
        let (idx, vals) = x.row(r);
        for (&c, &v) in idx.iter().zip(vals) {
            row[c] = v;
        }
        let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        feats.push_str(&cells.join("\t"));
        feats.push('\n');
    }
    write("features.tsv", feats)?;

    let labels: String = graph.labels().iter().map(|c| format!("{c}\n")).collect();
    write("labels.tsv", labels)?;
    let split: String = graph.split().iter().map(|s| format!("{s}\n")).collect();
    write("split.tsv", split)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path3() -> Graph {
        Graph::from_edges(3, &[(0, 1), (1, 2)]).unwrap()
    }

    #[test]
    fn path_queries() {
        let g = path3();
        assert_eq!(g.num_nodes(), 3);
        assert_eq!(g.num_edges(), 2);
        assert_eq!(g.neighbors(1).unwrap(), &[0, 2]);
        assert!(!g.is_edge(0, 2).unwrap());
        assert!(g.is_edge(2, 1).unwrap());
        assert_eq!(g.degree(1).unwrap(), 2);
        assert!(g.neighbors(3).is_err());
        assert!(g.degree(7).is_err());
        assert!(g.is_edge(0, 3).is_err());
    }

    #[test]
    fn dedup_and_rejects() {
        let g = Graph::from_edges(3, &[(0, 1), (1, 0), (0, 1)]).unwrap();
        assert_eq!(g.num_edges(), 1);
        assert!(Graph::from_edges(3, &[(1, 1)]).is_err());
        assert!(Graph::from_edges(3, &[(0, 3)]).is_err());
    }

    #[test]
    fn normalized_single_isolated_node() {
        let a = normalized_adjacency(&Graph::from_edges(1, &[]).unwrap());
        assert_eq!(a.matrix().to_dense().data(), &[1.0]);
    }

    #[test]
    fn normalized_single_edge() {
        let a = normalized_adjacency(&Graph::from_edges(2, &[(0, 1)]).unwrap());
        for &v in a.matrix().to_dense().data() {
            assert!((v - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn normalized_triangle() {
        let a = normalized_adjacency(&Graph::from_edges(3, &[(0, 1), (1, 2), (0, 2)]).unwrap());
        assert_eq!(a.matrix().nnz(), 9);
        for &v in a.matrix().to_dense().data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn perturb_zero_rate_is_identity() {
        let g = Graph::from_edges(5, &[(0, 1), (1, 2), (3, 4)]).unwrap();
        for mode in [PerturbMode::Add, PerturbMode::Remove] {
            let out = perturb_edges(
                &g,
                &PerturbationSpec {
                    mode,
                    rate: 0.0,
                    seed: 9,
                },
            )
            .unwrap();
            assert_eq!(out, g);
        }
    }

    #[test]
    fn perturb_rejects_bad_rate() {
        let g = path3();
        let spec = PerturbationSpec {
            mode: PerturbMode::Remove,
            rate: 0.6,
            seed: 0,
        };
        assert!(perturb_edges(&g, &spec).is_err());
    }

    #[test]
    fn perturb_add_on_near_complete_graph_fails() {
        let edges: Vec<_> = (0..4)
            .flat_map(|u| (u + 1..4).map(move |v| (u, v)))
            .filter(|&e| e != (0, 1))
            .collect();
        let g = Graph::from_edges(4, &edges).unwrap();
        let spec = PerturbationSpec {
            mode: PerturbMode::Add,
            rate: 0.5,
            seed: 0,
        };
        assert!(perturb_edges(&g, &spec).is_err());
    }

    #[test]
    fn edge_budget_floors() {
        let spec = PerturbationSpec {
            mode: PerturbMode::Add,
            rate: 0.29,
            seed: 0,
        };
        assert_eq!(spec.edge_budget(100), 29);
        assert_eq!(spec.edge_budget(3), 0);
    }
}
