//! Multilevel k-way graph partitioning that minimizes edge cut.
//!
//! The pipeline coarsens by heavy-edge matching until at most
//! `max(2k, 64)` nodes remain, grows `k` regions greedily on the coarsest
//! graph, then projects back level by level with boundary refinement.
//! Refinement only applies strictly improving single-node moves, so the cut
//! never increases during uncoarsening.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::Graph;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Partition {
    assignment: Vec<usize>,
    k: usize,
}

impl Partition {
    pub fn new(assignment: Vec<usize>, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidArgument("partition needs k >= 1".into()));
        }
        if let Some((v, &c)) = assignment.iter().enumerate().find(|(_, &c)| c >= k) {
            return Err(Error::InvalidArgument(format!(
                "node {v} assigned to cluster {c} with k = {k}"
            )));
        }
        Ok(Self { assignment, k })
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &c in &self.assignment {
            sizes[c] += 1;
        }
        sizes
    }

    /// `partition.tsv`: line `i` is the cluster id of node `i`.
    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        let body: String = self.assignment.iter().map(|c| format!("{c}\n")).collect();
        fs::write(path, body).map_err(|e| Error::io(path, e))
    }

    pub fn read_tsv(path: &Path, k: usize) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut assignment = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let c = line
                .trim()
                .parse()
                .map_err(|_| Error::parse(path, i + 1, format!("bad cluster id {line:?}")))?;
            assignment.push(c);
        }
        Self::new(assignment, k)
    }
}

/// `max(2, ⌈n / 200⌉)`, never more than the node count.
pub fn default_cluster_count(num_nodes: usize) -> usize {
    num_nodes.div_ceil(200).max(2).min(num_nodes.max(1))
}

pub fn edge_cut(graph: &Graph, partition: &Partition) -> Result<usize> {
    if partition.len() != graph.num_nodes() {
        return Err(Error::shape(
            "edge_cut",
            format!(
                "partition covers {} nodes, graph has {}",
                partition.len(),
                graph.num_nodes()
            ),
        ));
    }
    let a = partition.assignment();
    Ok(graph.edges().iter().filter(|&&(u, v)| a[u] != a[v]).count())
}

#[derive(Clone, Debug)]
pub struct PartitionConfig {
    pub k: usize,
    pub seed: u64,
    /// Cluster weights stay within `[avg / imbalance', avg · imbalance]`,
    /// where the lower bound uses `2 - imbalance`.
    pub imbalance: f64,
    pub refine_passes: usize,
    /// Independent region-growing attempts on the coarsest graph.
    pub initial_tries: usize,
}

impl PartitionConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            seed,
            imbalance: 1.3,
            refine_passes: 10,
            initial_tries: 4,
        }
    }

    fn coarsen_target(&self) -> usize {
        (2 * self.k).max(64)
    }
}

/// Edge cut before and after refinement at one uncoarsening level.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LevelTrace {
    pub level: usize,
    pub num_nodes: usize,
    pub cut_before: u64,
    pub cut_after: u64,
}

#[derive(Clone, Debug)]
pub struct PartitionOutcome {
    pub partition: Partition,
    /// Coarsest level first.
    pub levels: Vec<LevelTrace>,
}

pub fn partition_graph(graph: &Graph, k: usize, seed: u64) -> Result<Partition> {
    Ok(partition_with(graph, &PartitionConfig::new(k, seed))?.partition)
}

pub fn partition_with(graph: &Graph, config: &PartitionConfig) -> Result<PartitionOutcome> {
    let n = graph.num_nodes();
    let k = config.k;
    if k < 1 {
        return Err(Error::InvalidArgument(
            "cluster count k must be >= 1".into(),
        ));
    }
    if k > n {
        return Err(Error::InvalidArgument(format!(
            "cluster count k = {k} exceeds node count {n}"
        )));
    }
    if k == 1 {
        return Ok(PartitionOutcome {
            partition: Partition::new(vec![0; n], 1)?,
            levels: Vec::new(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let finest = WeightedGraph::from_graph(graph);
    let total = finest.total_vertex_weight();
    let max_vwgt = ((1.5 * total as f64 / config.coarsen_target() as f64).floor() as u64).max(1);

    let mut levels: Vec<CoarseningLevel> = Vec::new();
    loop {
        let current = levels.last().map_or(&finest, |l| &l.coarse);
        if current.num_nodes() <= config.coarsen_target() {
            break;
        }
        let level = coarsen_once(current, max_vwgt, &mut rng);
        if level.coarse.num_nodes() as f64 > 0.95 * current.num_nodes() as f64 {
            break;
        }
        levels.push(level);
    }

    let coarsest = levels.last().map_or(&finest, |l| &l.coarse);
    let bounds = Bounds::new(coarsest.total_vertex_weight(), k, config.imbalance);
    let mut best: Option<(u64, Vec<usize>)> = None;
    for _ in 0..config.initial_tries.max(1) {
        let mut part = grow_regions(coarsest, k, &mut rng);
        rebalance(coarsest, &mut part, k, &bounds);
        refine(coarsest, &mut part, k, &bounds, config.refine_passes);
        let cut = coarsest.cut(&part);
        if best.as_ref().is_none_or(|(c, _)| cut < *c) {
            best = Some((cut, part));
        }
    }
    let (cut, mut part) = best.expect("at least one initial try");
    let mut traces = vec![LevelTrace {
        level: levels.len(),
        num_nodes: coarsest.num_nodes(),
        cut_before: cut,
        cut_after: cut,
    }];

    for depth in (0..levels.len()).rev() {
        let fine = if depth == 0 {
            &finest
        } else {
            &levels[depth - 1].coarse
        };
        let map = &levels[depth].fine_to_coarse;
        part = map.iter().map(|&c| part[c]).collect();
        let before = fine.cut(&part);
        refine(fine, &mut part, k, &bounds, config.refine_passes);
        traces.push(LevelTrace {
            level: depth,
            num_nodes: fine.num_nodes(),
            cut_before: before,
            cut_after: fine.cut(&part),
        });
    }

    Ok(PartitionOutcome {
        partition: Partition::new(part, k)?,
        levels: traces,
    })
}

/// Graph with vertex weights and merged edge multiplicities, stored as CSR.
#[derive(Clone, Debug)]
pub struct WeightedGraph {
    xadj: Vec<usize>,
    adjncy: Vec<usize>,
    adjwgt: Vec<u64>,
    vwgt: Vec<u64>,
}

impl WeightedGraph {
    pub fn from_graph(graph: &Graph) -> Self {
        let n = graph.num_nodes();
        let mut xadj = Vec::with_capacity(n + 1);
        let mut adjncy = Vec::new();
        xadj.push(0);
        for v in 0..n {
            adjncy.extend_from_slice(graph.adjacency(v));
            xadj.push(adjncy.len());
        }
        Self {
            adjwgt: vec![1; adjncy.len()],
            vwgt: vec![1; n],
            xadj,
            adjncy,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.vwgt.len()
    }

    #[inline]
    fn neighbors(&self, v: usize) -> impl Iterator<Item = (usize, u64)> + '_ {
        let r = self.xadj[v]..self.xadj[v + 1];
        self.adjncy[r.clone()]
            .iter()
            .copied()
            .zip(self.adjwgt[r].iter().copied())
    }

    pub fn total_vertex_weight(&self) -> u64 {
        self.vwgt.iter().sum()
    }

    /// Sum of undirected edge weights.
    pub fn total_edge_weight(&self) -> u64 {
        self.adjwgt.iter().sum::<u64>() / 2
    }

    pub fn cut(&self, part: &[usize]) -> u64 {
        let mut cut = 0;
        for v in 0..self.num_nodes() {
            for (u, w) in self.neighbors(v) {
                if part[u] != part[v] {
                    cut += w;
                }
            }
        }
        cut / 2
    }
}

/// One coarsening step.
#[derive(Clone, Debug)]
pub struct CoarseningLevel {
    pub coarse: WeightedGraph,
    /// Surjective map from fine nodes onto coarse nodes.
    pub fine_to_coarse: Vec<usize>,
    /// Weight of fine edges that fell inside a matched pair.
    pub collapsed_weight: u64,
}

const UNMATCHED: usize = usize::MAX;

/// Heavy-edge matching in a random visiting order (ties to the lowest node
/// index), then pairing of leftover nodes that share a neighbor, then
/// pairing of leftover isolated nodes. Merged nodes never exceed `max_vwgt`.
pub fn coarsen_once(g: &WeightedGraph, max_vwgt: u64, rng: &mut ChaCha8Rng) -> CoarseningLevel {
    let n = g.num_nodes();
    let mut mate = vec![UNMATCHED; n];
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);

    for &u in &order {
        if mate[u] != UNMATCHED {
            continue;
        }
        let mut best: Option<(u64, usize)> = None;
        for (v, w) in g.neighbors(u) {
            if mate[v] != UNMATCHED || g.vwgt[u] + g.vwgt[v] > max_vwgt {
                continue;
            }
            match best {
                Some((bw, bv)) if w < bw || (w == bw && v > bv) => {}
                _ => best = Some((w, v)),
            }
        }
        if let Some((_, v)) = best {
            mate[u] = v;
            mate[v] = u;
        }
    }

    // Leftovers sharing a neighbor.
    for c in 0..n {
        let mut pending: Option<usize> = None;
        for (u, _) in g.neighbors(c) {
            if mate[u] != UNMATCHED {
                continue;
            }
            match pending {
                Some(p) if g.vwgt[p] + g.vwgt[u] <= max_vwgt => {
                    mate[p] = u;
                    mate[u] = p;
                    pending = None;
                }
                _ => pending = Some(u),
            }
        }
    }

    // Leftover isolated nodes.
    let mut pending: Option<usize> = None;
    for u in 0..n {
        if mate[u] != UNMATCHED || g.xadj[u] != g.xadj[u + 1] {
            continue;
        }
        match pending {
            Some(p) if g.vwgt[p] + g.vwgt[u] <= max_vwgt => {
                mate[p] = u;
                mate[u] = p;
                pending = None;
            }
            _ => pending = Some(u),
        }
    }

    let mut cmap = vec![UNMATCHED; n];
    let mut coarse_n = 0;
    for u in 0..n {
        if cmap[u] != UNMATCHED {
            continue;
        }
        cmap[u] = coarse_n;
        if mate[u] != UNMATCHED {
            cmap[mate[u]] = coarse_n;
        }
        coarse_n += 1;
    }

    let mut members: Vec<Vec<usize>> = vec![Vec::with_capacity(2); coarse_n];
    for u in 0..n {
        members[cmap[u]].push(u);
    }
    let mut xadj = Vec::with_capacity(coarse_n + 1);
    let mut adjncy = Vec::new();
    let mut adjwgt = Vec::new();
    let mut vwgt = Vec::with_capacity(coarse_n);
    let mut slot = vec![UNMATCHED; coarse_n];
    let mut collapsed2 = 0u64;
    xadj.push(0);
    for (c, fine_nodes) in members.iter().enumerate() {
        let start = adjncy.len();
        let mut weight = 0;
        for &u in fine_nodes {
            weight += g.vwgt[u];
            for (v, w) in g.neighbors(u) {
                let cv = cmap[v];
                if cv == c {
                    collapsed2 += w;
                    continue;
                }
                if slot[cv] == UNMATCHED {
                    slot[cv] = adjncy.len();
                    adjncy.push(cv);
                    adjwgt.push(w);
                } else {
                    adjwgt[slot[cv]] += w;
                }
            }
        }
        for &cv in &adjncy[start..] {
            slot[cv] = UNMATCHED;
        }
        vwgt.push(weight);
        xadj.push(adjncy.len());
    }

    CoarseningLevel {
        coarse: WeightedGraph {
            xadj,
            adjncy,
            adjwgt,
            vwgt,
        },
        fine_to_coarse: cmap,
        collapsed_weight: collapsed2 / 2,
    }
}

struct Bounds {
    min: u64,
    max: u64,
}

impl Bounds {
    fn new(total: u64, k: usize, imbalance: f64) -> Self {
        let avg = total as f64 / k as f64;
        Self {
            min: (avg * (2.0 - imbalance)).floor() as u64,
            max: ((avg * imbalance).ceil() as u64).max(1),
        }
    }
}

/// Greedy graph growing: each region starts from a random unassigned node
/// and absorbs the frontier node most connected to it until it reaches the
/// average weight. The last region takes whatever is left.
fn grow_regions(g: &WeightedGraph, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = g.num_nodes();
    let target = g.total_vertex_weight() as f64 / k as f64;
    let mut part = vec![UNMATCHED; n];
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut cursor = 0;
    let mut unassigned = n;
    let mut conn = vec![0u64; n];

    for region in 0..k - 1 {
        let mut weight = 0u64;
        let mut heap: BinaryHeap<(u64, Reverse<usize>)> = BinaryHeap::new();
        let mut touched = Vec::new();
        while (weight as f64) < target && unassigned > k - 1 - region {
            let next = loop {
                match heap.pop() {
                    Some((gain, Reverse(v))) if part[v] == UNMATCHED && conn[v] == gain => {
                        break Some(v)
                    }
                    Some(_) => continue,
                    None => break None,
                }
            };
            let v = match next {
                Some(v) => v,
                None => {
                    while part[order[cursor]] != UNMATCHED {
                        cursor += 1;
                    }
                    order[cursor]
                }
            };
            let w = g.vwgt[v];
            if weight > 0 && (weight + w) as f64 - target > target - weight as f64 {
                break;
            }
            part[v] = region;
            unassigned -= 1;
            weight += w;
            for (u, ew) in g.neighbors(v) {
                if part[u] == UNMATCHED {
                    if conn[u] == 0 {
                        touched.push(u);
                    }
                    conn[u] += ew;
                    heap.push((conn[u], Reverse(u)));
                }
            }
        }
        for u in touched {
            conn[u] = 0;
        }
    }
    for p in part.iter_mut() {
        if *p == UNMATCHED {
            *p = k - 1;
        }
    }
    part
}

/// Connection weight from `v` into each cluster that `v` touches, plus the
/// weight into its own cluster.
fn connectivity(g: &WeightedGraph, part: &[usize], v: usize, buf: &mut Vec<(usize, u64)>) -> u64 {
    buf.clear();
    let own = part[v];
    let mut internal = 0;
    for (u, w) in g.neighbors(v) {
        let p = part[u];
        if p == own {
            internal += w;
        } else if let Some(e) = buf.iter_mut().find(|e| e.0 == p) {
            e.1 += w;
        } else {
            buf.push((p, w));
        }
    }
    internal
}

/// Moves nodes out of overweight clusters (and into underweight ones),
/// choosing the move with the least cut damage each time.
fn rebalance(g: &WeightedGraph, part: &mut [usize], k: usize, bounds: &Bounds) {
    let n = g.num_nodes();
    let mut weights = vec![0u64; k];
    for v in 0..n {
        weights[part[v]] += g.vwgt[v];
    }
    let mut buf = Vec::new();
    for _ in 0..2 * n {
        let heavy = (0..k).max_by_key(|&p| (weights[p], Reverse(p))).unwrap();
        let light = (0..k).min_by_key(|&p| (weights[p], p)).unwrap();
        let over = weights[heavy] > bounds.max;
        let under = weights[light] < bounds.min;
        if !over && !under {
            break;
        }
        let (from_filter, to_fixed) = if over {
            (Some(heavy), None)
        } else {
            (None, Some(light))
        };
        let mut best: Option<(i64, usize, usize)> = None;
        for v in 0..n {
            let from = part[v];
            if from_filter.is_some_and(|f| f != from) || to_fixed == Some(from) {
                continue;
            }
            let w = g.vwgt[v];
            if weights[from] < w + bounds.min.min(weights[from]) && !over {
                continue;
            }
            let internal = connectivity(g, part, v, &mut buf) as i64;
            let candidates: Vec<usize> = match to_fixed {
                Some(t) => vec![t],
                None => (0..k).filter(|&p| p != from).collect(),
            };
            for to in candidates {
                if weights[to] + w > bounds.max && weights[to] + w >= weights[from] {
                    continue;
                }
                let ext = buf.iter().find(|e| e.0 == to).map_or(0, |e| e.1) as i64;
                let gain = ext - internal;
                if best.is_none_or(|(bg, bv, bt)| {
                    (gain, Reverse(v), Reverse(to)) > (bg, Reverse(bv), Reverse(bt))
                }) {
                    best = Some((gain, v, to));
                }
            }
        }
        let Some((_, v, to)) = best else { break };
        let from = part[v];
        weights[from] -= g.vwgt[v];
        weights[to] += g.vwgt[v];
        part[v] = to;
    }
}

/// Runs boundary refinement on an arbitrary `k`-way assignment of `g`
/// with the configured imbalance. Returns the cut before and after.
pub fn refine_assignment(
    g: &WeightedGraph,
    part: &mut [usize],
    k: usize,
    config: &PartitionConfig,
) -> Result<(u64, u64)> {
    if part.len() != g.num_nodes() {
        return Err(Error::shape(
            "refine_assignment",
            format!("{} assignments for {} nodes", part.len(), g.num_nodes()),
        ));
    }
    if let Some(&c) = part.iter().find(|&&c| c >= k) {
        return Err(Error::InvalidArgument(format!(
            "cluster id {c} out of range for k = {k}"
        )));
    }
    let before = g.cut(part);
    let bounds = Bounds::new(g.total_vertex_weight(), k, config.imbalance);
    refine(g, part, k, &bounds, config.refine_passes);
    Ok((before, g.cut(part)))
}

/// Boundary refinement: a node moves to the adjacent cluster it is most
/// connected to when that strictly lowers the cut and keeps both clusters
/// within bounds.
fn refine(g: &WeightedGraph, part: &mut [usize], k: usize, bounds: &Bounds, passes: usize) {
    let n = g.num_nodes();
    let mut weights = vec![0u64; k];
    for v in 0..n {
        weights[part[v]] += g.vwgt[v];
    }
    let mut buf = Vec::new();
    for _ in 0..passes {
        let mut moved = false;
        for v in 0..n {
            let internal = connectivity(g, part, v, &mut buf);
            if buf.is_empty() {
                continue;
            }
            let from = part[v];
            let w = g.vwgt[v];
            if weights[from] < w || weights[from] - w < bounds.min {
                continue;
            }
            let mut best: Option<(u64, usize)> = None;
            for &(to, ext) in buf.iter() {
                if weights[to] + w > bounds.max {
                    continue;
                }
                if best.is_none_or(|(bw, bt)| ext > bw || (ext == bw && to < bt)) {
                    best = Some((ext, to));
                }
            }
            if let Some((ext, to)) = best {
                if ext > internal {
                    part[v] = to;
                    weights[from] -= w;
                    weights[to] += w;
                    moved = true;
                }
            }
        }
        if !moved {
            break;
        }
    }
}
