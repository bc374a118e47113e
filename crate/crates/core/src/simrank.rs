//! All-pairs SimRank over an undirected graph.
//!
//! Starting from `s₀ = I`, each iteration evaluates
//! `s_{k+1}(u,v) = c / (|N(u)|·|N(v)|) · Σ_{i∈N(u), j∈N(v)} s_k(i,j)` for
//! `u ≠ v` from a read-only snapshot of `s_k`, with `s_{k+1}(v,v) = 1`. Pairs
//! involving a node without neighbors score 0.
//!
//! The double sum is factored as `c · P s_k Pᵀ` with `P = D⁻¹A`, so one
//! iteration costs `O(n · |E|)` instead of `O(n² · d̄²)`.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::Graph;

/// Node count above which the dense `n²` score matrix triggers a warning.
pub const DENSE_WARN_NODES: usize = 5_000;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimRankConfig {
    pub decay: f64,
    pub max_iters: usize,
    pub tolerance: f64,
}

impl Default for SimRankConfig {
    fn default() -> Self {
        Self {
            decay: 0.8,
            max_iters: 10,
            tolerance: 1e-4,
        }
    }
}

impl SimRankConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "SimRank decay {} outside (0, 1)",
                self.decay
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidArgument(
                "SimRank max_iters must be >= 1".into(),
            ));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "SimRank tolerance {} must be > 0",
                self.tolerance
            )));
        }
        Ok(())
    }
}

/// Symmetric dense score matrix with unit diagonal and entries in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMatrix {
    n: usize,
    scores: Vec<f64>,
    decay: f64,
    iterations_run: usize,
    converged: bool,
}

impl SimilarityMatrix {
    pub fn identity(n: usize, decay: f64) -> Self {
        let mut scores = vec![0.0; n * n];
        for v in 0..n {
            scores[v * n + v] = 1.0;
        }
        Self {
            n,
            scores,
            decay,
            iterations_run: 0,
            converged: false,
        }
    }

    /// Wraps explicit row-major scores after checking the invariants.
    pub fn from_scores(n: usize, scores: Vec<f64>) -> Result<Self> {
        if scores.len() != n * n {
            return Err(Error::shape(
                "SimilarityMatrix::from_scores",
                format!("{} scores for {n} nodes", scores.len()),
            ));
        }
        for u in 0..n {
            if scores[u * n + u] != 1.0 {
                return Err(Error::InvalidArgument(format!("s({u},{u}) must be 1")));
            }
            for v in 0..n {
                let s = scores[u * n + v];
                if !(0.0..=1.0).contains(&s) || s != scores[v * n + u] {
                    return Err(Error::InvalidArgument(format!(
                        "s({u},{v}) = {s} breaks symmetry or [0,1] range"
                    )));
                }
            }
        }
        Ok(Self {
            n,
            scores,
            decay: f64::NAN,
            iterations_run: 0,
            converged: true,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.scores[u * self.n + v]
    }

    pub fn row(&self, u: usize) -> &[f64] {
        &self.scores[u * self.n..(u + 1) * self.n]
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn decay(&self) -> f64 {
        self.decay
    }

    pub fn iterations_run(&self) -> usize {
        self.iterations_run
    }

    pub fn converged(&self) -> bool {
        self.converged
    }

    pub fn max_abs_diff(&self, other: &SimilarityMatrix) -> f64 {
        self.scores
            .iter()
            .zip(&other.scores)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Unordered pairs `u < v` scoring at least `threshold`, sorted by `(u, v)`.
    pub fn pairs_at_or_above(&self, threshold: f64) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for u in 0..self.n {
            let row = self.row(u);
            for (v, &s) in row.iter().enumerate().skip(u + 1) {
                if s >= threshold {
                    out.push((u, v, s));
                }
            }
        }
        out
    }
}

pub fn pairs_at_or_above(sim: &SimilarityMatrix, threshold: f64) -> Vec<(usize, usize, f64)> {
    sim.pairs_at_or_above(threshold)
}

/// Stepwise SimRank evaluation; each [`step`](Self::step) produces the next
/// iterate from an immutable snapshot of the current one.
pub struct SimRankIteration<'g> {
    graph: &'g Graph,
    config: SimRankConfig,
    current: SimilarityMatrix,
    scratch: Vec<f64>,
}

impl<'g> SimRankIteration<'g> {
    pub fn new(graph: &'g Graph, config: SimRankConfig) -> Result<Self> {
        config.validate()?;
        let n = graph.num_nodes();
        if n > DENSE_WARN_NODES {
            warn!(
                "dense SimRank on {n} nodes needs about {} MiB per score buffer",
                (n * n * 8) >> 20
            );
        }
        Ok(Self {
            graph,
            config,
            current: SimilarityMatrix::identity(n, config.decay),
            scratch: vec![0.0; n * n],
        })
    }

    pub fn current(&self) -> &SimilarityMatrix {
        &self.current
    }

    /// Advances one iteration and returns the largest absolute change.
    pub fn step(&mut self) -> f64 {
        let n = self.graph.num_nodes();
        if n == 0 {
            self.current.iterations_run += 1;
            return 0.0;
        }
        let g = self.graph;
        let prev = &self.current.scores;

        // T = P · s_k: row u averages the rows of s_k over N(u).
        let mut t = std::mem::take(&mut self.scratch);
        t.par_chunks_mut(n).enumerate().for_each(|(u, t_row)| {
            t_row.iter_mut().for_each(|x| *x = 0.0);
            let nbrs = g.adjacency(u);
            if nbrs.is_empty() {
                return;
            }
            for &i in nbrs {
                for (x, &s) in t_row.iter_mut().zip(&prev[i * n..(i + 1) * n]) {
                    *x += s;
                }
            }
            let inv = 1.0 / nbrs.len() as f64;
            t_row.iter_mut().for_each(|x| *x *= inv);
        });

        // s_{k+1}(u, v) = c · mean_{j ∈ N(v)} T(u, j), upper triangle only.
        let c = self.config.decay;
        let mut next = vec![0.0; n * n];
        next.par_chunks_mut(n).enumerate().for_each(|(u, row)| {
            row[u] = 1.0;
            if g.adjacency(u).is_empty() {
                return;
            }
            let t_row = &t[u * n..(u + 1) * n];
            for (v, out) in row.iter_mut().enumerate().skip(u + 1) {
                let nbrs = g.adjacency(v);
                if nbrs.is_empty() {
                    continue;
                }
                let sum: f64 = nbrs.iter().map(|&j| t_row[j]).sum();
                *out = c * sum / nbrs.len() as f64;
            }
        });
        for u in 0..n {
            for v in u + 1..n {
                next[v * n + u] = next[u * n + v];
            }
        }

        let delta = next
            .par_iter()
            .zip(prev.par_iter())
            .map(|(a, b)| (a - b).abs())
            .reduce(|| 0.0, f64::max);
        self.scratch = t;
        self.current.scores = next;
        self.current.iterations_run += 1;
        delta
    }

    /// Iterates until the change drops below the tolerance or `max_iters`.
    pub fn run(mut self) -> SimilarityMatrix {
        while self.current.iterations_run < self.config.max_iters {
            let delta = self.step();
            if delta < self.config.tolerance {
                self.current.converged = true;
                break;
            }
        }
        self.current
    }
}

pub fn simrank(graph: &Graph, config: &SimRankConfig) -> Result<SimilarityMatrix> {
    Ok(SimRankIteration::new(graph, *config)?.run())
}

const CACHE_MAGIC: &[u8; 8] = b"SIMRANK1";

fn cache_key(graph: &Graph, config: &SimRankConfig) -> String {
    let mut h = Sha256::new();
    h.update(graph.structure_hash().as_bytes());
    h.update(config.decay.to_le_bytes());
    h.update((config.max_iters as u64).to_le_bytes());
    h.update(config.tolerance.to_le_bytes());
    h.finalize()[..12]
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn cache_path(dir: &Path, graph: &Graph, config: &SimRankConfig) -> PathBuf {
    dir.join(format!("simrank-{}.bin", cache_key(graph, config)))
}

/// Binary layout: `SIMRANK1`, then little-endian `n: u64`, `decay: f64`,
/// `max_iters: u64`, `tolerance: f64`, `iterations_run: u64`, `converged: u8`,
/// the 64-byte hex structure hash, and the `n²` row-major scores.
pub fn write_cache(
    path: &Path,
    graph: &Graph,
    config: &SimRankConfig,
    sim: &SimilarityMatrix,
) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let tmp = path.with_extension("tmp");
    let file = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    let mut w = BufWriter::new(file);
    let mut put = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(&tmp, e));
    put(CACHE_MAGIC)?;
    put(&(sim.n as u64).to_le_bytes())?;
    put(&config.decay.to_le_bytes())?;
    put(&(config.max_iters as u64).to_le_bytes())?;
    put(&config.tolerance.to_le_bytes())?;
    put(&(sim.iterations_run as u64).to_le_bytes())?;
    put(&[sim.converged as u8])?;
    put(graph.structure_hash().as_bytes())?;
    for s in &sim.scores {
        put(&s.to_le_bytes())?;
    }
    w.flush().map_err(|e| Error::io(&tmp, e))?;
    drop(w);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Returns `None` when the file is absent or belongs to another graph or
/// configuration.
pub fn read_cache(
    path: &Path,
    graph: &Graph,
    config: &SimRankConfig,
) -> Result<Option<SimilarityMatrix>> {
    let file = match fs::File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(Error::io(path, e)),
    };
    let mut r = BufReader::new(file);
    let mut take = |len: usize| -> Result<Vec<u8>> {
        let mut buf = vec![0u8; len];
        r.read_exact(&mut buf).map_err(|e| Error::io(path, e))?;
        Ok(buf)
    };
    let u64_at = |b: Vec<u8>| u64::from_le_bytes(b.try_into().unwrap());
    let f64_at = |b: Vec<u8>| f64::from_le_bytes(b.try_into().unwrap());
    if take(8)? != CACHE_MAGIC {
        return Err(Error::Format(format!(
            "{}: not a SimRank cache",
            path.display()
        )));
    }
    let n = u64_at(take(8)?) as usize;
    let decay = f64_at(take(8)?);
    let max_iters = u64_at(take(8)?) as usize;
    let tolerance = f64_at(take(8)?);
    let iterations_run = u64_at(take(8)?) as usize;
    let converged = take(1)?[0] != 0;
    let hash = take(64)?;
    if n != graph.num_nodes()
        || decay != config.decay
        || max_iters != config.max_iters
        || tolerance != config.tolerance
        || hash != graph.structure_hash().as_bytes()
    {
        return Ok(None);
    }
    let raw = take(n * n * 8)?;
    let scores = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Some(SimilarityMatrix {
        n,
        scores,
        decay,
        iterations_run,
        converged,
    }))
}

/// SimRank through an optional on-disk cache directory.
pub fn simrank_cached(
    graph: &Graph,
    config: &SimRankConfig,
    cache_dir: Option<&Path>,
) -> Result<SimilarityMatrix> {
    let Some(dir) = cache_dir else {
        return simrank(graph, config);
    };
    let path = cache_path(dir, graph, config);
    if let Some(sim) = read_cache(&path, graph, config)? {
        info!("SimRank cache hit {}", path.display());
        return Ok(sim);
    }
    let sim = simrank(graph, config)?;
    write_cache(&path, graph, config, &sim)?;
    Ok(sim)
}
