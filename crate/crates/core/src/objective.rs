//! Loss terms and their signed combination.
//!
//! Every term returns its value together with the gradient w.r.t. its
//! input matrix; the trainer chains those through the backbone.

use std::fmt;
use std::str::FromStr;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::model::Fault;
use crate::nn::{dot, ops, Matrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TermKind {
    /// Loss on the origin graph.
    Base,
    /// The same loss on the transitivity graph.
    Trans,
    /// `1 - cosine` between the two branches' embeddings.
    Sim,
}

impl TermKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TermKind::Base => "base",
            TermKind::Trans => "trans",
            TermKind::Sim => "sim",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossTerm {
    pub kind: TermKind,
    /// +1 or -1.
    pub sign: f64,
}

/// Signed sum of loss terms, written `base`, `base+trans`, `base+trans-sim`, ...
#[derive(Clone, Debug, PartialEq)]
pub struct LossCombo {
    terms: Vec<LossTerm>,
}

pub const COMBO_SYNTAX: &str = "base, base+trans, base+sim, base+trans+sim, base+trans-sim";

/// The ablation set, in report order.
pub const ABLATION_COMBOS: [&str; 5] = [
    "base",
    "base+trans",
    "base+sim",
    "base+trans+sim",
    "base+trans-sim",
];

impl LossCombo {
    pub fn base() -> Self {
        Self {
            terms: vec![LossTerm {
                kind: TermKind::Base,
                sign: 1.0,
            }],
        }
    }

    pub fn terms(&self) -> &[LossTerm] {
        &self.terms
    }

    /// Sign of `kind`, or `None` when the combo omits it.
    pub fn sign(&self, kind: TermKind) -> Option<f64> {
        self.terms.iter().find(|t| t.kind == kind).map(|t| t.sign)
    }

    pub fn uses(&self, kind: TermKind) -> bool {
        self.sign(kind).is_some()
    }

    /// True when the transitivity branch influences training.
    pub fn needs_trans_branch(&self) -> bool {
        self.uses(TermKind::Trans) || self.uses(TermKind::Sim)
    }
}

impl fmt::Display for LossCombo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, t) in self.terms.iter().enumerate() {
            if i > 0 {
                f.write_str(if t.sign > 0.0 { "+" } else { "-" })?;
            }
            f.write_str(t.kind.as_str())?;
        }
        Ok(())
    }
}

impl FromStr for LossCombo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |why: &str| {
            Error::InvalidArgument(format!(
                "bad loss combo {s:?}: {why}; valid: {COMBO_SYNTAX}"
            ))
        };
        let s = s.trim().replace(' ', "");
        let mut terms: Vec<LossTerm> = Vec::new();
        let mut sign = 1.0;
        let mut rest = s.as_str();
        loop {
            let end = rest.find(['+', '-']).unwrap_or(rest.len());
            let kind = match &rest[..end] {
                "base" => TermKind::Base,
                "trans" => TermKind::Trans,
                "sim" => TermKind::Sim,
                other => return Err(bad(&format!("unknown term {other:?}"))),
            };
            if terms.iter().any(|t| t.kind == kind) {
                return Err(bad("duplicate term"));
            }
            terms.push(LossTerm { kind, sign });
            if end == rest.len() {
                break;
            }
            sign = if rest.as_bytes()[end] == b'+' {
                1.0
            } else {
                -1.0
            };
            rest = &rest[end + 1..];
        }
        if terms[0].kind != TermKind::Base {
            return Err(bad("must start with base"));
        }
        Ok(Self { terms })
    }
}

/// Per-term loss values; absent terms are `None`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TermValues {
    pub base: Option<f64>,
    pub trans: Option<f64>,
    pub sim: Option<f64>,
}

impl TermValues {
    pub fn get(&self, kind: TermKind) -> Option<f64> {
        match kind {
            TermKind::Base => self.base,
            TermKind::Trans => self.trans,
            TermKind::Sim => self.sim,
        }
    }
}

/// `Σ sign · value` over the combo's terms.
pub fn combine(values: &TermValues, combo: &LossCombo) -> Result<f64> {
    combo.terms.iter().try_fold(0.0, |acc, t| {
        values
            .get(t.kind)
            .map(|v| acc + t.sign * v)
            .ok_or_else(|| Error::InvalidArgument(format!("no value for term {}", t.kind.as_str())))
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Reduction {
    /// Sum over training nodes.
    #[default]
    Sum,
    /// Mean over training nodes.
    Mean,
}

/// `-Σ_{v ∈ mask} log softmax(logits_v)[label_v]` and its gradient w.r.t. the logits.
pub fn supervised_ce(logits: &Matrix, labels: &[usize], mask: &[usize]) -> Result<(f64, Matrix)> {
    supervised_ce_with(logits, labels, mask, Reduction::Sum, None)
}

pub fn supervised_ce_with(
    logits: &Matrix,
    labels: &[usize],
    mask: &[usize],
    reduction: Reduction,
    fault: Option<Fault>,
) -> Result<(f64, Matrix)> {
    if mask.is_empty() {
        return Err(Error::InvalidArgument("training mask is empty".into()));
    }
    if labels.len() != logits.rows() {
        return Err(Error::shape(
            "supervised_ce",
            format!("{} labels for {} logit rows", labels.len(), logits.rows()),
        ));
    }
    let classes = logits.cols();
    let scale = match reduction {
        Reduction::Sum => 1.0,
        Reduction::Mean => 1.0 / mask.len() as f64,
    };
    let log_probs = ops::log_softmax_rows(logits);
    let mut upstream = Matrix::zeros(logits.rows(), classes);
    let mut loss = 0.0;
    for &v in mask {
        if v >= logits.rows() {
            return Err(Error::NodeOutOfRange {
                index: v,
                num_nodes: logits.rows(),
            });
        }
        let y = labels[v];
        if y >= classes {
            return Err(Error::InvalidArgument(format!(
                "label {y} of node {v} out of range for {classes} classes"
            )));
        }
        loss -= log_probs.row(v)[y];
        upstream.row_mut(v)[y] -= scale;
    }
    let grad = match fault {
        Some(Fault::LogSoftmaxNoCorrection) => upstream,
        _ => ops::log_softmax_rows_backward(&log_probs, &upstream)?,
    };
    Ok((loss * scale, grad))
}

#[derive(Clone, Debug, PartialEq)]
pub struct NegativeSamplingConfig {
    /// Negatives per positive pair.
    pub q: usize,
    /// Positives come from random walks instead of direct neighbors.
    pub use_walks: bool,
    pub walk_length: usize,
    pub walks_per_node: usize,
    pub reduction: Reduction,
}

impl Default for NegativeSamplingConfig {
    fn default() -> Self {
        Self {
            q: 5,
            use_walks: false,
            walk_length: 3,
            walks_per_node: 2,
            reduction: Reduction::Sum,
        }
    }
}

impl NegativeSamplingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.q == 0 {
            return Err(Error::InvalidArgument(
                "negative count q must be >= 1".into(),
            ));
        }
        if self.use_walks && (self.walk_length == 0 || self.walks_per_node == 0) {
            return Err(Error::InvalidArgument(
                "walk length and count must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// `P(v) ∝ degree(v)^0.75`.
pub fn negative_distribution(graph: &Graph) -> Vec<f64> {
    let w: Vec<f64> = (0..graph.num_nodes())
        .map(|v| (graph.adjacency(v).len() as f64).powf(0.75))
        .collect();
    let total: f64 = w.iter().sum();
    if total == 0.0 {
        return w;
    }
    w.into_iter().map(|x| x / total).collect()
}

/// Positive pairs `(v, u)` and, for pair `i`, negatives
/// `negatives[i*q .. (i+1)*q]`.
#[derive(Clone, Debug, PartialEq)]
pub struct NsBatch {
    pub pairs: Vec<(usize, usize)>,
    pub negatives: Vec<usize>,
    pub q: usize,
    /// Node count the reduction divides by under [`Reduction::Mean`].
    pub num_anchors: usize,
    pub reduction: Reduction,
}

/// Draws positives from `N_G(v)` for every `v` in `anchors` and `q`
/// degree-weighted negatives per positive. Anchors without neighbors add
/// nothing.
pub fn draw_ns_batch(
    graph: &Graph,
    anchors: &[usize],
    config: &NegativeSamplingConfig,
    rng: &mut impl Rng,
) -> Result<NsBatch> {
    config.validate()?;
    let mut pairs = Vec::new();
    for &v in anchors {
        if v >= graph.num_nodes() {
            return Err(Error::NodeOutOfRange {
                index: v,
                num_nodes: graph.num_nodes(),
            });
        }
        if graph.adjacency(v).is_empty() {
            continue;
        }
        if config.use_walks {
            for _ in 0..config.walks_per_node {
                let mut at = v;
                for _ in 0..config.walk_length {
                    let nbrs = graph.adjacency(at);
                    at = nbrs[rng.random_range(0..nbrs.len())];
                    if at != v {
                        pairs.push((v, at));
                    }
                }
            }
        } else {
            pairs.extend(graph.adjacency(v).iter().map(|&u| (v, u)));
        }
    }
    let negatives = if pairs.is_empty() {
        Vec::new()
    } else {
        let dist = WeightedIndex::new(negative_distribution(graph))
            .map_err(|e| Error::InvalidArgument(format!("negative distribution: {e}")))?;
        (0..pairs.len() * config.q)
            .map(|_| dist.sample(rng))
            .collect()
    };
    Ok(NsBatch {
        pairs,
        negatives,
        q: config.q,
        num_anchors: anchors.len(),
        reduction: config.reduction,
    })
}

/// `log σ(x)` without overflow.
fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `Σ_(v,u) [ -log σ(z_v·z_u) - Σ_q log σ(-z_v·z_{n_q}) ]` over a drawn batch.
pub fn unsupervised_ns(embeddings: &Matrix, batch: &NsBatch) -> Result<(f64, Matrix)> {
    if batch.negatives.len() != batch.pairs.len() * batch.q {
        return Err(Error::shape(
            "unsupervised_ns",
            format!(
                "{} negatives for {} pairs with q = {}",
                batch.negatives.len(),
                batch.pairs.len(),
                batch.q
            ),
        ));
    }
    let n = embeddings.rows();
    let in_range = |i: usize| {
        if i < n {
            Ok(i)
        } else {
            Err(Error::NodeOutOfRange {
                index: i,
                num_nodes: n,
            })
        }
    };
    let scale = match batch.reduction {
        Reduction::Sum => 1.0,
        Reduction::Mean if batch.num_anchors > 0 => 1.0 / batch.num_anchors as f64,
        Reduction::Mean => 0.0,
    };
    let mut grad = Matrix::zeros(n, embeddings.cols());
    let mut loss = 0.0;
    let push = |grad: &mut Matrix, a: usize, b: usize, coef: f64| {
        for (g, &x) in grad.row_mut(a).iter_mut().zip(embeddings.row(b)) {
            *g += coef * x;
        }
    };
    for (i, &(v, u)) in batch.pairs.iter().enumerate() {
        let (v, u) = (in_range(v)?, in_range(u)?);
        let x = dot(embeddings.row(v), embeddings.row(u));
        loss -= log_sigmoid(x);
        let c = scale * (sigmoid(x) - 1.0);
        push(&mut grad, v, u, c);
        push(&mut grad, u, v, c);
        for &neg in &batch.negatives[i * batch.q..(i + 1) * batch.q] {
            let neg = in_range(neg)?;
            let y = dot(embeddings.row(v), embeddings.row(neg));
            loss -= log_sigmoid(-y);
            let c = scale * sigmoid(y);
            push(&mut grad, v, neg, c);
            push(&mut grad, neg, v, c);
        }
    }
    Ok((loss * scale, grad))
}

/// Mean over rows of `1 - cos(a_v, b_v)`, with gradients for both inputs.
/// A row pair with a zero-norm side counts as cosine 0.
pub fn sim_loss(a: &Matrix, b: &Matrix) -> Result<(f64, Matrix, Matrix)> {
    let cos = ops::cosine_rows(a, b)?;
    let n = cos.len();
    if n == 0 {
        return Ok((0.0, a.clone(), b.clone()));
    }
    let value = cos.iter().map(|c| 1.0 - c).sum::<f64>() / n as f64;
    let grad_cos = vec![-1.0 / n as f64; n];
    let (da, db) = ops::cosine_rows_backward(a, b, &grad_cos)?;
    Ok((value, da, db))
}
