//! Training loop over the origin graph and its transitivity graph with
//! shared weights, plus evaluation.

use std::fmt::Write as _;
use std::str::FromStr;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Split};
use crate::metrics::Metrics;
use crate::model::{backward, forward, forward_lean, BackboneConfig, Branch, DualModel, Fault};
use crate::nn::{adam_step, AdamConfig, GradientSet, Matrix, ParameterStore};
use crate::objective::{
    combine, draw_ns_batch, sim_loss, supervised_ce_with, unsupervised_ns, LossCombo,
    NegativeSamplingConfig, NsBatch, Reduction, TermKind, TermValues,
};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ObjectiveMode {
    /// Cross-entropy on the training nodes of each graph.
    #[default]
    Supervised,
    /// Negative-sampling loss on each graph's embeddings.
    Unsupervised,
}

impl ObjectiveMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ObjectiveMode::Supervised => "supervised",
            ObjectiveMode::Unsupervised => "unsupervised",
        }
    }
}

impl FromStr for ObjectiveMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "supervised" => Ok(Self::Supervised),
            "unsupervised" => Ok(Self::Unsupervised),
            _ => Err(Error::InvalidArgument(format!(
                "unknown objective mode {s:?} (expected supervised or unsupervised)"
            ))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub backbone: BackboneConfig,
    pub combo: LossCombo,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    /// L2 penalty on weight matrices (not biases), added to the gradient.
    pub weight_decay: f64,
    pub reduction: Reduction,
    pub mode: ObjectiveMode,
    pub negatives: NegativeSamplingConfig,
    /// Start with a zero output layer so every class is equally likely.
    pub zero_init_head: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            backbone: BackboneConfig::gcn(),
            combo: LossCombo::base(),
            lr: 0.01,
            epochs: 200,
            seed: 0,
            weight_decay: 0.0,
            reduction: Reduction::Sum,
            mode: ObjectiveMode::Supervised,
            negatives: NegativeSamplingConfig::default(),
            zero_init_head: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be >= 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate {} must be > 0",
                self.lr
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::InvalidArgument("weight decay must be >= 0".into()));
        }
        if self.mode == ObjectiveMode::Unsupervised {
            self.negatives.validate()?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub total: f64,
    pub values: TermValues,
    pub train_accuracy: f64,
    pub val_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunHistory {
    pub records: Vec<EpochRecord>,
    /// Epoch whose parameters were kept (best validation accuracy).
    pub selected_epoch: usize,
}

impl RunHistory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.10}"));
        let mut out = String::from("epoch,total,base,trans,sim,train_acc,val_acc,selected\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{:.10},{},{},{},{:.6},{:.6},{}",
                r.epoch,
                r.total,
                opt(r.values.base),
                opt(r.values.trans),
                opt(r.values.sim),
                r.train_accuracy,
                r.val_accuracy,
                u8::from(r.epoch == self.selected_epoch)
            );
        }
        out
    }
}

/// Everything one evaluation of the objective needs besides the parameters.
pub struct ObjectiveInputs<'a> {
    pub branch_g: &'a Branch,
    /// `None` for single-branch (baseline) training.
    pub branch_t: Option<&'a Branch>,
    pub labels: &'a [usize],
    pub train_nodes: &'a [usize],
    /// Positive/negative draws for G and G″ (unsupervised mode only).
    pub ns_batches: Option<(&'a NsBatch, &'a NsBatch)>,
}

pub struct StepOutcome {
    /// Every term that could be computed, whether or not the combo uses it.
    pub values: TermValues,
    pub total: f64,
    pub grads: GradientSet,
    /// Signed per-term gradients, when requested.
    pub per_term: Option<Vec<(TermKind, f64, GradientSet)>>,
}

/// Upstream gradients a single term sends into each branch.
#[derive(Default)]
struct Upstream {
    g_logits: Option<Matrix>,
    g_emb: Option<Matrix>,
    t_logits: Option<Matrix>,
    t_emb: Option<Matrix>,
}

impl Upstream {
    fn add_scaled(&mut self, sign: f64, other: &Upstream) -> Result<()> {
        fn acc(dst: &mut Option<Matrix>, sign: f64, src: &Option<Matrix>) -> Result<()> {
            if let Some(s) = src {
                match dst {
                    Some(d) => d.axpy(sign, s)?,
                    None => *dst = Some(s.scale(sign)),
                }
            }
            Ok(())
        }
        acc(&mut self.g_logits, sign, &other.g_logits)?;
        acc(&mut self.g_emb, sign, &other.g_emb)?;
        acc(&mut self.t_logits, sign, &other.t_logits)?;
        acc(&mut self.t_emb, sign, &other.t_emb)
    }
}

/// Forward both branches, evaluate the combo, and backpropagate into one
/// gradient set over the shared parameters.
pub fn objective_step(
    config: &TrainConfig,
    params: &ParameterStore,
    inputs: &ObjectiveInputs<'_>,
    dropout: Option<(&mut dyn RngCore, &mut dyn RngCore)>,
    fault: Option<Fault>,
    per_term: bool,
) -> Result<StepOutcome> {
    let bb = &config.backbone;
    let (rng_g, rng_t) = match dropout {
        Some((a, b)) => (Some(a), Some(b)),
        None => (None, None),
    };
    let (out_g, cache_g) = forward_lean(bb, params, inputs.branch_g, rng_g)?;
    let t = match inputs.branch_t {
        Some(b) => Some(forward_lean(bb, params, b, rng_t)?),
        None => None,
    };

    let mut values = TermValues::default();
    let mut ups: Vec<(TermKind, Upstream)> = Vec::new();
    let graph_term = |logits: &Matrix,
                      emb: &Matrix,
                      batch: Option<&NsBatch>|
     -> Result<(f64, Matrix, bool)> {
        match config.mode {
            ObjectiveMode::Supervised => {
                let (v, g) = supervised_ce_with(
                    logits,
                    inputs.labels,
                    inputs.train_nodes,
                    config.reduction,
                    fault,
                )?;
                Ok((v, g, true))
            }
            ObjectiveMode::Unsupervised => {
                let batch = batch.ok_or_else(|| {
                    Error::InvalidArgument("unsupervised mode needs negative-sampling draws".into())
                })?;
                let (v, g) = unsupervised_ns(emb, batch)?;
                Ok((v, g, false))
            }
        }
    };

    let emb_g = out_g.trainable_embeddings(bb.kind);
    let (v, g, on_logits) = graph_term(&out_g.logits, emb_g, inputs.ns_batches.map(|b| b.0))?;
    values.base = Some(v);
    ups.push((
        TermKind::Base,
        if on_logits {
            Upstream {
                g_logits: Some(g),
                ..Default::default()
            }
        } else {
            Upstream {
                g_emb: Some(g),
                ..Default::default()
            }
        },
    ));
    if let Some((out_t, _)) = &t {
        let emb_t = out_t.trainable_embeddings(bb.kind);
        let (v, g, on_logits) = graph_term(&out_t.logits, emb_t, inputs.ns_batches.map(|b| b.1))?;
        values.trans = Some(v);
        ups.push((
            TermKind::Trans,
            if on_logits {
                Upstream {
                    t_logits: Some(g),
                    ..Default::default()
                }
            } else {
                Upstream {
                    t_emb: Some(g),
                    ..Default::default()
                }
            },
        ));
        let (v, da, db) = sim_loss(emb_g, emb_t)?;
        values.sim = Some(v);
        ups.push((
            TermKind::Sim,
            Upstream {
                g_emb: Some(da),
                t_emb: Some(db),
                ..Default::default()
            },
        ));
    }

    let total = combine(&values, &config.combo)?;
    let mut combined = Upstream::default();
    for term in config.combo.terms() {
        let (_, up) = ups
            .iter()
            .find(|(k, _)| *k == term.kind)
            .expect("combined term present");
        combined.add_scaled(term.sign, up)?;
    }

    let run_backward = |up: &Upstream| -> Result<GradientSet> {
        let mut grads = GradientSet::zeros_like(params);
        if up.g_logits.is_some() || up.g_emb.is_some() {
            let zeros = Matrix::zeros(out_g.logits.rows(), out_g.logits.cols());
            let gl = up.g_logits.as_ref().unwrap_or(&zeros);
            backward(
                bb,
                params,
                inputs.branch_g,
                &cache_g,
                gl,
                up.g_emb.as_ref(),
                &mut grads,
                fault,
            )?;
        }
        if up.t_logits.is_some() || up.t_emb.is_some() {
            let (out_t, cache_t) = t.as_ref().expect("transitivity branch ran");
            let branch_t = inputs.branch_t.expect("transitivity branch present");
            let zeros = Matrix::zeros(out_t.logits.rows(), out_t.logits.cols());
            let gl = up.t_logits.as_ref().unwrap_or(&zeros);
            backward(
                bb,
                params,
                branch_t,
                cache_t,
                gl,
                up.t_emb.as_ref(),
                &mut grads,
                fault,
            )?;
        }
        Ok(grads)
    };

    let grads = run_backward(&combined)?;
    let per_term = if per_term {
        let mut out = Vec::new();
        for term in config.combo.terms() {
            let (_, up) = ups
                .iter()
                .find(|(k, _)| *k == term.kind)
                .expect("term present");
            out.push((term.kind, term.sign, run_backward(up)?));
        }
        Some(out)
    } else {
        None
    };
    Ok(StepOutcome {
        values,
        total,
        grads,
        per_term,
    })
}

/// Checks that the combined gradient equals the signed sum of the per-term
/// gradients, to 1e-10 relative to the gradient scale.
pub fn check_gradient_additivity(outcome: &StepOutcome) -> Result<f64> {
    let terms = outcome
        .per_term
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("per-term gradients were not computed".into()))?;
    let mut sum = GradientSet::zeros_like_set(&outcome.grads);
    for (_, sign, g) in terms {
        sum.axpy(*sign, g)?;
    }
    let diff = sum.max_abs_diff(&outcome.grads);
    let scale = outcome.grads.max_abs().max(1.0);
    if diff > 1e-10 * scale {
        return Err(Error::Numeric(format!(
            "combined gradient deviates from the signed term sum by {diff:e}"
        )));
    }
    Ok(diff)
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Trains on `g` and its transitivity graph `g_trans` with shared weights.
pub fn train(config: &TrainConfig, g: &Graph, g_trans: &Graph) -> Result<(DualModel, RunHistory)> {
    fit(config, g, Some(g_trans))
}

/// The same loop with only the origin branch and the `base` loss.
pub fn run_baseline(config: &TrainConfig, g: &Graph) -> Result<(DualModel, RunHistory)> {
    let config = TrainConfig {
        combo: LossCombo::base(),
        ..config.clone()
    };
    fit(&config, g, None)
}

fn fit(
    config: &TrainConfig,
    g: &Graph,
    g_trans: Option<&Graph>,
) -> Result<(DualModel, RunHistory)> {
    config.validate()?;
    if g_trans.is_none() && config.combo.needs_trans_branch() {
        return Err(Error::InvalidArgument(format!(
            "combo {} needs a transitivity graph",
            config.combo
        )));
    }
    let train_nodes = g.nodes_in(Split::Train);
    if train_nodes.is_empty() {
        return Err(Error::InvalidArgument("training split is empty".into()));
    }
    let val_nodes = g.nodes_in(Split::Val);

    let mut init_rng = stream_rng(config.seed, 0);
    let mut model = DualModel::new(
        config.backbone.clone(),
        g,
        g_trans.unwrap_or(g),
        &mut init_rng,
    )?;
    if config.zero_init_head {
        let head = model.params.len() - 2;
        model.params.value_mut(head).data_mut().fill(0.0);
    }
    let mut drop_g = stream_rng(config.seed, 1);
    let mut drop_t = stream_rng(config.seed, 2);
    let mut ns_rng = stream_rng(config.seed, 3);
    let adam = AdamConfig::with_lr(config.lr);
    let labels = g.labels();

    let mut records = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, ParameterStore)> = None;
    for epoch in 0..config.epochs {
        let batches = match (config.mode, g_trans) {
            (ObjectiveMode::Unsupervised, gt) => {
                let bg = draw_ns_batch(g, &train_nodes, &config.negatives, &mut ns_rng)?;
                let bt = draw_ns_batch(
                    gt.unwrap_or(g),
                    &train_nodes,
                    &config.negatives,
                    &mut ns_rng,
                )?;
                Some((bg, bt))
            }
            (ObjectiveMode::Supervised, _) => None,
        };
        let inputs = ObjectiveInputs {
            branch_g: &model.branch_g,
            branch_t: g_trans.map(|_| &model.branch_t),
            labels,
            train_nodes: &train_nodes,
            ns_batches: batches.as_ref().map(|(a, b)| (a, b)),
        };
        let outcome = objective_step(
            config,
            &model.params,
            &inputs,
            Some((&mut drop_g, &mut drop_t)),
            None,
            epoch == 0,
        )?;
        if !outcome.total.is_finite() {
            return Err(Error::NonFinite(format!("training loss at epoch {epoch}")));
        }
        if epoch == 0 {
            check_gradient_additivity(&outcome)?;
        }
        let mut grads = outcome.grads;
        grads.ensure_finite()?;
        if config.weight_decay > 0.0 {
            for i in 0..model.params.len() {
                if model.params.parameter(i).name.ends_with(".weight") {
                    let w = model.params.value(i).clone();
                    grads.get_mut(i).axpy(config.weight_decay, &w)?;
                }
            }
        }
        adam_step(&mut model.params, &grads, &adam)?;

        let (out, _) = forward_lean(&model.backbone, &model.params, &model.branch_g, None)?;
        let train_accuracy = accuracy_on(&out.logits, labels, &train_nodes);
        let val_accuracy = accuracy_on(&out.logits, labels, &val_nodes);
        // Without validation nodes the last epoch is kept.
        let improves =
            val_nodes.is_empty() || best.as_ref().is_none_or(|(acc, _, _)| val_accuracy > *acc);
        if improves {
            best = Some((val_accuracy, epoch, model.params.clone()));
        }
        records.push(EpochRecord {
            epoch,
            total: outcome.total,
            values: outcome.values,
            train_accuracy,
            val_accuracy,
        });
    }
    let (_, selected_epoch, params) = best.expect("at least one epoch");
    model.params = params;
    Ok((
        model,
        RunHistory {
            records,
            selected_epoch,
        },
    ))
}

fn accuracy_on(logits: &Matrix, labels: &[usize], nodes: &[usize]) -> f64 {
    if nodes.is_empty() {
        return 0.0;
    }
    let correct = nodes
        .iter()
        .filter(|&&v| logits.argmax_row(v) == labels[v])
        .count();
    correct as f64 / nodes.len() as f64
}

/// Predictions for every node of `g`, read from the origin-branch logits
/// computed on `g`'s own structure.
pub fn predict(model: &DualModel, g: &Graph) -> Result<Vec<usize>> {
    let branch = Branch::new(&model.backbone, g)?;
    let (out, _) = forward(&model.backbone, &model.params, &branch, None)?;
    Ok((0..out.logits.rows())
        .map(|v| out.logits.argmax_row(v))
        .collect())
}

/// Accuracy and weighted F1 on one split, using `g`'s structure.
pub fn evaluate(model: &DualModel, g: &Graph, split: Split) -> Result<Metrics> {
    let nodes = g.nodes_in(split);
    if nodes.is_empty() {
        return Err(Error::InvalidArgument(format!("split {split} is empty")));
    }
    let pred = predict(model, g)?;
    let labels = g.labels();
    let p: Vec<usize> = nodes.iter().map(|&v| pred[v]).collect();
    let t: Vec<usize> = nodes.iter().map(|&v| labels[v]).collect();
    Metrics::from_predictions(&p, &t, g.num_classes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::NodeData;
    use crate::nn::SparseMatrix;
    use std::sync::Arc;

    fn tiny(n_per: usize) -> Graph {
        let n = 2 * n_per;
        let mut trip = Vec::new();
        let mut labels = Vec::new();
        let mut split = Vec::new();
        for v in 0..n {
            let c = v / n_per;
            trip.push((v, c, 1.0));
            labels.push(c);
            split.push(if v % n_per < 2 {
                Split::Train
            } else {
                Split::Val
            });
        }
        let x = SparseMatrix::from_triplets(n, 2, trip).unwrap();
        let data = Arc::new(NodeData::new(x, labels, split, 2).unwrap());
        let mut edges = Vec::new();
        for c in 0..2 {
            for i in 0..n_per - 1 {
                edges.push((c * n_per + i, c * n_per + i + 1));
            }
        }
        Graph::new(data, edges).unwrap()
    }

    #[test]
    fn zero_head_starts_uniform() {
        let g = tiny(4);
        let cfg = TrainConfig {
            epochs: 1,
            zero_init_head: true,
            ..Default::default()
        };
        let (_, h) = run_baseline(&cfg, &g).unwrap();
        assert_eq!(h.len(), 1);
        assert!((h.records[0].total / 4.0 - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn combo_without_trans_graph_rejected() {
        let g = tiny(3);
        let cfg = TrainConfig {
            combo: "base+trans".parse().unwrap(),
            ..Default::default()
        };
        assert!(fit(&cfg, &g, None).is_err());
    }

    #[test]
    fn history_csv_shape() {
        let g = tiny(3);
        let cfg = TrainConfig {
            epochs: 3,
            ..Default::default()
        };
        let (_, h) = run_baseline(&cfg, &g).unwrap();
        let csv = h.to_csv();
        assert_eq!(csv.lines().count(), 4);
        assert_eq!(csv.lines().filter(|l| l.ends_with(",1")).count(), 1);
    }

    #[test]
    fn mode_parsing() {
        assert_eq!(
            "unsupervised".parse::<ObjectiveMode>().unwrap(),
            ObjectiveMode::Unsupervised
        );
        assert!("semi".parse::<ObjectiveMode>().is_err());
    }
}
