//! GCN and SGC backbones and the shared-weight dual-branch model.
//!
//! Both branches read the same [`ParameterStore`]; a branch is just an
//! operator plus its (possibly pre-propagated) input features. Backward
//! passes accumulate into a caller-supplied [`GradientSet`], so gradients
//! from the two branches add up in place.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{normalized_adjacency, Graph, NormalizedAdjacency};
use crate::nn::{glorot_uniform, ops, GradientSet, Matrix, ParameterStore, SparseMatrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BackboneKind {
    Gcn,
    Sgc,
}

impl BackboneKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BackboneKind::Gcn => "gcn",
            BackboneKind::Sgc => "sgc",
        }
    }
}

impl fmt::Display for BackboneKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BackboneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gcn" => Ok(BackboneKind::Gcn),
            "sgc" => Ok(BackboneKind::Sgc),
            _ => Err(Error::InvalidArgument(format!(
                "unknown backbone {s:?} (expected gcn or sgc)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BackboneConfig {
    pub kind: BackboneKind,
    pub hidden_dim: usize,
    /// GCN only.
    pub num_layers: usize,
    /// SGC propagation depth.
    pub sgc_k: usize,
    /// Inverted dropout on the layer inputs during training; 0 disables it.
    pub dropout: f64,
}

impl BackboneConfig {
    pub fn gcn() -> Self {
        Self {
            kind: BackboneKind::Gcn,
            hidden_dim: 32,
            num_layers: 2,
            sgc_k: 1,
            dropout: 0.0,
        }
    }

    pub fn sgc() -> Self {
        Self {
            kind: BackboneKind::Sgc,
            ..Self::gcn()
        }
    }

    pub fn of_kind(kind: BackboneKind) -> Self {
        match kind {
            BackboneKind::Gcn => Self::gcn(),
            BackboneKind::Sgc => Self::sgc(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 {
            return Err(Error::InvalidArgument("hidden_dim must be >= 1".into()));
        }
        if self.kind == BackboneKind::Gcn && self.num_layers == 0 {
            return Err(Error::InvalidArgument("num_layers must be >= 1".into()));
        }
        if self.kind == BackboneKind::Sgc && self.sgc_k == 0 {
            return Err(Error::InvalidArgument("sgc_k must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidArgument(format!(
                "dropout {} must lie in [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }

    fn layer_dims(&self, in_dim: usize, num_classes: usize) -> Vec<(usize, usize)> {
        match self.kind {
            BackboneKind::Sgc => vec![(in_dim, num_classes)],
            BackboneKind::Gcn => (0..self.num_layers)
                .map(|l| {
                    let fan_in = if l == 0 { in_dim } else { self.hidden_dim };
                    let fan_out = if l + 1 == self.num_layers {
                        num_classes
                    } else {
                        self.hidden_dim
                    };
                    (fan_in, fan_out)
                })
                .collect(),
        }
    }

    /// Glorot-uniform weights and zero biases named `layer{l}.weight` /
    /// `layer{l}.bias`.
    pub fn init_params(
        &self,
        in_dim: usize,
        num_classes: usize,
        rng: &mut impl Rng,
    ) -> Result<ParameterStore> {
        self.validate()?;
        let mut store = ParameterStore::new();
        for (l, (fan_in, fan_out)) in self.layer_dims(in_dim, num_classes).into_iter().enumerate() {
            store.insert(
                format!("layer{l}.weight"),
                glorot_uniform(fan_in, fan_out, rng),
            )?;
            store.insert(format!("layer{l}.bias"), Matrix::zeros(1, fan_out))?;
        }
        Ok(store)
    }
}

/// Deliberately wrong backward rules used as negative controls for the
/// gradient checker.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// ReLU backward passes the gradient through where the input was negative.
    ReluPassThrough,
    /// Log-softmax backward drops the softmax correction term.
    LogSoftmaxNoCorrection,
}

/// Operator and input features for one branch. For SGC the input is
/// `S^k X`, propagated once up front.
#[derive(Clone, Debug)]
pub struct Branch {
    operator: NormalizedAdjacency,
    input: SparseMatrix,
}

impl Branch {
    pub fn new(config: &BackboneConfig, graph: &Graph) -> Result<Self> {
        Self::with_operator(
            config,
            normalized_adjacency(graph),
            graph.features().clone(),
        )
    }

    pub fn with_operator(
        config: &BackboneConfig,
        operator: NormalizedAdjacency,
        features: SparseMatrix,
    ) -> Result<Self> {
        config.validate()?;
        if operator.num_nodes() != features.rows() {
            return Err(Error::shape(
                "Branch",
                format!(
                    "operator over {} nodes, features have {} rows",
                    operator.num_nodes(),
                    features.rows()
                ),
            ));
        }
        let input = match config.kind {
            BackboneKind::Gcn => features,
            BackboneKind::Sgc => propagate(&operator, &features, config.sgc_k)?,
        };
        Ok(Self { operator, input })
    }

    pub fn operator(&self) -> &NormalizedAdjacency {
        &self.operator
    }

    pub fn input(&self) -> &SparseMatrix {
        &self.input
    }

    pub fn num_nodes(&self) -> usize {
        self.input.rows()
    }
}

/// `S^k X` by `k` successive sparse products.
pub fn propagate(
    operator: &NormalizedAdjacency,
    features: &SparseMatrix,
    k: usize,
) -> Result<SparseMatrix> {
    let mut x = features.clone();
    for _ in 0..k {
        x = operator.matrix().mul_sparse(&x)?;
    }
    Ok(x)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BranchOutput {
    /// Last hidden layer for GCN; `S^k X` for SGC.
    pub embeddings: Matrix,
    pub logits: Matrix,
}

impl BranchOutput {
    /// Representation used by the embedding losses. For SGC this is the
    /// logits, because `S^k X` carries no trainable parameters.
    pub fn trainable_embeddings(&self, kind: BackboneKind) -> &Matrix {
        match kind {
            BackboneKind::Gcn => &self.embeddings,
            BackboneKind::Sgc => &self.logits,
        }
    }
}

struct LayerCache {
    /// Dense layer input after dropout; `None` for the first layer, whose
    /// input is the (dropped-out) sparse feature matrix.
    input: Option<Matrix>,
    pre_activation: Matrix,
    /// Inverted-dropout scale per input entry of a dense layer.
    mask: Option<Vec<f64>>,
}

/// Intermediates kept by [`forward`] for [`backward`].
pub struct ForwardCache {
    sparse_input: SparseMatrix,
    layers: Vec<LayerCache>,
}

/// Runs one branch. Dropout is applied only when `dropout_rng` is given.
pub fn forward(
    config: &BackboneConfig,
    params: &ParameterStore,
    branch: &Branch,
    dropout_rng: Option<&mut dyn rand::RngCore>,
) -> Result<(BranchOutput, ForwardCache)> {
    forward_impl(config, params, branch, dropout_rng, true)
}

/// Like [`forward`], but leaves the SGC `embeddings` empty: training only
/// needs the logits, and densifying `S^k X` every step is wasted work.
pub(crate) fn forward_lean(
    config: &BackboneConfig,
    params: &ParameterStore,
    branch: &Branch,
    dropout_rng: Option<&mut dyn rand::RngCore>,
) -> Result<(BranchOutput, ForwardCache)> {
    forward_impl(config, params, branch, dropout_rng, false)
}

fn forward_impl(
    config: &BackboneConfig,
    params: &ParameterStore,
    branch: &Branch,
    dropout_rng: Option<&mut dyn rand::RngCore>,
    dense_sgc_embeddings: bool,
) -> Result<(BranchOutput, ForwardCache)> {
    let p = config.dropout;
    let mut rng = dropout_rng.filter(|_| p > 0.0);
    let num_layers = params.len() / 2;
    if num_layers == 0 {
        return Err(Error::InvalidArgument("parameter store is empty".into()));
    }
    let keep = 1.0 / (1.0 - p);
    let sparse_input = match rng.as_deref_mut() {
        Some(r) => branch
            .input
            .map_values(|_, v| if r.random::<f64>() < p { 0.0 } else { v * keep }),
        None => branch.input.clone(),
    };

    let mut layers = Vec::with_capacity(num_layers);
    let mut hidden: Option<Matrix> = None;
    let mut last_hidden = None;
    for l in 0..num_layers {
        let w = params.value(2 * l);
        let b = params.value(2 * l + 1);
        let (input, mask, xw) = match hidden.take() {
            None => (None, None, sparse_input.mul_dense(w)?),
            Some(h) => {
                let (h, mask) = match rng.as_deref_mut() {
                    Some(r) => {
                        let mask: Vec<f64> = (0..h.data().len())
                            .map(|_| if r.random::<f64>() < p { 0.0 } else { keep })
                            .collect();
                        let mut h = h;
                        for (x, m) in h.data_mut().iter_mut().zip(&mask) {
                            *x *= m;
                        }
                        (h, Some(mask))
                    }
                    None => (h, None),
                };
                let xw = ops::matmul(&h, w)?;
                (Some(h), mask, xw)
            }
        };
        let propagated = match config.kind {
            BackboneKind::Gcn => ops::sparse_dense_matmul(branch.operator.matrix(), &xw)?,
            BackboneKind::Sgc => xw,
        };
        let z = ops::add_bias(&propagated, b)?;
        if l + 1 < num_layers {
            let h = ops::relu(&z);
            last_hidden = Some(h.clone());
            hidden = Some(h);
        }
        layers.push(LayerCache {
            input,
            pre_activation: z,
            mask,
        });
    }
    let logits = layers
        .last()
        .expect("at least one layer")
        .pre_activation
        .clone();
    logits.ensure_finite("logits")?;
    let embeddings = match (config.kind, last_hidden) {
        (BackboneKind::Gcn, Some(h)) => h,
        (BackboneKind::Gcn, None) => logits.clone(),
        (BackboneKind::Sgc, _) if dense_sgc_embeddings => branch.input.to_dense(),
        (BackboneKind::Sgc, _) => Matrix::zeros(0, 0),
    };
    Ok((
        BranchOutput { embeddings, logits },
        ForwardCache {
            sparse_input,
            layers,
        },
    ))
}

/// Accumulates parameter gradients into `grads` given upstream gradients
/// w.r.t. the logits and, optionally, w.r.t. [`BranchOutput::trainable_embeddings`].
pub fn backward(
    config: &BackboneConfig,
    params: &ParameterStore,
    branch: &Branch,
    cache: &ForwardCache,
    grad_logits: &Matrix,
    grad_embeddings: Option<&Matrix>,
    grads: &mut GradientSet,
    fault: Option<Fault>,
) -> Result<()> {
    let num_layers = cache.layers.len();
    let mut g = grad_logits.clone();
    if let Some(ge) = grad_embeddings {
        if config.kind == BackboneKind::Sgc || num_layers == 1 {
            g.axpy(1.0, ge)?;
        }
    }
    for l in (0..num_layers).rev() {
        let layer = &cache.layers[l];
        let (g_prop, g_bias) = ops::add_bias_backward(&g);
        grads.get_mut(2 * l + 1).axpy(1.0, &g_bias)?;
        let g_xw = match config.kind {
            BackboneKind::Gcn => {
                ops::sparse_dense_matmul_backward(branch.operator.matrix(), &g_prop)?
            }
            BackboneKind::Sgc => g_prop,
        };
        let w = params.value(2 * l);
        match &layer.input {
            None => {
                let g_w = cache.sparse_input.t_mul_dense(&g_xw)?;
                grads.get_mut(2 * l).axpy(1.0, &g_w)?;
            }
            Some(h) => {
                let (mut g_h, g_w) = ops::matmul_backward(h, w, &g_xw)?;
                grads.get_mut(2 * l).axpy(1.0, &g_w)?;
                if let Some(mask) = &layer.mask {
                    for (x, m) in g_h.data_mut().iter_mut().zip(mask) {
                        *x *= m;
                    }
                }
                // Embeddings are read before dropout, so their gradient
                // joins after the mask.
                if l == num_layers - 1 {
                    if let Some(ge) = grad_embeddings {
                        g_h.axpy(1.0, ge)?;
                    }
                }
                let z_prev = &cache.layers[l - 1].pre_activation;
                g = match fault {
                    Some(Fault::ReluPassThrough) => g_h,
                    _ => ops::relu_backward(z_prev, &g_h)?,
                };
            }
        }
    }
    Ok(())
}

/// Shared parameters plus the operators of both graphs.
#[derive(Clone, Debug)]
pub struct DualModel {
    pub backbone: BackboneConfig,
    pub params: ParameterStore,
    pub branch_g: Branch,
    pub branch_t: Branch,
}

impl DualModel {
    pub fn new(
        backbone: BackboneConfig,
        g: &Graph,
        g_trans: &Graph,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if g.num_nodes() != g_trans.num_nodes() {
            return Err(Error::shape(
                "DualModel",
                format!(
                    "G has {} nodes, transitivity graph has {}",
                    g.num_nodes(),
                    g_trans.num_nodes()
                ),
            ));
        }
        let params = backbone.init_params(g.feature_dim(), g.num_classes(), rng)?;
        Ok(Self {
            branch_g: Branch::new(&backbone, g)?,
            branch_t: Branch::with_operator(
                &backbone,
                normalized_adjacency(g_trans),
                g.features().clone(),
            )?,
            backbone,
            params,
        })
    }
}

/// Evaluation-mode forward pass of both branches with the shared parameters.
pub fn dual_forward(model: &DualModel) -> Result<(BranchOutput, BranchOutput)> {
    let (g, _) = forward(&model.backbone, &model.params, &model.branch_g, None)?;
    let (t, _) = forward(&model.backbone, &model.params, &model.branch_t, None)?;
    Ok((g, t))
}
