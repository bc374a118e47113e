use rand::Rng;

use super::matrix::Matrix;
use crate::error::{Error, Result};

/// A named trainable tensor with its Adam moment estimates.
#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub value: Matrix,
    first_moment: Matrix,
    second_moment: Matrix,
}

impl Parameter {
    pub fn first_moment(&self) -> &Matrix {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &Matrix {
        &self.second_moment
    }
}

/// Single storage location for every parameter of a model. Both branches of
/// a dual model read from the same store, so an update is seen by both.
#[derive(Clone, Debug, Default)]
pub struct ParameterStore {
    params: Vec<Parameter>,
    step: u64,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter and returns its index. Names must be unique.
    pub fn insert(&mut self, name: impl Into<String>, value: Matrix) -> Result<usize> {
        let name = name.into();
        if self.index_of(&name).is_some() {
            return Err(Error::InvalidArgument(format!(
                "duplicate parameter {name}"
            )));
        }
        let (r, c) = value.shape();
        self.params.push(Parameter {
            name,
            value,
            first_moment: Matrix::zeros(r, c),
            second_moment: Matrix::zeros(r, c),
        });
        Ok(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Number of Adam steps applied so far.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub(crate) fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.index_of(name).map(|i| &self.params[i].value)
    }

    #[inline]
    pub fn value(&self, index: usize) -> &Matrix {
        &self.params[index].value
    }

    #[inline]
    pub fn value_mut(&mut self, index: usize) -> &mut Matrix {
        &mut self.params[index].value
    }

    pub fn parameter(&self, index: usize) -> &Parameter {
        &self.params[index]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.data().len()).sum()
    }
}

/// Per-parameter gradients, index-aligned with a [`ParameterStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradientSet {
    grads: Vec<Matrix>,
}

impl GradientSet {
    pub fn zeros_like(store: &ParameterStore) -> Self {
        Self {
            grads: store
                .iter()
                .map(|p| Matrix::zeros(p.value.rows(), p.value.cols()))
                .collect(),
        }
    }

    /// Zeros with the same shapes as `other`.
    pub fn zeros_like_set(other: &GradientSet) -> Self {
        Self {
            grads: other
                .grads
                .iter()
                .map(|g| Matrix::zeros(g.rows(), g.cols()))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    #[inline]
    pub fn get(&self, index: usize) -> &Matrix {
        &self.grads[index]
    }

    #[inline]
    pub fn get_mut(&mut self, index: usize) -> &mut Matrix {
        &mut self.grads[index]
    }

    /// `self += alpha · other`
    pub fn axpy(&mut self, alpha: f64, other: &GradientSet) -> Result<()> {
        if self.grads.len() != other.grads.len() {
            return Err(Error::shape(
                "GradientSet::axpy",
                format!("{} vs {} parameters", self.grads.len(), other.grads.len()),
            ));
        }
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            a.axpy(alpha, b)?;
        }
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &GradientSet) -> f64 {
        self.grads
            .iter()
            .zip(&other.grads)
            .map(|(a, b)| a.max_abs_diff(b))
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.grads
            .iter()
            .flat_map(|g| g.data().iter())
            .fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn ensure_finite(&self) -> Result<()> {
        for (i, g) in self.grads.iter().enumerate() {
            g.ensure_finite(&format!("gradient of parameter {i}"))?;
        }
        Ok(())
    }

    fn check_matches(&self, store: &ParameterStore) -> Result<()> {
        if self.grads.len() != store.len() {
            return Err(Error::shape(
                "gradient/parameter count",
                format!(
                    "{} gradients for {} parameters",
                    self.grads.len(),
                    store.len()
                ),
            ));
        }
        for (g, p) in self.grads.iter().zip(store.iter()) {
            if g.shape() != p.value.shape() {
                return Err(Error::shape(
                    "gradient/parameter shape",
                    format!("{}: {:?} vs {:?}", p.name, g.shape(), p.value.shape()),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

/// One Adam update with bias correction over every parameter in `store`.
pub fn adam_step(store: &mut ParameterStore, grads: &GradientSet, cfg: &AdamConfig) -> Result<()> {
    grads.check_matches(store)?;
    let t = store.step + 1;
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    for (p, g) in store.params.iter_mut().zip(&grads.grads) {
        let w = p.value.data_mut();
        let m = p.first_moment.data_mut();
        let v = p.second_moment.data_mut();
        for i in 0..w.len() {
            let gi = g.data()[i];
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            w[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    store.step = t;
    Ok(())
}

/// Glorot/Xavier uniform draw in `±√(6 / (rows + cols))`.
pub fn glorot_uniform(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
    let bound = glorot_bound(rows, cols);
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-bound..=bound))
        .collect();
    Matrix::from_vec(rows, cols, data).expect("length matches shape")
}

pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out).max(1) as f64).sqrt()
}
