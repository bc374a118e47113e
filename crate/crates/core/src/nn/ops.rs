//! Differentiable primitives. Each forward function has a matching
//! `*_backward` that maps the gradient of a scalar loss with respect to the
//! primitive's output onto gradients with respect to its inputs.

use super::matrix::{dot, Matrix};
use super::sparse::SparseMatrix;
use crate::error::{Error, Result};

pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    a.matmul(b)
}

/// Returns `(∂L/∂a, ∂L/∂b)` for `c = a · b`.
pub fn matmul_backward(a: &Matrix, b: &Matrix, grad_out: &Matrix) -> Result<(Matrix, Matrix)> {
    Ok((grad_out.matmul_t(b)?, a.t_matmul(grad_out)?))
}

pub fn sparse_dense_matmul(s: &SparseMatrix, x: &Matrix) -> Result<Matrix> {
    s.mul_dense(x)
}

/// Gradient with respect to the dense operand of `s · x`.
pub fn sparse_dense_matmul_backward(s: &SparseMatrix, grad_out: &Matrix) -> Result<Matrix> {
    s.t_mul_dense(grad_out)
}

/// Adds the `1 × cols` row `bias` to every row of `x`.
pub fn add_bias(x: &Matrix, bias: &Matrix) -> Result<Matrix> {
    if bias.rows() != 1 || bias.cols() != x.cols() {
        return Err(Error::shape(
            "add_bias",
            format!("{:?} + bias {:?}", x.shape(), bias.shape()),
        ));
    }
    let mut out = x.clone();
    for r in 0..out.rows() {
        for (o, &b) in out.row_mut(r).iter_mut().zip(bias.row(0)) {
            *o += b;
        }
    }
    Ok(out)
}

/// Returns `(∂L/∂x, ∂L/∂bias)`.
pub fn add_bias_backward(grad_out: &Matrix) -> (Matrix, Matrix) {
    (grad_out.clone(), grad_out.column_sums())
}

pub fn relu(x: &Matrix) -> Matrix {
    x.map(|v| v.max(0.0))
}

/// `input` is the pre-activation; the gradient at exactly zero is zero.
pub fn relu_backward(input: &Matrix, grad_out: &Matrix) -> Result<Matrix> {
    if input.shape() != grad_out.shape() {
        return Err(Error::shape(
            "relu_backward",
            format!("{:?} vs {:?}", input.shape(), grad_out.shape()),
        ));
    }
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Matrix::from_vec(input.rows(), input.cols(), data)
}

pub fn log_softmax_rows(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        for v in row.iter_mut() {
            *v -= lse;
        }
    }
    out
}

/// `output` is the log-softmax result from the forward pass.
pub fn log_softmax_rows_backward(output: &Matrix, grad_out: &Matrix) -> Result<Matrix> {
    if output.shape() != grad_out.shape() {
        return Err(Error::shape(
            "log_softmax_rows_backward",
            format!("{:?} vs {:?}", output.shape(), grad_out.shape()),
        ));
    }
    let mut out = grad_out.clone();
    for r in 0..out.rows() {
        let total: f64 = grad_out.row(r).iter().sum();
        for (g, &lp) in out.row_mut(r).iter_mut().zip(output.row(r)) {
            *g -= lp.exp() * total;
        }
    }
    Ok(out)
}

/// Row-wise cosine similarity. A pair with a zero-norm row has cosine 0.
pub fn cosine_rows(a: &Matrix, b: &Matrix) -> Result<Vec<f64>> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            "cosine_rows",
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok((0..a.rows())
        .map(|r| {
            let (x, y) = (a.row(r), b.row(r));
            let (nx, ny) = (dot(x, x).sqrt(), dot(y, y).sqrt());
            if nx == 0.0 || ny == 0.0 {
                0.0
            } else {
                dot(x, y) / (nx * ny)
            }
        })
        .collect())
}

/// Returns `(∂L/∂a, ∂L/∂b)` given `∂L/∂cos` per row. Rows with zero norm
/// receive zero gradient.
pub fn cosine_rows_backward(a: &Matrix, b: &Matrix, grad_cos: &[f64]) -> Result<(Matrix, Matrix)> {
    if a.shape() != b.shape() || grad_cos.len() != a.rows() {
        return Err(Error::shape(
            "cosine_rows_backward",
            format!(
                "{:?} vs {:?}, {} row grads",
                a.shape(),
                b.shape(),
                grad_cos.len()
            ),
        ));
    }
    let mut da = Matrix::zeros(a.rows(), a.cols());
    let mut db = Matrix::zeros(b.rows(), b.cols());
    for r in 0..a.rows() {
        let (x, y) = (a.row(r), b.row(r));
        let (nx2, ny2) = (dot(x, x), dot(y, y));
        if nx2 == 0.0 || ny2 == 0.0 {
            continue;
        }
        let (nx, ny) = (nx2.sqrt(), ny2.sqrt());
        let xy = dot(x, y);
        let cos = xy / (nx * ny);
        let g = grad_cos[r];
        for (c, d) in da.row_mut(r).iter_mut().enumerate() {
            *d = g * (y[c] / (nx * ny) - cos * x[c] / nx2);
        }
        for (c, d) in db.row_mut(r).iter_mut().enumerate() {
            *d = g * (x[c] / (nx * ny) - cos * y[c] / ny2);
        }
    }
    Ok((da, db))
}
