//! Forward and backward rules for the individual layer kinds.

use crate::error::{Error, Result};
use crate::numerics::{matmul, Matrix};

/// Whether batch-norm uses batch statistics (and records them) or running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// `y = x·w + b`, bias broadcast over rows.
pub fn dense_forward(x: &Matrix, w: &Matrix, b: &[f64]) -> Result<Matrix> {
    if b.len() != w.cols() {
        return Err(Error::Shape {
            op: "dense bias",
            left: w.shape(),
            right: (1, b.len()),
        });
    }
    let mut y = matmul(x, w)?;
    y.add_row_broadcast(b)?;
    Ok(y)
}

/// Values a train-mode batch-norm forward leaves for the backward pass.
#[derive(Debug, Clone)]
pub struct BatchNormCache {
    /// Standardized input, before scale and shift.
    pub x_hat: Matrix,
    pub inv_std: Vec<f64>,
    pub gamma: Vec<f64>,
    pub batch_mean: Vec<f64>,
    pub batch_var: Vec<f64>,
}

/// Per-column mean and biased variance. The mean is accumulated relative to
/// the first row so a constant column yields exactly that constant.
fn column_moments(x: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let n = x.rows();
    let cols = x.cols();
    let origin = x.row(0).to_vec();
    let mut mean = vec![0.0; cols];
    for row in x.row_iter() {
        for ((m, v), o) in mean.iter_mut().zip(row).zip(&origin) {
            *m += v - o;
        }
    }
    for (m, o) in mean.iter_mut().zip(&origin) {
        *m = o + *m / n as f64;
    }
    let mut var = vec![0.0; cols];
    for row in x.row_iter() {
        for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
            let d = v - m;
            *s += d * d;
        }
    }
    for s in var.iter_mut() {
        *s /= n as f64;
    }
    (mean, var)
}

/// Train mode: standardize each column by its batch statistics, then scale and shift.
pub fn batchnorm_forward_train(
    x: &Matrix,
    gamma: &[f64],
    beta: &[f64],
    eps: f64,
) -> Result<(Matrix, BatchNormCache)> {
    check_bn_shapes(x, gamma, beta)?;
    if x.rows() < 2 {
        return Err(Error::Domain(format!(
            "train-mode batch norm needs at least 2 rows, got {}",
            x.rows()
        )));
    }
    let (mean, var) = column_moments(x);
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let mut x_hat = Matrix::zeros(x.rows(), x.cols());
    let mut y = Matrix::zeros(x.rows(), x.cols());
    let cols = x.cols().max(1);
    let rows = x
        .as_slice()
        .chunks_exact(cols)
        .zip(x_hat.as_mut_slice().chunks_exact_mut(cols))
        .zip(y.as_mut_slice().chunks_exact_mut(cols));
    for ((src, xh), out) in rows {
        for (((((s, h), o), m), is), (g, b)) in src
            .iter()
            .zip(xh.iter_mut())
            .zip(out.iter_mut())
            .zip(&mean)
            .zip(&inv_std)
            .zip(gamma.iter().zip(beta))
        {
            let v = (s - m) * is;
            *h = v;
            *o = g * v + b;
        }
    }
    Ok((
        y,
        BatchNormCache {
            x_hat,
            inv_std,
            gamma: gamma.to_vec(),
            batch_mean: mean,
            batch_var: var,
        },
    ))
}

/// Eval mode: standardize by the running statistics.
pub fn batchnorm_forward_eval(
    x: &Matrix,
    gamma: &[f64],
    beta: &[f64],
    running_mean: &[f64],
    running_var: &[f64],
    eps: f64,
) -> Result<Matrix> {
    check_bn_shapes(x, gamma, beta)?;
    if running_mean.len() != x.cols() || running_var.len() != x.cols() {
        return Err(Error::Shape {
            op: "batchnorm running stats",
            left: x.shape(),
            right: (1, running_mean.len()),
        });
    }
    let scale: Vec<f64> = gamma
        .iter()
        .zip(running_var)
        .map(|(g, v)| g / (v + eps).sqrt())
        .collect();
    let mut y = x.clone();
    for r in 0..y.rows() {
        for (c, v) in y.row_mut(r).iter_mut().enumerate() {
            *v = (*v - running_mean[c]) * scale[c] + beta[c];
        }
    }
    Ok(y)
}

fn check_bn_shapes(x: &Matrix, gamma: &[f64], beta: &[f64]) -> Result<()> {
    if gamma.len() != x.cols() || beta.len() != x.cols() {
        return Err(Error::Shape {
            op: "batchnorm scale/shift",
            left: x.shape(),
            right: (1, gamma.len().min(beta.len())),
        });
    }
    Ok(())
}

/// Gradients of a train-mode batch-norm forward: `(input, gamma, beta)`.
///
/// Includes the dependence of the batch mean and variance on every input row.
pub fn batchnorm_backward(
    cache: &BatchNormCache,
    upstream: &Matrix,
) -> Result<(Matrix, Vec<f64>, Vec<f64>)> {
    if upstream.shape() != cache.x_hat.shape() {
        return Err(Error::Shape {
            op: "batchnorm_backward",
            left: cache.x_hat.shape(),
            right: upstream.shape(),
        });
    }
    let n = upstream.rows() as f64;
    let cols = upstream.cols();
    let d_beta = upstream.column_sums();
    let mut d_gamma = vec![0.0; cols];
    for (g_row, xh_row) in upstream.row_iter().zip(cache.x_hat.row_iter()) {
        for ((dg, g), xh) in d_gamma.iter_mut().zip(g_row).zip(xh_row) {
            *dg += g * xh;
        }
    }
    let coeff: Vec<f64> = cache
        .gamma
        .iter()
        .zip(&cache.inv_std)
        .map(|(g, s)| g * s / n)
        .collect();
    let mut dx = Matrix::zeros(upstream.rows(), cols);
    for r in 0..upstream.rows() {
        let g_row = upstream.row(r);
        let xh_row = cache.x_hat.row(r);
        for (c, out) in dx.row_mut(r).iter_mut().enumerate() {
            *out = coeff[c] * (n * g_row[c] - d_beta[c] - xh_row[c] * d_gamma[c]);
        }
    }
    Ok((dx, d_gamma, d_beta))
}

pub fn tanh_forward(x: &Matrix) -> Matrix {
    Matrix::from_vec(x.rows(), x.cols(), crate::numerics::tanh_slice(x.as_slice())).expect("same shape")
}

/// `upstream ⊙ (1 − y²)` where `y` is the forward output.
pub fn tanh_backward(y: &Matrix, upstream: &Matrix) -> Result<Matrix> {
    if y.shape() != upstream.shape() {
        return Err(Error::Shape {
            op: "tanh_backward",
            left: y.shape(),
            right: upstream.shape(),
        });
    }
    let data = y
        .as_slice()
        .iter()
        .zip(upstream.as_slice())
        .map(|(y, g)| g * (1.0 - y * y))
        .collect();
    Matrix::from_vec(y.rows(), y.cols(), data)
}

pub fn add_forward(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    a.add(b)
}

/// Both summands receive the upstream gradient unchanged.
pub fn add_backward(upstream: &Matrix) -> (Matrix, Matrix) {
    (upstream.clone(), upstream.clone())
}

/// Row-wise softmax.
pub fn softmax(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    out
}

/// Mean categorical cross-entropy of `softmax(logits)` against integer labels,
/// and its gradient `(softmax − onehot)/n` with respect to the logits.
pub fn softmax_cross_entropy(logits: &Matrix, labels: &[u8]) -> Result<(f64, Matrix)> {
    let (n, classes) = logits.shape();
    if labels.len() != n {
        return Err(Error::Shape {
            op: "softmax_cross_entropy",
            left: logits.shape(),
            right: (labels.len(), 1),
        });
    }
    if n == 0 {
        return Err(Error::Domain("softmax_cross_entropy on an empty batch".into()));
    }
    let mut grad = Matrix::zeros(n, classes);
    let mut total = 0.0;
    for (r, &label) in labels.iter().enumerate() {
        let label = label as usize;
        if label >= classes {
            return Err(Error::Domain(format!(
                "label {label} at row {r} is outside 0..{classes}"
            )));
        }
        let row = logits.row(r);
        let (arg_max, max) = row
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, v)| if v > best.1 { (i, v) } else { best });
        // Sum of the non-maximal exponentials, kept apart so ln_1p stays accurate
        // when one class dominates.
        let rest: f64 = row
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != arg_max)
            .map(|(_, v)| (v - max).exp())
            .sum();
        total += (max - row[label]) + rest.ln_1p();
        let denom = 1.0 + rest;
        let g = grad.row_mut(r);
        for (i, out) in g.iter_mut().enumerate() {
            let p = if i == arg_max { 1.0 / denom } else { (row[i] - max).exp() / denom };
            let target = if i == label { 1.0 } else { 0.0 };
            *out = (p - target) / n as f64;
        }
    }
    Ok((total / n as f64, grad))
}
