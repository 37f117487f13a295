//! Numeric kernels shared by the losses.
//!
//! Every kernel that takes part in a loss has a matching analytic gradient
//! here. All arithmetic is `f64`; the gradient checker in [`gradcheck`]
//! relies on that headroom.

mod gradcheck;
mod matrix;

pub use gradcheck::{grad_check, GradCheckReport};
pub use matrix::{dot, norm, ClassMask, Matrix};

use crate::error::{FddmError, Result};

/// Norms at or below this are treated as zero by [`cosine_sim`].
pub const NORM_EPS: f64 = 1e-12;

/// Temperature-softened softmax `softmax(v / tau)`, max-subtracted.
pub fn softmax_tau(v: &[f64], tau: f64) -> Result<Vec<f64>> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(FddmError::Parameter(format!(
            "temperature must be positive and finite, got {tau}"
        )));
    }
    if v.is_empty() {
        return Err(FddmError::Input("softmax of an empty vector".into()));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(FddmError::Input("softmax input is not finite".into()));
    }
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = v.iter().map(|&x| ((x - max) / tau).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= sum);
    Ok(out)
}

/// `KL(p ‖ q) = Σ p·ln(p/q)` with `0·ln(0/q) = 0`.
pub fn kl_div(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(FddmError::Shape(format!(
            "KL divergence over lengths {} and {}",
            p.len(),
            q.len()
        )));
    }
    let mut total = 0.0;
    for (i, (&pi, &qi)) in p.iter().zip(q).enumerate() {
        if pi == 0.0 {
            continue;
        }
        if qi <= 0.0 {
            return Err(FddmError::Domain(format!(
                "q[{i}] = {qi} where p[{i}] = {pi} > 0"
            )));
        }
        total += pi * (pi / qi).ln();
    }
    // rounding can leave a tiny negative residue for p ≈ q
    Ok(total.max(0.0))
}

/// Gradient of `KL(target ‖ softmax(u / tau))` with respect to `u`,
/// given `q = softmax(u / tau)`: `(q − target) / tau`.
pub fn softmax_kl_grad(target: &[f64], q: &[f64], tau: f64) -> Vec<f64> {
    q.iter()
        .zip(target)
        .map(|(&qi, &pi)| (qi - pi) / tau)
        .collect()
}

/// Cosine similarity clamped to `[-1, 1]`.
pub fn cosine_sim(u: &[f64], v: &[f64]) -> Result<f64> {
    let (nu, nv) = checked_norms(u, v)?;
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

/// Partial derivatives of [`cosine_sim`] with respect to both arguments.
///
/// The clamp is ignored: it only bites on rounding noise around ±1.
pub fn cosine_sim_grad(u: &[f64], v: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let (nu, nv) = checked_norms(u, v)?;
    let cos = dot(u, v) / (nu * nv);
    let du = u
        .iter()
        .zip(v)
        .map(|(&a, &b)| b / (nu * nv) - cos * a / (nu * nu))
        .collect();
    let dv = u
        .iter()
        .zip(v)
        .map(|(&a, &b)| a / (nu * nv) - cos * b / (nv * nv))
        .collect();
    Ok((du, dv))
}

fn checked_norms(u: &[f64], v: &[f64]) -> Result<(f64, f64)> {
    if u.len() != v.len() {
        return Err(FddmError::Shape(format!(
            "cosine similarity over lengths {} and {}",
            u.len(),
            v.len()
        )));
    }
    let (nu, nv) = (norm(u), norm(v));
    for n in [nu, nv] {
        if !(n > NORM_EPS) {
            return Err(FddmError::DegenerateVector {
                norm: n,
                eps: NORM_EPS,
            });
        }
    }
    Ok((nu, nv))
}

/// Per-class means of the rows of `x`, and which classes had any members.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassMeans {
    pub means: Matrix,
    pub present: Vec<bool>,
    pub counts: Vec<usize>,
}

/// Mean of the rows of `x` belonging to each class of `mask`.
///
/// Classes with no member get a zero row and `present = false`.
pub fn masked_class_mean(x: &Matrix, mask: &ClassMask) -> Result<ClassMeans> {
    if x.rows() != mask.rows() {
        return Err(FddmError::Shape(format!(
            "{} feature rows but {} label rows",
            x.rows(),
            mask.rows()
        )));
    }
    let c_count = mask.num_classes();
    let mut means = Matrix::zeros(c_count, x.cols());
    let mut counts = vec![0usize; c_count];
    for i in 0..x.rows() {
        for (c, count) in counts.iter_mut().enumerate() {
            if mask.is_set(i, c) {
                *count += 1;
                for (m, &v) in means.row_mut(c).iter_mut().zip(x.row(i)) {
                    *m += v;
                }
            }
        }
    }
    for (c, &n) in counts.iter().enumerate() {
        if n > 0 {
            let inv = 1.0 / n as f64;
            means.row_mut(c).iter_mut().for_each(|m| *m *= inv);
        }
    }
    Ok(ClassMeans {
        means,
        present: counts.iter().map(|&n| n > 0).collect(),
        counts,
    })
}

/// Back-propagates a gradient on the class means to the rows of `x`.
pub fn masked_class_mean_backward(grad_means: &Matrix, mask: &ClassMask) -> Result<Matrix> {
    if grad_means.rows() != mask.num_classes() {
        return Err(FddmError::Shape(format!(
            "{} gradient rows for {} classes",
            grad_means.rows(),
            mask.num_classes()
        )));
    }
    let counts = mask.matrix().column_sums();
    let mut grad_x = Matrix::zeros(mask.rows(), grad_means.cols());
    for i in 0..mask.rows() {
        for (c, &n) in counts.iter().enumerate() {
            if mask.is_set(i, c) {
                let w = 1.0 / n;
                for (g, &gm) in grad_x.row_mut(i).iter_mut().zip(grad_means.row(c)) {
                    *g += w * gm;
                }
            }
        }
    }
    Ok(grad_x)
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Mean binary cross-entropy over all B×C entries, with its gradient
/// `(σ(z) − y) / (B·C)`.
pub fn bce_with_logits(logits: &Matrix, targets: &ClassMask) -> Result<(f64, Matrix)> {
    if logits.shape() != targets.matrix().shape() {
        return Err(FddmError::Shape(format!(
            "logits {:?} vs targets {:?}",
            logits.shape(),
            targets.matrix().shape()
        )));
    }
    let n = logits.as_slice().len();
    if n == 0 {
        return Err(FddmError::Input("empty logit matrix".into()));
    }
    let inv_n = 1.0 / n as f64;
    let mut loss = 0.0;
    let mut grad = Matrix::zeros(logits.rows(), logits.cols());
    for ((&z, &y), g) in logits
        .as_slice()
        .iter()
        .zip(targets.matrix().as_slice())
        .zip(grad.as_mut_slice())
    {
        // -[y ln σ(z) + (1-y) ln(1-σ(z))] = softplus(z) - y·z
        loss += softplus(z) - y * z;
        *g = (sigmoid(z) - y) * inv_n;
    }
    Ok((loss * inv_n, grad))
}
