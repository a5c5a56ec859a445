//! Base classification losses and the hyperplane-bound regularizer.
//!
//! The combined objective is
//! `L_inv = mean_i base(s_i, y_i) + alpha * Σ_c ‖w_c‖² + beta * mean_i ‖z(x_i)‖²`.
//! Biases are not part of the `‖w‖²` term.

use serde::{Deserialize, Serialize};

use crate::diffcore::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::model::{MarginHead, TapedForward};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseLoss {
    CrossEntropy,
    ModifiedHuber,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub base: BaseLoss,
    /// Weight on `Σ_c ‖w_c‖²`.
    pub alpha: f64,
    /// Weight on the batch mean of `‖z(x_i)‖²`.
    pub beta: f64,
}

impl LossConfig {
    pub fn new(base: BaseLoss, alpha: f64, beta: f64) -> Result<Self> {
        check_weights(alpha, beta)?;
        Ok(Self { base, alpha, beta })
    }

    /// Base loss plus the bound regularizer with `alpha == beta == weight`.
    pub fn with_bound(base: BaseLoss, weight: f64) -> Result<Self> {
        Self::new(base, weight, weight)
    }

    pub fn plain(base: BaseLoss) -> Self {
        Self { base, alpha: 0.0, beta: 0.0 }
    }
}

fn check_weights(alpha: f64, beta: f64) -> Result<()> {
    if !(alpha >= 0.0 && beta >= 0.0 && alpha.is_finite() && beta.is_finite()) {
        return Err(Error::Usage(format!("regularizer weights must be finite and nonnegative, got alpha={alpha} beta={beta}")));
    }
    Ok(())
}

fn check_label(label: f64) -> Result<()> {
    if label == 1.0 || label == -1.0 {
        Ok(())
    } else {
        Err(Error::Usage(format!("binary label must be +1 or -1, got {label}")))
    }
}

/// Which piece of the modified Huber loss a margin `q = y·s` falls on.
fn huber_piece(q: f64) -> u8 {
    if q <= -1.0 {
        0
    } else if q <= 1.0 {
        1
    } else {
        2
    }
}

/// Modified Huber loss of score `s` under label `y ∈ {+1, -1}`, with `q = y·s`:
/// `-4q` for `q <= -1`, `(1-q)²` for `-1 < q <= 1`, `0` otherwise.
pub fn modified_huber(score: f64, label: f64) -> Result<f64> {
    check_label(label)?;
    let q = label * score;
    Ok(match huber_piece(q) {
        0 => -4.0 * q,
        1 => (1.0 - q) * (1.0 - q),
        _ => 0.0,
    })
}

/// Derivative of [`modified_huber`] with respect to the score.
pub fn modified_huber_grad(score: f64, label: f64) -> Result<f64> {
    check_label(label)?;
    let q = label * score;
    Ok(match huber_piece(q) {
        0 => -4.0 * label,
        1 => -2.0 * (1.0 - q) * label,
        _ => 0.0,
    })
}

fn check_class(scores: &[f64], label: usize) -> Result<()> {
    if label >= scores.len() {
        return Err(Error::Usage(format!("label {label} out of range for {} classes", scores.len())));
    }
    Ok(())
}

fn one_vs_rest(c: usize, label: usize) -> f64 {
    if c == label {
        1.0
    } else {
        -1.0
    }
}

/// Sum over classes of the one-vs-rest modified Huber loss.
pub fn multiclass_margin_loss(scores: &[f64], label: usize) -> Result<f64> {
    check_class(scores, label)?;
    scores.iter().enumerate().map(|(c, &s)| modified_huber(s, one_vs_rest(c, label))).sum()
}

pub fn multiclass_margin_grad(scores: &[f64], label: usize) -> Result<Vec<f64>> {
    check_class(scores, label)?;
    scores.iter().enumerate().map(|(c, &s)| modified_huber_grad(s, one_vs_rest(c, label))).collect()
}

/// Softmax negative log-likelihood, evaluated with a shifted log-sum-exp.
pub fn cross_entropy(scores: &[f64], label: usize) -> Result<f64> {
    check_class(scores, label)?;
    Ok(log_sum_exp(scores) - scores[label])
}

/// `softmax(s) - onehot(label)`.
pub fn cross_entropy_grad(scores: &[f64], label: usize) -> Result<Vec<f64>> {
    check_class(scores, label)?;
    let lse = log_sum_exp(scores);
    Ok(scores.iter().enumerate().map(|(c, &s)| (s - lse).exp() - if c == label { 1.0 } else { 0.0 }).collect())
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + v.iter().map(|s| (s - max).exp()).sum::<f64>().ln()
}

/// `alpha * Σ_c ‖w_c‖² + beta * mean_i ‖z_i‖²` over a batch of feature vectors.
pub fn bound_regularizer(head: &MarginHead, features: &[&[f64]], alpha: f64, beta: f64) -> Result<f64> {
    check_weights(alpha, beta)?;
    let m = head.dim();
    if let Some(z) = features.iter().find(|z| z.len() != m) {
        return Err(Error::Dimension(format!("feature length {} != head dimension {m}", z.len())));
    }
    let w_term = alpha * head.weights.squared_norm();
    let z_term = if features.is_empty() {
        0.0
    } else {
        let total: f64 = features.iter().map(|z| z.iter().map(|v| v * v).sum::<f64>()).sum();
        beta * total / features.len() as f64
    };
    Ok(w_term + z_term)
}

impl BaseLoss {
    pub fn value(self, scores: &[f64], label: usize) -> Result<f64> {
        match self {
            BaseLoss::CrossEntropy => cross_entropy(scores, label),
            BaseLoss::ModifiedHuber => multiclass_margin_loss(scores, label),
        }
    }

    pub fn grad(self, scores: &[f64], label: usize) -> Result<Vec<f64>> {
        match self {
            BaseLoss::CrossEntropy => cross_entropy_grad(scores, label),
            BaseLoss::ModifiedHuber => multiclass_margin_grad(scores, label),
        }
    }
}

/// Records the batch objective on `tape` and returns its scalar node.
pub fn objective(tape: &mut Tape, fwd: &TapedForward, labels: &[usize], cfg: &LossConfig) -> Result<NodeId> {
    check_weights(cfg.alpha, cfg.beta)?;
    let scores = tape.value(fwd.scores);
    let (n, classes) = (scores.shape()[0], scores.shape()[1]);
    if labels.len() != n {
        return Err(Error::Dimension(format!("{} labels for a batch of {n}", labels.len())));
    }
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(n * classes);
    let mut pieces = Vec::new();
    for (row, &y) in scores.values().chunks(classes).zip(labels) {
        total += cfg.base.value(row, y)?;
        grad.extend(cfg.base.grad(row, y)?.into_iter().map(|g| g / n as f64));
        if cfg.base == BaseLoss::ModifiedHuber {
            pieces.extend(row.iter().enumerate().map(|(c, &s)| huber_piece(one_vs_rest(c, y) * s)));
        }
    }
    for (i, p) in pieces.iter().enumerate() {
        tape.note_branch(((i as u64) << 2) | *p as u64);
    }
    let base = tape.scalar_fn(fwd.scores, total / n as f64, grad)?;
    if cfg.alpha == 0.0 && cfg.beta == 0.0 {
        return Ok(base);
    }
    let w_norm = tape.squared_norm(fwd.head_weights)?;
    let z_norm = tape.squared_norm(fwd.features)?;
    tape.weighted_sum(&[(base, 1.0), (w_norm, cfg.alpha), (z_norm, cfg.beta / n as f64)])
}
