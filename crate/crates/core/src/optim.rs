//! AdamW with decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.1 }
    }
}

/// Moment buffers and step count for one training run.
#[derive(Clone, Debug)]
pub struct OptimState {
    pub config: AdamWConfig,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl OptimState {
    pub fn new(config: AdamWConfig, param_lens: &[usize]) -> Self {
        Self {
            config,
            step: 0,
            m: param_lens.iter().map(|&n| vec![0.0; n]).collect(),
            v: param_lens.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn first_moments(&self) -> &[Vec<f64>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Vec<f64>] {
        &self.v
    }
}

/// One AdamW update:
/// `p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + wd * p)`, with decay only
/// where `decay[i]` is set.
pub fn adamw_step(params: &mut [&mut Tensor], grads: &[Vec<f64>], decay: &[bool], state: &mut OptimState) -> Result<()> {
    if params.len() != grads.len() || params.len() != decay.len() || params.len() != state.m.len() {
        return Err(Error::Dimension(format!(
            "{} parameters, {} gradients, {} decay flags, {} moment buffers",
            params.len(),
            grads.len(),
            decay.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() || state.m[i].len() != g.len() {
            return Err(Error::Dimension(format!("parameter {i}: length {} vs gradient {}", p.len(), g.len())));
        }
        if let Some(bad) = g.iter().find(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("parameter {i}: non-finite gradient {bad}")));
        }
    }
    state.step += 1;
    let c = state.config;
    let t = state.step as i32;
    let bc1 = 1.0 - c.beta1.powi(t);
    let bc2 = 1.0 - c.beta2.powi(t);
    for (i, p) in params.iter_mut().enumerate() {
        let wd = if decay[i] { c.weight_decay } else { 0.0 };
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (((w, &g), m), v) in p.values_mut().iter_mut().zip(&grads[i]).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = c.beta1 * *m + (1.0 - c.beta1) * g;
            *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *w -= c.lr * (m_hat / (v_hat.sqrt() + c.eps) + wd * *w);
        }
    }
    Ok(())
}
