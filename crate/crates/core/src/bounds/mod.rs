//! Generalization bounds and the estimators that feed them.

mod estimate;
mod formulas;
mod oracle;
mod perceptron;

pub use estimate::{
    dataset_outputs, margin_radius, margin_radius_from, support_vectors, support_vectors_from, MarginRadius, SupportSet,
};
pub use formulas::{empirical_risk, epsilon_l, er_bounds, novikoff_steps, p_error_bound, risk_bound, vc_bound, ErBounds};
pub use oracle::{exact_max_margin, exact_max_margin_through_origin, loo_errors, MaxMargin, MAX_DIM, MAX_POINTS, ORACLE_TOL};
pub use perceptron::{perceptron_corrections, PerceptronRun};

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{predict, Model};
use crate::tensor::Tensor;

/// Raw inputs for the closed-form bounds; each bound is evaluated only when
/// its inputs are present.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub l: Option<usize>,
    pub h: Option<f64>,
    pub eta: Option<f64>,
    /// Loss upper bound; 1 for the 0-1 loss.
    pub b: Option<f64>,
    pub remp: Option<f64>,
    pub d: Option<f64>,
    pub rho: Option<f64>,
    pub delta: Option<f64>,
    pub r: Option<f64>,
    pub n: Option<usize>,
    pub m_errors: Option<usize>,
    pub k: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BoundValues {
    pub h_bound: Option<usize>,
    pub epsilon_l: Option<f64>,
    pub risk_bound: Option<f64>,
    pub p_error: Option<f64>,
    pub novikoff_m: Option<u64>,
    pub er: Option<ErBounds>,
}

impl BoundInputs {
    /// `h` comes from the explicit value, else from `vc_bound(R, Delta, n)`.
    pub fn evaluate(&self) -> Result<BoundValues> {
        let mut out = BoundValues::default();
        if let (Some(r), Some(delta), Some(n)) = (self.r, self.delta, self.n) {
            out.h_bound = Some(vc_bound(r, delta, n)?);
        }
        let h = self.h.or(out.h_bound.map(|h| h as f64));
        let eta = self.eta.unwrap_or(0.05);
        if let (Some(l), Some(h)) = (self.l, h) {
            let eps = epsilon_l(l, h, eta)?;
            out.epsilon_l = Some(eps);
            if let Some(remp) = self.remp {
                out.risk_bound = Some(risk_bound(remp, self.b.unwrap_or(1.0), eps)?);
            }
            if let Some(m) = self.m_errors {
                out.p_error = Some(p_error_bound(m, l, h, eta)?);
            }
        }
        if let (Some(d), Some(rho)) = (self.d, self.rho) {
            out.novikoff_m = Some(novikoff_steps(d, rho)?);
            if let (Some(k), Some(l)) = (self.k, self.l) {
                out.er = Some(er_bounds(k, d, rho, l)?);
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub eta: f64,
    pub b: f64,
    /// Band half-width around `|s| = 1` for support vectors.
    pub sv_tol: f64,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self { eta: 0.05, b: 1.0, sv_tol: 1e-2 }
    }
}

/// Bounds for one one-vs-rest classifier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassBounds {
    pub class: usize,
    pub rho: f64,
    pub dl2w2: f64,
    /// Points with `|s_c| <= 1 + tol`.
    pub support_count: usize,
    /// Essential support-vector estimate `K_hat`.
    pub k_hat: usize,
    /// Points with `y_c s_c < 1`.
    pub margin_errors: usize,
    pub h_bound: usize,
    pub novikoff_m: u64,
    pub p_error: f64,
    pub er_sv: f64,
    pub er_novikoff: f64,
    pub er_min: f64,
}

/// Estimated quantities and bound values for a trained model on its training sample.
///
/// Top-level `h_bound`, `novikoff_m`, `k_hat`, `dl2w2` and `er_*` come from the
/// class with the smallest margin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub l: usize,
    pub feature_dim: usize,
    pub eta: f64,
    pub b: f64,
    pub d_l: f64,
    pub rho_min: f64,
    /// Training 0-1 error of the argmax prediction.
    pub remp: f64,
    /// Examples violating the unit margin for at least one class.
    pub margin_errors: usize,
    pub h_bound: usize,
    pub epsilon_l: f64,
    pub risk_bound: f64,
    pub p_error: f64,
    pub novikoff_m: u64,
    pub k_hat: usize,
    pub dl2w2: f64,
    pub er_sv: f64,
    pub er_novikoff: f64,
    pub er_min: f64,
    pub classes: Vec<ClassBounds>,
}

fn h_for(d_l: f64, rho: f64, n: usize) -> Result<usize> {
    if d_l == 0.0 {
        Ok(1)
    } else {
        vc_bound(d_l, rho, n)
    }
}

/// Builds the report from eval-mode features `[N, m]`, scores `[N, C]` and labels.
pub fn bound_report_from(
    features: &Tensor,
    scores: &Tensor,
    labels: &[usize],
    head: &crate::model::MarginHead,
    cfg: &ReportConfig,
) -> Result<BoundReport> {
    let l = labels.len();
    if l == 0 || scores.shape() != [l, head.n_classes()] {
        return Err(Error::Dimension(format!("scores {:?} for {l} labels", scores.shape())));
    }
    let mr = margin_radius_from(features, head)?;
    let sv = support_vectors_from(scores, cfg.sv_tol)?;
    let m = head.dim();
    let mut violating = vec![false; l];
    let mut wrong = Vec::with_capacity(l);
    for (i, (row, &y)) in scores.rows().zip(labels).enumerate() {
        wrong.push(if predict(row)?.class == y { 0.0 } else { 1.0 });
        for (c, &s) in row.iter().enumerate() {
            let yc = if c == y { 1.0 } else { -1.0 };
            if yc * s < 1.0 {
                violating[i] = true;
            }
        }
    }
    let mut classes = Vec::with_capacity(head.n_classes());
    for c in 0..head.n_classes() {
        let rho = mr.rho[c];
        let margin_errors =
            scores.rows().zip(labels).filter(|(row, &y)| (if c == y { 1.0 } else { -1.0 }) * row[c] < 1.0).count();
        let h = h_for(mr.d_l, rho, m)?;
        let er = er_bounds(sv[c].essential, mr.d_l, rho, l)?;
        classes.push(ClassBounds {
            class: c,
            rho,
            dl2w2: mr.dl2w2[c],
            support_count: sv[c].indices.len(),
            k_hat: sv[c].essential,
            margin_errors,
            h_bound: h,
            novikoff_m: if mr.d_l >= rho { novikoff_steps(mr.d_l, rho)? } else { 0 },
            p_error: p_error_bound(margin_errors, l, h as f64, cfg.eta)?,
            er_sv: er.er_sv,
            er_novikoff: er.er_novikoff,
            er_min: er.er_min,
        });
    }
    let worst = classes.iter().max_by(|a, b| a.dl2w2.total_cmp(&b.dl2w2)).expect("at least one class").clone();
    let remp = empirical_risk(&wrong)?;
    let margin_errors = violating.iter().filter(|&&v| v).count();
    let eps = epsilon_l(l, worst.h_bound as f64, cfg.eta)?;
    Ok(BoundReport {
        l,
        feature_dim: m,
        eta: cfg.eta,
        b: cfg.b,
        d_l: mr.d_l,
        rho_min: worst.rho,
        remp,
        margin_errors,
        h_bound: worst.h_bound,
        epsilon_l: eps,
        risk_bound: risk_bound(remp, cfg.b, eps)?,
        p_error: p_error_bound(margin_errors, l, worst.h_bound as f64, cfg.eta)?,
        novikoff_m: worst.novikoff_m,
        k_hat: worst.k_hat,
        dl2w2: worst.dl2w2,
        er_sv: worst.er_sv,
        er_novikoff: worst.er_novikoff,
        er_min: worst.er_min,
        classes,
    })
}

/// Report for `model` over `dataset` (already preprocessed as the model expects).
pub fn bound_report(model: &Model, dataset: &Dataset, cfg: &ReportConfig) -> Result<BoundReport> {
    let (f, s) = dataset_outputs(model, dataset, 256)?;
    bound_report_from(&f, &s, &dataset.labels, &model.head, cfg)
}
