//! Central finite-difference checks of analytic gradients.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{rng_stream, Mode, Tape};
use crate::error::Result;
use crate::loss::{modified_huber, modified_huber_grad, objective, LossConfig};
use crate::model::Model;
use crate::tensor::Tensor;

/// Finite-difference step used throughout.
pub const FD_STEP: f64 = 1e-5;

/// Denominator floor of the relative error, so that gradients at the level of
/// finite-difference round-off are compared absolutely.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub name: String,
    pub checked: usize,
    /// Probes discarded because `p ± h` crossed a kink.
    pub skipped: usize,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.checked > 0 && self.max_rel_err < self.tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Modified Huber gradient at `samples` random `(s, y)` points at least `1e-3`
/// from the breakpoints `q = ±1`.
pub fn check_modified_huber(samples: usize, seed: u64, tolerance: f64) -> Result<GradCheckReport> {
    let mut rng = rng_stream(seed, &[0x4b]);
    let mut report = GradCheckReport { name: "modified_huber".into(), checked: 0, skipped: 0, max_rel_err: 0.0, tolerance };
    while report.checked < samples {
        let y = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let s: f64 = rng.random_range(-4.0..4.0);
        let q = y * s;
        if (q - 1.0).abs() < 1e-3 || (q + 1.0).abs() < 1e-3 {
            report.skipped += 1;
            continue;
        }
        let fd = (modified_huber(s + FD_STEP, y)? - modified_huber(s - FD_STEP, y)?) / (2.0 * FD_STEP);
        let err = relative_error(modified_huber_grad(s, y)?, fd);
        report.max_rel_err = report.max_rel_err.max(err);
        report.checked += 1;
    }
    Ok(report)
}

/// Loss value and tape fingerprint of `model` on a fixed batch.
fn evaluate(model: &Model, x: &Tensor, labels: &[usize], cfg: &LossConfig, mode: Mode, seed: u64) -> Result<(f64, u64)> {
    let mut tape = Tape::new();
    let fwd = model.forward_tape(&mut tape, x, mode, &mut rng_stream(seed, &[0xd0]))?;
    let loss = objective(&mut tape, &fwd, labels, cfg)?;
    Ok((tape.value(loss).values()[0], tape.fingerprint()))
}

/// Analytic gradients of the full objective for every parameter tensor, in
/// [`Model::parameters`] order.
pub fn analytic_gradients(
    model: &Model,
    x: &Tensor,
    labels: &[usize],
    cfg: &LossConfig,
    mode: Mode,
    seed: u64,
) -> Result<(f64, u64, Vec<Vec<f64>>)> {
    let mut tape = Tape::new();
    let fwd = model.forward_tape(&mut tape, x, mode, &mut rng_stream(seed, &[0xd0]))?;
    let loss = objective(&mut tape, &fwd, labels, cfg)?;
    let mut grads = tape.backward(loss)?;
    let mut ids = fwd.feature_params.clone();
    ids.extend([fwd.head_weights, fwd.head_bias]);
    let out = ids.iter().zip(model.parameters()).map(|(&id, p)| grads.take(id, p.len())).collect();
    Ok((tape.value(loss).values()[0], tape.fingerprint(), out))
}

/// Compares analytic and central-difference gradients of the full objective.
///
/// For each of `points` parameter draws (model seeds `seed..seed+points`), a
/// random batch is drawn and `coords_per_point` parameter coordinates are
/// probed; `None` probes every coordinate. Probes whose `p ± h` evaluations
/// change any discrete decision on the tape are skipped.
#[allow(clippy::too_many_arguments)]
pub fn check_network(
    name: &str,
    build: &dyn Fn(u64) -> Result<Model>,
    batch: usize,
    cfg: &LossConfig,
    mode: Mode,
    points: usize,
    coords_per_point: Option<usize>,
    seed: u64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    let mut report = GradCheckReport { name: name.into(), checked: 0, skipped: 0, max_rel_err: 0.0, tolerance };
    for point in 0..points as u64 {
        let mut model = build(seed + point)?;
        let mut rng = rng_stream(seed, &[point, 0x5a]);
        let mut shape = vec![batch];
        shape.extend_from_slice(&model.feature_map.input_shape);
        let mut x = Tensor::zeros(shape);
        for v in x.values_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        let classes = model.n_classes();
        let labels: Vec<usize> = (0..batch).map(|_| rng.random_range(0..classes)).collect();
        let (_, base_print, grads) = analytic_gradients(&model, &x, &labels, cfg, mode, seed + point)?;
        let sizes: Vec<usize> = model.parameters().iter().map(|p| p.len()).collect();
        let total: usize = sizes.iter().sum();
        let coords: Vec<usize> = match coords_per_point {
            None => (0..total).collect(),
            Some(k) => (0..k).map(|_| rng.random_range(0..total)).collect(),
        };
        for flat in coords {
            let (mut t, mut i) = (0, flat);
            while i >= sizes[t] {
                i -= sizes[t];
                t += 1;
            }
            let orig = model.parameters()[t].values()[i];
            model.parameters_mut()[t].values_mut()[i] = orig + FD_STEP;
            let (plus, p1) = evaluate(&model, &x, &labels, cfg, mode, seed + point)?;
            model.parameters_mut()[t].values_mut()[i] = orig - FD_STEP;
            let (minus, p2) = evaluate(&model, &x, &labels, cfg, mode, seed + point)?;
            model.parameters_mut()[t].values_mut()[i] = orig;
            if p1 != base_print || p2 != base_print {
                report.skipped += 1;
                continue;
            }
            let fd = (plus - minus) / (2.0 * FD_STEP);
            report.max_rel_err = report.max_rel_err.max(relative_error(grads[t][i], fd));
            report.checked += 1;
        }
    }
    Ok(report)
}

/// Tolerances of the standard suite.
pub const HUBER_TOL: f64 = 1e-6;
pub const NETWORK_TOL: f64 = 1e-4;

/// Modified Huber at `10³` points, then the full objective (both base losses,
/// regularizer on) through a small relu MLP (every coordinate) and the LeNet
/// feature map with dropout (`coords` random coordinates), each at `points`
/// random parameter points.
pub fn standard_suite(points: usize, coords: usize, seed: u64) -> Result<Vec<GradCheckReport>> {
    use crate::loss::BaseLoss;
    use crate::model::{Activation, FeatureMap};

    let mut out = vec![check_modified_huber(1000, seed, HUBER_TOL)?];
    let mlp = |s| Model::init(FeatureMap::mlp(vec![12], &[10, 6], Activation::Relu)?, 4, s);
    let lenet = |s| Model::init(FeatureMap::lenet(Activation::Relu, Some(0.5))?, 10, s);
    for base in [BaseLoss::ModifiedHuber, BaseLoss::CrossEntropy] {
        let cfg = LossConfig::with_bound(base, 0.01)?;
        let tag = match base {
            BaseLoss::ModifiedHuber => "mh",
            BaseLoss::CrossEntropy => "ce",
        };
        out.push(check_network(&format!("mlp/{tag}+lm"), &mlp, 4, &cfg, Mode::Train, points, None, seed, NETWORK_TOL)?);
        out.push(check_network(&format!("lenet/{tag}+lm+do"), &lenet, 2, &cfg, Mode::Train, points, Some(coords), seed, NETWORK_TOL)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::BaseLoss;
    use crate::model::{Activation, FeatureMap};

    #[test]
    fn huber_suite_passes() {
        let r = check_modified_huber(1000, 3, 1e-6).unwrap();
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn small_mlp_every_coordinate() {
        let build = |s| Model::init(FeatureMap::mlp(vec![4], &[5, 3], Activation::Relu)?, 3, s);
        let cfg = LossConfig::with_bound(BaseLoss::ModifiedHuber, 0.01).unwrap();
        let r = check_network("mlp", &build, 3, &cfg, Mode::Train, 3, None, 1, 1e-4).unwrap();
        assert!(r.passed(), "{r:?}");
        assert!(r.checked > 100);
    }
}
