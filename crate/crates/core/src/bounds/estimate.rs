//! Margin, radius and support-vector estimates of a trained model in feature space.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{MarginHead, Model};
use crate::tensor::Tensor;

/// Per-class margins `rho_c = 1/‖w_c‖`, shared radius `D_l = max_i ‖z(x_i)‖`,
/// and the diagnostic `D_l² ‖w_c‖² = (D_l / rho_c)²`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginRadius {
    pub d_l: f64,
    pub rho: Vec<f64>,
    pub w_norm: Vec<f64>,
    pub dl2w2: Vec<f64>,
}

pub fn margin_radius_from(features: &Tensor, head: &MarginHead) -> Result<MarginRadius> {
    if features.shape().len() != 2 || features.shape()[1] != head.dim() {
        return Err(Error::Dimension(format!("features {:?} vs head dimension {}", features.shape(), head.dim())));
    }
    let d_l = features.rows().map(|z| z.iter().map(|v| v * v).sum::<f64>().sqrt()).fold(0.0, f64::max);
    let mut out = MarginRadius { d_l, rho: Vec::new(), w_norm: Vec::new(), dl2w2: Vec::new() };
    for c in 0..head.n_classes() {
        let n = head.class_weights(c).iter().map(|v| v * v).sum::<f64>().sqrt();
        if n == 0.0 {
            return Err(Error::Domain(format!("class {c} has a zero weight vector; margin undefined")));
        }
        out.rho.push(1.0 / n);
        out.w_norm.push(n);
        out.dl2w2.push(d_l * d_l * n * n);
    }
    Ok(out)
}

/// Points inside or on the margin band of one one-vs-rest classifier.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupportSet {
    /// Indices with `|s_c(x_i)| <= 1 + tol`.
    pub indices: Vec<usize>,
    /// Count with `|s_c(x_i)|` in `[1 - tol, 1 + tol]`.
    pub essential: usize,
}

pub fn support_vectors_from(scores: &Tensor, tol: f64) -> Result<Vec<SupportSet>> {
    if tol < 0.0 || !tol.is_finite() {
        return Err(Error::Usage(format!("tolerance must be >= 0, got {tol}")));
    }
    if scores.shape().len() != 2 {
        return Err(Error::Dimension(format!("scores must be [N, C], got {:?}", scores.shape())));
    }
    let classes = scores.shape()[1];
    let mut sets = vec![SupportSet { indices: Vec::new(), essential: 0 }; classes];
    for (i, row) in scores.rows().enumerate() {
        for (c, s) in row.iter().enumerate() {
            let a = s.abs();
            if a <= 1.0 + tol {
                sets[c].indices.push(i);
                if a >= 1.0 - tol {
                    sets[c].essential += 1;
                }
            }
        }
    }
    Ok(sets)
}

/// Eval-mode features `[N, m]` and scores `[N, C]` over a dataset, in batches.
pub fn dataset_outputs(model: &Model, dataset: &Dataset, batch: usize) -> Result<(Tensor, Tensor)> {
    if dataset.is_empty() {
        return Err(Error::Usage("empty dataset".into()));
    }
    let batch = batch.max(1);
    let (m, c) = (model.feature_dim(), model.n_classes());
    let mut feats = Vec::with_capacity(dataset.len() * m);
    let mut scores = Vec::with_capacity(dataset.len() * c);
    let idx: Vec<usize> = (0..dataset.len()).collect();
    for chunk in idx.chunks(batch) {
        let part = dataset.select(chunk)?;
        let (f, s) = model.evaluate(&part.images, crate::diffcore::Mode::Eval, &mut crate::diffcore::rng_stream(0, &[]))?;
        feats.extend_from_slice(f.values());
        scores.extend_from_slice(s.values());
    }
    Ok((Tensor::new(vec![dataset.len(), m], feats)?, Tensor::new(vec![dataset.len(), c], scores)?))
}

pub fn margin_radius(model: &Model, dataset: &Dataset) -> Result<MarginRadius> {
    let (f, _) = dataset_outputs(model, dataset, 256)?;
    margin_radius_from(&f, &model.head)
}

pub fn support_vectors(model: &Model, dataset: &Dataset, tol: f64) -> Result<Vec<SupportSet>> {
    let (_, s) = dataset_outputs(model, dataset, 256)?;
    support_vectors_from(&s, tol)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn margin_examples() {
        let head = MarginHead::new(Tensor::new(vec![1, 2], vec![0.5, 0.0]).unwrap(), Tensor::zeros(vec![1])).unwrap();
        let feats = Tensor::new(vec![2, 2], vec![3.0, 4.0, 1.0, 0.0]).unwrap();
        let mr = margin_radius_from(&feats, &head).unwrap();
        assert_eq!(mr.rho, vec![2.0]);
        assert_eq!(mr.d_l, 5.0);
        assert!((mr.dl2w2[0] - (mr.d_l / mr.rho[0]).powi(2)).abs() < 1e-9);
    }

    #[test]
    fn zero_weight_is_undefined_margin() {
        let head = MarginHead::new(Tensor::zeros(vec![1, 2]), Tensor::zeros(vec![1])).unwrap();
        let feats = Tensor::new(vec![1, 2], vec![1.0, 1.0]).unwrap();
        assert!(matches!(margin_radius_from(&feats, &head), Err(Error::Domain(_))));
    }

    #[test]
    fn support_examples() {
        let exact = Tensor::new(vec![3, 1], vec![1.0, -1.0, 1.0]).unwrap();
        let s = support_vectors_from(&exact, 0.0).unwrap();
        assert_eq!(s[0].indices, vec![0, 1, 2]);
        assert_eq!(s[0].essential, 3);
        let far = Tensor::new(vec![2, 2], vec![2.5, -3.0, -2.1, 4.0]).unwrap();
        let s = support_vectors_from(&far, 0.1).unwrap();
        assert!(s.iter().all(|set| set.indices.is_empty() && set.essential == 0));
        let mixed = Tensor::new(vec![3, 1], vec![0.2, 0.995, -1.5]).unwrap();
        let s = support_vectors_from(&mixed, 0.01).unwrap();
        assert_eq!(s[0].indices, vec![0, 1]);
        assert_eq!(s[0].essential, 1);
    }
}
