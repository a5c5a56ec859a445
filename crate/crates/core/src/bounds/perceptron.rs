use serde::{Deserialize, Serialize};

use crate::data::LabeledVectors;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerceptronRun {
    pub w: Vec<f64>,
    /// Total number of mistake-driven updates.
    pub corrections: u64,
    pub converged: bool,
    pub epochs: usize,
}

/// Classic perceptron through the origin: cycle over the data in order and
/// update `w <- w + y x` whenever `y (w·x) <= 0`, until an epoch makes no
/// mistake or `max_epochs` is reached.
pub fn perceptron_corrections(data: &LabeledVectors, max_epochs: usize, init: Option<&[f64]>) -> PerceptronRun {
    let mut w = init.map_or_else(|| vec![0.0; data.dim()], <[f64]>::to_vec);
    let mut corrections = 0;
    for epoch in 1..=max_epochs {
        let mut clean = true;
        for (x, &y) in data.points.iter().zip(&data.labels) {
            let s: f64 = w.iter().zip(x).map(|(a, b)| a * b).sum();
            if y * s <= 0.0 {
                for (wi, xi) in w.iter_mut().zip(x) {
                    *wi += y * xi;
                }
                corrections += 1;
                clean = false;
            }
        }
        if clean {
            return PerceptronRun { w, corrections, converged: true, epochs: epoch };
        }
    }
    PerceptronRun { w, corrections, converged: false, epochs: max_epochs }
}
