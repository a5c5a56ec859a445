//! Image datasets, labelled point sets and their preprocessing.

mod augment;
mod idx;
mod synth;

pub use augment::{apply_affine, random_affine, AffineParams, AugmentConfig};
pub use idx::{load_idx, write_idx};
pub use synth::{synth_direction, synth_separable};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::diffcore::rng_stream;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// MNIST pixel statistics.
pub const MNIST_MEAN: f64 = 0.1307;
pub const MNIST_STD: f64 = 0.3081;

/// Training fractions (percent) of the sweep protocol.
pub const SWEEP_FRACTIONS: [u32; 8] = [1, 5, 10, 20, 40, 60, 80, 100];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: f64,
    pub std: f64,
}

/// Labelled images `[N, C, H, W]` with class indices in `[0, n_classes)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub n_classes: usize,
    /// `None` while pixels are still in `[0, 1]`.
    pub normalization: Option<Normalization>,
    pub split: Split,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<usize>, n_classes: usize, split: Split) -> Result<Self> {
        if images.shape().len() != 4 {
            return Err(Error::Dimension(format!("images must be [N, C, H, W], got {:?}", images.shape())));
        }
        if images.shape()[0] != labels.len() {
            return Err(Error::Data(format!(
                "count mismatch: {} images, {} labels",
                images.shape()[0],
                labels.len()
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::Data(format!("label {l} outside [0, {n_classes})")));
        }
        images.check_finite("dataset pixels")?;
        Ok(Self { images, labels, n_classes, normalization: None, split })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `[C, H, W]`.
    pub fn example_shape(&self) -> &[usize] {
        &self.images.shape()[1..]
    }

    pub fn example_len(&self) -> usize {
        self.example_shape().iter().product()
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let n = self.example_len();
        &self.images.values()[i * n..(i + 1) * n]
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Copies the listed examples, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&i) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::Usage(format!("index {i} out of range for {} examples", self.len())));
        }
        if indices.is_empty() {
            return Err(Error::Usage("empty selection".into()));
        }
        let mut values = Vec::with_capacity(indices.len() * self.example_len());
        for &i in indices {
            values.extend_from_slice(self.image(i));
        }
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(self.example_shape());
        Ok(Self {
            images: Tensor::new(shape, values)?,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            n_classes: self.n_classes,
            normalization: self.normalization,
            split: self.split,
        })
    }
}

/// `pixel <- (pixel - mean) / std` on every channel.
pub fn normalize(dataset: &Dataset, mean: f64, std: f64) -> Result<Dataset> {
    let mut out = dataset.clone();
    normalize_pixels(out.images.values_mut(), mean, std)?;
    out.normalization = Some(Normalization { mean, std });
    Ok(out)
}

pub fn normalize_pixels(pixels: &mut [f64], mean: f64, std: f64) -> Result<()> {
    if !(std > 0.0 && std.is_finite() && mean.is_finite()) {
        return Err(Error::Domain(format!("normalization needs finite mean and std > 0, got mean={mean} std={std}")));
    }
    for p in pixels {
        *p = (*p - mean) / std;
    }
    Ok(())
}

/// Per-class sample sizes for keeping `pct` percent of `counts`: the total is
/// `round(pct% · N)` and classes share it proportionally to their size
/// (largest-remainder apportionment).
pub fn stratified_counts(counts: &[usize], pct: u32) -> Result<Vec<usize>> {
    if pct == 0 || pct > 100 {
        return Err(Error::Usage(format!("fraction {pct}% outside 1..=100")));
    }
    let n: usize = counts.iter().sum();
    let total = ((n as u64 * pct as u64) as f64 / 100.0).round() as usize;
    let quotas: Vec<f64> = counts.iter().map(|&c| c as f64 * pct as f64 / 100.0).collect();
    let mut alloc: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    // Largest fractional part first, lowest class index on ties.
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let mut missing = total.saturating_sub(alloc.iter().sum());
    for &c in order.iter().cycle().take(counts.len() * 2) {
        if missing == 0 {
            break;
        }
        if alloc[c] < counts[c] {
            alloc[c] += 1;
            missing -= 1;
        }
    }
    Ok(alloc)
}

/// Stratified subset holding `pct` percent of the examples, chosen by `seed`.
/// Selected examples keep their original relative order; 100% is the input.
pub fn subsample_fraction(dataset: &Dataset, pct: u32, seed: u64) -> Result<Dataset> {
    if dataset.is_empty() {
        return Err(Error::Usage("cannot subsample an empty dataset".into()));
    }
    let counts = dataset.class_counts();
    let alloc = stratified_counts(&counts, pct)?;
    if pct == 100 {
        return Ok(dataset.clone());
    }
    if let Some(c) = (0..counts.len()).find(|&c| counts[c] > 0 && alloc[c] == 0) {
        return Err(Error::Data(format!("class {c} has no examples at {pct}%; cannot stratify")));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); dataset.n_classes];
    for (i, &l) in dataset.labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let mut chosen = Vec::new();
    for (c, mut idx) in by_class.into_iter().enumerate() {
        let mut rng = rng_stream(seed, &[0x5b5, pct as u64, c as u64]);
        idx.shuffle(&mut rng);
        chosen.extend_from_slice(&idx[..alloc[c]]);
    }
    chosen.sort_unstable();
    dataset.select(&chosen)
}

/// Points in `R^n` with labels `±1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledVectors {
    pub points: Vec<Vec<f64>>,
    pub labels: Vec<f64>,
    /// Margin lower bound the generator guarantees, when known.
    pub rho0: Option<f64>,
    /// Declared radius bound `|x_i| < D`, when known.
    pub radius: Option<f64>,
}

impl LabeledVectors {
    pub fn new(points: Vec<Vec<f64>>, labels: Vec<f64>) -> Result<Self> {
        if points.len() != labels.len() {
            return Err(Error::Data(format!("{} points, {} labels", points.len(), labels.len())));
        }
        let dim = points.first().map_or(0, Vec::len);
        if dim == 0 || points.iter().any(|p| p.len() != dim) {
            return Err(Error::Dimension("points must share a positive dimension".into()));
        }
        if labels.iter().any(|&y| y != 1.0 && y != -1.0) {
            return Err(Error::Usage("labels must be +1 or -1".into()));
        }
        if !labels.contains(&1.0) || !labels.contains(&-1.0) {
            return Err(Error::Data("both classes must be present".into()));
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite coordinate".into()));
        }
        Ok(Self { points, labels, rho0: None, radius: None })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    /// `max_i |x_i|`.
    pub fn radius_of_points(&self) -> f64 {
        self.points.iter().map(|p| norm(p)).fold(0.0, f64::max)
    }

    /// Copy without example `i`.
    pub fn without(&self, i: usize) -> Self {
        let mut out = self.clone();
        out.points.remove(i);
        out.labels.remove(i);
        out
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
