//! Randomized property suites for the margin theory on synthetic separable data.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bounds::{
    exact_max_margin, exact_max_margin_through_origin, loo_errors, novikoff_steps, perceptron_corrections, ORACLE_TOL,
};
use crate::data::{synth_separable, LabeledVectors};
use crate::diffcore::rng_stream;
use crate::error::Result;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NovikoffCase {
    pub dim: usize,
    pub l: usize,
    pub radius: f64,
    pub rho_star: f64,
    pub bound: u64,
    pub corrections: u64,
    pub converged: bool,
}

impl NovikoffCase {
    pub fn holds(&self) -> bool {
        self.converged && self.corrections <= self.bound
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NovikoffReport {
    pub cases: Vec<NovikoffCase>,
}

impl NovikoffReport {
    pub fn passed(&self) -> usize {
        self.cases.iter().filter(|c| c.holds()).count()
    }
}

/// Perceptron corrections versus `floor(D²/ρ*²)`, with `D = max_i |x_i|` and
/// `ρ*` the exact through-origin maximal margin, over random instances of
/// dimension 2-3 and 10-50 points.
pub fn novikoff_suite(instances: usize, seed: u64) -> Result<NovikoffReport> {
    let mut cases = Vec::with_capacity(instances);
    for k in 0..instances as u64 {
        let mut rng = rng_stream(seed, &[0x0b1c, k]);
        let dim = rng.random_range(2..=3);
        let l = rng.random_range(10..=50);
        let rho0 = rng.random_range(0.05..0.3);
        let data = synth_separable(l, dim, rho0, 1.0, seed ^ (k << 8))?;
        let opt = exact_max_margin_through_origin(&data)?;
        let radius = data.radius_of_points();
        let bound = novikoff_steps(radius, opt.rho)?;
        let run = perceptron_corrections(&data, 100_000, None);
        cases.push(NovikoffCase {
            dim,
            l,
            radius,
            rho_star: opt.rho,
            bound,
            corrections: run.corrections,
            converged: run.converged,
        });
    }
    Ok(NovikoffReport { cases })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LooCase {
    pub l: usize,
    pub loo_errors: usize,
    pub support: usize,
    /// Max coordinate difference of `(w*, b*)` after permuting the input order.
    pub permutation_gap: f64,
    pub support_within_dim_bound: bool,
}

impl LooCase {
    pub fn loo_bounded(&self) -> bool {
        self.loo_errors <= self.support
    }

    pub fn unique(&self) -> bool {
        self.permutation_gap <= 1e-9
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LooReport {
    pub cases: Vec<LooCase>,
}

impl LooReport {
    pub fn loo_passed(&self) -> usize {
        self.cases.iter().filter(|c| c.loo_bounded()).count()
    }

    pub fn unique_passed(&self) -> usize {
        self.cases.iter().filter(|c| c.unique()).count()
    }
}

/// Tiny planar instance (4-12 points, at least two per class), separable with
/// an offset so the bias matters.
pub fn tiny_instance(seed: u64, k: u64) -> Result<LabeledVectors> {
    for attempt in 0.. {
        let mut rng = rng_stream(seed, &[0x1005, k, attempt]);
        let l = rng.random_range(4..=12);
        let rho0 = rng.random_range(0.05..0.4);
        let mut data = synth_separable(l, 2, rho0, 1.0, seed ^ (k << 16) ^ attempt)?;
        let shift = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        for p in &mut data.points {
            p[0] += shift[0];
            p[1] += shift[1];
        }
        data.radius = None;
        let pos = data.labels.iter().filter(|&&y| y > 0.0).count();
        if pos >= 2 && data.len() - pos >= 2 {
            return Ok(data);
        }
    }
    unreachable!()
}

/// Leave-one-out errors of the exact optimal hyperplane versus its support-set
/// size, plus uniqueness of the optimum under a random permutation of the input.
pub fn loo_suite(instances: usize, seed: u64) -> Result<LooReport> {
    let mut cases = Vec::with_capacity(instances);
    for k in 0..instances as u64 {
        let data = tiny_instance(seed, k)?;
        let full = exact_max_margin(&data)?;
        let (errs, _) = loo_errors(&data, &exact_max_margin)?;
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng_stream(seed, &[0x9e7, k]));
        let permuted = LabeledVectors::new(
            order.iter().map(|&i| data.points[i].clone()).collect(),
            order.iter().map(|&i| data.labels[i]).collect(),
        )?;
        let other = exact_max_margin(&permuted)?;
        let gap = full.w.iter().zip(&other.w).map(|(a, b)| (a - b).abs()).fold((full.b - other.b).abs(), f64::max);
        let origin_ok = exact_max_margin_through_origin(&data).map_or(true, |o| o.support.len() <= data.dim());
        cases.push(LooCase {
            l: data.len(),
            loo_errors: errs,
            support: full.support.len(),
            permutation_gap: gap,
            support_within_dim_bound: full.support.len() <= data.dim() + 1 && origin_ok,
        });
    }
    Ok(LooReport { cases })
}

/// Checks that an oracle solution is canonical on its data.
pub fn check_canonical(data: &LabeledVectors, w: &[f64], b: f64, support: &[usize]) -> bool {
    let margin = |i: usize| data.labels[i] * (w.iter().zip(&data.points[i]).map(|(a, x)| a * x).sum::<f64>() + b);
    (0..data.len()).all(|i| margin(i) >= 1.0 - ORACLE_TOL) && support.iter().all(|&i| (margin(i) - 1.0).abs() <= ORACLE_TOL)
}
