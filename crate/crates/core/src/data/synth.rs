//! Linearly separable point sets with a guaranteed margin through the origin.

use rand::Rng;

use super::{norm, LabeledVectors};
use crate::diffcore::{rng_stream, RngStream};
use crate::error::{Error, Result};

fn gaussian(rng: &mut RngStream) -> f64 {
    // Box-Muller.
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn unit_vector(dim: usize, rng: &mut RngStream) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| gaussian(rng)).collect();
        let n = norm(&v);
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Draws `n_points` uniformly from the open ball of radius `radius`, keeping
/// only points with `|w*·x| >= rho0` for a random unit direction `w*`, and
/// labels them `sign(w*·x)`. Every point then satisfies `y (w*·x) >= rho0`
/// and `|x| < radius`; both classes are present.
pub fn synth_separable(n_points: usize, dim: usize, rho0: f64, radius: f64, seed: u64) -> Result<LabeledVectors> {
    if !(rho0 > 0.0 && rho0 < radius) {
        return Err(Error::Domain(format!("need 0 < rho0 < D, got rho0={rho0} D={radius}")));
    }
    if n_points < 2 || dim == 0 {
        return Err(Error::Usage("need at least two points in at least one dimension".into()));
    }
    const RESTARTS: u64 = 64;
    for attempt in 0..RESTARTS {
        let mut rng = rng_stream(seed, &[0x5e, attempt]);
        let w = unit_vector(dim, &mut rng);
        let mut points = Vec::with_capacity(n_points);
        let mut labels = Vec::with_capacity(n_points);
        let max_draws = 10_000 * n_points;
        let mut draws = 0;
        while points.len() < n_points && draws < max_draws {
            draws += 1;
            let dir = unit_vector(dim, &mut rng);
            let r = radius * rng.random::<f64>().powf(1.0 / dim as f64);
            let x: Vec<f64> = dir.iter().map(|d| d * r).collect();
            let proj: f64 = x.iter().zip(&w).map(|(a, b)| a * b).sum();
            if proj.abs() >= rho0 && norm(&x) < radius {
                labels.push(proj.signum());
                points.push(x);
            }
        }
        if points.len() == n_points && labels.contains(&1.0) && labels.contains(&-1.0) {
            let mut lv = LabeledVectors::new(points, labels)?;
            lv.rho0 = Some(rho0);
            lv.radius = Some(radius);
            return Ok(lv);
        }
    }
    Err(Error::Data(format!("could not sample {n_points} separable points (dim {dim}, rho0 {rho0}, D {radius})")))
}

/// Unit direction used by [`synth_separable`] for a given seed and attempt;
/// exposed for warm-start tests.
pub fn synth_direction(dim: usize, seed: u64, attempt: u64) -> Vec<f64> {
    unit_vector(dim, &mut rng_stream(seed, &[0x5e, attempt]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construction_guarantees() {
        for seed in 0..20 {
            let lv = synth_separable(30, 3, 0.2, 1.5, seed).unwrap();
            assert_eq!(lv.len(), 30);
            assert!(lv.points.iter().all(|p| norm(p) < 1.5));
            let w = synth_direction(3, seed, 0);
            let margin = lv
                .points
                .iter()
                .zip(&lv.labels)
                .map(|(p, y)| y * p.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>())
                .fold(f64::INFINITY, f64::min);
            assert!(margin >= 0.2);
        }
    }

    #[test]
    fn domain_errors() {
        assert!(matches!(synth_separable(10, 2, 2.0, 1.0, 0), Err(Error::Domain(_))));
        assert!(matches!(synth_separable(10, 2, 0.0, 1.0, 0), Err(Error::Domain(_))));
    }
}
