//! Exact maximal-margin hyperplane for tiny linearly separable sets.
//!
//! The optimal hyperplane is the minimum-norm solution of the equality system
//! `y_i (w·x_i + b) = 1` over some set of at most `n + 1` affinely independent
//! training points. Every such subset is enumerated, its minimum-norm solution
//! is found from the Gram system, and the shortest `w` that satisfies every
//! inequality `y_i (w·x_i + b) >= 1` is kept.

use serde::{Deserialize, Serialize};

use crate::data::LabeledVectors;
use crate::error::{Error, Result};

/// Largest instance the exhaustive search accepts.
pub const MAX_POINTS: usize = 64;
pub const MAX_DIM: usize = 3;

/// Residual tolerance for feasibility and for membership in the support set.
pub const ORACLE_TOL: f64 = 1e-9;

/// Canonical separating hyperplane: `min_i y_i (w·x_i + b) = 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaxMargin {
    pub w: Vec<f64>,
    pub b: f64,
    /// Geometric margin `1 / ‖w‖`.
    pub rho: f64,
    /// Indices with `y_i (w·x_i + b) = 1` within [`ORACLE_TOL`].
    pub support: Vec<usize>,
}

impl MaxMargin {
    pub fn decision(&self, x: &[f64]) -> f64 {
        dot(&self.w, x) + self.b
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves `a x = rhs` for a small dense system; `None` when (near) singular.
fn solve(mut a: Vec<Vec<f64>>, mut rhs: Vec<f64>) -> Option<Vec<f64>> {
    let n = rhs.len();
    let scale = a.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() <= 1e-10 * scale {
            return None;
        }
        a.swap(col, piv);
        rhs.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            if f != 0.0 {
                for c in col..n {
                    a[r][c] -= f * a[col][c];
                }
                rhs[r] -= f * rhs[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (rhs[r] - s) / a[r][r];
    }
    Some(x)
}

/// Minimum-norm `(w, b)` with `w·x_i + b = y_i` on `subset`; `b` fixed at 0 when `!with_bias`.
fn min_norm_on(data: &LabeledVectors, subset: &[usize], with_bias: bool) -> Option<(Vec<f64>, f64)> {
    let k = subset.len();
    let size = if with_bias { k + 1 } else { k };
    let mut a = vec![vec![0.0; size]; size];
    let mut rhs = vec![0.0; size];
    for (r, &i) in subset.iter().enumerate() {
        for (c, &j) in subset.iter().enumerate() {
            a[r][c] = dot(&data.points[i], &data.points[j]);
        }
        if with_bias {
            a[r][k] = 1.0;
            a[k][r] = 1.0;
        }
        rhs[r] = data.labels[i];
    }
    let sol = solve(a, rhs)?;
    let mut w = vec![0.0; data.dim()];
    for (r, &i) in subset.iter().enumerate() {
        for (wj, xj) in w.iter_mut().zip(&data.points[i]) {
            *wj += sol[r] * xj;
        }
    }
    let b = if with_bias { sol[k] } else { 0.0 };
    Some((w, b))
}

fn for_each_subset(n: usize, max_size: usize, f: &mut dyn FnMut(&[usize])) {
    fn rec(start: usize, n: usize, left: usize, cur: &mut Vec<usize>, f: &mut dyn FnMut(&[usize])) {
        if !cur.is_empty() {
            f(cur);
        }
        if left == 0 {
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, left - 1, cur, f);
            cur.pop();
        }
    }
    rec(0, n, max_size, &mut Vec::new(), f);
}

fn search(data: &LabeledVectors, with_bias: bool) -> Result<MaxMargin> {
    if data.len() > MAX_POINTS || data.dim() > MAX_DIM {
        return Err(Error::Usage(format!(
            "exact search limited to {MAX_POINTS} points in <= {MAX_DIM} dimensions, got {} in {}",
            data.len(),
            data.dim()
        )));
    }
    if !data.labels.contains(&1.0) || !data.labels.contains(&-1.0) {
        return Err(Error::Data("both classes must be present".into()));
    }
    let max_size = if with_bias { data.dim() + 1 } else { data.dim() };
    let mut best: Option<(f64, Vec<f64>, f64)> = None;
    for_each_subset(data.len(), max_size, &mut |subset| {
        if with_bias {
            let first = data.labels[subset[0]];
            if subset.iter().all(|&i| data.labels[i] == first) {
                return;
            }
        }
        let Some((w, b)) = min_norm_on(data, subset, with_bias) else { return };
        let norm2 = dot(&w, &w);
        if best.as_ref().is_some_and(|(n, _, _)| norm2 >= *n) {
            return;
        }
        let feasible = data.points.iter().zip(&data.labels).all(|(x, y)| y * (dot(&w, x) + b) >= 1.0 - ORACLE_TOL);
        if feasible {
            best = Some((norm2, w, b));
        }
    });
    let (norm2, w, b) = best.ok_or_else(|| Error::Infeasible("data are not linearly separable".into()))?;
    if norm2 <= 0.0 {
        return Err(Error::Infeasible("degenerate zero-norm separator".into()));
    }
    let support = data
        .points
        .iter()
        .zip(&data.labels)
        .enumerate()
        .filter(|(_, (x, y))| (*y * (dot(&w, x) + b) - 1.0).abs() <= ORACLE_TOL)
        .map(|(i, _)| i)
        .collect();
    Ok(MaxMargin { rho: 1.0 / norm2.sqrt(), w, b, support })
}

/// Optimal hyperplane `(w*, b*)` with free bias.
pub fn exact_max_margin(data: &LabeledVectors) -> Result<MaxMargin> {
    search(data, true)
}

/// Optimal hyperplane constrained through the origin (`b* = 0`).
pub fn exact_max_margin_through_origin(data: &LabeledVectors) -> Result<MaxMargin> {
    search(data, false)
}

/// Leave-one-out error count of a trainer, with the per-point outcome.
///
/// A held-out point counts as an error when the trainer's hyperplane on the
/// remaining points gives `y (w·x + b) <= 0`, or when the remaining points
/// cannot be trained on (e.g. a single class is left).
pub fn loo_errors(data: &LabeledVectors, trainer: &dyn Fn(&LabeledVectors) -> Result<MaxMargin>) -> Result<(usize, Vec<bool>)> {
    let mut wrong = Vec::with_capacity(data.len());
    for i in 0..data.len() {
        let rest = data.without(i);
        let err = if !rest.labels.contains(&1.0) || !rest.labels.contains(&-1.0) {
            true
        } else {
            let h = trainer(&rest)?;
            data.labels[i] * h.decision(&data.points[i]) <= 0.0
        };
        wrong.push(err);
    }
    Ok((wrong.iter().filter(|&&e| e).count(), wrong))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lv(points: Vec<Vec<f64>>, labels: Vec<f64>) -> LabeledVectors {
        LabeledVectors::new(points, labels).unwrap()
    }

    #[test]
    fn symmetric_pair() {
        let mm = exact_max_margin(&lv(vec![vec![-1.0], vec![1.0]], vec![-1.0, 1.0])).unwrap();
        assert!((mm.w[0] - 1.0).abs() < 1e-12);
        assert!(mm.b.abs() < 1e-12);
        assert!((mm.rho - 1.0).abs() < 1e-12);
        assert_eq!(mm.support, vec![0, 1]);
    }

    #[test]
    fn far_point_is_inactive() {
        let d = lv(vec![vec![0.0, 1.0], vec![0.0, -1.0], vec![5.0, 1.0]], vec![1.0, -1.0, 1.0]);
        let mm = exact_max_margin(&d).unwrap();
        assert!(mm.w[0].abs() < 1e-12 && (mm.w[1] - 1.0).abs() < 1e-12);
        assert!(mm.b.abs() < 1e-12);
        assert!((mm.rho - 1.0).abs() < 1e-12);
        assert!(mm.support.contains(&0) && mm.support.contains(&1));
    }

    #[test]
    fn homogeneity_under_scaling() {
        let pts = vec![vec![0.3, 1.2], vec![-0.5, -0.4], vec![1.0, 0.9], vec![-1.1, 0.1]];
        let labels = vec![1.0, -1.0, 1.0, -1.0];
        let a = exact_max_margin(&lv(pts.clone(), labels.clone())).unwrap();
        let c = 3.5;
        let scaled: Vec<Vec<f64>> = pts.iter().map(|p| p.iter().map(|v| v * c).collect()).collect();
        let b = exact_max_margin(&lv(scaled, labels)).unwrap();
        assert!((b.rho - c * a.rho).abs() < 1e-9);
        let na = a.w.iter().map(|v| v * v).sum::<f64>().sqrt();
        let nb = b.w.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((nb - na / c).abs() < 1e-9);
    }

    #[test]
    fn inseparable_is_infeasible() {
        let d = lv(vec![vec![0.0], vec![1.0], vec![2.0]], vec![1.0, -1.0, 1.0]);
        assert!(matches!(exact_max_margin(&d), Err(Error::Infeasible(_))));
    }

    #[test]
    fn through_origin_variant() {
        // Separable with bias, but not through the origin.
        let d = lv(vec![vec![1.0], vec![2.0]], vec![-1.0, 1.0]);
        assert!(exact_max_margin(&d).is_ok());
        assert!(matches!(exact_max_margin_through_origin(&d), Err(Error::Infeasible(_))));
        let d = lv(vec![vec![1.0, 1.0], vec![-2.0, -1.0]], vec![1.0, -1.0]);
        let mm = exact_max_margin_through_origin(&d).unwrap();
        assert_eq!(mm.b, 0.0);
        assert!(mm.support.len() <= 2);
    }

    #[test]
    fn loo_on_well_separated_clusters() {
        let pts = vec![vec![-5.0, 0.0], vec![-5.1, 0.1], vec![-4.9, -0.1], vec![5.0, 0.0], vec![5.1, 0.1], vec![4.9, -0.1]];
        let d = lv(pts, vec![-1.0, -1.0, -1.0, 1.0, 1.0, 1.0]);
        assert_eq!(loo_errors(&d, &exact_max_margin).unwrap().0, 0);
    }

    #[test]
    fn duplicated_points_are_never_loo_errors() {
        let base = vec![vec![0.2, 1.0], vec![-0.3, -1.2], vec![1.5, 0.4], vec![-1.0, -0.2]];
        let labels = vec![1.0, -1.0, 1.0, -1.0];
        let pts: Vec<Vec<f64>> = base.iter().chain(&base).cloned().collect();
        let ys: Vec<f64> = labels.iter().chain(&labels).copied().collect();
        let (errs, per) = loo_errors(&lv(pts, ys), &exact_max_margin).unwrap();
        assert_eq!(errs, 0);
        assert!(per.iter().all(|e| !e));
    }

    #[test]
    fn size_limits() {
        let pts: Vec<Vec<f64>> = (0..4).map(|i| vec![i as f64; 4]).collect();
        let d = lv(pts, vec![1.0, -1.0, 1.0, -1.0]);
        assert!(matches!(exact_max_margin(&d), Err(Error::Usage(_))));
    }
}
