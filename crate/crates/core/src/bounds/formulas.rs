//! Closed-form generalization bounds.

use serde::{Deserialize, Serialize};

use crate::error::{domain_check, Error, Result};

/// Mean of per-example losses, accumulated with Neumaier compensation.
pub fn empirical_risk(losses: &[f64]) -> Result<f64> {
    if losses.is_empty() {
        return Err(Error::Usage("empirical risk of an empty sample".into()));
    }
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for &x in losses {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    Ok((sum + comp) / losses.len() as f64)
}

/// `4 (h (ln(2l/h) + 1) - ln(eta/4)) / l`.
pub fn epsilon_l(l: usize, h: f64, eta: f64) -> Result<f64> {
    domain_check(l >= 1, || format!("l must be >= 1, got {l}"))?;
    domain_check(h >= 1.0 && h.is_finite(), || format!("h must be >= 1, got {h}"))?;
    domain_check(eta > 0.0 && eta < 1.0, || format!("eta must lie in (0, 1), got {eta}"))?;
    let l = l as f64;
    Ok(4.0 * (h * ((2.0 * l / h).ln() + 1.0) - (eta / 4.0).ln()) / l)
}

/// `R_emp + (B eps / 2) (1 + sqrt(1 + 4 R_emp / (B eps)))`.
pub fn risk_bound(remp: f64, b: f64, eps: f64) -> Result<f64> {
    domain_check(remp >= 0.0 && remp.is_finite(), || format!("remp must be >= 0, got {remp}"))?;
    domain_check(b > 0.0 && b.is_finite(), || format!("B must be > 0, got {b}"))?;
    domain_check(eps > 0.0 && eps.is_finite(), || format!("epsilon must be > 0, got {eps}"))?;
    let be = b * eps;
    Ok(remp + be / 2.0 * (1.0 + (1.0 + 4.0 * remp / be).sqrt()))
}

/// VC-dimension bound of Δ-margin hyperplanes in a radius-`R` ball of `R^n`:
/// `min(floor(R²/Δ²), n) + 1`.
pub fn vc_bound(r: f64, delta: f64, n: usize) -> Result<usize> {
    domain_check(r > 0.0 && r.is_finite(), || format!("R must be > 0, got {r}"))?;
    domain_check(delta > 0.0 && delta.is_finite(), || format!("Delta must be > 0, got {delta}"))?;
    domain_check(n >= 1, || "n must be >= 1".into())?;
    let ratio = (r * r) / (delta * delta);
    let capped = if ratio >= n as f64 { n } else { ratio.floor() as usize };
    Ok(capped + 1)
}

/// `m/l + (xi/2)(1 + sqrt(1 + 4m/(l xi)))` with `xi = epsilon_l(l, h, eta)`.
pub fn p_error_bound(m: usize, l: usize, h: f64, eta: f64) -> Result<f64> {
    domain_check(m <= l, || format!("m = {m} exceeds l = {l}"))?;
    let xi = epsilon_l(l, h, eta)?;
    let (mf, lf) = (m as f64, l as f64);
    Ok(mf / lf + xi / 2.0 * (1.0 + (1.0 + 4.0 * mf / (lf * xi)).sqrt()))
}

/// Maximum number of perceptron corrections, `floor(D²/ρ²)`.
pub fn novikoff_steps(d: f64, rho: f64) -> Result<u64> {
    domain_check(rho > 0.0 && d.is_finite(), || format!("rho must be > 0, got {rho}"))?;
    domain_check(d >= rho, || format!("need D >= rho, got D={d} rho={rho}"))?;
    Ok(((d * d) / (rho * rho)).floor() as u64)
}

/// Expected-risk bounds of the optimal hyperplane.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErBounds {
    /// `K / (l + 1)`.
    pub er_sv: f64,
    /// `(D/ρ)² / (l + 1)`.
    pub er_novikoff: f64,
    pub er_min: f64,
}

pub fn er_bounds(k: usize, d: f64, rho: f64, l: usize) -> Result<ErBounds> {
    domain_check(l >= 1, || "l must be >= 1".into())?;
    domain_check(rho > 0.0 && d >= 0.0 && d.is_finite(), || format!("need D >= 0 and rho > 0, got D={d} rho={rho}"))?;
    let denom = (l + 1) as f64;
    let er_sv = k as f64 / denom;
    let ratio = d / rho;
    let er_novikoff = ratio * ratio / denom;
    Ok(ErBounds { er_sv, er_novikoff, er_min: er_sv.min(er_novikoff) })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn empirical_risk_examples() {
        assert_eq!(empirical_risk(&[0.0, 0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(empirical_risk(&[1.0, 0.0, 1.0, 0.0]).unwrap(), 0.5);
        assert!(empirical_risk(&[]).is_err());
        // Compensated summation survives catastrophic cancellation.
        let v = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(empirical_risk(&v).unwrap(), 0.5);
    }

    #[test]
    fn epsilon_examples() {
        assert!(rel(epsilon_l(1000, 5.0, 0.05).unwrap(), 0.157_357_397_480_855_17) < 1e-12);
        assert!(epsilon_l(2000, 5.0, 0.05).unwrap() < epsilon_l(1000, 5.0, 0.05).unwrap());
        assert!(epsilon_l(1000, 5.0, 0.01).unwrap() > epsilon_l(1000, 5.0, 0.05).unwrap());
        assert!(matches!(epsilon_l(0, 5.0, 0.05), Err(Error::Domain(_))));
        assert!(matches!(epsilon_l(10, 0.5, 0.05), Err(Error::Domain(_))));
        assert!(matches!(epsilon_l(10, 2.0, 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn algebraic_collapses() {
        let eps = epsilon_l(1000, 5.0, 0.05).unwrap();
        assert_eq!(risk_bound(0.0, 1.0, eps).unwrap(), eps);
        assert_eq!(risk_bound(0.0, 2.5, eps).unwrap(), 2.5 * eps);
        assert_eq!(p_error_bound(0, 1000, 5.0, 0.05).unwrap(), eps);
    }

    #[test]
    fn risk_bound_is_monotone_in_remp() {
        let mut prev = 0.0;
        for i in 0..100 {
            let v = risk_bound(i as f64 * 0.01, 1.0, 0.2).unwrap();
            assert!(v >= prev && v >= i as f64 * 0.01);
            prev = v;
        }
    }

    #[test]
    fn vc_examples() {
        assert_eq!(vc_bound(2.0, 1.0, 10).unwrap(), 5);
        assert_eq!(vc_bound(1.0, 1.0, 84).unwrap(), 2);
        assert_eq!(vc_bound(10.0, 1.0, 5).unwrap(), 6);
        assert!(vc_bound(0.0, 1.0, 5).is_err());
    }

    #[test]
    fn p_error_decreases_in_l() {
        let mut prev = f64::INFINITY;
        for l in [100, 200, 400, 800, 1600, 3200] {
            let v = p_error_bound(5, l, 5.0, 0.05).unwrap();
            assert!(v < prev);
            prev = v;
        }
        assert!(p_error_bound(11, 10, 2.0, 0.1).is_err());
    }

    #[test]
    fn novikoff_examples() {
        assert_eq!(novikoff_steps(1.0, 0.5).unwrap(), 4);
        assert_eq!(novikoff_steps(0.7, 0.7).unwrap(), 1);
        assert_eq!(novikoff_steps(3.0, 0.7).unwrap(), 18);
        assert!(novikoff_steps(0.5, 1.0).is_err());
        assert!(novikoff_steps(1.0, 0.0).is_err());
    }

    #[test]
    fn er_examples() {
        assert!((er_bounds(3, 1.0, 1.0, 99).unwrap().er_sv - 0.03).abs() < 1e-15);
        assert!((er_bounds(0, 2.0, 1.0, 9).unwrap().er_novikoff - 0.4).abs() < 1e-15);
        for k in 0..20 {
            for d in [0.5, 1.0, 3.0] {
                let e = er_bounds(k, d, 0.7, 30).unwrap();
                assert!(e.er_min <= e.er_sv && e.er_min <= e.er_novikoff);
            }
        }
    }
}
