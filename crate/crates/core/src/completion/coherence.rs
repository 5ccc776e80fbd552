use faer::{Mat, MatRef};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::waveform::autocorrelation_at;

/// Grid size for the supremum in β_Q.
const BETA_GRID: usize = 100_000;

/// Analytic coherence bounds for a scene's Doppler/offset layout.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoherenceBounds {
    pub bound_mu_u: f64,
    pub bound_mu_v: f64,
    pub beta_q: f64,
    pub xi_t: f64,
    /// K ≤ Q/√β_Q(ξ_t).
    pub admissible: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoherenceReport {
    pub mu_u: f64,
    pub mu_v: f64,
    pub mu0: f64,
    pub mu1: f64,
    pub rank: usize,
    pub bounds: Option<CoherenceBounds>,
}

/// Empirical coherence of a matrix from its compact SVD.
///
/// The rank is the number of singular values at least `rank_tol` times the
/// largest. `mu1` is the smallest constant with
/// max|(U Vᴴ)_ij| ≤ mu1·sqrt(K/(n₁n₂)).
pub fn coherence(z: MatRef<'_, Complex64>, rank_tol: f64) -> Result<CoherenceReport> {
    let (n1, n2) = (z.nrows(), z.ncols());
    let svd = z
        .thin_svd()
        .map_err(|e| Error::Numerical(format!("SVD did not converge: {e:?}")))?;
    let s = svd.S().column_vector();
    let top = s[0].re;
    if top == 0.0 {
        return Err(Error::ZeroReference);
    }
    let k = (0..s.nrows()).filter(|&i| s[i].re >= rank_tol * top).count();
    let u = svd.U().subcols(0, k);
    let v = svd.V().subcols(0, k);
    let max_row = |m: MatRef<'_, Complex64>| {
        (0..m.nrows())
            .map(|i| (0..k).map(|j| m[(i, j)].norm_sqr()).sum::<f64>())
            .fold(0.0, f64::max)
    };
    let mu_u = n1 as f64 / k as f64 * max_row(u);
    let mu_v = n2 as f64 / k as f64 * max_row(v);
    let uv: Mat<Complex64> = u * v.adjoint();
    let max_entry = (0..n2)
        .flat_map(|j| (0..n1).map(move |i| (i, j)))
        .map(|(i, j)| uv[(i, j)].norm())
        .fold(0.0, f64::max);
    Ok(CoherenceReport {
        mu_u,
        mu_v,
        mu0: mu_u.max(mu_v),
        mu1: max_entry * ((n1 * n2) as f64 / k as f64).sqrt(),
        rank: k,
        bounds: None,
    })
}

/// Distance from x to the nearest integer.
pub fn wrap_distance(x: f64) -> f64 {
    (x - x.round()).abs()
}

/// sup over x ∈ [xi, 1/2] of sin²(πQx)/sin²(πx), on a dense grid.
pub fn beta_q(pulses: usize, xi: f64) -> f64 {
    let q = pulses as f64;
    let phi2 = |x: f64| {
        let d = (std::f64::consts::PI * x).sin();
        if d.abs() < 1e-15 {
            q * q
        } else {
            let n = (std::f64::consts::PI * q * x).sin();
            n * n / (d * d)
        }
    };
    let lo = xi.clamp(0.0, 0.5);
    if lo >= 0.5 {
        return phi2(0.5);
    }
    let step = (0.5 - lo) / BETA_GRID as f64;
    (0..=BETA_GRID).map(|i| phi2(lo + i as f64 * step)).fold(0.0, f64::max)
}

/// Upper bounds on μ(U) and μ(V) for K echoes with the given Dopplers and offsets.
///
/// A bound whose denominator is not positive is reported as +∞ (vacuous).
pub fn coherence_bounds(
    dopplers: &[f64],
    offsets: &[usize],
    pulses: usize,
    l_max: usize,
    pri_s: f64,
    code: &[Complex64],
) -> Result<CoherenceBounds> {
    let k = dopplers.len();
    if k == 0 || offsets.len() != k {
        return Err(Error::param("dopplers", "need one offset per Doppler and at least one echo"));
    }
    let n = code.len() as f64;
    let q = pulses as f64;
    let width = (n + l_max as f64) / n;
    if k == 1 {
        return Ok(CoherenceBounds {
            bound_mu_u: 1.0,
            bound_mu_v: width,
            beta_q: 0.0,
            xi_t: 0.5,
            admissible: true,
        });
    }
    let mut xi: f64 = 0.5;
    let mut sidelobes = 0.0;
    for i in 0..k {
        for j in 0..k {
            if i == j {
                continue;
            }
            let g = wrap_distance(pri_s * (dopplers[i] - dopplers[j]).abs());
            if g < 1e-12 {
                return Err(Error::DuplicateDoppler);
            }
            xi = xi.min(g);
            let lag = offsets[i] as i64 - offsets[j] as i64;
            sidelobes += autocorrelation_at(code, lag).norm_sqr();
        }
    }
    let beta = beta_q(pulses, xi);
    let penalty_u = (k as f64 - 1.0) * beta.sqrt();
    let penalty_v = (k as f64 - 1.0).sqrt() * sidelobes.sqrt();
    let bound = |num: f64, den: f64| if den > 0.0 { num / den } else { f64::INFINITY };
    Ok(CoherenceBounds {
        bound_mu_u: bound(q, q - penalty_u),
        bound_mu_v: bound(n + l_max as f64, n - penalty_v),
        beta_q: beta,
        xi_t: xi,
        admissible: k as f64 <= q / beta.sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::waveform::hadamard_codes;

    #[test]
    fn wrap_distance_basics() {
        assert_eq!(wrap_distance(0.0), 0.0);
        assert!((wrap_distance(0.3) - 0.3).abs() < 1e-15);
        assert!((wrap_distance(1.7) - 0.3).abs() < 1e-12);
        assert!((wrap_distance(2.5) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn beta_at_half_is_endpoint_value() {
        for q in [1usize, 2, 7, 128] {
            let want = ((std::f64::consts::PI * q as f64 / 2.0).sin()).powi(2);
            assert!((beta_q(q, 0.5) - want).abs() < 1e-12);
        }
    }

    #[test]
    fn beta_matches_brute_force_scan() {
        let (q, xi) = (16usize, 0.07);
        let mut best: f64 = 0.0;
        for i in 0..=2_000_000 {
            let x = xi + (0.5 - xi) * i as f64 / 2e6;
            let v = ((std::f64::consts::PI * q as f64 * x).sin() / (std::f64::consts::PI * x).sin()).powi(2);
            best = best.max(v);
        }
        assert!((beta_q(q, xi) - best).abs() / best < 1e-6);
    }

    #[test]
    fn single_echo_bounds() {
        let code = hadamard_codes(1, 64, 1e-7).unwrap().code(0).to_vec();
        let b = coherence_bounds(&[12.0], &[5], 128, 200, 25e-3, &code).unwrap();
        assert_eq!(b.bound_mu_u, 1.0);
        assert_eq!(b.bound_mu_v, 264.0 / 64.0);
        assert!(b.admissible);
    }

    #[test]
    fn duplicate_dopplers_rejected() {
        let code = hadamard_codes(1, 64, 1e-7).unwrap().code(0).to_vec();
        assert!(matches!(
            coherence_bounds(&[3.0, 3.0], &[0, 100], 128, 200, 25e-3, &code),
            Err(Error::DuplicateDoppler)
        ));
        // one PRF apart aliases to the same steering vector
        assert!(coherence_bounds(&[3.0, 43.0], &[0, 100], 128, 200, 25e-3, &code).is_err());
    }

    #[test]
    fn half_cycle_separation_bound() {
        let code = hadamard_codes(1, 64, 1e-7).unwrap().code(0).to_vec();
        // T·Δf = 0.5 → ξ = 1/2
        let b = coherence_bounds(&[0.0, 20.0], &[0, 100], 128, 200, 25e-3, &code).unwrap();
        assert!((b.xi_t - 0.5).abs() < 1e-12);
        assert!(b.bound_mu_u <= 128.0 / 127.0 + 1e-12);
        // offsets 100 apart exceed the code length: no sidelobe overlap
        assert!((b.bound_mu_v - 264.0 / 64.0).abs() < 1e-12);
    }
}
