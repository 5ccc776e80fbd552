//! Singular-value soft thresholding.
//!
//! Two routes compute the same operator `D_τ(Y) = U diag(max(σ − τ, 0)) Vᴴ`:
//! a dense thin SVD, and a Lanczos solver on the Gram matrix of the smaller
//! side that only resolves the singular values above τ. SVT iterates have a
//! handful of values above the threshold, so the second route is an order of
//! magnitude cheaper; it falls back to a dense eigen-decomposition when the
//! Krylov space would grow past half the dimension.

use faer::linalg::matmul::matmul;
use faer::{Accum, Mat, MatRef, Par, Side};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::splitmix64;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SvdBackend {
    /// Dense thin SVD of the full iterate.
    Exact,
    /// Lanczos on the Gram matrix, resolving only values above the threshold.
    #[default]
    Lanczos,
}

#[derive(Clone, Debug)]
pub struct Shrinkage {
    pub matrix: Mat<Complex64>,
    /// Number of singular values above the threshold.
    pub rank: usize,
    /// Σ max(σ − τ, 0), the nuclear norm of the result.
    pub nuclear_norm: f64,
    /// Input singular values above the threshold, descending, before shrinking.
    pub singular_values: Vec<f64>,
}

const ONE: Complex64 = Complex64 { re: 1.0, im: 0.0 };

/// Dense route: thin SVD, then rebuild from the surviving triplets.
pub fn shrink_exact(y: MatRef<'_, Complex64>, tau: f64) -> Result<Shrinkage> {
    let svd = y
        .thin_svd()
        .map_err(|e| Error::Numerical(format!("SVD did not converge: {e:?}")))?;
    let s = svd.S().column_vector();
    let kept: Vec<f64> = (0..s.nrows()).map(|i| s[i].re).take_while(|&v| v > tau).collect();
    let r = kept.len();
    let mut matrix = Mat::<Complex64>::zeros(y.nrows(), y.ncols());
    if r > 0 {
        let u = svd.U().subcols(0, r);
        let v = svd.V().subcols(0, r);
        let scaled = Mat::<Complex64>::from_fn(y.nrows(), r, |i, k| u[(i, k)] * (kept[k] - tau));
        matmul(matrix.as_mut(), Accum::Replace, scaled.as_ref(), v.adjoint(), ONE, Par::Seq);
    }
    Ok(Shrinkage {
        matrix,
        rank: r,
        nuclear_norm: kept.iter().map(|v| v - tau).sum(),
        singular_values: kept,
    })
}

/// Lanczos route with warm starts across calls.
#[derive(Clone, Debug, Default)]
pub struct LanczosShrinker {
    previous: Option<Mat<Complex64>>,
    /// Krylov dimensions used by the last call, for diagnostics.
    pub last_steps: usize,
}

/// Relative Ritz residual below which a pair is accepted.
const RITZ_TOL: f64 = 1e-10;
const FIRST_STEPS: usize = 3;
const EXTRA_STEPS: usize = 4;

impl LanczosShrinker {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn shrink(&mut self, y: MatRef<'_, Complex64>, tau: f64) -> Result<Shrinkage> {
        let op = GramOp::new(y);
        let n = op.dim();
        let wide = op.wide;
        let threshold = tau * tau;
        let (values, vectors) = self.top_eigenpairs(op, threshold)?;
        let r = values.len();
        let sigmas: Vec<f64> = values.iter().map(|v| v.sqrt()).collect();
        let mut matrix = Mat::<Complex64>::zeros(y.nrows(), y.ncols());
        if r > 0 {
            // wide: Ẑ = U W Uᴴ Y ; tall: Ẑ = Y V W Vᴴ, with W = diag(1 − τ/σ)
            let weighted =
                Mat::<Complex64>::from_fn(n, r, |i, k| vectors[(i, k)] * (1.0 - tau / sigmas[k]));
            if wide {
                let mut proj = Mat::<Complex64>::zeros(r, y.ncols());
                matmul(proj.as_mut(), Accum::Replace, vectors.adjoint(), y, ONE, Par::Seq);
                matmul(matrix.as_mut(), Accum::Replace, weighted.as_ref(), proj.as_ref(), ONE, Par::Seq);
            } else {
                let mut proj = Mat::<Complex64>::zeros(y.nrows(), r);
                matmul(proj.as_mut(), Accum::Replace, y, vectors.as_ref(), ONE, Par::Seq);
                matmul(matrix.as_mut(), Accum::Replace, proj.as_ref(), weighted.adjoint(), ONE, Par::Seq);
            }
        }
        self.previous = if r > 0 { Some(vectors) } else { None };
        Ok(Shrinkage {
            matrix,
            rank: r,
            nuclear_norm: sigmas.iter().map(|s| s - tau).sum(),
            singular_values: sigmas,
        })
    }

    /// Eigenpairs of a Hermitian PSD matrix with eigenvalue above `threshold`, descending.
    fn top_eigenpairs(&mut self, op: GramOp<'_>, threshold: f64) -> Result<(Vec<f64>, Mat<Complex64>)> {
        let n = op.dim();
        let prev_rank = self.previous.as_ref().map_or(0, |p| p.ncols());
        let mut steps = (prev_rank + FIRST_STEPS).min(n);
        let mut lanczos = Lanczos::new(op, self.start_vector(n));
        loop {
            if 2 * steps > n {
                self.last_steps = n;
                return dense_top_eigenpairs(op.dense().as_ref(), threshold);
            }
            lanczos.extend_to(steps);
            let k = lanczos.dim();
            let (theta, s) = lanczos.ritz()?;
            let count = theta.iter().filter(|&&t| t > threshold).count();
            let scale = theta.first().copied().unwrap_or(0.0).max(f64::MIN_POSITIVE);
            // Kept pairs must be accurate; the first rejected one only has to be
            // certified below the threshold (an eigenvalue lies within its residual).
            let kept = (0..count).all(|i| lanczos.residual(&s, i) <= RITZ_TOL * scale);
            // After a breakdown the restarted sequence explores the complement;
            // it needs a few steps of its own before its Ritz values mean anything.
            let below = count < k && theta[count] + lanczos.residual(&s, count) < threshold;
            let settled = lanczos.exhausted || k - lanczos.segment_start > FIRST_STEPS;
            if kept && below && settled {
                self.last_steps = k;
                let mut vectors = Mat::<Complex64>::zeros(n, count);
                let basis = lanczos.basis();
                let coeffs = Mat::<Complex64>::from_fn(k, count, |i, j| Complex64::new(s[(i, j)], 0.0));
                matmul(vectors.as_mut(), Accum::Replace, basis, coeffs.as_ref(), ONE, Par::Seq);
                return Ok((theta[..count].to_vec(), vectors));
            }
            steps = (steps + EXTRA_STEPS).max(count + EXTRA_STEPS);
        }
    }

    fn start_vector(&self, n: usize) -> Mat<Complex64> {
        let mut v = Mat::<Complex64>::from_fn(n, 1, |i, _| pseudo_random(i as u64, 0));
        let norm = v.norm_l2();
        for i in 0..n {
            v[(i, 0)] *= 0.1 / norm;
        }
        if let Some(p) = &self.previous {
            if p.nrows() == n {
                for k in 0..p.ncols() {
                    for i in 0..n {
                        v[(i, 0)] += p[(i, k)];
                    }
                }
            }
        }
        v
    }
}

/// Largest singular value by power iteration on the Gram operator (relative accuracy ~1e-8).
pub fn spectral_norm(y: MatRef<'_, Complex64>) -> f64 {
    let op = GramOp::new(y);
    let n = op.dim();
    if n == 0 || op.other_dim() == 0 {
        return 0.0;
    }
    let mut v = Mat::<Complex64>::from_fn(n, 1, |i, _| pseudo_random(i as u64, 7));
    let norm = v.norm_l2();
    for i in 0..n {
        v[(i, 0)] /= norm;
    }
    let mut w = Mat::<Complex64>::zeros(n, 1);
    let mut tmp = Mat::<Complex64>::zeros(op.other_dim(), 1);
    let mut lambda = 0.0;
    for _ in 0..1000 {
        op.apply(v.as_ref(), &mut w, &mut tmp);
        let next = w.norm_l2();
        if next == 0.0 {
            return 0.0;
        }
        for i in 0..n {
            v[(i, 0)] = w[(i, 0)] / next;
        }
        let done = (next - lambda).abs() <= 1e-8 * next;
        lambda = next;
        if done {
            break;
        }
    }
    lambda.sqrt()
}

fn pseudo_random(i: u64, salt: u64) -> Complex64 {
    let a = splitmix64(i.wrapping_mul(2).wrapping_add(salt << 32));
    let b = splitmix64(i.wrapping_mul(2).wrapping_add(1).wrapping_add(salt << 32));
    let unit = |x: u64| (x >> 11) as f64 / (1u64 << 53) as f64 - 0.5;
    Complex64::new(unit(a), unit(b))
}

fn dense_top_eigenpairs(g: MatRef<'_, Complex64>, threshold: f64) -> Result<(Vec<f64>, Mat<Complex64>)> {
    let evd = g
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Numerical(format!("eigen-decomposition did not converge: {e:?}")))?;
    let n = g.nrows();
    let s = evd.S().column_vector();
    // ascending order; walk from the top
    let kept: Vec<usize> = (0..n).rev().take_while(|&i| s[i].re > threshold).collect();
    let u = evd.U();
    let vectors = Mat::<Complex64>::from_fn(n, kept.len(), |i, k| u[(i, kept[k])]);
    Ok((kept.iter().map(|&i| s[i].re).collect(), vectors))
}

/// Y Yᴴ for wide Y, Yᴴ Y for tall Y, applied without being formed.
#[derive(Clone, Copy)]
struct GramOp<'a> {
    y: MatRef<'a, Complex64>,
    wide: bool,
}

impl<'a> GramOp<'a> {
    fn new(y: MatRef<'a, Complex64>) -> Self {
        GramOp {
            y,
            wide: y.nrows() <= y.ncols(),
        }
    }

    fn dim(&self) -> usize {
        if self.wide {
            self.y.nrows()
        } else {
            self.y.ncols()
        }
    }

    fn apply(&self, x: MatRef<'_, Complex64>, out: &mut Mat<Complex64>, tmp: &mut Mat<Complex64>) {
        if self.wide {
            matmul(tmp.as_mut(), Accum::Replace, self.y.adjoint(), x, ONE, Par::Seq);
            matmul(out.as_mut(), Accum::Replace, self.y, tmp.as_ref(), ONE, Par::Seq);
        } else {
            matmul(tmp.as_mut(), Accum::Replace, self.y, x, ONE, Par::Seq);
            matmul(out.as_mut(), Accum::Replace, self.y.adjoint(), tmp.as_ref(), ONE, Par::Seq);
        }
    }

    fn other_dim(&self) -> usize {
        if self.wide {
            self.y.ncols()
        } else {
            self.y.nrows()
        }
    }

    fn dense(&self) -> Mat<Complex64> {
        let n = self.dim();
        let mut g = Mat::<Complex64>::zeros(n, n);
        if self.wide {
            matmul(g.as_mut(), Accum::Replace, self.y, self.y.adjoint(), ONE, Par::Seq);
        } else {
            matmul(g.as_mut(), Accum::Replace, self.y.adjoint(), self.y, ONE, Par::Seq);
        }
        g
    }
}

/// Hermitian Lanczos with full re-orthogonalisation.
struct Lanczos<'a> {
    op: GramOp<'a>,
    q: Mat<Complex64>,
    alpha: Vec<f64>,
    beta: Vec<f64>,
    restarts: u64,
    /// Dimension at which the current Krylov sequence started.
    segment_start: usize,
    exhausted: bool,
}

impl<'a> Lanczos<'a> {
    fn new(op: GramOp<'a>, start: Mat<Complex64>) -> Self {
        let n = op.dim();
        let mut q = Mat::<Complex64>::zeros(n, n + 1);
        let norm = start.norm_l2();
        for i in 0..n {
            q[(i, 0)] = start[(i, 0)] / norm;
        }
        Lanczos {
            op,
            q,
            alpha: Vec::new(),
            beta: Vec::new(),
            restarts: 0,
            segment_start: 0,
            exhausted: false,
        }
    }

    fn dim(&self) -> usize {
        self.alpha.len()
    }

    fn basis(&self) -> MatRef<'_, Complex64> {
        self.q.as_ref().subcols(0, self.dim())
    }

    fn extend_to(&mut self, steps: usize) {
        let n = self.op.dim();
        // ‖Y‖_F² bounds the operator norm of the Gram matrix
        let scale = self.op.y.squared_norm_l2().max(f64::MIN_POSITIVE);
        let mut w = Mat::<Complex64>::zeros(n, 1);
        let mut tmp = Mat::<Complex64>::zeros(self.op.other_dim(), 1);
        let mut coeffs = Mat::<Complex64>::zeros(n, 1);
        while self.dim() < steps.min(n) && !self.exhausted {
            let j = self.dim();
            self.op.apply(self.q.as_ref().subcols(j, 1), &mut w, &mut tmp);
            let a = (0..n).map(|i| (self.q[(i, j)].conj() * w[(i, 0)]).re).sum::<f64>();
            self.alpha.push(a);
            self.orthogonalise(&mut w, &mut coeffs, j + 1);
            let mut b = w.norm_l2();
            if b <= 1e-12 * scale {
                // invariant subspace: continue from a fresh direction
                b = 0.0;
                self.restarts += 1;
                self.segment_start = j + 1;
                for i in 0..n {
                    w[(i, 0)] = pseudo_random(i as u64, self.restarts);
                }
                self.orthogonalise(&mut w, &mut coeffs, j + 1);
                let fresh = w.norm_l2();
                if fresh <= 1e-8 || j + 1 >= n {
                    self.beta.push(0.0);
                    self.exhausted = true;
                    break;
                }
                for i in 0..n {
                    self.q[(i, j + 1)] = w[(i, 0)] / fresh;
                }
            } else {
                for i in 0..n {
                    self.q[(i, j + 1)] = w[(i, 0)] / b;
                }
            }
            self.beta.push(b);
        }
    }

    /// Two passes of classical Gram–Schmidt against the first `cols` basis vectors.
    fn orthogonalise(&self, w: &mut Mat<Complex64>, coeffs: &mut Mat<Complex64>, cols: usize) {
        let basis = self.q.as_ref().subcols(0, cols);
        for _ in 0..2 {
            let mut c = coeffs.as_mut().subrows_mut(0, cols);
            matmul(c.as_mut(), Accum::Replace, basis.adjoint(), w.as_ref(), ONE, Par::Seq);
            matmul(w.as_mut(), Accum::Add, basis, c.as_ref(), -ONE, Par::Seq);
        }
    }

    /// Ritz values (descending) and the tridiagonal eigenvectors in matching column order.
    fn ritz(&self) -> Result<(Vec<f64>, Mat<f64>)> {
        let k = self.dim();
        let mut t = Mat::<f64>::zeros(k, k);
        for i in 0..k {
            t[(i, i)] = self.alpha[i];
            if i + 1 < k {
                t[(i, i + 1)] = self.beta[i];
                t[(i + 1, i)] = self.beta[i];
            }
        }
        let evd = t
            .self_adjoint_eigen(Side::Lower)
            .map_err(|e| Error::Numerical(format!("tridiagonal eigen-decomposition failed: {e:?}")))?;
        let s = evd.S().column_vector();
        let u = evd.U();
        let theta: Vec<f64> = (0..k).rev().map(|i| s[i]).collect();
        let vecs = Mat::<f64>::from_fn(k, k, |i, j| u[(i, k - 1 - j)]);
        Ok((theta, vecs))
    }

    /// Residual norm ‖G x − θ x‖ of Ritz pair `i`.
    fn residual(&self, s: &Mat<f64>, i: usize) -> f64 {
        let k = self.dim();
        self.beta[k - 1].abs() * s[(k - 1, i)].abs()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> Mat<Complex64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Mat::from_fn(rows, cols, |_, _| Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5))
    }

    /// U diag(s) Vᴴ with orthonormal U, V from QR of random matrices.
    fn with_spectrum(rows: usize, cols: usize, s: &[f64], seed: u64) -> Mat<Complex64> {
        let r = s.len();
        let u = random(rows, r, seed).qr().compute_thin_Q();
        let v = random(cols, r, seed + 1).qr().compute_thin_Q();
        let us = Mat::from_fn(rows, r, |i, k| u[(i, k)] * s[k]);
        &us * v.adjoint()
    }

    fn rel_diff(a: &Mat<Complex64>, b: &Mat<Complex64>) -> f64 {
        (a - b).norm_l2() / b.norm_l2().max(1e-300)
    }

    #[test]
    fn exact_shrink_subtracts_threshold() {
        let s = [10.0, 6.0, 3.0, 1.0];
        let m = with_spectrum(12, 20, &s, 4);
        let out = shrink_exact(m.as_ref(), 2.5).unwrap();
        assert_eq!(out.rank, 3);
        let got = out.matrix.singular_values().unwrap();
        for (g, want) in got.iter().zip([7.5, 3.5, 0.5, 0.0]) {
            assert!((g - want).abs() < 1e-10, "{g} vs {want}");
        }
        assert!((out.nuclear_norm - 11.5).abs() < 1e-10);
    }

    #[test]
    fn threshold_above_spectrum_gives_zero() {
        let m = with_spectrum(8, 10, &[2.0, 1.0], 7);
        let out = shrink_exact(m.as_ref(), 3.0).unwrap();
        assert_eq!(out.rank, 0);
        assert_eq!(out.matrix.norm_l2(), 0.0);
        let mut l = LanczosShrinker::new();
        let out = l.shrink(m.as_ref(), 3.0).unwrap();
        assert_eq!(out.rank, 0);
    }

    #[test]
    fn lanczos_matches_dense_route() {
        for (rows, cols, seed) in [(128, 264, 1u64), (264, 128, 2), (64, 128, 3), (30, 30, 4)] {
            let mut m = random(rows, cols, seed);
            let spike = with_spectrum(rows, cols, &[40.0, 25.0, 9.0], seed + 10);
            m += &spike;
            let tau = 6.0;
            let exact = shrink_exact(m.as_ref(), tau).unwrap();
            let fast = LanczosShrinker::new().shrink(m.as_ref(), tau).unwrap();
            assert_eq!(exact.rank, fast.rank, "{rows}x{cols}");
            assert!(rel_diff(&fast.matrix, &exact.matrix) < 1e-9, "{rows}x{cols}");
        }
    }

    #[test]
    fn lanczos_handles_repeated_values_and_low_rank() {
        let m = with_spectrum(40, 60, &[5.0, 5.0, 5.0, 1.0], 11);
        let exact = shrink_exact(m.as_ref(), 2.0).unwrap();
        let fast = LanczosShrinker::new().shrink(m.as_ref(), 2.0).unwrap();
        assert_eq!(fast.rank, 3);
        assert!(rel_diff(&fast.matrix, &exact.matrix) < 1e-9);
    }

    #[test]
    fn spectral_norm_matches_svd() {
        for (rows, cols, seed) in [(128, 264, 31u64), (50, 20, 32)] {
            let m = &random(rows, cols, seed) + &with_spectrum(rows, cols, &[30.0, 12.0], seed);
            let want = m.singular_values().unwrap()[0];
            assert!((spectral_norm(m.as_ref()) - want).abs() < 1e-6 * want);
        }
        assert_eq!(spectral_norm(Mat::<Complex64>::zeros(3, 4).as_ref()), 0.0);
    }

    #[test]
    fn warm_start_survives_perturbation() {
        let base = with_spectrum(128, 264, &[50.0, 20.0], 21);
        let mut l = LanczosShrinker::new();
        for step in 0..5 {
            let m = &base + &(random(128, 264, 100 + step) * faer::Scale(Complex64::new(0.3, 0.0)));
            let exact = shrink_exact(m.as_ref(), 8.0).unwrap();
            let fast = l.shrink(m.as_ref(), 8.0).unwrap();
            assert_eq!(exact.rank, fast.rank);
            assert!(rel_diff(&fast.matrix, &exact.matrix) < 1e-9);
        }
    }
}
