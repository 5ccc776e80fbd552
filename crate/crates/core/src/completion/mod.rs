//! Matrix completion by singular value thresholding, plus coherence analysis.

mod coherence;
mod shrink;

pub use coherence::{
    beta_q, coherence, coherence_bounds, wrap_distance, CoherenceBounds, CoherenceReport,
};
pub use shrink::{shrink_exact, spectral_norm, LanczosShrinker, Shrinkage, SvdBackend};

use std::io::Write;
use std::path::Path;

use faer::Mat;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{MatrixState, PulseDataMatrix, SampleMask};

/// SVT parameters. `noise_delta` switches to the noise-constrained program.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvtParams {
    pub threshold: f64,
    pub step: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub noise_delta: Option<f64>,
    /// Relative change between iterates that ends the noisy program once feasible.
    pub stall_tol: f64,
    pub backend: SvdBackend,
    pub trace: bool,
}

impl SvtParams {
    /// τ = 5·max(n₁, n₂), step = 1.2·n₁n₂/h, tol = 1e-4, 500 iterations.
    pub fn for_shape(rows: usize, cols: usize, observed: usize) -> Self {
        SvtParams {
            threshold: 5.0 * rows.max(cols) as f64,
            step: 1.2 * (rows * cols) as f64 / observed.max(1) as f64,
            max_iters: 500,
            tol: 1e-4,
            noise_delta: None,
            stall_tol: 1e-3,
            backend: SvdBackend::default(),
            trace: false,
        }
    }

    pub fn for_matrix(x: &PulseDataMatrix) -> Self {
        let (r, c) = x.shape();
        Self::for_shape(r, c, x.observed_count())
    }

    pub fn with_noise_delta(mut self, delta: f64) -> Self {
        self.noise_delta = Some(delta);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &'static str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::param(name, format!("must be finite and positive, got {v}")))
            }
        };
        positive("threshold", self.threshold)?;
        positive("step", self.step)?;
        positive("tol", self.tol)?;
        positive("stall_tol", self.stall_tol)?;
        if let Some(d) = self.noise_delta {
            if !(d.is_finite() && d >= 0.0) {
                return Err(Error::param("noise_delta", "must be finite and non-negative"));
            }
        }
        if self.max_iters == 0 {
            return Err(Error::param("max_iters", "must be at least 1"));
        }
        Ok(())
    }
}

/// δ = sqrt((h + √(8h))·σ²).
pub fn noise_delta(observed: usize, noise_variance: f64) -> f64 {
    let h = observed as f64;
    ((h + (8.0 * h).sqrt()) * noise_variance).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// Relative residual reached `tol`.
    Tolerance,
    /// Residual inside the noise ball and the iterates stopped moving.
    Stalled,
    /// Rank grew after the residual first entered the noise ball; previous iterate returned.
    RankGrowth,
    MaxIterations,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub residual: f64,
    pub nuclear_norm: f64,
    pub rank: usize,
}

#[derive(Clone, Debug)]
pub struct SvtOutcome {
    pub matrix: Mat<Complex64>,
    pub iterations: usize,
    /// ‖P_Ω(Ẑ − X)‖_F / ‖P_Ω(X)‖_F of the returned iterate.
    pub residual: f64,
    pub rank: usize,
    pub converged: bool,
    pub stop: StopReason,
    pub trace: Vec<TraceRow>,
}

/// Complete a partially observed matrix.
pub fn svt_complete(x: &PulseDataMatrix, params: &SvtParams) -> Result<SvtOutcome> {
    params.validate()?;
    let (rows, cols) = x.shape();
    let full;
    let mask = match x.mask() {
        Some(m) => m,
        None => {
            full = SampleMask::full(rows, cols);
            &full
        }
    };
    if mask.is_empty() {
        return Err(Error::param("mask", "no observed entries"));
    }
    let observed = x.values();
    let norm_x = observed.norm_l2();
    if norm_x == 0.0 {
        return Ok(SvtOutcome {
            matrix: Mat::zeros(rows, cols),
            iterations: 0,
            residual: 0.0,
            rank: 0,
            converged: true,
            stop: StopReason::Tolerance,
            trace: Vec::new(),
        });
    }
    // observed rows of each column
    let mut by_col: Vec<Vec<usize>> = vec![Vec::new(); cols];
    for &i in mask.observed() {
        by_col[i / rows].push(i % rows);
    }
    let tau = params.threshold;
    let step = params.step;
    let spectral = spectral_norm(observed.as_ref());
    let k0 = (tau / (step * spectral)).ceil().max(1.0);

    let mut y = Mat::<Complex64>::zeros(rows, cols);
    for (c, rs) in by_col.iter().enumerate() {
        let (src, dst) = (observed.col_as_slice(c), y.col_as_slice_mut(c));
        for &r in rs {
            dst[r] = src[r] * (k0 * step);
        }
    }

    let noise_level = params.noise_delta.map(|d| d / norm_x);
    let mut lanczos = LanczosShrinker::new();
    let mut trace = Vec::new();
    let mut previous: Option<(Mat<Complex64>, f64, usize)> = None;
    let mut feasible_rank: Option<usize> = None;

    for it in 1..=params.max_iters {
        let s = match params.backend {
            SvdBackend::Exact => shrink_exact(y.as_ref(), tau)?,
            SvdBackend::Lanczos => lanczos.shrink(y.as_ref(), tau)?,
        };
        let mut res_sq = 0.0;
        for (c, rs) in by_col.iter().enumerate() {
            let (src, fit, dst) = (observed.col_as_slice(c), s.matrix.col_as_slice(c), y.col_as_slice_mut(c));
            for &r in rs {
                let d = src[r] - fit[r];
                res_sq += d.norm_sqr();
                dst[r] += d * step;
            }
        }
        let residual = res_sq.sqrt() / norm_x;
        if params.trace {
            trace.push(TraceRow {
                iteration: it,
                residual,
                nuclear_norm: s.nuclear_norm,
                rank: s.rank,
            });
        }
        let done = |matrix, iterations, residual, rank, stop, trace| SvtOutcome {
            matrix,
            iterations,
            residual,
            rank,
            converged: true,
            stop,
            trace,
        };
        match noise_level {
            None if residual <= params.tol => {
                return Ok(done(s.matrix, it, residual, s.rank, StopReason::Tolerance, trace));
            }
            Some(level) => {
                if let (Some(fr), Some((prev, prev_res, prev_rank))) = (feasible_rank, previous.as_ref()) {
                    if s.rank > fr {
                        let (prev, prev_res, prev_rank) = (prev.clone(), *prev_res, *prev_rank);
                        return Ok(done(prev, it - 1, prev_res, prev_rank, StopReason::RankGrowth, trace));
                    }
                    if residual <= level && relative_change(&s.matrix, prev) <= params.stall_tol {
                        return Ok(done(s.matrix, it, residual, s.rank, StopReason::Stalled, trace));
                    }
                } else if residual <= level && feasible_rank.is_none() {
                    feasible_rank = Some(s.rank);
                }
            }
            None => {}
        }
        previous = Some((s.matrix, residual, s.rank));
    }
    let (matrix, residual, rank) = previous.expect("max_iters ≥ 1");
    Ok(SvtOutcome {
        matrix,
        iterations: params.max_iters,
        residual,
        rank,
        converged: feasible_rank.is_some(),
        stop: StopReason::MaxIterations,
        trace,
    })
}

/// ‖A − B‖_F / ‖A‖_F without allocating.
fn relative_change(a: &Mat<Complex64>, b: &Mat<Complex64>) -> f64 {
    let mut diff = 0.0;
    let mut norm = 0.0;
    for c in 0..a.ncols() {
        for (x, y) in a.col_as_slice(c).iter().zip(b.col_as_slice(c)) {
            diff += (x - y).norm_sqr();
            norm += x.norm_sqr();
        }
    }
    (diff / norm.max(f64::MIN_POSITIVE)).sqrt()
}

/// ε = ‖Z − Ẑ‖_F / ‖Z‖_F.
pub fn relative_error(reference: &Mat<Complex64>, estimate: &Mat<Complex64>) -> Result<f64> {
    let expected = (reference.nrows(), reference.ncols());
    let found = (estimate.nrows(), estimate.ncols());
    if expected != found {
        return Err(Error::ShapeMismatch { expected, found });
    }
    let norm = reference.norm_l2();
    if norm == 0.0 {
        return Err(Error::ZeroReference);
    }
    Ok((reference - estimate).norm_l2() / norm)
}

/// Noise variance from the observed-entry residual of an iterated rank-`rank` fit.
///
/// Unobserved entries are imputed from the current fit and the fit refreshed a
/// few times; the residual on Ω is divided by its degrees of freedom.
pub fn estimate_noise_variance(x: &PulseDataMatrix, rank: usize) -> Result<f64> {
    if x.state() != MatrixState::Partial {
        return Err(Error::param("matrix", "noise estimation needs a sub-sampled matrix"));
    }
    let mask = x.mask().expect("partial matrices carry a mask");
    let (rows, cols) = x.shape();
    let observed = x.values();
    let flags = mask.flags();
    let h = mask.len();
    let dof = h as f64 - (rank * (rows + cols - rank.min(rows + cols))) as f64;
    if rank == 0 || dof <= 0.0 {
        return Err(Error::param("rank", "rank must be positive and leave residual degrees of freedom"));
    }
    let mut fill = observed.clone();
    let mut fit = Mat::<Complex64>::zeros(rows, cols);
    for _ in 0..8 {
        let svd = fill
            .thin_svd()
            .map_err(|e| Error::Numerical(format!("SVD did not converge: {e:?}")))?;
        let r = rank.min(rows.min(cols));
        let u = svd.U().subcols(0, r);
        let v = svd.V().subcols(0, r);
        let s = svd.S().column_vector();
        let us = Mat::<Complex64>::from_fn(rows, r, |i, k| u[(i, k)] * s[k]);
        fit = &us * v.adjoint();
        for j in 0..cols {
            for i in 0..rows {
                if !flags[i + j * rows] {
                    fill[(i, j)] = fit[(i, j)];
                }
            }
        }
    }
    let res: f64 = mask
        .observed()
        .iter()
        .map(|&i| (observed[(i % rows, i / rows)] - fit[(i % rows, i / rows)]).norm_sqr())
        .sum();
    Ok(res / dof)
}

/// Per-iteration diagnostics as CSV.
pub fn write_trace_csv(trace: &[TraceRow], path: &Path) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "iteration,residual,nuclear_norm,rank").expect("write to Vec");
    for t in trace {
        writeln!(out, "{},{:e},{:e},{}", t.iteration, t.residual, t.nuclear_norm, t.rank).expect("write to Vec");
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
