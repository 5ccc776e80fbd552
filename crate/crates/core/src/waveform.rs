//! Unimodular phase codes and their correlation properties.

use std::io::Write;
use std::path::Path;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodeFamily {
    #[default]
    Hadamard,
}

/// One code per transmitter, all of the same length.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseCodeSet {
    codes: Vec<Vec<Complex64>>,
    subpulse: f64,
}

impl PhaseCodeSet {
    pub fn new(codes: Vec<Vec<Complex64>>, subpulse: f64) -> Result<Self> {
        let n = codes.first().map_or(0, Vec::len);
        if n == 0 {
            return Err(Error::param("codes", "need at least one non-empty code"));
        }
        if codes.iter().any(|c| c.len() != n) {
            return Err(Error::param("codes", "all codes must have the same length"));
        }
        if !(subpulse > 0.0) || !subpulse.is_finite() {
            return Err(Error::param("subpulse", "must be finite and positive"));
        }
        Ok(PhaseCodeSet { codes, subpulse })
    }

    pub fn generate(family: CodeFamily, n_tx: usize, length: usize, subpulse: f64) -> Result<Self> {
        match family {
            CodeFamily::Hadamard => hadamard_codes(n_tx, length, subpulse),
        }
    }

    pub fn codes(&self) -> &[Vec<Complex64>] {
        &self.codes
    }

    pub fn code(&self, m: usize) -> &[Complex64] {
        &self.codes[m]
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn code_length(&self) -> usize {
        self.codes[0].len()
    }

    pub fn subpulse(&self) -> f64 {
        self.subpulse
    }

    pub fn pulse_duration(&self) -> f64 {
        self.subpulse * self.code_length() as f64
    }

    pub fn is_unimodular(&self, tol: f64) -> bool {
        self.codes.iter().flatten().all(|z| (z.norm() - 1.0).abs() <= tol)
    }

    /// Inner products ⟨s_i, s_j⟩ = Σ_k s_i(k) s_j*(k).
    pub fn gram(&self) -> Vec<Vec<Complex64>> {
        self.codes
            .iter()
            .map(|a| self.codes.iter().map(|b| inner(a, b)).collect())
            .collect()
    }

    /// One row per code with interleaved `re,im` columns.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        for code in &self.codes {
            let row: Vec<String> = code.iter().flat_map(|z| [z.re.to_string(), z.im.to_string()]).collect();
            writeln!(out, "{}", row.join(",")).expect("write to Vec");
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

fn inner(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x * y.conj()).sum()
}

/// Entry (row, col) of the order-2^k Sylvester–Hadamard matrix.
pub fn sylvester_entry(row: usize, col: usize) -> f64 {
    if (row & col).count_ones() % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Rows of the Sylvester–Hadamard matrix, skipping the all-ones row when possible.
pub fn hadamard_codes(n_tx: usize, length: usize, subpulse: f64) -> Result<PhaseCodeSet> {
    if !length.is_power_of_two() {
        return Err(Error::param("code_length", format!("{length} is not a power of two")));
    }
    if n_tx == 0 || n_tx > length {
        return Err(Error::param(
            "n_tx",
            format!("need 1 ≤ n_tx ≤ code length ({length}), got {n_tx}"),
        ));
    }
    let first = if n_tx < length { 1 } else { 0 };
    let codes = (first..first + n_tx)
        .map(|r| (0..length).map(|c| Complex64::new(sylvester_entry(r, c), 0.0)).collect())
        .collect();
    PhaseCodeSet::new(codes, subpulse)
}

/// Aperiodic autocorrelation γ(l) = Σ_k s(k) s*(k − l), 0 ≤ l < N.
pub fn autocorrelation(code: &[Complex64], lag: usize) -> Result<Complex64> {
    if lag >= code.len() {
        return Err(Error::param(
            "lag",
            format!("{lag} outside [0, {})", code.len()),
        ));
    }
    Ok(autocorrelation_at(code, lag as i64))
}

/// Autocorrelation at any integer lag: conjugate-symmetric, zero for |l| ≥ N.
pub fn autocorrelation_at(code: &[Complex64], lag: i64) -> Complex64 {
    let n = code.len() as i64;
    if lag.abs() >= n {
        return Complex64::new(0.0, 0.0);
    }
    if lag < 0 {
        return autocorrelation_at(code, -lag).conj();
    }
    let l = lag as usize;
    code[l..].iter().zip(code).map(|(a, b)| a * b.conj()).sum()
}

/// Cross-correlation Σ_k a(k) b*(k − l) at any integer lag.
pub fn cross_correlation(a: &[Complex64], b: &[Complex64], lag: i64) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for (k, x) in a.iter().enumerate() {
        let j = k as i64 - lag;
        if j >= 0 && (j as usize) < b.len() {
            acc += x * b[j as usize].conj();
        }
    }
    acc
}

/// Σ_{l=1}^{max_lag} |γ(l)|².
pub fn sidelobe_energy(code: &[Complex64], max_lag: usize) -> Result<f64> {
    if max_lag >= code.len() {
        return Err(Error::param(
            "max_lag",
            format!("{max_lag} outside [0, {})", code.len()),
        ));
    }
    Ok((1..=max_lag).map(|l| autocorrelation_at(code, l as i64).norm_sqr()).sum())
}

/// RMS bandwidth of a code's DFT spectrum with bins centred on DC.
pub fn effective_bandwidth(code: &[Complex64], sample_rate: f64) -> Result<f64> {
    let n = code.len();
    if n == 0 || code.iter().all(|z| z.norm_sqr() == 0.0) {
        return Err(Error::param("code", "must be non-zero"));
    }
    let mut spectrum = code.to_vec();
    FftPlanner::new().plan_fft_forward(n).process(&mut spectrum);
    let mut num = 0.0;
    let mut den = 0.0;
    for (k, s) in spectrum.iter().enumerate() {
        let bin = if 2 * k < n { k as f64 } else { k as f64 - n as f64 };
        let f = bin * sample_rate / n as f64;
        num += f * f * s.norm_sqr();
        den += s.norm_sqr();
    }
    Ok((num / den).sqrt())
}
