//! Target parameter estimation from completed pair matrices.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use faer::prelude::*;
use faer::Mat;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{bistatic_direction, AntennaGeometry, Vec2, SPEED_OF_LIGHT};
use crate::scene::{PulseDataMatrix, SensorModel};
use crate::waveform::PhaseCodeSet;

/// Uniformly spaced grid axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub start: f64,
    pub step: f64,
    pub count: usize,
}

impl Axis {
    /// Points start, start+step, … up to and including `stop` (within half a step).
    pub fn span(start: f64, stop: f64, step: f64) -> Result<Self> {
        if !(step > 0.0) || !step.is_finite() || !start.is_finite() || !stop.is_finite() {
            return Err(Error::param("grid", "step must be positive and bounds finite"));
        }
        if stop < start {
            return Err(Error::param("grid", "stop precedes start"));
        }
        let count = ((stop - start) / step + 0.5).floor() as usize + 1;
        Ok(Axis { start, step, count })
    }

    pub fn value(&self, i: usize) -> f64 {
        self.start + i as f64 * self.step
    }

    pub fn last(&self) -> f64 {
        self.value(self.count.saturating_sub(1))
    }

    /// Index of the grid point nearest to `v`, if within the axis.
    pub fn nearest(&self, v: f64) -> Option<usize> {
        let i = ((v - self.start) / self.step).round();
        if i >= 0.0 && (i as usize) < self.count {
            Some(i as usize)
        } else {
            None
        }
    }
}

/// Grid bounds in config form.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub x: [f64; 2],
    pub y: [f64; 2],
    pub step: f64,
}

impl GridSpec {
    pub fn axes(&self) -> Result<(Axis, Axis)> {
        Ok((Axis::span(self.x[0], self.x[1], self.step)?, Axis::span(self.y[0], self.y[1], self.step)?))
    }
}

/// Real surface over a 2-D grid, stored x-major: `values[ix * ny + iy]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchGrid {
    pub x: Axis,
    pub y: Axis,
    pub values: Vec<f64>,
}

impl SearchGrid {
    pub fn new(x: Axis, y: Axis) -> Self {
        SearchGrid {
            x,
            y,
            values: vec![f64::NEG_INFINITY; x.count * y.count],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn point(&self, cell: usize) -> Vec2 {
        let ny = self.y.count;
        Vec2::new(self.x.value(cell / ny), self.y.value(cell % ny))
    }

    pub fn cell(&self, ix: usize, iy: usize) -> usize {
        ix * self.y.count + iy
    }

    pub fn value_at(&self, ix: usize, iy: usize) -> f64 {
        self.values[self.cell(ix, iy)]
    }

    /// Cell of the largest finite value; ties go to the lowest (x, then y) index.
    pub fn argmax(&self) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, &v) in self.values.iter().enumerate() {
            if v.is_finite() && best.map_or(true, |(_, b)| v > b) {
                best = Some((i, v));
            }
        }
        best.map(|b| b.0)
    }

    /// `x,y,value` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = Vec::with_capacity(self.values.len() * 24);
        writeln!(out, "x,y,value").expect("write to Vec");
        for (i, v) in self.values.iter().enumerate() {
            let p = self.point(i);
            writeln!(out, "{},{},{:e}", p.x, p.y, v).expect("write to Vec");
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Ml,
    Geometric,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalizationResult {
    pub position_hat: Vec2,
    pub method: Method,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub surface: Option<SearchGrid>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bistatic_ranges: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VelocityResult {
    pub velocity_hat: Vec2,
    /// Common reflectivity fitted at the chosen velocity.
    pub reflectivity_hat: Complex64,
    pub surface: SearchGrid,
}

/// Matched-filter correlations a_lᴴ y_q of every pulse at fast-time offset `offset`.
pub fn pulse_correlations(y: &Mat<Complex64>, code: &[Complex64], offset: usize) -> Vec<Complex64> {
    let mut acc = vec![Complex64::new(0.0, 0.0); y.nrows()];
    for (i, s) in code.iter().enumerate() {
        let c = s.conj();
        for (a, v) in acc.iter_mut().zip(y.col_as_slice(offset + i)) {
            *a += c * v;
        }
    }
    acc
}

/// Σ_q |a_lᴴ y_q|² / ‖a‖² for every offset l = 0..=l_max.
pub fn range_profile(y: &Mat<Complex64>, code: &[Complex64], l_max: usize) -> Vec<f64> {
    let energy: f64 = code.iter().map(|s| s.norm_sqr()).sum();
    let l_max = l_max.min(y.ncols().saturating_sub(code.len()));
    (0..=l_max)
        .map(|l| pulse_correlations(y, code, l).iter().map(|c| c.norm_sqr()).sum::<f64>() / energy)
        .collect()
}

fn check_pairs(matrices: &[PulseDataMatrix], sensor: &SensorModel, codes: &PhaseCodeSet) -> Result<()> {
    let g = &sensor.geometry;
    if matrices.len() != g.n_pairs() {
        return Err(Error::param(
            "matrices",
            format!("expected {} pair matrices, got {}", g.n_pairs(), matrices.len()),
        ));
    }
    if codes.len() < g.n_tx() {
        return Err(Error::param("codes", "fewer codes than transmitters"));
    }
    for m in matrices {
        let want = sensor.shape(m.pair());
        if m.shape() != want {
            return Err(Error::ShapeMismatch {
                expected: want,
                found: m.shape(),
            });
        }
    }
    Ok(())
}

/// Per-pair offset of every grid cell; `u32::MAX` marks cells outside a pair's window.
#[derive(Clone, Debug)]
pub struct OffsetTable {
    pub x: Axis,
    pub y: Axis,
    pairs: Vec<(usize, usize)>,
    offsets: Vec<u32>,
}

const OUTSIDE: u32 = u32::MAX;

impl OffsetTable {
    pub fn new(sensor: &SensorModel, x: Axis, y: Axis) -> Result<Self> {
        if x.count == 0 || y.count == 0 {
            return Err(Error::param("grid", "empty grid"));
        }
        let g = &sensor.geometry;
        let cells = x.count * y.count;
        let pairs: Vec<_> = g.pairs().collect();
        let mut offsets = Vec::with_capacity(pairs.len() * cells);
        for &pair in &pairs {
            let b = sensor.bounds(pair);
            let (t, r) = g.antennas(pair);
            for ix in 0..x.count {
                for iy in 0..y.count {
                    let p = Vec2::new(x.value(ix), y.value(iy));
                    let off = if p.distance(t) > 0.0 && p.distance(r) > 0.0 {
                        b.offset(p.distance(t) + p.distance(r)).map_or(OUTSIDE, |o| o as u32)
                    } else {
                        OUTSIDE
                    };
                    offsets.push(off);
                }
            }
        }
        Ok(OffsetTable { x, y, pairs, offsets })
    }

    pub fn cells(&self) -> usize {
        self.x.count * self.y.count
    }

    pub fn offset(&self, pair_slot: usize, cell: usize) -> Option<usize> {
        match self.offsets[pair_slot * self.cells() + cell] {
            OUTSIDE => None,
            o => Some(o as usize),
        }
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }
}

/// ML position search: maximise −Σ ‖P⊥ y_q‖²/σ² over the grid.
///
/// For a single-column template the projector residual is
/// ‖y‖² − |aᴴy|²/‖a‖², so each pair contributes its matched-filter range
/// profile at the candidate's offset. `noise_vars` holds one variance per
/// receiver; zero is treated as one (noise-free data).
pub fn ml_localize(
    matrices: &[PulseDataMatrix],
    sensor: &SensorModel,
    codes: &PhaseCodeSet,
    table: &OffsetTable,
    noise_vars: &[f64],
) -> Result<LocalizationResult> {
    let surface = ml_surface(matrices, sensor, codes, table, noise_vars)?;
    let best = surface.argmax().ok_or(Error::NoCandidates)?;
    Ok(LocalizationResult {
        position_hat: surface.point(best),
        method: Method::Ml,
        surface: Some(surface),
        bistatic_ranges: None,
    })
}

pub fn ml_surface(
    matrices: &[PulseDataMatrix],
    sensor: &SensorModel,
    codes: &PhaseCodeSet,
    table: &OffsetTable,
    noise_vars: &[f64],
) -> Result<SearchGrid> {
    check_pairs(matrices, sensor, codes)?;
    let g = &sensor.geometry;
    if noise_vars.len() != g.n_rx() {
        return Err(Error::param("noise_vars", "need one variance per receiver"));
    }
    let mut slot_of = vec![usize::MAX; g.n_pairs()];
    for (slot, &pair) in table.pairs().iter().enumerate() {
        slot_of[g.pair_index(pair)] = slot;
    }
    let mut surface = SearchGrid::new(table.x, table.y);
    surface.values.iter_mut().for_each(|v| *v = 0.0);
    let mut valid = vec![true; table.cells()];
    for m in matrices {
        let pair = m.pair();
        let slot = slot_of[g.pair_index(pair)];
        let l_max = sensor.bounds(pair).l_max;
        let profile = range_profile(m.values(), codes.code(pair.0), l_max);
        let total = m.values().squared_norm_l2();
        let var = noise_vars[pair.1];
        let w = if var > 0.0 { 1.0 / var } else { 1.0 };
        for cell in 0..table.cells() {
            match table.offset(slot, cell) {
                Some(l) if l < profile.len() => surface.values[cell] += w * (profile[l] - total),
                _ => valid[cell] = false,
            }
        }
    }
    let skipped = valid.iter().filter(|v| !**v).count();
    if skipped == valid.len() {
        return Err(Error::NoCandidates);
    }
    if skipped > 0 {
        log::warn!("{skipped} grid cells map outside a range window and were skipped");
    }
    for (v, ok) in surface.values.iter_mut().zip(&valid) {
        if !ok {
            *v = f64::NEG_INFINITY;
        }
    }
    Ok(surface)
}

/// Sequential peak extraction for several targets; each pick blanks a square notch.
pub fn extract_peaks(surface: &SearchGrid, count: usize, notch_cells: usize) -> Vec<Vec2> {
    let mut s = surface.clone();
    let mut peaks = Vec::with_capacity(count);
    let ny = s.y.count;
    for _ in 0..count {
        let Some(best) = s.argmax() else { break };
        peaks.push(s.point(best));
        let (bx, by) = (best / ny, best % ny);
        for ix in bx.saturating_sub(notch_cells)..=(bx + notch_cells).min(s.x.count - 1) {
            for iy in by.saturating_sub(notch_cells)..=(by + notch_cells).min(ny - 1) {
                let c = s.cell(ix, iy);
                s.values[c] = f64::NEG_INFINITY;
            }
        }
    }
    peaks
}

/// Matched-filter time-delay estimate of one pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TdEstimate {
    pub offset: usize,
    /// Bistatic range at the centre of the detected fast-time cell.
    pub range: f64,
}

/// Per-pair delay estimates by non-coherent matched filtering over pulses.
pub fn td_estimate(
    matrices: &[PulseDataMatrix],
    sensor: &SensorModel,
    codes: &PhaseCodeSet,
) -> Result<Vec<TdEstimate>> {
    check_pairs(matrices, sensor, codes)?;
    matrices
        .iter()
        .map(|m| {
            let pair = m.pair();
            let b = sensor.bounds(pair);
            let profile = range_profile(m.values(), codes.code(pair.0), b.l_max);
            let mut best = 0;
            for (l, &v) in profile.iter().enumerate() {
                if v > profile[best] {
                    best = l;
                }
            }
            if !(profile[best] > 0.0) {
                return Err(Error::FlatCorrelation { tx: pair.0, rx: pair.1 });
            }
            Ok(TdEstimate {
                offset: best,
                range: b.range_at(best as f64 + 0.5),
            })
        })
        .collect()
}

/// Range variance of integer-sample delay quantisation, (c·T_s)²/12.
pub fn quantization_variance(sample_period: f64) -> f64 {
    let cell = SPEED_OF_LIGHT * sample_period;
    cell * cell / 12.0
}

/// Two-stage weighted least squares from bistatic ranges (transmitter-major order).
///
/// Unknowns are (x, y, R_T1, …, R_TMt), the position and the transmitter
/// distances. Each pair gives one linear equation
/// (p_r − p_t)·p − r·R_T = ½(‖p_r‖² − r² − ‖p_t‖²).
pub fn geometric_localize(
    ranges: &[f64],
    geometry: &AntennaGeometry,
    range_variance: f64,
) -> Result<LocalizationResult> {
    let mt = geometry.n_tx();
    let rows = geometry.n_pairs();
    if ranges.len() != rows {
        return Err(Error::param("ranges", format!("expected {rows} ranges, got {}", ranges.len())));
    }
    if rows < mt + 3 {
        return Err(Error::DegenerateGeometry(format!(
            "{rows} equations cannot determine {} unknowns with redundancy",
            mt + 2
        )));
    }
    if !(range_variance > 0.0) {
        return Err(Error::param("range_variance", "must be positive"));
    }
    let cols = mt + 2;
    let mut a = Mat::<f64>::zeros(rows, cols);
    let mut b = Mat::<f64>::zeros(rows, 1);
    for (row, pair) in geometry.pairs().enumerate() {
        let (t, r) = geometry.antennas(pair);
        let d = r - t;
        a[(row, 0)] = d.x;
        a[(row, 1)] = d.y;
        a[(row, 2 + pair.0)] = -ranges[row];
        b[(row, 0)] = 0.5 * (r.dot(r) - ranges[row] * ranges[row] - t.dot(t));
    }
    let sv = a
        .singular_values()
        .map_err(|e| Error::Numerical(format!("SVD did not converge: {e:?}")))?;
    if sv[cols - 1] <= 1e-10 * sv[0] {
        return Err(Error::DegenerateGeometry("the range equations are rank deficient".into()));
    }
    let init = a.qr().solve_lstsq(&b);
    let p0 = Vec2::new(init[(0, 0)], init[(1, 0)]);

    // Equation error from a range error n is −(r − R_T)·n, so each row is
    // weighted by 1/(σ²·(r − R_T)²) with R_T taken from the first stage.
    let mut aw = a.clone();
    let mut bw = b.clone();
    for (row, pair) in geometry.pairs().enumerate() {
        let rt = p0.distance(geometry.tx()[pair.0]);
        let lever = (ranges[row] - rt).abs().max(1e-6);
        let w = 1.0 / (range_variance.sqrt() * lever);
        for c in 0..cols {
            aw[(row, c)] *= w;
        }
        bw[(row, 0)] *= w;
    }
    let fin = aw.qr().solve_lstsq(&bw);
    let position = Vec2::new(fin[(0, 0)], fin[(1, 0)]);
    if !position.is_finite() {
        return Err(Error::Numerical("weighted least squares produced a non-finite position".into()));
    }
    Ok(LocalizationResult {
        position_hat: position,
        method: Method::Geometric,
        surface: None,
        bistatic_ranges: Some(ranges.to_vec()),
    })
}

/// ML velocity search at a fixed position.
///
/// Each pair's pulses are matched-filtered at the offset implied by the
/// position; the per-pulse outputs are Doppler-compensated and summed
/// coherently over pulses and pairs.
pub fn ml_velocity(
    matrices: &[PulseDataMatrix],
    position_hat: Vec2,
    vx: Axis,
    vy: Axis,
    sensor: &SensorModel,
    codes: &PhaseCodeSet,
) -> Result<VelocityResult> {
    check_pairs(matrices, sensor, codes)?;
    if vx.count == 0 || vy.count == 0 {
        return Err(Error::param("velocity_grid", "empty grid"));
    }
    let g = &sensor.geometry;
    let cfg = &sensor.config;
    let mut channels: Vec<(Vec<Complex64>, Vec2)> = Vec::new();
    let mut rho = 0.0;
    for m in matrices {
        let pair = m.pair();
        let (t, r) = g.antennas(pair);
        let dir = bistatic_direction(t, r, position_hat)?;
        let Some(offset) = sensor.bounds(pair).offset(position_hat.distance(t) + position_hat.distance(r)) else {
            log::warn!("pair {pair:?}: position estimate outside the range window, pair skipped");
            continue;
        };
        let code = codes.code(pair.0);
        rho += m.shape().0 as f64 * code.iter().map(|s| s.norm_sqr()).sum::<f64>();
        channels.push((pulse_correlations(m.values(), code, offset), dir));
    }
    if channels.is_empty() {
        return Err(Error::NoCandidates);
    }
    let scale = cfg.carrier_hz / SPEED_OF_LIGHT;
    let mut surface = SearchGrid::new(vx, vy);
    let mut fits = vec![Complex64::new(0.0, 0.0); surface.len()];
    for ix in 0..vx.count {
        for iy in 0..vy.count {
            let v = Vec2::new(vx.value(ix), vy.value(iy));
            let mut sum = Complex64::new(0.0, 0.0);
            for (corr, dir) in &channels {
                let f = scale * v.dot(*dir);
                let rot = Complex64::cis(-2.0 * PI * f * cfg.pri_s);
                let mut z = Complex64::new(1.0, 0.0);
                for c in corr {
                    sum += c * z;
                    z *= rot;
                }
            }
            let cell = surface.cell(ix, iy);
            surface.values[cell] = sum.norm_sqr() / rho;
            fits[cell] = sum;
        }
    }
    let best = surface.argmax().ok_or(Error::NoCandidates)?;
    Ok(VelocityResult {
        velocity_hat: surface.point(best),
        reflectivity_hat: fits[best] / (cfg.energy.sqrt() * rho),
        surface,
    })
}
