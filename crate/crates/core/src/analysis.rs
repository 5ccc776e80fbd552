//! Ambiguity function surfaces and Cramér–Rao floors.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{Axis, SearchGrid};
use crate::geometry::{bistatic_direction, AntennaGeometry, Target, Vec2, SPEED_OF_LIGHT};
use crate::rng::{self, Purpose};
use crate::scene::{SampleMask, SensorModel};
use crate::waveform::PhaseCodeSet;

pub use crate::waveform::effective_bandwidth;

/// Hypothesis grid of an ambiguity surface.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AfGrid {
    pub plane: AfPlane,
    pub x: Axis,
    pub y: Axis,
}

/// Which pair of parameters the surface varies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AfPlane {
    /// (x, y) at the reference velocity.
    Position,
    /// (v_x, v_y) at the reference position.
    Velocity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AmbiguitySurface {
    pub reference: Target,
    pub plane: AfPlane,
    pub sampling_rate: f64,
    /// Normalised so the reference hypothesis scores 1.
    pub grid: SearchGrid,
}

/// Template description of one hypothesis seen by one pair.
#[derive(Clone, Copy, Debug)]
struct PairHypothesis {
    offset: usize,
    doppler: f64,
}

fn hypothesis(sensor: &SensorModel, pair: (usize, usize), theta: &Target) -> Result<Option<PairHypothesis>> {
    let (t, r) = sensor.geometry.antennas(pair);
    let dir = bistatic_direction(t, r, theta.position)?;
    let range = theta.position.distance(t) + theta.position.distance(r);
    Ok(sensor.bounds(pair).offset(range).map(|offset| PairHypothesis {
        offset,
        doppler: sensor.config.carrier_hz / SPEED_OF_LIGHT * theta.velocity.dot(dir),
    }))
}

/// Pulse-train template of one transmitter for a hypothesis, pulse-major
/// (`q * cols + l`), with unobserved samples zeroed.
pub fn template(
    code: &[Complex64],
    offset: usize,
    doppler: f64,
    pulses: usize,
    cols: usize,
    pri_s: f64,
    mask: Option<&SampleMask>,
) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); pulses * cols];
    for q in 0..pulses {
        let phase = Complex64::cis(2.0 * PI * doppler * q as f64 * pri_s);
        for (i, s) in code.iter().enumerate() {
            let l = offset + i;
            if l < cols && mask.map_or(true, |m| m.contains(q, l)) {
                out[q * cols + l] = phase * s;
            }
        }
    }
    out
}

/// ‖AᴴB‖_F² for two column sets of equal length.
pub fn frobenius_correlation(a: &[Vec<Complex64>], b: &[Vec<Complex64>]) -> f64 {
    let mut total = 0.0;
    for u in a {
        for v in b {
            let ip: Complex64 = u.iter().zip(v).map(|(x, y)| x.conj() * y).sum();
            total += ip.norm_sqr();
        }
    }
    total
}

/// Seeded mask shared by every template of an ambiguity computation.
pub fn ambiguity_mask(sensor: &SensorModel, rate: f64, seed: u64) -> Result<Option<SampleMask>> {
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(Error::param("sampling_rate", format!("must lie in (0, 1], got {rate}")));
    }
    if rate == 1.0 {
        return Ok(None);
    }
    let cols = sensor.config.code_length + sensor.windows.l_max();
    let mut rng = rng::stream(seed, Purpose::AmbiguityMask, &[]);
    SampleMask::random(sensor.config.pulses, cols, rate, &mut rng).map(Some)
}

/// Masked correlation of two codes, per pulse and candidate offset.
///
/// `table[q * (l_max + 1) + l]` = Σ_i mask(q, i) · conj(a[i − ref_offset]) · b[i − l].
struct CorrelationTable {
    width: usize,
    values: Vec<Complex64>,
}

impl CorrelationTable {
    fn new(
        a: &[Complex64],
        ref_offset: usize,
        b: &[Complex64],
        l_max: usize,
        pulses: usize,
        mask: Option<&SampleMask>,
    ) -> Self {
        let width = l_max + 1;
        let mut values = vec![Complex64::new(0.0, 0.0); pulses * width];
        for q in 0..pulses {
            for l in 0..width {
                let lo = ref_offset.max(l);
                let hi = (ref_offset + a.len()).min(l + b.len());
                let mut acc = Complex64::new(0.0, 0.0);
                for i in lo..hi {
                    if mask.map_or(true, |m| m.contains(q, i)) {
                        acc += a[i - ref_offset].conj() * b[i - l];
                    }
                }
                values[q * width + l] = acc;
            }
        }
        CorrelationTable { width, values }
    }

    fn at(&self, q: usize, l: usize) -> Complex64 {
        self.values[q * self.width + l]
    }
}

/// Distributed-MIMO ambiguity function F(θ₀, θ) = Σ_n ‖Υ(θ₀,n)ᴴ Υ(θ,n)‖_F² / (M_t M_r),
/// normalised by its value at θ₀.
///
/// Υ(θ, n) stacks one pulse-train template per transmitter as seen by
/// receiver n. The inner products are assembled from per-pulse correlation
/// tables, so masked templates cost no more than unmasked ones.
pub fn ambiguity(
    reference: &Target,
    grid: &AfGrid,
    sensor: &SensorModel,
    codes: &PhaseCodeSet,
    sampling_rate: f64,
    seed: u64,
) -> Result<AmbiguitySurface> {
    let AfGrid { plane, x, y } = *grid;
    if x.count == 0 || y.count == 0 {
        return Err(Error::param("grid", "empty grid"));
    }
    let g = &sensor.geometry;
    if codes.len() < g.n_tx() {
        return Err(Error::param("codes", "fewer codes than transmitters"));
    }
    if !g.region().contains(reference.position) {
        return Err(Error::param("reference", "position lies outside the surveillance region"));
    }
    if plane == AfPlane::Position {
        for v in [x.start, x.last()] {
            for w in [y.start, y.last()] {
                if !g.region().contains(Vec2::new(v, w)) {
                    return Err(Error::param("grid", "position grid must lie within the surveillance region"));
                }
            }
        }
    }
    let mask = ambiguity_mask(sensor, sampling_rate, seed)?;
    let cfg = &sensor.config;
    let (mt, mr) = (g.n_tx(), g.n_rx());

    // tables[(n * mt + m) * mt + m2]: reference transmitter m against hypothesis transmitter m2
    let mut refs = Vec::with_capacity(mt * mr);
    for n in 0..mr {
        for m in 0..mt {
            let h = hypothesis(sensor, (m, n), reference)?.ok_or(Error::OutsideWindow {
                tx: m,
                rx: n,
                x: reference.position.x,
                y: reference.position.y,
            })?;
            refs.push(h);
        }
    }
    let mut tables = Vec::with_capacity(mr * mt * mt);
    for n in 0..mr {
        for m in 0..mt {
            let r = refs[n * mt + m];
            for m2 in 0..mt {
                let l_max = sensor.bounds((m2, n)).l_max;
                tables.push(CorrelationTable::new(
                    codes.code(m),
                    r.offset,
                    codes.code(m2),
                    l_max,
                    cfg.pulses,
                    mask.as_ref(),
                ));
            }
        }
    }

    let score = |theta: &Target| -> Result<Option<f64>> {
        let mut total = 0.0;
        for n in 0..mr {
            let mut hyp = Vec::with_capacity(mt);
            for m2 in 0..mt {
                match hypothesis(sensor, (m2, n), theta)? {
                    Some(h) => hyp.push(h),
                    None => return Ok(None),
                }
            }
            for m in 0..mt {
                let f0 = refs[n * mt + m].doppler;
                for (m2, h) in hyp.iter().enumerate() {
                    let table = &tables[(n * mt + m) * mt + m2];
                    let step = Complex64::cis(2.0 * PI * (h.doppler - f0) * cfg.pri_s);
                    let mut phase = Complex64::new(1.0, 0.0);
                    let mut ip = Complex64::new(0.0, 0.0);
                    for q in 0..cfg.pulses {
                        ip += table.at(q, h.offset) * phase;
                        phase *= step;
                    }
                    total += ip.norm_sqr();
                }
            }
        }
        Ok(Some(total / (mt * mr) as f64))
    };

    let at = |a: f64, b: f64| match plane {
        AfPlane::Position => Target::new(Vec2::new(a, b), reference.velocity),
        AfPlane::Velocity => Target::new(reference.position, Vec2::new(a, b)),
    };
    let peak = score(reference)?.ok_or(Error::NoCandidates)?;
    if !(peak > 0.0) {
        return Err(Error::Numerical("ambiguity function vanishes at the reference".into()));
    }
    let mut surface = SearchGrid::new(x, y);
    let mut skipped = 0;
    for ix in 0..x.count {
        for iy in 0..y.count {
            let cell = surface.cell(ix, iy);
            match score(&at(x.value(ix), y.value(iy)))? {
                Some(v) => surface.values[cell] = v / peak,
                None => {
                    surface.values[cell] = 0.0;
                    skipped += 1;
                }
            }
        }
    }
    if skipped > 0 {
        log::warn!("{skipped} ambiguity cells fall outside a range window and were set to 0");
    }
    Ok(AmbiguitySurface {
        reference: *reference,
        plane,
        sampling_rate,
        grid: surface,
    })
}

/// −3 dB level, 10^(−0.3).
pub const HALF_POWER: f64 = 0.501_187_233_627_272_2;

impl AmbiguitySurface {
    /// Area (grid units squared) of cells at or above the −3 dB level.
    pub fn area_above(&self, level: f64) -> f64 {
        let count = self.grid.values.iter().filter(|&&v| v >= level).count();
        count as f64 * self.grid.x.step * self.grid.y.step
    }

    pub fn half_power_area(&self) -> f64 {
        self.area_above(HALF_POWER)
    }

    /// Cells of the main lobe: everything reachable from the peak by
    /// non-increasing steps between 8-neighbours.
    pub fn main_lobe(&self) -> Vec<bool> {
        let g = &self.grid;
        let (nx, ny) = (g.x.count as i64, g.y.count as i64);
        let mut inside = vec![false; g.len()];
        let Some(peak) = g.argmax() else { return inside };
        let mut stack = vec![peak];
        inside[peak] = true;
        while let Some(c) = stack.pop() {
            let (ix, iy) = ((c as i64) / ny, (c as i64) % ny);
            let v = g.values[c];
            for dx in -1..=1 {
                for dy in -1..=1 {
                    let (jx, jy) = (ix + dx, iy + dy);
                    if (dx, dy) == (0, 0) || jx < 0 || jy < 0 || jx >= nx || jy >= ny {
                        continue;
                    }
                    let d = g.cell(jx as usize, jy as usize);
                    if !inside[d] && g.values[d] <= v {
                        inside[d] = true;
                        stack.push(d);
                    }
                }
            }
        }
        inside
    }

    /// Largest value outside the main lobe, 0 when the lobe covers the grid.
    pub fn max_sidelobe(&self) -> f64 {
        let lobe = self.main_lobe();
        self.grid
            .values
            .iter()
            .zip(&lobe)
            .filter(|(_, &l)| !l)
            .map(|(&v, _)| v)
            .fold(0.0, f64::max)
    }
}

/// Position-error floors and the geometry coefficients behind them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrlbReport {
    pub sigma2_x: f64,
    pub sigma2_y: f64,
    pub e_x: f64,
    pub e_y: f64,
    pub beta_eff: f64,
    /// Inverse of the position block of the Fisher information after the
    /// reflectivity nuisance is removed by Schur complement.
    pub fim_sub: [[f64; 2]; 2],
    pub snr: f64,
}

/// Bearing sums over all pairs: (ΣA, ΣB, ΣA², ΣB², ΣAB) with
/// A = cos φ_t + cos φ_r, B = sin φ_t + sin φ_r.
fn bearing_sums(geometry: &AntennaGeometry, target: Vec2) -> Result<[f64; 5]> {
    let mut s = [0.0; 5];
    for pair in geometry.pairs() {
        let (t, r) = geometry.antennas(pair);
        if target.distance(t) == 0.0 || target.distance(r) == 0.0 {
            return Err(Error::CoincidentPoints { x: target.x, y: target.y });
        }
        let pt = (target.y - t.y).atan2(target.x - t.x);
        let pr = (target.y - r.y).atan2(target.x - r.x);
        let a = pt.cos() + pr.cos();
        let b = pt.sin() + pr.sin();
        s[0] += a;
        s[1] += b;
        s[2] += a * a;
        s[3] += b * b;
        s[4] += a * b;
    }
    Ok(s)
}

/// Cramér–Rao floors on the target position.
///
/// `snr` is linear. e_x is built from the sine sums and e_y from the cosine
/// sums, each reduced by the reflectivity-phase coupling term.
pub fn crlb(geometry: &AntennaGeometry, target: Vec2, snr: f64, carrier_hz: f64, beta_eff: f64) -> Result<CrlbReport> {
    if !(snr > 0.0 && snr.is_finite()) {
        return Err(Error::param("snr", "must be finite and positive"));
    }
    if !(carrier_hz > 0.0) || !(beta_eff >= 0.0) {
        return Err(Error::param("carrier_hz", "carrier must be positive and bandwidth non-negative"));
    }
    let [sa, sb, saa, sbb, sab] = bearing_sums(geometry, target)?;
    let pairs = geometry.n_pairs() as f64;
    let coupling = (1.0 + beta_eff * beta_eff / (carrier_hz * carrier_hz)) * pairs;
    let e_x = sbb - sb * sb / coupling;
    let e_y = saa - sa * sa / coupling;
    let cross = sab - sa * sb / coupling;
    let tiny = 1e-12 * (saa + sbb);
    if e_x <= tiny || e_y <= tiny {
        return Err(Error::DegenerateGeometry(format!(
            "geometry coefficients e_x = {e_x:e}, e_y = {e_y:e} leave a coordinate unobservable"
        )));
    }
    let scale = 8.0 * PI * PI * snr * (carrier_hz * carrier_hz + beta_eff * beta_eff) / (SPEED_OF_LIGHT * SPEED_OF_LIGHT);
    let det = e_x * e_y - cross * cross;
    let fim_sub = if det > 0.0 {
        [
            [e_x / (scale * det), -cross / (scale * det)],
            [-cross / (scale * det), e_y / (scale * det)],
        ]
    } else {
        [[f64::INFINITY; 2]; 2]
    };
    Ok(CrlbReport {
        sigma2_x: 1.0 / (scale * e_x),
        sigma2_y: 1.0 / (scale * e_y),
        e_x,
        e_y,
        beta_eff,
        fim_sub,
        snr,
    })
}
