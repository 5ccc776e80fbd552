//! Per-pair pulse data matrices: synthesis, noise and random sub-sampling.

use std::f64::consts::PI;

use faer::Mat;
use num_complex::Complex64;
use rand::seq::index;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    doppler_shift, AntennaGeometry, RangeBounds, RangeWindow, Target, WindowPlan, WindowPolicy,
    SPEED_OF_LIGHT,
};
use crate::rng::{self, Purpose};
use crate::waveform::PhaseCodeSet;

/// Carrier, waveform and timing parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadarConfig {
    pub carrier_hz: f64,
    pub bandwidth_hz: f64,
    /// Carrier spacing of a frequency-division variant. Recorded, not used.
    pub freq_step_hz: f64,
    pub pulses: usize,
    pub pri_s: f64,
    pub subpulse_s: f64,
    pub sample_rate_hz: f64,
    pub code_length: usize,
    pub energy: f64,
}

impl Default for RadarConfig {
    fn default() -> Self {
        RadarConfig {
            carrier_hz: 5e9,
            bandwidth_hz: 10e6,
            freq_step_hz: 50e6,
            pulses: 128,
            pri_s: 25e-3,
            subpulse_s: 0.1e-6,
            sample_rate_hz: 10e6,
            code_length: 64,
            energy: 1.0,
        }
    }
}

impl RadarConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &'static str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::param(name, format!("must be finite and positive, got {v}")))
            }
        };
        positive("carrier_hz", self.carrier_hz)?;
        positive("bandwidth_hz", self.bandwidth_hz)?;
        positive("pri_s", self.pri_s)?;
        positive("subpulse_s", self.subpulse_s)?;
        positive("sample_rate_hz", self.sample_rate_hz)?;
        positive("energy", self.energy)?;
        if self.pulses == 0 {
            return Err(Error::param("pulses", "must be at least 1"));
        }
        if self.code_length == 0 {
            return Err(Error::param("code_length", "must be at least 1"));
        }
        if ((self.sample_rate_hz * self.subpulse_s) - 1.0).abs() > 1e-9 {
            return Err(Error::param(
                "sample_rate_hz",
                "the discrete model takes one sample per subpulse (sample_rate_hz · subpulse_s = 1)",
            ));
        }
        if self.pri_s <= self.pulse_duration() {
            return Err(Error::param("pri_s", "must exceed the pulse duration"));
        }
        Ok(())
    }

    pub fn sample_period(&self) -> f64 {
        1.0 / self.sample_rate_hz
    }

    pub fn pulse_duration(&self) -> f64 {
        self.code_length as f64 * self.subpulse_s
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_hz
    }
}

/// Outcome of one modelling-assumption check.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConditionCheck {
    pub name: &'static str,
    pub holds: bool,
    pub detail: String,
}

/// What the fusion centre knows: antennas, range windows and radar parameters.
#[derive(Clone, Debug)]
pub struct SensorModel {
    pub geometry: AntennaGeometry,
    pub windows: WindowPlan,
    pub config: RadarConfig,
}

impl SensorModel {
    pub fn new(geometry: AntennaGeometry, config: RadarConfig, policy: WindowPolicy) -> Result<Self> {
        config.validate()?;
        let windows = WindowPlan::new(&geometry, config.sample_period(), policy)?;
        Ok(SensorModel {
            geometry,
            windows,
            config,
        })
    }

    pub fn bounds(&self, pair: (usize, usize)) -> &RangeBounds {
        self.windows.bounds(pair)
    }

    pub fn shape(&self, pair: (usize, usize)) -> (usize, usize) {
        (self.config.pulses, self.bounds(pair).columns(self.config.code_length))
    }
}

/// Geometry, targets, reflectivities and radar parameters of one CPI.
#[derive(Clone, Debug)]
pub struct SceneModel {
    geometry: AntennaGeometry,
    targets: Vec<Target>,
    /// Pair-major: entry `pair_index * K + k`.
    reflectivity: Vec<Complex64>,
    config: RadarConfig,
    windows: WindowPlan,
}

impl SceneModel {
    /// Scene with unit reflectivity for every pair and target.
    pub fn new(
        geometry: AntennaGeometry,
        targets: Vec<Target>,
        config: RadarConfig,
        policy: WindowPolicy,
    ) -> Result<Self> {
        config.validate()?;
        if targets.is_empty() {
            return Err(Error::param("targets", "need at least one target"));
        }
        for t in &targets {
            if !geometry.region().contains(t.position) {
                return Err(Error::param(
                    "targets",
                    format!("({}, {}) lies outside the surveillance region", t.position.x, t.position.y),
                ));
            }
            if !t.velocity.is_finite() {
                return Err(Error::param("targets", "velocity must be finite"));
            }
        }
        let windows = WindowPlan::new(&geometry, config.sample_period(), policy)?;
        let reflectivity = vec![Complex64::new(1.0, 0.0); geometry.n_pairs() * targets.len()];
        let scene = SceneModel {
            geometry,
            targets,
            reflectivity,
            config,
            windows,
        };
        for c in scene.conditions().iter().filter(|c| !c.holds) {
            log::warn!("model condition {} violated: {}", c.name, c.detail);
        }
        Ok(scene)
    }

    pub fn with_reflectivity(mut self, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != self.reflectivity.len() {
            return Err(Error::param(
                "reflectivity",
                format!("expected {} values (pairs × targets), got {}", self.reflectivity.len(), values.len()),
            ));
        }
        if values.iter().any(|z| !z.is_finite()) {
            return Err(Error::param("reflectivity", "values must be finite"));
        }
        self.reflectivity = values;
        Ok(self)
    }

    pub fn geometry(&self) -> &AntennaGeometry {
        &self.geometry
    }

    pub fn targets(&self) -> &[Target] {
        &self.targets
    }

    pub fn config(&self) -> &RadarConfig {
        &self.config
    }

    pub fn windows(&self) -> &WindowPlan {
        &self.windows
    }

    pub fn sensor(&self) -> SensorModel {
        SensorModel {
            geometry: self.geometry.clone(),
            windows: self.windows.clone(),
            config: self.config.clone(),
        }
    }

    pub fn bounds(&self, pair: (usize, usize)) -> &RangeBounds {
        self.windows.bounds(pair)
    }

    pub fn reflectivity(&self, pair: (usize, usize), k: usize) -> Complex64 {
        self.reflectivity[self.geometry.pair_index(pair) * self.targets.len() + k]
    }

    pub fn range_window(&self, pair: (usize, usize)) -> Result<RangeWindow> {
        RangeWindow::from_bounds(self.bounds(pair), &self.geometry, pair, &self.targets)
    }

    pub fn dopplers(&self, pair: (usize, usize)) -> Result<Vec<f64>> {
        let (t, r) = self.geometry.antennas(pair);
        self.targets
            .iter()
            .map(|tg| doppler_shift(t, r, tg, self.config.carrier_hz))
            .collect()
    }

    /// Matrix shape (pulses, fast-time samples) of one pair.
    pub fn shape(&self, pair: (usize, usize)) -> (usize, usize) {
        (self.config.pulses, self.bounds(pair).columns(self.config.code_length))
    }

    /// Narrowband and slow-target assumptions, each checked with a margin of 10.
    pub fn conditions(&self) -> Vec<ConditionCheck> {
        let cfg = &self.config;
        let margin = 10.0;
        let cpi = cfg.pulses as f64 * cfg.pri_s;
        let mut max_delay: f64 = 0.0;
        let mut max_doppler: f64 = 0.0;
        for pair in self.geometry.pairs() {
            let b = self.bounds(pair);
            max_delay = max_delay.max(b.r_max / SPEED_OF_LIGHT);
            if let Ok(f) = self.dopplers(pair) {
                max_doppler = f.iter().fold(max_doppler, |a, v| a.max(v.abs()));
            }
        }
        let max_speed = self.targets.iter().map(|t| t.velocity.norm()).fold(0.0, f64::max);
        let min_standoff = self
            .targets
            .iter()
            .flat_map(|t| self.geometry.tx().iter().chain(self.geometry.rx()).map(move |a| a.distance(t.position)))
            .fold(f64::INFINITY, f64::min);
        let range_cell = SPEED_OF_LIGHT / cfg.bandwidth_hz;
        vec![
            ConditionCheck {
                name: "narrowband",
                holds: margin * cfg.bandwidth_hz <= cfg.carrier_hz,
                detail: format!("bandwidth {} Hz vs carrier {} Hz", cfg.bandwidth_hz, cfg.carrier_hz),
            },
            ConditionCheck {
                name: "C1-delay",
                holds: max_delay < cfg.pri_s,
                detail: format!("max delay {max_delay:.3e} s vs PRI {} s", cfg.pri_s),
            },
            ConditionCheck {
                name: "C1-doppler",
                holds: 2.0 * max_doppler * cfg.pri_s < 1.0,
                detail: format!("max |Doppler| {max_doppler:.1} Hz vs PRF/2 {:.1} Hz", 0.5 / cfg.pri_s),
            },
            ConditionCheck {
                name: "C2",
                holds: margin * 2.0 * max_speed * cpi <= range_cell,
                detail: format!("range walk {:.2} m over the CPI vs resolution {range_cell:.1} m", 2.0 * max_speed * cpi),
            },
            ConditionCheck {
                name: "C3",
                holds: margin * max_doppler * cfg.pulse_duration() <= 1.0,
                detail: format!("Doppler phase over a pulse {:.2e} cycles", max_doppler * cfg.pulse_duration()),
            },
            ConditionCheck {
                name: "C5",
                holds: margin * max_speed * cpi <= min_standoff,
                detail: format!("displacement {:.1} m vs stand-off {min_standoff:.1} m", max_speed * cpi),
            },
        ]
    }
}

/// e^{j2π f q T_PRI}, q = 0..pulses-1.
pub fn doppler_steering(freq_hz: f64, pulses: usize, pri_s: f64) -> Vec<Complex64> {
    (0..pulses)
        .map(|q| Complex64::cis(2.0 * PI * freq_hz * q as f64 * pri_s))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixState {
    Clean,
    Noisy,
    Partial,
    /// Filled in by matrix completion.
    Completed,
}

/// Observed entries of a matrix, stored as sorted column-major linear indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SampleMask {
    rows: usize,
    cols: usize,
    observed: Vec<usize>,
    flags: Vec<bool>,
}

impl SampleMask {
    /// Mask from column-major linear indices `row + col·rows`.
    pub fn new(rows: usize, cols: usize, mut observed: Vec<usize>) -> Result<Self> {
        let total = rows * cols;
        observed.sort_unstable();
        observed.dedup();
        if observed.last().is_some_and(|&i| i >= total) {
            return Err(Error::param("mask", format!("index outside a {rows}×{cols} matrix")));
        }
        let mut flags = vec![false; total];
        for &i in &observed {
            flags[i] = true;
        }
        Ok(SampleMask {
            rows,
            cols,
            observed,
            flags,
        })
    }

    pub fn full(rows: usize, cols: usize) -> Self {
        SampleMask {
            rows,
            cols,
            observed: (0..rows * cols).collect(),
            flags: vec![true; rows * cols],
        }
    }

    /// Uniformly random subset of size `round(rate·rows·cols)`, drawn without replacement.
    pub fn random(rows: usize, cols: usize, rate: f64, rng: &mut impl rand::Rng) -> Result<Self> {
        if !(rate > 0.0 && rate <= 1.0) {
            return Err(Error::param("rate", format!("must lie in (0, 1], got {rate}")));
        }
        let total = rows * cols;
        let h = ((rate * total as f64).round() as usize).clamp(1, total);
        if h == total {
            return Ok(SampleMask::full(rows, cols));
        }
        SampleMask::new(rows, cols, index::sample(rng, total, h).into_vec())
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.observed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observed.is_empty()
    }

    pub fn observed(&self) -> &[usize] {
        &self.observed
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        self.flags[row + col * self.rows]
    }

    /// Column-major observation flags.
    pub fn flags(&self) -> &[bool] {
        &self.flags
    }

    pub fn row_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.rows];
        for &i in &self.observed {
            counts[i % self.rows] += 1;
        }
        counts
    }

    /// Zero every unobserved entry in place.
    pub fn apply(&self, m: &mut Mat<Complex64>) {
        let zero = Complex64::new(0.0, 0.0);
        for j in 0..self.cols {
            for i in 0..self.rows {
                if !self.flags[i + j * self.rows] {
                    m[(i, j)] = zero;
                }
            }
        }
    }
}

/// One transmitter/receiver pair's pulses × fast-time matrix.
#[derive(Clone, Debug)]
pub struct PulseDataMatrix {
    pair: (usize, usize),
    values: Mat<Complex64>,
    state: MatrixState,
    mask: Option<SampleMask>,
    noise_variance: f64,
    signal_power: f64,
}

impl PulseDataMatrix {
    pub fn new(pair: (usize, usize), values: Mat<Complex64>, state: MatrixState) -> Self {
        PulseDataMatrix {
            pair,
            values,
            state,
            mask: None,
            noise_variance: 0.0,
            signal_power: 0.0,
        }
    }

    /// Partially observed matrix; unobserved entries are zeroed.
    pub fn partial(pair: (usize, usize), mut values: Mat<Complex64>, mask: SampleMask) -> Result<Self> {
        let shape = (values.nrows(), values.ncols());
        if mask.shape() != shape {
            return Err(Error::ShapeMismatch {
                expected: shape,
                found: mask.shape(),
            });
        }
        if mask.is_empty() {
            return Err(Error::param("mask", "no observed entries"));
        }
        mask.apply(&mut values);
        Ok(PulseDataMatrix {
            pair,
            values,
            state: MatrixState::Partial,
            mask: Some(mask),
            noise_variance: 0.0,
            signal_power: 0.0,
        })
    }

    pub fn with_noise_variance(mut self, v: f64) -> Self {
        self.noise_variance = v;
        self
    }

    pub fn with_signal_power(mut self, p: f64) -> Self {
        self.signal_power = p;
        self
    }

    pub fn pair(&self) -> (usize, usize) {
        self.pair
    }

    pub fn values(&self) -> &Mat<Complex64> {
        &self.values
    }

    pub fn into_values(self) -> Mat<Complex64> {
        self.values
    }

    pub fn state(&self) -> MatrixState {
        self.state
    }

    pub fn mask(&self) -> Option<&SampleMask> {
        self.mask.as_ref()
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    /// Per-sample power of one echo, E·mean_k |β_k|².
    pub fn signal_power(&self) -> f64 {
        self.signal_power
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.values.nrows(), self.values.ncols())
    }

    /// Number of observed entries.
    pub fn observed_count(&self) -> usize {
        self.mask.as_ref().map_or(self.values.nrows() * self.values.ncols(), SampleMask::len)
    }
}

/// Noise-free Z = D Λ Γ for one pair.
pub fn synthesize_clean(
    scene: &SceneModel,
    pair: (usize, usize),
    codes: &PhaseCodeSet,
) -> Result<PulseDataMatrix> {
    let cfg = scene.config();
    let g = scene.geometry();
    if pair.0 >= g.n_tx() || pair.1 >= g.n_rx() {
        return Err(Error::param("pair", format!("{pair:?} out of range")));
    }
    if codes.len() < g.n_tx() || codes.code_length() != cfg.code_length {
        return Err(Error::param(
            "codes",
            format!(
                "need {} codes of length {}, got {} of length {}",
                g.n_tx(),
                cfg.code_length,
                codes.len(),
                codes.code_length()
            ),
        ));
    }
    let window = scene.range_window(pair)?;
    let dopplers = scene.dopplers(pair)?;
    let (rows, cols) = scene.shape(pair);
    let code = codes.code(pair.0);
    let amp = cfg.energy.sqrt();
    let mut z = Mat::<Complex64>::zeros(rows, cols);
    let mut power = 0.0;
    for (k, (&offset, &f)) in window.offsets.iter().zip(&dopplers).enumerate() {
        let beta = scene.reflectivity(pair, k);
        power += cfg.energy * beta.norm_sqr();
        let steering = doppler_steering(f, rows, cfg.pri_s);
        for (i, s) in code.iter().enumerate() {
            let col = offset + i;
            let c = amp * beta * s;
            for (q, d) in steering.iter().enumerate() {
                z[(q, col)] += d * c;
            }
        }
    }
    let k = window.offsets.len().max(1) as f64;
    Ok(PulseDataMatrix::new(pair, z, MatrixState::Clean).with_signal_power(power / k))
}

/// SNR in dB → noise variance for a given per-sample signal power. +∞ gives 0.
pub fn noise_variance_for(signal_power: f64, snr_db: f64) -> f64 {
    if snr_db == f64::INFINITY {
        0.0
    } else {
        signal_power / 10f64.powf(snr_db / 10.0)
    }
}

/// Y = Z + W with W circular complex Gaussian; the stream depends on (seed, pair).
pub fn add_noise(z: &PulseDataMatrix, snr_db: f64, seed: u64) -> Result<PulseDataMatrix> {
    if z.state() != MatrixState::Clean {
        return Err(Error::param("matrix", "noise is added to a clean matrix"));
    }
    if snr_db.is_nan() || snr_db == f64::NEG_INFINITY {
        return Err(Error::param("snr_db", "must be a number or +inf"));
    }
    let variance = noise_variance_for(z.signal_power(), snr_db);
    let mut values = z.values().clone();
    if variance > 0.0 {
        let mut rng = rng::stream(seed, Purpose::Noise, &[z.pair.0 as u64, z.pair.1 as u64]);
        let scale = (variance / 2.0).sqrt();
        for j in 0..values.ncols() {
            for i in 0..values.nrows() {
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                values[(i, j)] += Complex64::new(scale * re, scale * im);
            }
        }
    }
    Ok(PulseDataMatrix {
        pair: z.pair,
        values,
        state: MatrixState::Noisy,
        mask: None,
        noise_variance: variance,
        signal_power: z.signal_power,
    })
}

/// X = P_Ω(Y) with Ω uniform of size round(rate·n₁·n₂); the stream depends on (seed, pair).
pub fn subsample(y: &PulseDataMatrix, rate: f64, seed: u64) -> Result<PulseDataMatrix> {
    if y.state() == MatrixState::Partial {
        return Err(Error::param("matrix", "already sub-sampled"));
    }
    let (rows, cols) = y.shape();
    let mut rng = rng::stream(seed, Purpose::Mask, &[y.pair.0 as u64, y.pair.1 as u64]);
    let mask = SampleMask::random(rows, cols, rate, &mut rng)?;
    apply_mask(y, mask)
}

/// Restrict a matrix to a given mask.
pub fn apply_mask(y: &PulseDataMatrix, mask: SampleMask) -> Result<PulseDataMatrix> {
    Ok(PulseDataMatrix::partial(y.pair, y.values.clone(), mask)?
        .with_noise_variance(y.noise_variance)
        .with_signal_power(y.signal_power))
}
