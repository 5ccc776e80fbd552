//! Experiment configuration, the end-to-end pipeline and Monte Carlo sweeps.
//!
//! One trial runs synthesis, noise, sub-sampling, completion of every pair,
//! ML localization, geometric localization and the velocity search. Every
//! random stream is keyed by (master seed, trial, pair), so a trial gives the
//! same result whatever cell it belongs to and however work is scheduled.

mod config;
mod sweep;

pub use config::{
    EstimationConfig, ExperimentConfig, GeometryConfig, SceneConfig, SvtConfig, SweepAxes, WaveformConfig,
};
pub use sweep::{emit, file_stem, sweep, write_rows, CellSummary, OutputFormat, SweepResult, TrialRow};

use itertools::Itertools;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{crlb, CrlbReport};
use crate::completion::{
    estimate_noise_variance, noise_delta, relative_error, svt_complete, StopReason, SvtParams, TraceRow,
};
use crate::error::{Error, Result};
use crate::estimation::{
    extract_peaks, geometric_localize, ml_surface, ml_velocity, quantization_variance, td_estimate, Axis,
    Method, OffsetTable, SearchGrid,
};
use crate::geometry::{make_geometry, Vec2};
use crate::rng::{derive_seed, Purpose};
use crate::scene::{
    add_noise, subsample, synthesize_clean, MatrixState, PulseDataMatrix, SceneModel, SensorModel,
};
use crate::waveform::{effective_bandwidth, PhaseCodeSet};

/// Which matrices an estimator ran on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    /// Completed by SVT.
    Recovered,
    /// Zero-filled sub-sampled matrices, no completion.
    Subsampled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairRecovery {
    pub tx: usize,
    pub rx: usize,
    /// ‖Ẑ − Z‖_F / ‖Z‖_F against the noise-free matrix.
    pub epsilon: f64,
    pub iterations: usize,
    pub rank: usize,
    pub residual: f64,
    /// `None` when every entry was observed and completion was skipped.
    pub stop: Option<StopReason>,
    pub converged: bool,
    pub noise_variance: f64,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub trace: Vec<TraceRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PositionEstimate {
    pub method: Method,
    pub data: DataSource,
    /// One per target, in the order of the true targets they were matched to.
    pub positions: Vec<Vec2>,
    pub mse: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VelocityEstimate {
    pub data: DataSource,
    pub velocities: Vec<Vec2>,
    pub reflectivity: Vec<Complex64>,
    pub mse: Option<f64>,
    pub error: Option<String>,
}

/// Everything one trial of the pipeline produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimationReport {
    pub snr_db: f64,
    pub sampling_rate: f64,
    pub trial: u64,
    pub seed: u64,
    pub recovery: Vec<PairRecovery>,
    pub mean_recovery_error: f64,
    pub all_converged: bool,
    /// First target from ML on recovered data, falling back to the geometric method.
    pub position_hat: Option<Vec2>,
    pub velocity_hat: Option<Vec2>,
    pub reflectivity_hat: Option<Complex64>,
    pub positions: Vec<PositionEstimate>,
    pub velocities: Vec<VelocityEstimate>,
    pub crlb: Option<CrlbReport>,
}

impl EstimationReport {
    pub fn position(&self, method: Method, data: DataSource) -> Option<&PositionEstimate> {
        self.positions.iter().find(|e| e.method == method && e.data == data)
    }

    pub fn velocity(&self, data: DataSource) -> Option<&VelocityEstimate> {
        self.velocities.iter().find(|e| e.data == data)
    }
}

/// Completed matrices plus per-pair diagnostics.
#[derive(Clone, Debug)]
pub struct Completion {
    pub matrices: Vec<PulseDataMatrix>,
    pub recovery: Vec<PairRecovery>,
}

/// A validated configuration with everything that does not change between trials.
#[derive(Debug)]
pub struct Experiment {
    config: ExperimentConfig,
    scene: SceneModel,
    sensor: SensorModel,
    codes: PhaseCodeSet,
    clean: Vec<PulseDataMatrix>,
    table: OffsetTable,
    velocity_axes: (Axis, Axis),
}

impl Experiment {
    pub fn new(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let geometry = make_geometry(&config.geometry.layout, config.geometry.region, config.master_seed)?;
        let radar = config.radar.clone();
        let codes = PhaseCodeSet::generate(
            config.waveform.family,
            geometry.n_tx(),
            radar.code_length,
            radar.subpulse_s,
        )?;
        let targets = config.scene.targets.clone();
        let reflectivity = vec![config.scene.reflectivity; geometry.n_pairs() * targets.len()];
        let scene = SceneModel::new(geometry, targets, radar, config.geometry.window)?
            .with_reflectivity(reflectivity)?;
        let sensor = scene.sensor();
        let clean = scene
            .geometry()
            .pairs()
            .map(|pair| synthesize_clean(&scene, pair, &codes).map_err(|e| e.in_stage("synthesis", pair)))
            .collect::<Result<Vec<_>>>()?;
        let (px, py) = config.position_grid().axes()?;
        let table = OffsetTable::new(&sensor, px, py)?;
        let velocity_axes = config.estimation.velocity_grid.axes()?;
        Ok(Experiment {
            config: config.clone(),
            scene,
            sensor,
            codes,
            clean,
            table,
            velocity_axes,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn scene(&self) -> &SceneModel {
        &self.scene
    }

    pub fn sensor(&self) -> &SensorModel {
        &self.sensor
    }

    pub fn codes(&self) -> &PhaseCodeSet {
        &self.codes
    }

    /// Noise-free matrices, pair order.
    pub fn clean(&self) -> &[PulseDataMatrix] {
        &self.clean
    }

    pub fn trial_seed(&self, trial: u64) -> u64 {
        derive_seed(self.config.master_seed, &[Purpose::Trial as u64, trial])
    }

    /// Noisy sub-sampled matrices of one trial.
    pub fn observe(&self, snr_db: f64, rate: f64, trial: u64) -> Result<Vec<PulseDataMatrix>> {
        let seed = self.trial_seed(trial);
        self.clean
            .par_iter()
            .map(|z| {
                let y = add_noise(z, snr_db, seed).map_err(|e| e.in_stage("noise", z.pair()))?;
                subsample(&y, rate, seed).map_err(|e| e.in_stage("sub-sampling", z.pair()))
            })
            .collect()
    }

    /// Noise variance the estimators assume for a sub-sampled matrix.
    pub fn working_variance(&self, x: &PulseDataMatrix) -> Result<f64> {
        if self.config.estimation.estimate_noise {
            let rank = self.config.estimation.noise_rank.unwrap_or(self.scene.targets().len());
            estimate_noise_variance(x, rank)
        } else {
            Ok(x.noise_variance())
        }
    }

    /// SVT on every pair. Fully observed pairs are passed through unchanged.
    pub fn complete(&self, observed: &[PulseDataMatrix]) -> Result<Completion> {
        let results: Vec<(PulseDataMatrix, PairRecovery)> = observed
            .par_iter()
            .map(|x| {
                let pair = x.pair();
                let reference = self
                    .clean
                    .iter()
                    .find(|z| z.pair() == pair)
                    .ok_or_else(|| Error::param("matrices", format!("unknown pair {pair:?}")))?;
                self.complete_pair(x, reference).map_err(|e| e.in_stage("completion", pair))
            })
            .collect::<Result<_>>()?;
        let (matrices, recovery) = results.into_iter().unzip();
        Ok(Completion { matrices, recovery })
    }

    fn complete_pair(&self, x: &PulseDataMatrix, reference: &PulseDataMatrix) -> Result<(PulseDataMatrix, PairRecovery)> {
        let pair = x.pair();
        let (rows, cols) = x.shape();
        let variance = self.working_variance(x)?;
        let (values, mut rec) = if x.observed_count() == rows * cols {
            let rec = PairRecovery {
                tx: pair.0,
                rx: pair.1,
                epsilon: 0.0,
                iterations: 0,
                rank: 0,
                residual: 0.0,
                stop: None,
                converged: true,
                noise_variance: variance,
                trace: Vec::new(),
            };
            (x.values().clone(), rec)
        } else {
            let params = self.svt_params(x, variance);
            let out = svt_complete(x, &params)?;
            let rec = PairRecovery {
                tx: pair.0,
                rx: pair.1,
                epsilon: 0.0,
                iterations: out.iterations,
                rank: out.rank,
                residual: out.residual,
                stop: Some(out.stop),
                converged: out.converged,
                noise_variance: variance,
                trace: out.trace,
            };
            (out.matrix, rec)
        };
        rec.epsilon = relative_error(reference.values(), &values)?;
        let m = PulseDataMatrix::new(pair, values, MatrixState::Completed)
            .with_noise_variance(variance)
            .with_signal_power(x.signal_power());
        Ok((m, rec))
    }

    pub fn svt_params(&self, x: &PulseDataMatrix, variance: f64) -> SvtParams {
        let s = &self.config.svt;
        let (rows, cols) = x.shape();
        let mut p = SvtParams::for_matrix(x);
        p.threshold = s.threshold_scale * rows.max(cols) as f64;
        p.step = s.step_scale * (rows * cols) as f64 / x.observed_count().max(1) as f64;
        p.tol = s.tol;
        p.max_iters = s.max_iters;
        p.stall_tol = s.stall_tol;
        p.backend = s.backend;
        p.trace = s.trace;
        if s.noise_constrained && variance > 0.0 {
            p = p.with_noise_delta(noise_delta(x.observed_count(), variance));
        }
        p
    }

    /// Per-receiver noise variance: the mean over that receiver's pairs.
    pub fn receiver_variances(&self, matrices: &[PulseDataMatrix]) -> Vec<f64> {
        let n_rx = self.scene.geometry().n_rx();
        let mut sum = vec![0.0; n_rx];
        let mut count = vec![0usize; n_rx];
        for m in matrices {
            sum[m.pair().1] += m.noise_variance();
            count[m.pair().1] += 1;
        }
        sum.iter().zip(&count).map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 }).collect()
    }

    /// ML surface over the configured position grid.
    pub fn ml_surface(&self, matrices: &[PulseDataMatrix]) -> Result<SearchGrid> {
        let vars = self.receiver_variances(matrices);
        ml_surface(matrices, &self.sensor, &self.codes, &self.table, &vars)
    }

    /// ML grid search; one position per target by sequential peak extraction.
    pub fn localize_ml(&self, matrices: &[PulseDataMatrix]) -> Result<Vec<Vec2>> {
        let surface = self.ml_surface(matrices)?;
        let k = self.scene.targets().len();
        if k == 1 {
            let best = surface.argmax().ok_or(Error::NoCandidates)?;
            return Ok(vec![surface.point(best)]);
        }
        let peaks = extract_peaks(&surface, k, self.config.estimation.notch_cells);
        if peaks.len() < k {
            return Err(Error::NoCandidates);
        }
        Ok(peaks)
    }

    /// Delay estimates followed by two-stage weighted least squares. Single target only.
    pub fn localize_geometric(&self, matrices: &[PulseDataMatrix]) -> Result<Vec<Vec2>> {
        if self.scene.targets().len() != 1 {
            return Err(Error::param("targets", "the geometric method handles a single target"));
        }
        let mut ordered: Vec<&PulseDataMatrix> = matrices.iter().collect();
        let g = self.scene.geometry();
        ordered.sort_by_key(|m| g.pair_index(m.pair()));
        let ordered: Vec<PulseDataMatrix> = ordered.into_iter().cloned().collect();
        let td = td_estimate(&ordered, &self.sensor, &self.codes)?;
        let ranges: Vec<f64> = td.iter().map(|t| t.range).collect();
        let variance = quantization_variance(self.scene.config().sample_period());
        Ok(vec![geometric_localize(&ranges, g, variance)?.position_hat])
    }

    pub fn estimate_velocities(&self, matrices: &[PulseDataMatrix], positions: &[Vec2]) -> Result<(Vec<Vec2>, Vec<Complex64>)> {
        let (vx, vy) = self.velocity_axes;
        let mut v = Vec::with_capacity(positions.len());
        let mut b = Vec::with_capacity(positions.len());
        for &p in positions {
            let r = ml_velocity(matrices, p, vx, vy, &self.sensor, &self.codes)?;
            v.push(r.velocity_hat);
            b.push(r.reflectivity_hat);
        }
        Ok((v, b))
    }

    pub fn crlb(&self, snr_db: f64) -> Result<Option<CrlbReport>> {
        if !self.config.estimation.crlb || !snr_db.is_finite() {
            return Ok(None);
        }
        let cfg = self.scene.config();
        let beta = effective_bandwidth(self.codes.code(0), cfg.sample_rate_hz)?;
        let snr = 10f64.powf(snr_db / 10.0);
        crlb(self.scene.geometry(), self.scene.targets()[0].position, snr, cfg.carrier_hz, beta).map(Some)
    }

    /// Algorithm 1 for one (SNR, rate, trial).
    pub fn run(&self, snr_db: f64, rate: f64, trial: u64) -> Result<EstimationReport> {
        let observed = self.observe(snr_db, rate, trial)?;
        let completion = self.complete(&observed)?;
        let est = &self.config.estimation;
        let truth_p: Vec<Vec2> = self.scene.targets().iter().map(|t| t.position).collect();
        let truth_v: Vec<Vec2> = self.scene.targets().iter().map(|t| t.velocity).collect();

        let mut sources = vec![(DataSource::Recovered, &completion.matrices)];
        if est.subsampled {
            sources.push((DataSource::Subsampled, &observed));
        }
        let mut positions = Vec::new();
        let mut velocities = Vec::new();
        for (data, matrices) in sources {
            let mut anchor: Option<(Vec<Vec2>, Vec<usize>)> = None;
            for (method, enabled) in [(Method::Ml, est.ml), (Method::Geometric, est.geometric)] {
                if !enabled {
                    continue;
                }
                let found = match method {
                    Method::Ml => self.localize_ml(matrices),
                    Method::Geometric => self.localize_geometric(matrices),
                };
                let entry = match found {
                    Ok(p) => {
                        let (mse, order) = matched_mse(&p, &truth_p);
                        let matched: Vec<Vec2> = order.iter().map(|&i| p[i]).collect();
                        if anchor.is_none() {
                            anchor = Some((p, order));
                        }
                        PositionEstimate { method, data, positions: matched, mse: Some(mse), error: None }
                    }
                    Err(e) => PositionEstimate { method, data, positions: Vec::new(), mse: None, error: Some(e.to_string()) },
                };
                positions.push(entry);
            }
            if !est.velocity {
                continue;
            }
            let Some((p, order)) = anchor else { continue };
            let entry = match self.estimate_velocities(matrices, &p) {
                Ok((v, b)) => {
                    let v: Vec<Vec2> = order.iter().map(|&i| v[i]).collect();
                    let b: Vec<Complex64> = order.iter().map(|&i| b[i]).collect();
                    let mse = v.iter().zip(&truth_v).map(|(a, t)| (*a - *t).dot(*a - *t)).sum::<f64>() / v.len() as f64;
                    VelocityEstimate { data, velocities: v, reflectivity: b, mse: Some(mse), error: None }
                }
                Err(e) => VelocityEstimate {
                    data,
                    velocities: Vec::new(),
                    reflectivity: Vec::new(),
                    mse: None,
                    error: Some(e.to_string()),
                },
            };
            velocities.push(entry);
        }

        let primary = positions
            .iter()
            .filter(|e| e.data == DataSource::Recovered && !e.positions.is_empty())
            .min_by_key(|e| e.method != Method::Ml)
            .map(|e| e.positions[0]);
        let rec_v = velocities.iter().find(|v| v.data == DataSource::Recovered && !v.velocities.is_empty());
        let n = completion.recovery.len().max(1) as f64;
        Ok(EstimationReport {
            snr_db,
            sampling_rate: rate,
            trial,
            seed: self.trial_seed(trial),
            mean_recovery_error: completion.recovery.iter().map(|r| r.epsilon).sum::<f64>() / n,
            all_converged: completion.recovery.iter().all(|r| r.converged),
            recovery: completion.recovery,
            position_hat: primary,
            velocity_hat: rec_v.map(|v| v.velocities[0]),
            reflectivity_hat: rec_v.map(|v| v.reflectivity[0]),
            positions,
            velocities,
            crlb: self.crlb(snr_db)?,
        })
    }
}

/// Run the whole pipeline once. Builds the experiment from scratch; use
/// [`Experiment`] directly to amortise setup over many trials.
pub fn run_pipeline(config: &ExperimentConfig, snr_db: f64, rate: f64, trial: u64) -> Result<EstimationReport> {
    Experiment::new(config)?.run(snr_db, rate, trial)
}

/// Σ‖p̂ − p‖² / K under the assignment of estimates to targets that minimises it.
///
/// Returns the MSE and, for each target, the index of the estimate assigned to
/// it. With fewer estimates than targets the unmatched targets are skipped.
pub fn matched_mse(estimates: &[Vec2], truth: &[Vec2]) -> (f64, Vec<usize>) {
    let k = truth.len().min(estimates.len());
    if k == 0 {
        return (f64::NAN, Vec::new());
    }
    let cost = |order: &[usize]| -> f64 {
        order
            .iter()
            .zip(truth)
            .map(|(&i, t)| {
                let d = estimates[i] - *t;
                d.dot(d)
            })
            .sum()
    };
    let mut best = (f64::INFINITY, Vec::new());
    for order in (0..estimates.len()).permutations(k) {
        let c = cost(&order);
        if c < best.0 {
            best = (c, order);
        }
    }
    (best.0 / k as f64, best.1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matched_mse_two_targets_by_hand() {
        let truth = [Vec2::new(0.0, 0.0), Vec2::new(10.0, 0.0)];
        // estimates listed in swapped order; errors 1 m and (3, 4) → 5 m
        let est = [Vec2::new(13.0, 4.0), Vec2::new(1.0, 0.0)];
        let (mse, order) = matched_mse(&est, &truth);
        assert_eq!(order, vec![1, 0]);
        assert!((mse - (1.0 + 25.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn matched_mse_single() {
        let (mse, _) = matched_mse(&[Vec2::new(1101.0, 1099.0)], &[Vec2::new(1100.0, 1100.0)]);
        assert!((mse - 2.0).abs() < 1e-12);
    }

    fn small_config() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.estimation.position_grid = Some(crate::estimation::GridSpec { x: [1090.0, 1110.0], y: [1090.0, 1110.0], step: 1.0 });
        cfg.estimation.velocity_grid = crate::estimation::GridSpec { x: [8.0, 12.0], y: [8.0, 12.0], step: 0.5 };
        cfg
    }

    #[test]
    fn full_rate_noise_free_is_exact() {
        let cfg = small_config();
        let r = run_pipeline(&cfg, f64::INFINITY, 1.0, 0).unwrap();
        assert_eq!(r.mean_recovery_error, 0.0);
        // cells sharing every pair's delay tie exactly; the truth is one of them
        let exp = Experiment::new(&cfg).unwrap();
        let obs = exp.observe(f64::INFINITY, 1.0, 0).unwrap();
        let (x, y) = cfg.position_grid().axes().unwrap();
        let table = OffsetTable::new(exp.sensor(), x, y).unwrap();
        let surface = ml_surface(&obs, exp.sensor(), exp.codes(), &table, &[0.0; 10]).unwrap();
        let best = surface.values[surface.argmax().unwrap()];
        let truth = surface.value_at(x.nearest(1100.0).unwrap(), y.nearest(1100.0).unwrap());
        assert_eq!(truth, best);
        let p = r.position_hat.unwrap();
        assert!((p.x - 1100.0).abs() <= 1.0 && (p.y - 1100.0).abs() <= 1.0, "{p:?}");
        assert_eq!(r.velocity_hat, Some(Vec2::new(10.0, 10.0)));
        assert!(r.all_converged);
    }

    #[test]
    fn trial_results_do_not_depend_on_cell() {
        let cfg = small_config();
        let exp = Experiment::new(&cfg).unwrap();
        let a = exp.observe(20.0, 0.5, 3).unwrap();
        let b = exp.observe(20.0, 0.5, 3).unwrap();
        assert_eq!(a[5].values(), b[5].values());
        assert_ne!(exp.trial_seed(0), exp.trial_seed(1));
    }
}
