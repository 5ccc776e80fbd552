use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{DataSource, EstimationReport, Experiment, ExperimentConfig, SweepAxes};
use crate::error::{Error, Result};
use crate::estimation::Method;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

impl OutputFormat {
    pub fn extension(self) -> &'static str {
        match self {
            OutputFormat::Csv => "csv",
            OutputFormat::Json => "json",
        }
    }
}

/// Aggregate of one (SNR, sampling rate) cell. `_se` columns are standard
/// errors of the mean over the trials that produced a value.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub snr_db: f64,
    pub sampling_rate: f64,
    pub trials: u64,
    pub failed: u64,
    pub not_converged: u64,
    pub epsilon_mean: Option<f64>,
    pub epsilon_se: Option<f64>,
    pub ml_recovered_mse: Option<f64>,
    pub ml_recovered_se: Option<f64>,
    pub ml_subsampled_mse: Option<f64>,
    pub ml_subsampled_se: Option<f64>,
    pub geometric_recovered_mse: Option<f64>,
    pub geometric_recovered_se: Option<f64>,
    pub geometric_subsampled_mse: Option<f64>,
    pub geometric_subsampled_se: Option<f64>,
    pub velocity_recovered_mse: Option<f64>,
    pub velocity_recovered_se: Option<f64>,
    pub velocity_subsampled_mse: Option<f64>,
    pub velocity_subsampled_se: Option<f64>,
    pub crlb_sigma2_x: Option<f64>,
    pub crlb_sigma2_y: Option<f64>,
}

/// One trial, flattened. Positions and velocities are those of the first target.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub snr_db: f64,
    pub sampling_rate: f64,
    pub trial: u64,
    pub seed: u64,
    pub failed: bool,
    pub error: Option<String>,
    pub epsilon: Option<f64>,
    pub mean_iterations: Option<f64>,
    pub all_converged: Option<bool>,
    pub ml_recovered_x: Option<f64>,
    pub ml_recovered_y: Option<f64>,
    pub ml_recovered_mse: Option<f64>,
    pub ml_subsampled_x: Option<f64>,
    pub ml_subsampled_y: Option<f64>,
    pub ml_subsampled_mse: Option<f64>,
    pub geometric_recovered_x: Option<f64>,
    pub geometric_recovered_y: Option<f64>,
    pub geometric_recovered_mse: Option<f64>,
    pub geometric_subsampled_x: Option<f64>,
    pub geometric_subsampled_y: Option<f64>,
    pub geometric_subsampled_mse: Option<f64>,
    pub velocity_recovered_x: Option<f64>,
    pub velocity_recovered_y: Option<f64>,
    pub velocity_recovered_mse: Option<f64>,
    pub velocity_subsampled_x: Option<f64>,
    pub velocity_subsampled_y: Option<f64>,
    pub velocity_subsampled_mse: Option<f64>,
}

impl From<&EstimationReport> for TrialRow {
    fn from(r: &EstimationReport) -> Self {
        let pos = |m: Method, d: DataSource| {
            let e = r.position(m, d).filter(|e| !e.positions.is_empty());
            (e.map(|e| e.positions[0].x), e.map(|e| e.positions[0].y), e.and_then(|e| e.mse))
        };
        let vel = |d: DataSource| {
            let e = r.velocity(d).filter(|e| !e.velocities.is_empty());
            (e.map(|e| e.velocities[0].x), e.map(|e| e.velocities[0].y), e.and_then(|e| e.mse))
        };
        let iters = r.recovery.iter().map(|p| p.iterations as f64).sum::<f64>() / r.recovery.len().max(1) as f64;
        let (mrx, mry, mrm) = pos(Method::Ml, DataSource::Recovered);
        let (msx, msy, msm) = pos(Method::Ml, DataSource::Subsampled);
        let (grx, gry, grm) = pos(Method::Geometric, DataSource::Recovered);
        let (gsx, gsy, gsm) = pos(Method::Geometric, DataSource::Subsampled);
        let (vrx, vry, vrm) = vel(DataSource::Recovered);
        let (vsx, vsy, vsm) = vel(DataSource::Subsampled);
        TrialRow {
            snr_db: r.snr_db,
            sampling_rate: r.sampling_rate,
            trial: r.trial,
            seed: r.seed,
            failed: false,
            error: None,
            epsilon: Some(r.mean_recovery_error),
            mean_iterations: Some(iters),
            all_converged: Some(r.all_converged),
            ml_recovered_x: mrx,
            ml_recovered_y: mry,
            ml_recovered_mse: mrm,
            ml_subsampled_x: msx,
            ml_subsampled_y: msy,
            ml_subsampled_mse: msm,
            geometric_recovered_x: grx,
            geometric_recovered_y: gry,
            geometric_recovered_mse: grm,
            geometric_subsampled_x: gsx,
            geometric_subsampled_y: gsy,
            geometric_subsampled_mse: gsm,
            velocity_recovered_x: vrx,
            velocity_recovered_y: vry,
            velocity_recovered_mse: vrm,
            velocity_subsampled_x: vsx,
            velocity_subsampled_y: vsy,
            velocity_subsampled_mse: vsm,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub name: String,
    pub axes: SweepAxes,
    /// SNR-major, then sampling rate.
    pub cells: Vec<CellSummary>,
    /// Cell order, then trial.
    pub trials: Vec<TrialRow>,
    /// Full reports in the order of `trials`; `None` for failed trials.
    #[serde(skip)]
    pub reports: Vec<Option<EstimationReport>>,
    /// Wall-clock seconds per trial. Never written to data files.
    #[serde(skip)]
    pub runtimes: Vec<f64>,
}

impl SweepResult {
    pub fn empty(name: &str) -> Self {
        SweepResult {
            name: name.into(),
            axes: SweepAxes {
                snr_db: Vec::new(),
                sampling_rate: Vec::new(),
            },
            cells: Vec::new(),
            trials: Vec::new(),
            reports: Vec::new(),
            runtimes: Vec::new(),
        }
    }

    pub fn any_failed(&self) -> bool {
        self.trials.iter().any(|t| t.failed)
    }

    pub fn any_not_converged(&self) -> bool {
        self.trials.iter().any(|t| t.all_converged == Some(false))
    }

    /// Reports of one cell, skipping failures.
    pub fn cell_reports(&self, snr_db: f64, rate: f64) -> impl Iterator<Item = &EstimationReport> {
        self.reports
            .iter()
            .flatten()
            .filter(move |r| r.snr_db == snr_db && r.sampling_rate == rate)
    }
}

fn mean_se(values: &[f64]) -> (Option<f64>, Option<f64>) {
    let n = values.len();
    if n == 0 {
        return (None, None);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (Some(mean), None);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (Some(mean), Some((var / n as f64).sqrt()))
}

fn summarise(snr_db: f64, rate: f64, rows: &[TrialRow], exp: &Experiment) -> Result<CellSummary> {
    let ok: Vec<&TrialRow> = rows.iter().filter(|r| !r.failed).collect();
    let col = |f: fn(&TrialRow) -> Option<f64>| mean_se(&ok.iter().filter_map(|r| f(r)).collect::<Vec<_>>());
    let (epsilon_mean, epsilon_se) = col(|r| r.epsilon);
    let (ml_recovered_mse, ml_recovered_se) = col(|r| r.ml_recovered_mse);
    let (ml_subsampled_mse, ml_subsampled_se) = col(|r| r.ml_subsampled_mse);
    let (geometric_recovered_mse, geometric_recovered_se) = col(|r| r.geometric_recovered_mse);
    let (geometric_subsampled_mse, geometric_subsampled_se) = col(|r| r.geometric_subsampled_mse);
    let (velocity_recovered_mse, velocity_recovered_se) = col(|r| r.velocity_recovered_mse);
    let (velocity_subsampled_mse, velocity_subsampled_se) = col(|r| r.velocity_subsampled_mse);
    let bound = exp.crlb(snr_db)?;
    Ok(CellSummary {
        snr_db,
        sampling_rate: rate,
        trials: rows.len() as u64,
        failed: (rows.len() - ok.len()) as u64,
        not_converged: ok.iter().filter(|r| r.all_converged == Some(false)).count() as u64,
        epsilon_mean,
        epsilon_se,
        ml_recovered_mse,
        ml_recovered_se,
        ml_subsampled_mse,
        ml_subsampled_se,
        geometric_recovered_mse,
        geometric_recovered_se,
        geometric_subsampled_mse,
        geometric_subsampled_se,
        velocity_recovered_mse,
        velocity_recovered_se,
        velocity_subsampled_mse,
        velocity_subsampled_se,
        crlb_sigma2_x: bound.as_ref().map(|b| b.sigma2_x),
        crlb_sigma2_y: bound.as_ref().map(|b| b.sigma2_y),
    })
}

/// Full factorial over (SNR, rate) × trials. A failing trial is recorded and
/// the sweep carries on; only setup errors abort it.
pub fn sweep(config: &ExperimentConfig) -> Result<SweepResult> {
    if config.sweep.snr_db.is_empty() || config.sweep.sampling_rate.is_empty() {
        return Err(Error::Config("sweep axes must both be non-empty".into()));
    }
    let exp = Experiment::new(config)?;
    let cells: Vec<(f64, f64)> = config
        .sweep
        .snr_db
        .iter()
        .flat_map(|&s| config.sweep.sampling_rate.iter().map(move |&r| (s, r)))
        .collect();
    let jobs: Vec<(usize, u64)> = (0..cells.len())
        .flat_map(|c| (0..config.trials).map(move |t| (c, t)))
        .collect();
    let outcomes: Vec<(Result<EstimationReport>, f64)> = jobs
        .par_iter()
        .map(|&(c, trial)| {
            let (snr, rate) = cells[c];
            let start = Instant::now();
            let out = exp.run(snr, rate, trial);
            if let Err(e) = &out {
                log::warn!("snr {snr} dB, rate {rate}, trial {trial}: {e}");
            }
            (out, start.elapsed().as_secs_f64())
        })
        .collect();

    let mut rows = Vec::with_capacity(jobs.len());
    let mut reports = Vec::with_capacity(jobs.len());
    let mut runtimes = Vec::with_capacity(jobs.len());
    for (&(c, trial), (out, secs)) in jobs.iter().zip(outcomes) {
        let (snr_db, sampling_rate) = cells[c];
        runtimes.push(secs);
        match out {
            Ok(r) => {
                rows.push(TrialRow::from(&r));
                reports.push(Some(r));
            }
            Err(e) => {
                rows.push(TrialRow {
                    snr_db,
                    sampling_rate,
                    trial,
                    seed: exp.trial_seed(trial),
                    failed: true,
                    error: Some(e.to_string()),
                    ..TrialRow::default()
                });
                reports.push(None);
            }
        }
    }
    let per_cell = config.trials as usize;
    let summaries = cells
        .iter()
        .enumerate()
        .map(|(c, &(s, r))| summarise(s, r, &rows[c * per_cell..(c + 1) * per_cell], &exp))
        .collect::<Result<Vec<_>>>()?;
    log::info!(
        "{}: {} trials in {:.1} s",
        config.name,
        rows.len(),
        runtimes.iter().sum::<f64>()
    );
    Ok(SweepResult {
        name: config.name.clone(),
        axes: config.sweep.clone(),
        cells: summaries,
        trials: rows,
        reports,
        runtimes,
    })
}

fn axis_label(values: &[f64]) -> String {
    if values.is_empty() {
        return "none".into();
    }
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("_")
}

/// `<experiment>/snr_<values>__rate_<values>`, without extension.
pub fn file_stem(result: &SweepResult) -> String {
    format!(
        "snr_{}__rate_{}",
        axis_label(&result.axes.snr_db),
        axis_label(&result.axes.sampling_rate)
    )
}

fn header_of<T: Default + Serialize>() -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.serialize(T::default()).map_err(|e| Error::Config(e.to_string()))?;
    let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
    let end = bytes.iter().position(|&b| b == b'\n').map_or(bytes.len(), |i| i + 1);
    Ok(bytes[..end].to_vec())
}

fn write_csv<T: Default + Serialize>(rows: &[T], path: &Path) -> Result<()> {
    let io_err = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::io(path, e),
        other => Error::Format {
            path: path.to_path_buf(),
            reason: format!("{other:?}"),
        },
    };
    if rows.is_empty() {
        return fs::write(path, header_of::<T>()?).map_err(|e| Error::io(path, e));
    }
    let mut w = csv::Writer::from_path(path).map_err(io_err)?;
    for r in rows {
        w.serialize(r).map_err(io_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(rows: &[T], path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(rows).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Write records as a CSV table with a header line, or as a JSON array.
pub fn write_rows<T: Default + Serialize>(rows: &[T], path: &Path, format: OutputFormat) -> Result<()> {
    match format {
        OutputFormat::Csv => write_csv(rows, path),
        OutputFormat::Json => write_json(rows, path),
    }
}

/// Write the per-cell table to `<dir>/<name>/<stem>.<ext>` and the per-trial
/// table next to it as `<stem>.trials.<ext>`. Returns both paths.
pub fn emit(result: &SweepResult, dir: &Path, format: OutputFormat) -> Result<Vec<PathBuf>> {
    let root = dir.join(&result.name);
    fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
    let stem = file_stem(result);
    let ext = format.extension();
    let cells = root.join(format!("{stem}.{ext}"));
    let trials = root.join(format!("{stem}.trials.{ext}"));
    write_rows(&result.cells, &cells, format)?;
    write_rows(&result.trials, &trials, format)?;
    Ok(vec![cells, trials])
}
