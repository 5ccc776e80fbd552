use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use wsmimo::analysis::{ambiguity, AfGrid, AfPlane};
use wsmimo::completion::write_trace_csv;
use wsmimo::estimation::{Axis, Method};
use wsmimo::harness::{emit, sweep, write_rows, DataSource, Experiment, ExperimentConfig, OutputFormat, TrialRow};
use wsmimo::io::{load_dataset, save_dataset, MatrixFormat};
use wsmimo::{Error, Vec2};

const OUT_ENV: &str = "WSMIMO_OUT";
const THREADS_ENV: &str = "WSMIMO_THREADS";

/// Matrix-completion WS-MIMO radar simulator.
#[derive(Parser, Debug)]
#[command(name = "wsmimo", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Experiment file (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding the file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory [env: WSMIMO_OUT].
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads [env: WSMIMO_THREADS].
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Csv,
    Json,
}

impl From<Format> for OutputFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => OutputFormat::Csv,
            Format::Json => OutputFormat::Json,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MatrixKind {
    Csv,
    Binary,
}

#[derive(Args, Debug, Clone, Copy)]
struct Point {
    /// SNR in dB; `inf` for noise-free. Defaults to the first sweep value.
    #[arg(long)]
    snr: Option<f64>,
    /// Sampling rate in (0, 1]. Defaults to the first sweep value.
    #[arg(long)]
    rate: Option<f64>,
    #[arg(long, default_value_t = 0)]
    trial: u64,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthesize noisy sub-sampled pair matrices and save them as a dataset.
    Simulate {
        #[command(flatten)]
        point: Point,
        #[arg(long, value_enum, default_value_t = MatrixKind::Binary)]
        matrix_format: MatrixKind,
    },
    /// Complete every matrix of a dataset by SVT.
    Complete {
        /// Dataset directory written by `simulate`.
        #[arg(long)]
        input: PathBuf,
        /// Write the per-iteration SVT trace of every pair.
        #[arg(long)]
        trace: bool,
        #[arg(long, value_enum, default_value_t = MatrixKind::Binary)]
        matrix_format: MatrixKind,
    },
    /// Estimate position and velocity from a dataset.
    Localize {
        #[arg(long)]
        input: PathBuf,
    },
    /// Ambiguity function surface around the first target.
    Af {
        #[arg(long, default_value_t = 1.0)]
        rate: f64,
        /// Grid step in metres (position plane) or m/s (velocity plane).
        #[arg(long)]
        step: Option<f64>,
        #[arg(long, value_enum, default_value_t = Plane::Position)]
        plane: Plane,
    },
    /// Cramér–Rao floors at the first target.
    Crlb {
        /// SNR values in dB. Defaults to the sweep axis.
        #[arg(long, value_delimiter = ',')]
        snr: Vec<f64>,
    },
    /// Monte Carlo sweep over the configured SNR and rate axes.
    Sweep,
    /// One full pipeline run.
    Run {
        #[command(flatten)]
        point: Point,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Plane {
    Position,
    Velocity,
}

enum Outcome {
    Ok,
    NotConverged,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.common.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).init();

    match run(cli) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::NotConverged) => {
            eprintln!("warning: some matrices did not converge; results were written");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 1 } else { 2 })
        }
    }
}

fn load_config(common: &Common) -> wsmimo::Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.master_seed = seed;
    }
    if let Some(out) = common.out.clone().or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from)) {
        cfg.output_dir = out;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn setup_threads(common: &Common) -> wsmimo::Result<()> {
    let threads = match common.threads {
        Some(n) => Some(n),
        None => match std::env::var(THREADS_ENV) {
            Ok(v) => Some(v.parse().map_err(|_| Error::Config(format!("{THREADS_ENV}={v} is not a count")))?),
            Err(_) => None,
        },
    };
    if let Some(n) = threads {
        if n == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    Ok(())
}

fn create_dir(path: &Path) -> wsmimo::Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn resolve(point: Point, cfg: &ExperimentConfig) -> wsmimo::Result<(f64, f64, u64)> {
    let snr = point
        .snr
        .or_else(|| cfg.sweep.snr_db.first().copied())
        .ok_or_else(|| Error::Config("no SNR given and the sweep axis is empty".into()))?;
    let rate = point
        .rate
        .or_else(|| cfg.sweep.sampling_rate.first().copied())
        .ok_or_else(|| Error::Config("no rate given and the sweep axis is empty".into()))?;
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(Error::Config(format!("--rate {rate} must lie in (0, 1]")));
    }
    if snr.is_nan() || snr == f64::NEG_INFINITY {
        return Err(Error::Config(format!("--snr {snr} is not allowed")));
    }
    Ok((snr, rate, point.trial))
}

fn point_label(snr: f64, rate: f64, trial: u64) -> String {
    format!("snr_{snr}__rate_{rate}__trial_{trial}")
}

fn matrix_format(kind: MatrixKind) -> MatrixFormat {
    match kind {
        MatrixKind::Csv => MatrixFormat::Csv,
        MatrixKind::Binary => MatrixFormat::Binary,
    }
}

fn run(cli: Cli) -> wsmimo::Result<Outcome> {
    let common = &cli.common;
    let cfg = load_config(common)?;
    setup_threads(common)?;
    let format: OutputFormat = common.format.into();
    let root = cfg.output_dir.join(&cfg.name);
    match cli.command {
        Command::Simulate { point, matrix_format: kind } => {
            let (snr, rate, trial) = resolve(point, &cfg)?;
            let exp = Experiment::new(&cfg)?;
            let observed = exp.observe(snr, rate, trial)?;
            let dir = root.join("simulate").join(point_label(snr, rate, trial));
            let index = save_dataset(&observed, &dir, matrix_format(kind))?;
            println!("{}", index.display());
            Ok(Outcome::Ok)
        }
        Command::Complete { input, trace, matrix_format: kind } => {
            let mut cfg = cfg;
            cfg.svt.trace |= trace;
            let exp = Experiment::new(&cfg)?;
            let observed = load_dataset(&input)?;
            let done = exp.complete(&observed)?;
            let dir = root.join("complete").join(input.file_name().unwrap_or_default());
            save_dataset(&done.matrices, &dir, matrix_format(kind))?;
            if cfg.svt.trace {
                for r in &done.recovery {
                    write_trace_csv(&r.trace, &dir.join(format!("trace_{}_{}.csv", r.tx, r.rx)))?;
                }
            }
            let rows: Vec<RecoveryRow> = done.recovery.iter().map(RecoveryRow::from).collect();
            let path = dir.join(format!("recovery.{}", format.extension()));
            write_rows(&rows, &path, format)?;
            println!("{}", path.display());
            Ok(if done.recovery.iter().all(|r| r.converged) { Outcome::Ok } else { Outcome::NotConverged })
        }
        Command::Localize { input } => {
            let exp = Experiment::new(&cfg)?;
            let matrices = load_dataset(&input)?;
            let dir = root.join("localize").join(input.file_name().unwrap_or_default());
            create_dir(&dir)?;
            let mut rows = Vec::new();
            let mut anchor = None;
            if cfg.estimation.ml {
                let surface = exp.ml_surface(&matrices)?;
                surface.write_csv(&dir.join("ml_surface.csv"))?;
                let p = exp.localize_ml(&matrices)?;
                anchor = Some(p.clone());
                rows.extend(position_rows(Method::Ml, &p));
            }
            if cfg.estimation.geometric {
                match exp.localize_geometric(&matrices) {
                    Ok(p) => {
                        anchor.get_or_insert(p.clone());
                        rows.extend(position_rows(Method::Geometric, &p));
                    }
                    Err(e) => log::warn!("geometric method failed: {e}"),
                }
            }
            if let (true, Some(p)) = (cfg.estimation.velocity, anchor) {
                let (v, b) = exp.estimate_velocities(&matrices, &p)?;
                for (i, (v, b)) in v.iter().zip(&b).enumerate() {
                    rows.push(EstimateRow {
                        quantity: "velocity".into(),
                        method: "ml".into(),
                        target: i,
                        x: v.x,
                        y: v.y,
                        reflectivity_re: Some(b.re),
                        reflectivity_im: Some(b.im),
                    });
                }
            }
            let path = dir.join(format!("estimates.{}", format.extension()));
            write_rows(&rows, &path, format)?;
            println!("{}", path.display());
            Ok(Outcome::Ok)
        }
        Command::Af { rate, step, plane } => {
            if !(rate > 0.0 && rate <= 1.0) {
                return Err(Error::Config(format!("--rate {rate} must lie in (0, 1]")));
            }
            let exp = Experiment::new(&cfg)?;
            let reference = cfg.scene.targets[0];
            let (plane, spec) = match plane {
                Plane::Position => (AfPlane::Position, cfg.position_grid()),
                Plane::Velocity => (AfPlane::Velocity, cfg.estimation.velocity_grid),
            };
            let step = step.unwrap_or(spec.step);
            let x = Axis::span(spec.x[0], spec.x[1], step)?;
            let y = Axis::span(spec.y[0], spec.y[1], step)?;
            let grid = AfGrid { plane, x, y };
            let surface = ambiguity(&reference, &grid, exp.sensor(), exp.codes(), rate, cfg.master_seed)?;
            create_dir(&root)?;
            let label = match plane {
                AfPlane::Position => "position",
                AfPlane::Velocity => "velocity",
            };
            let surface_path = root.join(format!("af_{label}_rate_{rate}.csv"));
            surface.grid.write_csv(&surface_path)?;
            let peak = surface.grid.argmax().map(|c| surface.grid.point(c));
            let summary = AfRow {
                plane: label.into(),
                sampling_rate: rate,
                peak_x: peak.map(|p| p.x),
                peak_y: peak.map(|p| p.y),
                half_power_area: surface.half_power_area(),
                max_sidelobe: surface.max_sidelobe(),
            };
            let path = root.join(format!("af_{label}_rate_{rate}.summary.{}", format.extension()));
            write_rows(&[summary], &path, format)?;
            println!("{}", surface_path.display());
            Ok(Outcome::Ok)
        }
        Command::Crlb { snr } => {
            let exp = Experiment::new(&cfg)?;
            let snrs = if snr.is_empty() { cfg.sweep.snr_db.clone() } else { snr };
            let mut rows = Vec::new();
            for s in snrs.into_iter().filter(|s| s.is_finite()) {
                if let Some(r) = exp.crlb(s)? {
                    rows.push(CrlbRow {
                        snr_db: s,
                        snr: r.snr,
                        sigma2_x: r.sigma2_x,
                        sigma2_y: r.sigma2_y,
                        e_x: r.e_x,
                        e_y: r.e_y,
                        beta_eff: r.beta_eff,
                        fim_xx: r.fim_sub[0][0],
                        fim_xy: r.fim_sub[0][1],
                        fim_yx: r.fim_sub[1][0],
                        fim_yy: r.fim_sub[1][1],
                    });
                }
            }
            create_dir(&root)?;
            let path = root.join(format!("crlb.{}", format.extension()));
            write_rows(&rows, &path, format)?;
            println!("{}", path.display());
            Ok(Outcome::Ok)
        }
        Command::Sweep => {
            let result = sweep(&cfg)?;
            let paths = emit(&result, &cfg.output_dir, format)?;
            for p in &paths {
                println!("{}", p.display());
            }
            if result.any_failed() {
                let failed = result.trials.iter().filter(|t| t.failed).count();
                return Err(Error::Numerical(format!("{failed} trials failed; see the trials table")));
            }
            Ok(if result.any_not_converged() { Outcome::NotConverged } else { Outcome::Ok })
        }
        Command::Run { point } => {
            let (snr, rate, trial) = resolve(point, &cfg)?;
            let exp = Experiment::new(&cfg)?;
            let report = exp.run(snr, rate, trial)?;
            create_dir(&root)?;
            let label = point_label(snr, rate, trial);
            let path = match format {
                OutputFormat::Json => {
                    let path = root.join(format!("run_{label}.json"));
                    let text = serde_json::to_string_pretty(&report).map_err(|e| Error::Format {
                        path: path.clone(),
                        reason: e.to_string(),
                    })?;
                    std::fs::write(&path, text + "\n").map_err(|e| Error::Io {
                        path: path.clone(),
                        source: e,
                    })?;
                    path
                }
                OutputFormat::Csv => {
                    let path = root.join(format!("run_{label}.csv"));
                    write_rows(&[TrialRow::from(&report)], &path, format)?;
                    let rows: Vec<RecoveryRow> = report.recovery.iter().map(RecoveryRow::from).collect();
                    write_rows(&rows, &root.join(format!("run_{label}.pairs.csv")), format)?;
                    path
                }
            };
            println!("{}", path.display());
            if let Some(p) = report.position(Method::Ml, DataSource::Recovered).and_then(|e| e.positions.first()) {
                log::info!("ML position ({}, {}), ε = {:.4}", p.x, p.y, report.mean_recovery_error);
            }
            Ok(if report.all_converged { Outcome::Ok } else { Outcome::NotConverged })
        }
    }
}

fn position_rows(method: Method, positions: &[Vec2]) -> Vec<EstimateRow> {
    let name = match method {
        Method::Ml => "ml",
        Method::Geometric => "geometric",
    };
    positions
        .iter()
        .enumerate()
        .map(|(i, p)| EstimateRow {
            quantity: "position".into(),
            method: name.into(),
            target: i,
            x: p.x,
            y: p.y,
            reflectivity_re: None,
            reflectivity_im: None,
        })
        .collect()
}

#[derive(Default, Serialize)]
struct EstimateRow {
    quantity: String,
    method: String,
    target: usize,
    x: f64,
    y: f64,
    reflectivity_re: Option<f64>,
    reflectivity_im: Option<f64>,
}

#[derive(Default, Serialize)]
struct RecoveryRow {
    tx: usize,
    rx: usize,
    epsilon: f64,
    iterations: usize,
    rank: usize,
    residual: f64,
    stop: String,
    converged: bool,
    noise_variance: f64,
}

impl From<&wsmimo::harness::PairRecovery> for RecoveryRow {
    fn from(r: &wsmimo::harness::PairRecovery) -> Self {
        RecoveryRow {
            tx: r.tx,
            rx: r.rx,
            epsilon: r.epsilon,
            iterations: r.iterations,
            rank: r.rank,
            residual: r.residual,
            stop: r
                .stop
                .map(|s| serde_json::to_value(s).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default())
                .unwrap_or_else(|| "skipped".into()),
            converged: r.converged,
            noise_variance: r.noise_variance,
        }
    }
}

#[derive(Default, Serialize)]
struct AfRow {
    plane: String,
    sampling_rate: f64,
    peak_x: Option<f64>,
    peak_y: Option<f64>,
    half_power_area: f64,
    max_sidelobe: f64,
}

#[derive(Default, Serialize)]
struct CrlbRow {
    snr_db: f64,
    snr: f64,
    sigma2_x: f64,
    sigma2_y: f64,
    e_x: f64,
    e_y: f64,
    beta_eff: f64,
    fim_xx: f64,
    fim_xy: f64,
    fim_yx: f64,
    fim_yy: f64,
}
