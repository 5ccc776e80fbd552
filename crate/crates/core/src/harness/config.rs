use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::completion::SvdBackend;
use crate::error::{Error, Result};
use crate::estimation::GridSpec;
use crate::geometry::{Layout, Region, Target, Vec2, WindowPolicy};
use crate::scene::RadarConfig;
use crate::waveform::CodeFamily;

/// Full description of an experiment. Every field has a default; the defaults
/// are the single-target, circular-array setup with a 1 m search grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Output subdirectory name.
    pub name: String,
    pub master_seed: u64,
    pub trials: u64,
    pub output_dir: PathBuf,
    pub geometry: GeometryConfig,
    pub radar: RadarConfig,
    pub waveform: WaveformConfig,
    pub scene: SceneConfig,
    pub sweep: SweepAxes,
    pub estimation: EstimationConfig,
    pub svt: SvtConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "experiment".into(),
            master_seed: 0,
            trials: 100,
            output_dir: PathBuf::from("results"),
            geometry: GeometryConfig::default(),
            radar: RadarConfig::default(),
            waveform: WaveformConfig::default(),
            scene: SceneConfig::default(),
            sweep: SweepAxes::default(),
            estimation: EstimationConfig::default(),
            svt: SvtConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryConfig {
    pub layout: Layout,
    pub region: Region,
    pub window: WindowPolicy,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        GeometryConfig {
            layout: Layout::fig3_circular(),
            region: Region::new(1000.0, 1200.0, 1000.0, 1200.0).expect("valid region"),
            window: WindowPolicy::Shared,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WaveformConfig {
    pub family: CodeFamily,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub targets: Vec<Target>,
    /// Reflectivity shared by every pair and target, as [re, im].
    pub reflectivity: Complex64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            targets: vec![Target::new(Vec2::new(1100.0, 1100.0), Vec2::new(10.0, 10.0))],
            reflectivity: Complex64::new(1.0, 0.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepAxes {
    /// `inf` means noise-free.
    pub snr_db: Vec<f64>,
    pub sampling_rate: Vec<f64>,
}

impl Default for SweepAxes {
    fn default() -> Self {
        SweepAxes {
            snr_db: vec![20.0],
            sampling_rate: vec![0.5],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimationConfig {
    pub ml: bool,
    pub geometric: bool,
    pub velocity: bool,
    /// Also run the estimators on the zero-filled sub-sampled matrices.
    pub subsampled: bool,
    /// Defaults to the surveillance region at 1 m.
    pub position_grid: Option<GridSpec>,
    pub velocity_grid: GridSpec,
    /// Half-width of the square blanked around each extracted peak.
    pub notch_cells: usize,
    /// Estimate σ² from the observed entries instead of using the true value.
    pub estimate_noise: bool,
    /// Rank of the fit used by the noise estimate; defaults to the target count.
    pub noise_rank: Option<usize>,
    pub crlb: bool,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        EstimationConfig {
            ml: true,
            geometric: true,
            velocity: true,
            subsampled: true,
            position_grid: None,
            velocity_grid: GridSpec {
                x: [0.0, 20.0],
                y: [0.0, 20.0],
                step: 0.5,
            },
            notch_cells: 3,
            estimate_noise: false,
            noise_rank: None,
            crlb: true,
        }
    }
}

/// τ = threshold_scale·max(n₁, n₂), δ = step_scale·n₁n₂/|Ω|.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvtConfig {
    pub threshold_scale: f64,
    pub step_scale: f64,
    pub tol: f64,
    pub max_iters: usize,
    pub stall_tol: f64,
    /// Stop on the noise ball ‖P_Ω(Ẑ − X)‖ ≤ δ when the noise variance is known.
    pub noise_constrained: bool,
    pub backend: SvdBackend,
    pub trace: bool,
}

impl Default for SvtConfig {
    fn default() -> Self {
        SvtConfig {
            threshold_scale: 5.0,
            step_scale: 1.2,
            tol: 1e-4,
            max_iters: 500,
            stall_tol: 1e-3,
            noise_constrained: true,
            backend: SvdBackend::default(),
            trace: false,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn position_grid(&self) -> GridSpec {
        self.estimation.position_grid.unwrap_or_else(|| {
            let r = self.geometry.region;
            GridSpec {
                x: [r.x_range().0, r.x_range().1],
                y: [r.y_range().0, r.y_range().1],
                step: 1.0,
            }
        })
    }

    /// Checks that do not need the geometry to be built.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return bad(format!("name `{}` must be a non-empty single path component", self.name));
        }
        self.radar.validate()?;
        if self.scene.targets.is_empty() {
            return bad("scene.targets must list at least one target".into());
        }
        for t in &self.scene.targets {
            if !self.geometry.region.contains(t.position) {
                return bad(format!(
                    "target ({}, {}) lies outside the region",
                    t.position.x, t.position.y
                ));
            }
        }
        if !self.scene.reflectivity.is_finite() || self.scene.reflectivity.norm() == 0.0 {
            return bad("scene.reflectivity must be finite and nonzero".into());
        }
        for &s in &self.sweep.snr_db {
            if s.is_nan() || s == f64::NEG_INFINITY {
                return bad(format!("snr_db value {s} is not allowed"));
            }
        }
        for &r in &self.sweep.sampling_rate {
            if !(r > 0.0 && r <= 1.0) {
                return bad(format!("sampling_rate {r} must lie in (0, 1]"));
            }
        }
        let est = &self.estimation;
        if !est.ml && !est.geometric {
            return bad("enable at least one of estimation.ml and estimation.geometric".into());
        }
        let pos = self.position_grid();
        pos.axes()?;
        let region = self.geometry.region;
        for x in pos.x {
            for y in pos.y {
                if !region.contains(Vec2::new(x, y)) {
                    return bad("estimation.position_grid must lie within the region".into());
                }
            }
        }
        est.velocity_grid.axes()?;
        if est.noise_rank == Some(0) {
            return bad("estimation.noise_rank must be positive".into());
        }
        let s = &self.svt;
        for (name, v) in [
            ("threshold_scale", s.threshold_scale),
            ("step_scale", s.step_scale),
            ("tol", s.tol),
            ("stall_tol", s.stall_tol),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("svt.{name} must be finite and positive, got {v}"));
            }
        }
        if s.max_iters == 0 {
            return bad("svt.max_iters must be at least 1".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_toml().unwrap();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(ExperimentConfig::from_toml("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_toml("trails = 3").is_err());
        assert!(ExperimentConfig::from_toml("[svt]\nthreshold = 3.0").is_err());
    }

    #[test]
    fn partial_sections_keep_other_defaults() {
        let cfg = ExperimentConfig::from_toml(
            r#"
trials = 5
[geometry.layout]
kind = "l_shaped"
n_tx = 3
n_rx = 10
tx_radius = 5000.0
rx_spacing = 495.0
[sweep]
snr_db = [0.0, inf]
"#,
        )
        .unwrap();
        assert_eq!(cfg.trials, 5);
        assert_eq!(cfg.geometry.layout, Layout::fig4_l_shaped());
        assert_eq!(cfg.sweep.snr_db[1], f64::INFINITY);
        assert_eq!(cfg.sweep.sampling_rate, vec![0.5]);
    }

    #[test]
    fn invalid_values_are_config_errors() {
        for text in ["trials = 0", "[sweep]\nsampling_rate = [1.5]", "[[scene.targets]]\nposition = [0.0, 0.0]"] {
            let e = ExperimentConfig::from_toml(text).unwrap_err();
            assert!(e.is_config(), "{text}: {e}");
        }
    }
}
