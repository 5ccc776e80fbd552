//! Matrix-completion widely separated MIMO radar.
//!
//! Each transmitter/receiver pair collects a pulses × fast-time matrix that is
//! low rank (one rank per target). Receivers keep a random subset of samples,
//! a fusion centre completes every matrix by singular value thresholding and
//! then localizes the target by a maximum-likelihood grid search over all
//! pairs, with a Doppler search for the velocity.
//!
//! ```no_run
//! use wsmimo::harness::{run_pipeline, ExperimentConfig};
//!
//! let cfg = ExperimentConfig::default();
//! let report = run_pipeline(&cfg, 20.0, 0.5, 0).unwrap();
//! println!("{:?} ε = {:.3}", report.position_hat, report.mean_recovery_error);
//! ```

pub mod analysis;
pub mod completion;
pub mod error;
pub mod estimation;
pub mod geometry;
pub mod harness;
pub mod io;
pub mod rng;
pub mod scene;
pub mod waveform;

pub use error::{Error, Result};
pub use geometry::{AntennaGeometry, Layout, Region, Target, Vec2, WindowPolicy};
pub use scene::{PulseDataMatrix, RadarConfig, SceneModel};
pub use waveform::PhaseCodeSet;
