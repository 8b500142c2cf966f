//! Desk-scale simulator for a pulsed fiber source of polarization-entangled
//! photon pairs: two-photon polarization states and analyzer optics, photon
//! pair emission statistics, gated coincidence detection, fringe/visibility
//! and CHSH analysis, and the reference-interferometer phase lock.

pub mod analysis;
pub mod config;
pub mod detection;
pub mod error;
pub mod experiment;
pub mod quantum;
pub mod source;
pub mod stabilization;

pub use analysis::{ChshConvention, ChshResult, FringeFit, FringePoint};
pub use config::{Experiment, ExperimentConfig};
pub use detection::{CountRecord, DetectorParams, ExpectedRates, StreamPlan};
pub use error::{ConfigError, Error, Result};
pub use quantum::{
    AnalyzerSetting, BellState, Channel, StateFamily, TwoPhotonState, WaveplateElement,
    WaveplateKind,
};
pub use source::{PulseEmission, SourceParams};
pub use stabilization::{LockConfig, PhaseLoopState};
