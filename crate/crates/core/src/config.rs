//! Experiment configuration: a flat sectioned key-value text format with
//! SI-unit suffixes, strict unknown-key rejection and field-level errors.
//!
//! ```text
//! # comments start with '#'
//! experiment = chsh          # top level: experiment, seed
//! seed = 42                  # mandatory; there is no wall-clock default
//!
//! [source]                   # sections: source, detector, loop, run
//! mu_pair = 0.1
//! signal_wavelength = 1547.1nm
//!
//! [detector]
//! gate_rate = 588kHz
//! gate_duration = 1ns
//! ```
//!
//! Scalar values may carry a unit suffix (`Hz/kHz/MHz/GHz`, `s/ms/us/ns/ps`,
//! `nm/um`, `deg/rad`); plain numbers are taken in the field's base unit.
//! Booleans are `true`/`false`. Unknown keys are errors.

use std::fmt::Write as _;
use std::path::PathBuf;

use crate::detection::DetectorParams;
use crate::error::ConfigError;
use crate::quantum::BellState;
use crate::source::SourceParams;

/// The named experiments the toolkit can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    /// Coincidence fringe versus the scanned reference phase, with the
    /// simultaneous one-photon reference fringe.
    FringePhaseScan,
    /// Coincidence fringe versus the idler analyzer angle at a locked state.
    AnalyzerScan,
    /// Expected count rates versus the pump half-wave-plate angle.
    PumpPolScan,
    /// Full 16-setting CHSH measurement of a locked Bell state.
    Chsh,
    /// Phase-lock loop under drift, locked against open-loop.
    Stabilize,
    /// Recover the dispersion offset from a simulated phase scan.
    CalibrateDelta,
}

impl Experiment {
    pub const ALL: [Experiment; 6] = [
        Experiment::FringePhaseScan,
        Experiment::AnalyzerScan,
        Experiment::PumpPolScan,
        Experiment::Chsh,
        Experiment::Stabilize,
        Experiment::CalibrateDelta,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::FringePhaseScan => "fringe-phase-scan",
            Experiment::AnalyzerScan => "analyzer-scan",
            Experiment::PumpPolScan => "pump-pol-scan",
            Experiment::Chsh => "chsh",
            Experiment::Stabilize => "stabilize",
            Experiment::CalibrateDelta => "calibrate-delta",
        }
    }

    pub fn parse(text: &str) -> Option<Experiment> {
        Experiment::ALL.into_iter().find(|e| e.name() == text.trim())
    }
}

impl std::fmt::Display for Experiment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Phase-loop initializers.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopConfig {
    /// Dispersion offset `delta` (radians): `phi_p = phi_ref + delta`.
    pub delta: f64,
    /// Phase drift, radians per square-root step.
    pub drift_rate: f64,
    pub kp: f64,
    pub ki: f64,
    /// Loop steps between gate batches (and before the first batch).
    pub settle_steps: u64,
    /// Additive Gaussian noise on the reference photocurrent.
    pub current_noise: f64,
    /// Steps for the `stabilize` experiment.
    pub steps: u64,
}

impl Default for LoopConfig {
    fn default() -> Self {
        LoopConfig {
            delta: 0.3,
            drift_rate: 0.0,
            kp: 0.8,
            ki: 0.05,
            settle_steps: 500,
            current_noise: 0.0,
            steps: 10_000,
        }
    }
}

/// Run-level knobs shared by the experiments.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub gates_per_point: u64,
    /// Scan points (fringe, analyzer, pump and calibration scans).
    pub points: usize,
    pub workers: u32,
    /// Analyze accidental-corrected (true) or raw (false) coincidences.
    pub corrected: bool,
    pub output: PathBuf,
    /// Insert the 45-degree idler half-wave plate for scans that do not lock
    /// a named Bell state.
    pub idler_hwp: bool,
    /// Bell state to lock for `chsh` and `analyzer-scan`.
    pub bell_state: Option<BellState>,
    /// Fixed signal-analyzer angle for scans, degrees from vertical.
    pub theta_signal_deg: f64,
    /// Fixed idler-analyzer angle for the phase scan, degrees.
    pub theta_idler_deg: f64,
    pub grating_eff_h: f64,
    pub grating_eff_v: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            gates_per_point: 1_000_000,
            points: 32,
            workers: 1,
            corrected: true,
            output: PathBuf::from("out"),
            idler_hwp: false,
            bell_state: None,
            theta_signal_deg: 45.0,
            theta_idler_deg: 45.0,
            grating_eff_h: 0.90,
            grating_eff_v: 0.86,
        }
    }
}

/// A fully validated experiment configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub seed: u64,
    pub source: SourceParams,
    pub detector: DetectorParams,
    pub loop_cfg: LoopConfig,
    pub run: RunConfig,
}

impl ExperimentConfig {
    /// Defaults for `experiment` with the mandatory seed supplied.
    pub fn with_defaults(experiment: Experiment, seed: u64) -> Self {
        ExperimentConfig {
            experiment,
            seed,
            source: SourceParams::reference(),
            detector: DetectorParams::reference(),
            loop_cfg: LoopConfig::default(),
            run: RunConfig::default(),
        }
    }

    /// Canonical text rendering used for the reproducibility hash. Excludes
    /// the output path, which does not influence any computed number.
    pub fn canonical_string(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "experiment = {}", self.experiment);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "[source]");
        let _ = writeln!(s, "mu_pair = {}", self.source.mu_pair);
        let _ = writeln!(s, "pump_phase = {}", self.source.pump_phase);
        let _ = writeln!(s, "pump_power_ratio = {}", self.source.pump_power_ratio);
        let _ = writeln!(s, "coherence = {}", self.source.coherence);
        let _ = writeln!(s, "bg_signal = {}", self.source.bg_signal);
        let _ = writeln!(s, "bg_idler = {}", self.source.bg_idler);
        let _ = writeln!(s, "cross_pol_fraction = {}", self.source.cross_pol_fraction);
        let _ = writeln!(s, "pump_wavelength = {}", self.source.pump_wavelength_nm);
        let _ = writeln!(s, "signal_wavelength = {}", self.source.signal_wavelength_nm);
        let _ = writeln!(s, "idler_wavelength = {}", self.source.idler_wavelength_nm);
        let _ = writeln!(s, "wavelength_tolerance = {}", self.source.wavelength_tolerance);
        let _ = writeln!(s, "[detector]");
        let _ = writeln!(s, "alpha_signal = {}", self.detector.alpha_signal);
        let _ = writeln!(s, "alpha_idler = {}", self.detector.alpha_idler);
        let _ = writeln!(s, "dark_signal = {}", self.detector.dark_signal);
        let _ = writeln!(s, "dark_idler = {}", self.detector.dark_idler);
        let _ = writeln!(s, "gate_rate = {}", self.detector.gate_rate_hz);
        let _ = writeln!(s, "gate_duration = {}", self.detector.gate_duration_s);
        let _ = writeln!(s, "pulses_per_gate = {}", self.detector.pulses_per_gate);
        let _ = writeln!(s, "[loop]");
        let _ = writeln!(s, "delta = {}", self.loop_cfg.delta);
        let _ = writeln!(s, "drift_rate = {}", self.loop_cfg.drift_rate);
        let _ = writeln!(s, "kp = {}", self.loop_cfg.kp);
        let _ = writeln!(s, "ki = {}", self.loop_cfg.ki);
        let _ = writeln!(s, "settle_steps = {}", self.loop_cfg.settle_steps);
        let _ = writeln!(s, "current_noise = {}", self.loop_cfg.current_noise);
        let _ = writeln!(s, "steps = {}", self.loop_cfg.steps);
        let _ = writeln!(s, "[run]");
        let _ = writeln!(s, "gates_per_point = {}", self.run.gates_per_point);
        let _ = writeln!(s, "points = {}", self.run.points);
        let _ = writeln!(s, "workers = {}", self.run.workers);
        let _ = writeln!(s, "corrected = {}", self.run.corrected);
        let _ = writeln!(s, "idler_hwp = {}", self.run.idler_hwp);
        let _ = writeln!(
            s,
            "bell_state = {}",
            self.run.bell_state.map_or("none", |b| b.name())
        );
        let _ = writeln!(s, "theta_signal = {}", self.run.theta_signal_deg);
        let _ = writeln!(s, "theta_idler = {}", self.run.theta_idler_deg);
        let _ = writeln!(s, "grating_eff_h = {}", self.run.grating_eff_h);
        let _ = writeln!(s, "grating_eff_v = {}", self.run.grating_eff_v);
        s
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let field_err = |e: crate::error::Error| match e {
            crate::error::Error::InvalidParameter { name, message } => ConfigError::Value {
                field: name.to_string(),
                message,
            },
            other => ConfigError::Value {
                field: "config".into(),
                message: other.to_string(),
            },
        };
        self.source.validate().map_err(field_err)?;
        self.detector.validate().map_err(field_err)?;
        for (field, v) in [
            ("delta", self.loop_cfg.delta),
            ("kp", self.loop_cfg.kp),
            ("ki", self.loop_cfg.ki),
        ] {
            if !v.is_finite() {
                return Err(ConfigError::value(field, "must be finite"));
            }
        }
        if !(self.loop_cfg.drift_rate.is_finite() && self.loop_cfg.drift_rate >= 0.0) {
            return Err(ConfigError::value("drift_rate", "must be >= 0"));
        }
        if !(self.loop_cfg.current_noise.is_finite() && self.loop_cfg.current_noise >= 0.0) {
            return Err(ConfigError::value("current_noise", "must be >= 0"));
        }
        if self.run.gates_per_point == 0 {
            return Err(ConfigError::value("gates_per_point", "must be >= 1"));
        }
        if self.run.points < 5 {
            return Err(ConfigError::value("points", "scans need at least 5 points"));
        }
        if self.run.workers == 0 {
            return Err(ConfigError::value("workers", "must be >= 1"));
        }
        if !self.run.theta_signal_deg.is_finite() || !self.run.theta_idler_deg.is_finite() {
            return Err(ConfigError::value("theta_signal/theta_idler", "must be finite"));
        }
        for (field, v) in [
            ("grating_eff_h", self.run.grating_eff_h),
            ("grating_eff_v", self.run.grating_eff_v),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(ConfigError::value(field, "must lie in [0, 1]"));
            }
        }
        if self.loop_cfg.steps == 0 {
            return Err(ConfigError::value("steps", "must be >= 1"));
        }
        Ok(())
    }
}

/// Base unit a config field is expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Quantity {
    Plain,
    /// Base Hz; accepts Hz, kHz, MHz, GHz.
    Frequency,
    /// Base seconds; accepts s, ms, us, ns, ps.
    Time,
    /// Base nanometers; accepts nm, um.
    LengthNm,
    /// Base radians; accepts rad, deg.
    AngleRad,
    /// Base degrees; accepts deg, rad.
    AngleDeg,
}

fn parse_scalar(field: &str, raw: &str, quantity: Quantity) -> Result<f64, ConfigError> {
    let raw = raw.trim();
    let split = raw
        .char_indices()
        .find(|(_, c)| c.is_alphabetic())
        .map_or(raw.len(), |(i, _)| i);
    let (number, unit) = raw.split_at(split);
    let value: f64 = number.trim().parse().map_err(|_| {
        ConfigError::value(field, format!("`{raw}` is not a number"))
    })?;
    let unit = unit.trim();
    if unit.is_empty() {
        return Ok(value);
    }
    let factor = match (quantity, unit) {
        (Quantity::Frequency, "Hz") => 1.0,
        (Quantity::Frequency, "kHz") => 1e3,
        (Quantity::Frequency, "MHz") => 1e6,
        (Quantity::Frequency, "GHz") => 1e9,
        (Quantity::Time, "s") => 1.0,
        (Quantity::Time, "ms") => 1e-3,
        (Quantity::Time, "us") => 1e-6,
        (Quantity::Time, "ns") => 1e-9,
        (Quantity::Time, "ps") => 1e-12,
        (Quantity::LengthNm, "nm") => 1.0,
        (Quantity::LengthNm, "um") => 1e3,
        (Quantity::AngleRad, "rad") => 1.0,
        (Quantity::AngleRad, "deg") => std::f64::consts::PI / 180.0,
        (Quantity::AngleDeg, "deg") => 1.0,
        (Quantity::AngleDeg, "rad") => 180.0 / std::f64::consts::PI,
        _ => {
            return Err(ConfigError::value(
                field,
                format!("unit `{unit}` does not apply here"),
            ))
        }
    };
    Ok(value * factor)
}

fn parse_bool(field: &str, raw: &str) -> Result<bool, ConfigError> {
    match raw.trim() {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(ConfigError::value(
            field,
            format!("`{other}` is not a boolean (true/false)"),
        )),
    }
}

fn parse_int<T: std::str::FromStr>(field: &str, raw: &str) -> Result<T, ConfigError> {
    raw.trim()
        .parse()
        .map_err(|_| ConfigError::value(field, format!("`{}` is not a valid count", raw.trim())))
}

/// Partially specified configuration: what a config file or a set of CLI
/// flags provides before defaults are applied.
#[derive(Debug, Clone, Default)]
pub struct RawConfig {
    pub experiment: Option<Experiment>,
    seed: Option<u64>,
    settings: Vec<(String, String)>, // canonical "section.key" -> raw value
}

impl RawConfig {
    /// Parse the sectioned key-value text. Syntax errors carry line numbers;
    /// value errors are deferred to [`RawConfig::finalize`] so overrides can
    /// still be applied on top.
    pub fn parse(text: &str) -> Result<RawConfig, ConfigError> {
        let mut raw = RawConfig::default();
        let mut section = String::new();
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = match line.find('#') {
                Some(pos) => &line[..pos],
                None => line,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or(ConfigError::Syntax {
                    line: line_no,
                    message: "unterminated section header".into(),
                })?;
                section = name.trim().to_string();
                if !["source", "detector", "loop", "run"].contains(&section.as_str()) {
                    return Err(ConfigError::Syntax {
                        line: line_no,
                        message: format!("unknown section `[{section}]`"),
                    });
                }
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(ConfigError::Syntax {
                line: line_no,
                message: "expected `key = value`".into(),
            })?;
            raw.set(&section, key.trim(), value.trim(), line_no)?;
        }
        Ok(raw)
    }

    /// Record one key. `section` is empty for top-level keys. Key existence
    /// is checked immediately (with `line` in the error); value parsing
    /// happens in [`RawConfig::finalize`].
    pub fn set(
        &mut self,
        section: &str,
        key: &str,
        value: &str,
        line: usize,
    ) -> Result<(), ConfigError> {
        let path = if section.is_empty() {
            key.to_string()
        } else {
            format!("{section}.{key}")
        };
        match path.as_str() {
            "experiment" => {
                if value.trim().is_empty() {
                    return Err(ConfigError::value("experiment", "experiment must be named"));
                }
                self.experiment = Some(Experiment::parse(value).ok_or_else(|| {
                    ConfigError::value(
                        "experiment",
                        format!(
                            "unknown experiment `{value}`; expected one of {}",
                            Experiment::ALL.map(|e| e.name()).join(", ")
                        ),
                    )
                })?);
            }
            "seed" => {
                self.seed = Some(parse_int("seed", value)?);
            }
            _ if KNOWN_KEYS.contains(&path.as_str()) => {
                self.settings.retain(|(k, _)| k != &path);
                self.settings.push((path, value.to_string()));
            }
            _ => {
                return Err(ConfigError::UnknownKey {
                    key: path,
                    line,
                })
            }
        }
        Ok(())
    }

    /// Apply defaults, parse all recorded values and validate ranges.
    pub fn finalize(&self) -> Result<ExperimentConfig, ConfigError> {
        let experiment = self.experiment.ok_or(ConfigError::Missing {
            field: "experiment".into(),
        })?;
        let seed = self.seed.ok_or(ConfigError::Missing {
            field: "seed".into(),
        })?;
        let mut cfg = ExperimentConfig::with_defaults(experiment, seed);
        for (path, value) in &self.settings {
            apply_setting(&mut cfg, path, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

const KNOWN_KEYS: &[&str] = &[
    "source.mu_pair",
    "source.pump_phase",
    "source.pump_power_ratio",
    "source.coherence",
    "source.bg_signal",
    "source.bg_idler",
    "source.cross_pol_fraction",
    "source.pump_wavelength",
    "source.signal_wavelength",
    "source.idler_wavelength",
    "source.wavelength_tolerance",
    "detector.alpha_signal",
    "detector.alpha_idler",
    "detector.dark_signal",
    "detector.dark_idler",
    "detector.gate_rate",
    "detector.gate_duration",
    "detector.pulses_per_gate",
    "loop.delta",
    "loop.drift_rate",
    "loop.kp",
    "loop.ki",
    "loop.settle_steps",
    "loop.current_noise",
    "loop.steps",
    "run.gates_per_point",
    "run.points",
    "run.workers",
    "run.corrected",
    "run.output",
    "run.idler_hwp",
    "run.bell_state",
    "run.theta_signal",
    "run.theta_idler",
    "run.grating_eff_h",
    "run.grating_eff_v",
];

fn apply_setting(cfg: &mut ExperimentConfig, path: &str, value: &str) -> Result<(), ConfigError> {
    let key = path.rsplit('.').next().unwrap_or(path);
    match path {
        "source.mu_pair" => cfg.source.mu_pair = parse_scalar(key, value, Quantity::Plain)?,
        "source.pump_phase" => {
            cfg.source.pump_phase = parse_scalar(key, value, Quantity::AngleRad)?
        }
        "source.pump_power_ratio" => {
            cfg.source.pump_power_ratio = parse_scalar(key, value, Quantity::Plain)?
        }
        "source.coherence" => cfg.source.coherence = parse_scalar(key, value, Quantity::Plain)?,
        "source.bg_signal" => cfg.source.bg_signal = parse_scalar(key, value, Quantity::Plain)?,
        "source.bg_idler" => cfg.source.bg_idler = parse_scalar(key, value, Quantity::Plain)?,
        "source.cross_pol_fraction" => {
            cfg.source.cross_pol_fraction = parse_scalar(key, value, Quantity::Plain)?
        }
        "source.pump_wavelength" => {
            cfg.source.pump_wavelength_nm = parse_scalar(key, value, Quantity::LengthNm)?
        }
        "source.signal_wavelength" => {
            cfg.source.signal_wavelength_nm = parse_scalar(key, value, Quantity::LengthNm)?
        }
        "source.idler_wavelength" => {
            cfg.source.idler_wavelength_nm = parse_scalar(key, value, Quantity::LengthNm)?
        }
        "source.wavelength_tolerance" => {
            cfg.source.wavelength_tolerance = parse_scalar(key, value, Quantity::Plain)?
        }
        "detector.alpha_signal" => {
            cfg.detector.alpha_signal = parse_scalar(key, value, Quantity::Plain)?
        }
        "detector.alpha_idler" => {
            cfg.detector.alpha_idler = parse_scalar(key, value, Quantity::Plain)?
        }
        "detector.dark_signal" => {
            cfg.detector.dark_signal = parse_scalar(key, value, Quantity::Plain)?
        }
        "detector.dark_idler" => {
            cfg.detector.dark_idler = parse_scalar(key, value, Quantity::Plain)?
        }
        "detector.gate_rate" => {
            cfg.detector.gate_rate_hz = parse_scalar(key, value, Quantity::Frequency)?
        }
        "detector.gate_duration" => {
            cfg.detector.gate_duration_s = parse_scalar(key, value, Quantity::Time)?
        }
        "detector.pulses_per_gate" => cfg.detector.pulses_per_gate = parse_int(key, value)?,
        "loop.delta" => cfg.loop_cfg.delta = parse_scalar(key, value, Quantity::AngleRad)?,
        "loop.drift_rate" => {
            cfg.loop_cfg.drift_rate = parse_scalar(key, value, Quantity::Plain)?
        }
        "loop.kp" => cfg.loop_cfg.kp = parse_scalar(key, value, Quantity::Plain)?,
        "loop.ki" => cfg.loop_cfg.ki = parse_scalar(key, value, Quantity::Plain)?,
        "loop.settle_steps" => cfg.loop_cfg.settle_steps = parse_int(key, value)?,
        "loop.current_noise" => {
            cfg.loop_cfg.current_noise = parse_scalar(key, value, Quantity::Plain)?
        }
        "loop.steps" => cfg.loop_cfg.steps = parse_int(key, value)?,
        "run.gates_per_point" => cfg.run.gates_per_point = parse_int(key, value)?,
        "run.points" => cfg.run.points = parse_int(key, value)?,
        "run.workers" => cfg.run.workers = parse_int(key, value)?,
        "run.corrected" => cfg.run.corrected = parse_bool(key, value)?,
        "run.output" => cfg.run.output = PathBuf::from(value),
        "run.idler_hwp" => cfg.run.idler_hwp = parse_bool(key, value)?,
        "run.bell_state" => {
            cfg.run.bell_state = Some(BellState::parse(value).ok_or_else(|| {
                ConfigError::value(
                    "bell_state",
                    format!("`{value}` is not one of psi-plus, psi-minus, phi-plus, phi-minus"),
                )
            })?)
        }
        "run.theta_signal" => {
            cfg.run.theta_signal_deg = parse_scalar(key, value, Quantity::AngleDeg)?
        }
        "run.theta_idler" => {
            cfg.run.theta_idler_deg = parse_scalar(key, value, Quantity::AngleDeg)?
        }
        "run.grating_eff_h" => {
            cfg.run.grating_eff_h = parse_scalar(key, value, Quantity::Plain)?
        }
        "run.grating_eff_v" => {
            cfg.run.grating_eff_v = parse_scalar(key, value, Quantity::Plain)?
        }
        other => {
            return Err(ConfigError::UnknownKey {
                key: other.to_string(),
                line: 0,
            })
        }
    }
    Ok(())
}

/// Parse and validate a complete configuration from text.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    RawConfig::parse(text)?.finalize()
}
