//! Experiment orchestration: runs a validated [`ExperimentConfig`], writes
//! the per-point tables and a flat key-value summary with a reproducibility
//! block, and returns the headline numbers.
//!
//! Output is deterministic: identical `(config, seed, workers)` produce
//! byte-identical files. Acquisitions may shard across worker threads, but
//! all file writes happen sequentially on the calling thread.

use std::f64::consts::TAU;
use std::fmt::Display;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::analysis::{
    chsh_from_records, chsh_from_state, chsh_setting_grid, fit_fringe, fit_fringe_free_frequency,
    ChshConvention, FringeFit, FringePoint,
};
use crate::config::{Experiment, ExperimentConfig};
use crate::detection::{run_acquisition, subtract_accidentals, CountRecord, StreamPlan};
use crate::error::Result;
use crate::quantum::{AnalyzerSetting, BellState};
use crate::source::{pump_polarization_scan, state_from_pump, SourceParams};
use crate::stabilization::{
    calibrate_delta, lock_bell_state, run_loop, step_loop, write_trace_csv, PhaseLoopState,
};

/// Auxiliary random-stream lanes (outside the per-setting acquisition space).
const AUX_LANE: u32 = u32::MAX;
const AUX_LOOP: u32 = 1;
const AUX_REFERENCE: u32 = 2;

fn aux_stream(seed: u64, lane: u32) -> ChaCha8Rng {
    StreamPlan::new(seed, AUX_LANE, 1).stream(lane)
}

/// Where the run wrote its files and what it concluded.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub output_dir: PathBuf,
    pub files: Vec<PathBuf>,
    /// Ordered key-value pairs, exactly as written to `summary.txt`.
    pub values: Vec<(String, String)>,
}

impl RunReport {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.values
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn get_f64(&self, key: &str) -> Option<f64> {
        self.get(key)?.parse().ok()
    }
}

struct Summary {
    values: Vec<(String, String)>,
}

impl Summary {
    fn new(cfg: &ExperimentConfig) -> Self {
        let mut s = Summary { values: Vec::new() };
        s.push("experiment", cfg.experiment);
        s
    }

    fn push(&mut self, key: &str, value: impl Display) {
        self.values.push((key.to_string(), value.to_string()));
    }

    fn push_fit(&mut self, prefix: &str, fit: &FringeFit) {
        self.push(&format!("{prefix}_visibility"), fit.visibility);
        self.push(&format!("{prefix}_visibility_sigma"), fit.visibility_sigma);
        self.push(&format!("{prefix}_baseline"), fit.baseline);
        self.push(&format!("{prefix}_phase"), fit.phase_offset);
        self.push(&format!("{prefix}_phase_sigma"), fit.phase_sigma);
        self.push(&format!("{prefix}_frequency"), fit.frequency);
        self.push(&format!("{prefix}_chi2"), fit.chi2);
    }

    fn finish(mut self, cfg: &ExperimentConfig, dir: &Path, files: &mut Vec<PathBuf>) -> Result<RunReport> {
        let mut hasher = Sha256::new();
        hasher.update(cfg.canonical_string().as_bytes());
        let digest = hasher.finalize();
        let mut hex = String::with_capacity(64);
        for byte in digest {
            use std::fmt::Write as _;
            let _ = write!(hex, "{byte:02x}");
        }
        self.push("config_sha256", hex);
        self.push("seed", cfg.seed);
        self.push("workers", cfg.run.workers);
        self.push("package_version", env!("CARGO_PKG_VERSION"));

        let path = dir.join("summary.txt");
        let mut w = BufWriter::new(fs::File::create(&path)?);
        for (k, v) in &self.values {
            writeln!(w, "{k} = {v}")?;
        }
        w.flush()?;
        files.push(path);
        Ok(RunReport {
            output_dir: dir.to_path_buf(),
            files: std::mem::take(files),
            values: self.values,
        })
    }
}

fn write_file(dir: &Path, name: &str, files: &mut Vec<PathBuf>, body: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let path = dir.join(name);
    let mut w = BufWriter::new(fs::File::create(&path)?);
    body(&mut w)?;
    w.flush()?;
    files.push(path);
    Ok(())
}

/// Scaled-abscissa count table: the scan variable followed by the standard
/// count-record columns.
fn write_scan_counts(
    dir: &Path,
    name: &str,
    x_label: &str,
    xs: &[f64],
    records: &[CountRecord],
    files: &mut Vec<PathBuf>,
) -> Result<()> {
    write_file(dir, name, files, |w| {
        writeln!(w, "{x_label},{}", CountRecord::CSV_HEADER)?;
        for (x, rec) in xs.iter().zip(records) {
            writeln!(w, "{x},{}", rec.to_csv_row())?;
        }
        Ok(())
    })
}

fn fringe_points(xs: &[f64], records: &[CountRecord], corrected: bool) -> Vec<FringePoint> {
    xs.iter()
        .zip(records)
        .map(|(&x, rec)| {
            if corrected {
                let c = subtract_accidentals(rec);
                FringePoint::new(x, c.value, c.sigma.max(1.0))
            } else {
                let c = rec.coincidences as f64;
                FringePoint::new(x, c, c.sqrt().max(1.0))
            }
        })
        .collect()
}

/// `(max - min) / mean` of a tally across scan points.
fn relative_variation(values: impl Iterator<Item = u64>) -> f64 {
    let v: Vec<f64> = values.map(|x| x as f64).collect();
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    if mean <= 0.0 {
        return 0.0;
    }
    let max = v.iter().cloned().fold(f64::MIN, f64::max);
    let min = v.iter().cloned().fold(f64::MAX, f64::min);
    (max - min) / mean
}

/// Run the configured experiment, writing all outputs under
/// `cfg.run.output`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunReport> {
    fs::create_dir_all(&cfg.run.output)?;
    match cfg.experiment {
        Experiment::FringePhaseScan => run_fringe_phase_scan(cfg, false),
        Experiment::CalibrateDelta => run_fringe_phase_scan(cfg, true),
        Experiment::AnalyzerScan => run_analyzer_scan(cfg),
        Experiment::PumpPolScan => run_pump_pol_scan(cfg),
        Experiment::Chsh => run_chsh(cfg),
        Experiment::Stabilize => run_stabilize(cfg),
    }
}

struct PhaseScan {
    phi_refs: Vec<f64>,
    records: Vec<CountRecord>,
    currents: Vec<f64>,
}

/// Sweep `phi_ref` over one full turn: acquire coincidences at fixed
/// analyzers while recording the one-photon reference current.
fn acquire_phase_scan(cfg: &ExperimentConfig) -> Result<PhaseScan> {
    let settings = (
        AnalyzerSetting::signal(cfg.run.theta_signal_deg)?,
        AnalyzerSetting::idler(cfg.run.theta_idler_deg)?,
    );
    let n = cfg.run.points;
    let mut phi_refs = Vec::with_capacity(n);
    let mut records = Vec::with_capacity(n);
    let mut currents = Vec::with_capacity(n);
    let mut noise_rng = aux_stream(cfg.seed, AUX_REFERENCE);
    for i in 0..n {
        let phi_ref = TAU * i as f64 / n as f64;
        let source = SourceParams {
            pump_phase: phi_ref + cfg.loop_cfg.delta,
            ..cfg.source.clone()
        };
        let rec = run_acquisition(
            &source,
            cfg.run.idler_hwp,
            &cfg.detector,
            settings,
            cfg.run.gates_per_point,
            &StreamPlan::new(cfg.seed, i as u32, cfg.run.workers),
        )?;
        let mut current = crate::stabilization::reference_current(phi_ref);
        if cfg.loop_cfg.current_noise > 0.0 {
            use rand_distr::Distribution;
            let w: f64 = rand_distr::StandardNormal.sample(&mut noise_rng);
            current += cfg.loop_cfg.current_noise * w;
        }
        phi_refs.push(phi_ref);
        records.push(rec);
        currents.push(current);
    }
    Ok(PhaseScan {
        phi_refs,
        records,
        currents,
    })
}

fn reference_fringe_points(scan: &PhaseScan, noise: f64) -> Vec<FringePoint> {
    scan.phi_refs
        .iter()
        .zip(&scan.currents)
        .map(|(&x, &c)| FringePoint::new(x, c.max(1e-9), noise.max(1e-6)))
        .collect()
}

/// Fringe-phase-scan and delta calibration share the scan; they differ in
/// which headline numbers the summary leads with.
fn run_fringe_phase_scan(cfg: &ExperimentConfig, calibration: bool) -> Result<RunReport> {
    let scan = acquire_phase_scan(cfg)?;
    let mut files = Vec::new();
    write_scan_counts(
        &cfg.run.output,
        "counts.csv",
        "phi_ref_rad",
        &scan.phi_refs,
        &scan.records,
        &mut files,
    )?;
    write_file(&cfg.run.output, "reference.csv", &mut files, |w| {
        writeln!(w, "phi_ref_rad,current")?;
        for (x, c) in scan.phi_refs.iter().zip(&scan.currents) {
            writeln!(w, "{x},{c}")?;
        }
        Ok(())
    })?;

    // two-photon fringe has twice the frequency of the reference fringe
    let corrected_pts = fringe_points(&scan.phi_refs, &scan.records, true);
    let raw_pts = fringe_points(&scan.phi_refs, &scan.records, false);
    let ref_pts = reference_fringe_points(&scan, cfg.loop_cfg.current_noise);

    let corrected_fit = fit_fringe(&corrected_pts, 2.0)?;
    let raw_fit = fit_fringe(&raw_pts, 2.0)?;
    let reference_fit = fit_fringe(&ref_pts, 1.0)?;
    let free_two_photon = fit_fringe_free_frequency(&corrected_pts, (0.5, 4.0))?;
    let free_reference = fit_fringe_free_frequency(&ref_pts, (0.25, 2.5))?;
    let delta_est = calibrate_delta(&corrected_fit, &reference_fit)?;

    let mut summary = Summary::new(cfg);
    summary.push("points", cfg.run.points);
    summary.push("gates_per_point", cfg.run.gates_per_point);
    if calibration {
        summary.push("delta_true", cfg.loop_cfg.delta);
        summary.push("delta_estimate", delta_est.delta);
        summary.push("delta_sigma", delta_est.sigma);
    }
    summary.push_fit("corrected", &corrected_fit);
    summary.push_fit("raw", &raw_fit);
    summary.push_fit("reference", &reference_fit);
    summary.push("two_photon_fitted_frequency", free_two_photon.frequency);
    summary.push("reference_fitted_frequency", free_reference.frequency);
    summary.push(
        "fringe_frequency_ratio",
        free_two_photon.frequency / free_reference.frequency,
    );
    if !calibration {
        summary.push("delta_estimate", delta_est.delta);
        summary.push("delta_sigma", delta_est.sigma);
    }
    summary.push(
        "singles_variation_signal",
        relative_variation(scan.records.iter().map(|r| r.singles_signal)),
    );
    summary.push(
        "singles_variation_idler",
        relative_variation(scan.records.iter().map(|r| r.singles_idler)),
    );
    summary.finish(cfg, &cfg.run.output, &mut files)
}

/// Lock a Bell state and sweep the idler analyzer at fixed signal analyzer.
fn run_analyzer_scan(cfg: &ExperimentConfig) -> Result<RunReport> {
    let target = cfg.run.bell_state.unwrap_or(BellState::PhiMinus);
    let lock = lock_bell_state(target, cfg.loop_cfg.delta)?;
    let source = SourceParams {
        pump_phase: lock.phi_ref_target + cfg.loop_cfg.delta,
        ..cfg.source.clone()
    };

    let n = cfg.run.points;
    let mut records = Vec::with_capacity(n);
    let mut xs = Vec::with_capacity(n);
    for i in 0..n {
        let theta2 = -45.0 + 180.0 * i as f64 / n as f64;
        let rec = run_acquisition(
            &source,
            lock.idler_hwp,
            &cfg.detector,
            (
                AnalyzerSetting::signal(cfg.run.theta_signal_deg)?,
                AnalyzerSetting::idler(theta2)?,
            ),
            cfg.run.gates_per_point,
            &StreamPlan::new(cfg.seed, i as u32, cfg.run.workers),
        )?;
        xs.push(theta2.to_radians());
        records.push(rec);
    }

    let mut files = Vec::new();
    write_file(&cfg.run.output, "counts.csv", &mut files, |w| {
        writeln!(w, "theta_idler_scan_deg,{}", CountRecord::CSV_HEADER)?;
        for (x, rec) in xs.iter().zip(&records) {
            writeln!(w, "{},{}", x.to_degrees(), rec.to_csv_row())?;
        }
        Ok(())
    })?;

    let corrected_fit = fit_fringe(&fringe_points(&xs, &records, true), 2.0)?;
    let raw_fit = fit_fringe(&fringe_points(&xs, &records, false), 2.0)?;

    let mut summary = Summary::new(cfg);
    summary.push("bell_state", target);
    summary.push("theta_signal_deg", cfg.run.theta_signal_deg);
    summary.push("points", n);
    summary.push("gates_per_point", cfg.run.gates_per_point);
    summary.push_fit("corrected", &corrected_fit);
    summary.push_fit("raw", &raw_fit);
    summary.push(
        "singles_variation_signal",
        relative_variation(records.iter().map(|r| r.singles_signal)),
    );
    summary.push(
        "singles_variation_idler",
        relative_variation(records.iter().map(|r| r.singles_idler)),
    );
    summary.finish(cfg, &cfg.run.output, &mut files)
}

/// Closed-form detected-rate scan versus the pump half-wave-plate angle.
fn run_pump_pol_scan(cfg: &ExperimentConfig) -> Result<RunReport> {
    let n = cfg.run.points;
    let angles: Vec<f64> = (0..n)
        .map(|i| 90.0 * i as f64 / (n - 1) as f64)
        .collect();
    let scan = pump_polarization_scan(
        &cfg.source,
        &angles,
        cfg.run.grating_eff_h,
        cfg.run.grating_eff_v,
    )?;

    let mut files = Vec::new();
    write_file(&cfg.run.output, "scan.csv", &mut files, |w| {
        writeln!(w, "hwp1_deg,singles_signal,singles_idler,coincidence")?;
        for p in &scan {
            writeln!(
                w,
                "{},{},{},{}",
                p.hwp1_deg, p.singles_signal, p.singles_idler, p.coincidence
            )?;
        }
        Ok(())
    })?;

    let modulation = |values: Vec<f64>| {
        let max = values.iter().cloned().fold(f64::MIN, f64::max);
        let min = values.iter().cloned().fold(f64::MAX, f64::min);
        (max - min) / (max + min)
    };
    let singles_ripple = modulation(scan.iter().map(|p| p.singles_signal).collect());
    let coincidence_ripple = modulation(scan.iter().map(|p| p.coincidence).collect());
    let eh2 = cfg.run.grating_eff_h.powi(2);
    let ev2 = cfg.run.grating_eff_v.powi(2);
    let closed_form = (eh2 - ev2) / (eh2 + ev2);

    let mut summary = Summary::new(cfg);
    summary.push("points", n);
    summary.push("grating_eff_h", cfg.run.grating_eff_h);
    summary.push("grating_eff_v", cfg.run.grating_eff_v);
    summary.push("singles_ripple", singles_ripple);
    summary.push("singles_ripple_closed_form", closed_form);
    summary.push(
        "singles_ripple_error",
        (singles_ripple - closed_form).abs(),
    );
    summary.push("coincidence_ripple", coincidence_ripple);
    summary.finish(cfg, &cfg.run.output, &mut files)
}

/// Lock the configured Bell state and measure all sixteen analyzer settings.
/// When the loop drifts, the phase is sampled once per gate batch after the
/// configured settle steps — the explicit loop/acquisition handoff.
fn run_chsh(cfg: &ExperimentConfig) -> Result<RunReport> {
    let target = cfg.run.bell_state.unwrap_or(BellState::PsiPlus);
    let lock = lock_bell_state(target, cfg.loop_cfg.delta)?;
    let mut loop_state = PhaseLoopState::new(
        lock.phi_ref_target,
        cfg.loop_cfg.delta,
        cfg.loop_cfg.drift_rate,
    );
    loop_state.kp = cfg.loop_cfg.kp;
    loop_state.ki = cfg.loop_cfg.ki;
    loop_state.current_noise = cfg.loop_cfg.current_noise;
    let mut loop_rng = aux_stream(cfg.seed, AUX_LOOP);

    let grid = chsh_setting_grid();
    let mut records = Vec::with_capacity(grid.len());
    for (i, (t1, t2)) in grid.iter().enumerate() {
        for _ in 0..cfg.loop_cfg.settle_steps {
            step_loop(&mut loop_state, &mut loop_rng);
        }
        let source = SourceParams {
            pump_phase: loop_state.pump_phase(),
            ..cfg.source.clone()
        };
        let rec = run_acquisition(
            &source,
            lock.idler_hwp,
            &cfg.detector,
            (AnalyzerSetting::signal(*t1)?, AnalyzerSetting::idler(*t2)?),
            cfg.run.gates_per_point,
            &StreamPlan::new(cfg.seed, i as u32, cfg.run.workers),
        )?;
        records.push(rec);
    }

    let convention = ChshConvention::for_state(target);
    let result = chsh_from_records(&records, cfg.run.corrected, &convention)?;

    // reference value for the ideal locked state at this coherence
    let ideal_source = SourceParams {
        pump_phase: lock.phi_ref_target + cfg.loop_cfg.delta,
        ..cfg.source.clone()
    };
    let ideal_state = state_from_pump(&ideal_source, lock.idler_hwp)?;
    let s_ideal = chsh_from_state(&ideal_state, &convention)?.s;

    let mut files = Vec::new();
    write_file(&cfg.run.output, "settings.csv", &mut files, |w| {
        writeln!(w, "{}", CountRecord::CSV_HEADER)?;
        for rec in &records {
            writeln!(w, "{}", rec.to_csv_row())?;
        }
        Ok(())
    })?;
    write_file(&cfg.run.output, "correlations.csv", &mut files, |w| {
        writeln!(w, "theta_signal_deg,theta_idler_deg,e,sigma_e")?;
        let pairs = [
            (convention.a_deg, convention.b_deg),
            (convention.a_deg, convention.b_prime_deg),
            (convention.a_prime_deg, convention.b_deg),
            (convention.a_prime_deg, convention.b_prime_deg),
        ];
        for ((t1, t2), corr) in pairs.iter().zip(&result.e_values) {
            writeln!(w, "{t1},{t2},{},{}", corr.e, corr.sigma)?;
        }
        Ok(())
    })?;
    write_file(&cfg.run.output, "chsh.csv", &mut files, |w| {
        writeln!(w, "s,sigma_s,n_sigma_violation")?;
        writeln!(w, "{},{},{}", result.s, result.sigma_s, result.n_sigma_violation)?;
        Ok(())
    })?;

    let mut summary = Summary::new(cfg);
    summary.push("bell_state", target);
    summary.push("corrected", cfg.run.corrected);
    summary.push("gates_per_setting", cfg.run.gates_per_point);
    summary.push("s", result.s);
    summary.push("sigma_s", result.sigma_s);
    summary.push("n_sigma_violation", result.n_sigma_violation);
    summary.push("s_ideal", s_ideal);
    for (i, e) in result.e_values.iter().enumerate() {
        summary.push(&format!("e{}", i + 1), e.e);
        summary.push(&format!("e{}_sigma", i + 1), e.sigma);
    }
    summary.finish(cfg, &cfg.run.output, &mut files)
}

/// Run the phase loop locked and open-loop over the same drift sequence.
fn run_stabilize(cfg: &ExperimentConfig) -> Result<RunReport> {
    let target = cfg.run.bell_state.unwrap_or(BellState::PsiMinus);
    let lock = lock_bell_state(target, cfg.loop_cfg.delta)?;
    let steps = cfg.loop_cfg.steps;

    let mut locked = PhaseLoopState::new(
        lock.phi_ref_target,
        cfg.loop_cfg.delta,
        cfg.loop_cfg.drift_rate,
    );
    locked.kp = cfg.loop_cfg.kp;
    locked.ki = cfg.loop_cfg.ki;
    locked.current_noise = cfg.loop_cfg.current_noise;
    let mut rng = aux_stream(cfg.seed, AUX_LOOP);
    let trace = run_loop(&mut locked, steps, &mut rng);

    let mut open = PhaseLoopState::new(
        lock.phi_ref_target,
        cfg.loop_cfg.delta,
        cfg.loop_cfg.drift_rate,
    );
    open.kp = 0.0;
    open.ki = 0.0;
    open.current_noise = cfg.loop_cfg.current_noise;
    let mut rng = aux_stream(cfg.seed, AUX_LOOP);
    let open_trace = run_loop(&mut open, steps, &mut rng);

    let rms = |points: &[crate::stabilization::LoopTracePoint]| {
        (points
            .iter()
            .map(|p| (p.phi_ref - lock.phi_ref_target).powi(2))
            .sum::<f64>()
            / points.len() as f64)
            .sqrt()
    };

    let mut files = Vec::new();
    write_file(&cfg.run.output, "trace.csv", &mut files, |w| {
        write_trace_csv(&trace, w)
    })?;

    let mut summary = Summary::new(cfg);
    summary.push("bell_state", target);
    summary.push("steps", steps);
    summary.push("drift_rate", cfg.loop_cfg.drift_rate);
    summary.push("phi_ref_target", lock.phi_ref_target);
    summary.push("setpoint_current", lock.setpoint_current);
    summary.push("rms_locked", rms(&trace));
    summary.push("rms_unlocked", rms(&open_trace));
    summary.push("final_phi_ref_locked", locked.phi_ref);
    summary.push("final_phi_ref_unlocked", open.phi_ref);
    summary.finish(cfg, &cfg.run.output, &mut files)
}
