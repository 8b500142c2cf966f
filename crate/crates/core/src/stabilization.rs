//! Reference-interferometer phase monitor and the PZT feedback loop that
//! holds `phi_ref` — and through `phi_p = phi_ref + delta` the prepared
//! state — against phase drift.
//!
//! The loop is a sequential state machine; steps are not reorderable. It may
//! run alongside an acquisition only through an explicit handoff in which the
//! phase is sampled once per gate batch.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::analysis::FringeFit;
use crate::error::{Error, Result};
use crate::quantum::BellState;

/// One-photon interference fringe of the reference interferometer:
/// normalized photocurrent `(1 + cos(phi_ref)) / 2`, period `2 pi`.
pub fn reference_current(phi_ref: f64) -> f64 {
    0.5 * (1.0 + phi_ref.cos())
}

/// State of the phase monitor and proportional-integral PZT loop.
///
/// Phases are stored unwrapped; use [`PhaseLoopState::phi_ref_wrapped`] for a
/// `(-pi, pi]` representative. The loop locks on the negative-slope branch of
/// the reference fringe (`phi_ref` in `(0, pi)` modulo `2 pi`), which
/// resolves the two-branch ambiguity of a cosine setpoint: on that branch the
/// photocurrent error and the phase error have opposite signs, so a positive
/// proportional gain restores the lock point. Setpoints at fringe extrema
/// (`phi_ref = 0 mod pi`) carry no slope sign and cannot be held against
/// drift.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseLoopState {
    pub phi_ref: f64,
    /// Dispersion offset: `phi_p = phi_ref + delta`.
    pub delta: f64,
    /// Normalized photocurrent the loop servoes to, in `[0, 1]`.
    pub setpoint_current: f64,
    /// Accumulated PZT actuation, in radians of `phi_ref`.
    pub pzt_position: f64,
    /// Proportional gain (radians per unit current error).
    pub kp: f64,
    /// Integral gain.
    pub ki: f64,
    /// Phase drift per step is Gaussian with this standard deviation
    /// (radians per square-root step).
    pub drift_rate: f64,
    /// Integral-term accumulator.
    pub integrator: f64,
    /// Optional additive Gaussian noise on the measured photocurrent
    /// (the ideal monitor has none).
    pub current_noise: f64,
}

impl PhaseLoopState {
    /// Loop with the in-repo default gains, at rest on `phi_ref`.
    pub fn new(phi_ref: f64, delta: f64, drift_rate: f64) -> Self {
        PhaseLoopState {
            phi_ref,
            delta,
            setpoint_current: reference_current(phi_ref),
            pzt_position: 0.0,
            kp: 0.8,
            ki: 0.05,
            drift_rate,
            integrator: 0.0,
            current_noise: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("phi_ref", self.phi_ref),
            ("delta", self.delta),
            ("kp", self.kp),
            ("ki", self.ki),
        ] {
            if !v.is_finite() {
                return Err(Error::InvalidParameter {
                    name,
                    message: "must be finite".into(),
                });
            }
        }
        if !(0.0..=1.0).contains(&self.setpoint_current) {
            return Err(Error::invalid(
                "setpoint_current",
                "normalized photocurrent must lie in [0, 1]",
            ));
        }
        if !(self.drift_rate.is_finite() && self.drift_rate >= 0.0) {
            return Err(Error::invalid("drift_rate", "drift rate must be >= 0"));
        }
        if !(self.current_noise.is_finite() && self.current_noise >= 0.0) {
            return Err(Error::invalid("current_noise", "noise must be >= 0"));
        }
        Ok(())
    }

    /// `phi_ref` wrapped to `(-pi, pi]`.
    pub fn phi_ref_wrapped(&self) -> f64 {
        wrap_to_pi(self.phi_ref)
    }

    /// Pump relative phase implied by the current loop state.
    pub fn pump_phase(&self) -> f64 {
        self.phi_ref + self.delta
    }
}

fn wrap_to_pi(x: f64) -> f64 {
    let mut t = x % TAU;
    if t > PI {
        t -= TAU;
    } else if t <= -PI {
        t += TAU;
    }
    t
}

/// Advance the loop one step: random-walk drift, photocurrent comparison
/// against the setpoint, proportional-integral correction applied through
/// the PZT. Divergence is observable in the state, never thrown.
pub fn step_loop<R: Rng + ?Sized>(state: &mut PhaseLoopState, rng: &mut R) {
    if state.drift_rate > 0.0 {
        let w: f64 = StandardNormal.sample(rng);
        state.phi_ref += state.drift_rate * w;
    }
    let mut current = reference_current(state.phi_ref);
    if state.current_noise > 0.0 {
        let w: f64 = StandardNormal.sample(rng);
        current += state.current_noise * w;
    }
    let error = current - state.setpoint_current;
    state.integrator += error;
    let correction = state.kp * error + state.ki * state.integrator;
    state.pzt_position += correction;
    state.phi_ref += correction;
}

/// Loop configuration that prepares one of the four Bell states.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LockConfig {
    pub setpoint_current: f64,
    /// The `phi_ref` value the setpoint corresponds to, reduced modulo `pi`
    /// into `[0, pi)` (shifting `phi_p` by `pi` leaves the prepared state
    /// unchanged since `phi = 2 phi_p`), which places every target with a
    /// usable slope on the locked branch.
    pub phi_ref_target: f64,
    /// Whether the 45-degree idler half-wave plate must be inserted.
    pub idler_hwp: bool,
}

/// Setpoint and channel configuration that locks the source to `target`,
/// given the calibrated dispersion offset `delta`:
/// `phi_ref = phi_p(target) - delta (mod pi)`.
pub fn lock_bell_state(target: BellState, delta: f64) -> Result<LockConfig> {
    if !delta.is_finite() {
        return Err(Error::invalid("delta", "dispersion offset must be finite"));
    }
    let mut phi_ref = (target.pump_phase() - delta) % PI;
    if phi_ref < 0.0 {
        phi_ref += PI;
    }
    Ok(LockConfig {
        setpoint_current: reference_current(phi_ref),
        phi_ref_target: phi_ref,
        idler_hwp: target.needs_idler_hwp(),
    })
}

/// Estimate of the dispersion offset with its fit-propagated uncertainty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaEstimate {
    /// Radians, wrapped to `(-pi/2, pi/2]` (the estimate carries an inherent
    /// half-fringe ambiguity).
    pub delta: f64,
    pub sigma: f64,
}

/// Recover `delta` from a scan of `phi_ref`: the two-photon fringe goes as
/// `cos(2 phi_ref + 2 delta)` (fit with `k = 2`) while the reference fringe
/// goes as `cos(phi_ref)` (fit with `k = 1`), so
/// `delta = phase2 / 2 - phase1`, wrapped to `(-pi/2, pi/2]`.
pub fn calibrate_delta(
    two_photon_fringe: &FringeFit,
    reference_fringe: &FringeFit,
) -> Result<DeltaEstimate> {
    if !two_photon_fringe.converged || !reference_fringe.converged {
        return Err(Error::FitNotConverged(
            "delta calibration needs converged fits".into(),
        ));
    }
    if (two_photon_fringe.frequency - 2.0).abs() > 0.05
        || (reference_fringe.frequency - 1.0).abs() > 0.05
    {
        return Err(Error::invalid(
            "frequency",
            format!(
                "expected fits at k=2 and k=1, got k={} and k={}",
                two_photon_fringe.frequency, reference_fringe.frequency
            ),
        ));
    }
    let raw = 0.5 * two_photon_fringe.phase_offset - reference_fringe.phase_offset;
    let mut delta = raw % PI;
    if delta > FRAC_PI_2 {
        delta -= PI;
    } else if delta <= -FRAC_PI_2 {
        delta += PI;
    }
    let sigma = (0.25 * two_photon_fringe.phase_sigma.powi(2)
        + reference_fringe.phase_sigma.powi(2))
    .sqrt();
    Ok(DeltaEstimate { delta, sigma })
}

/// One row of a loop trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopTracePoint {
    pub step: u64,
    pub phi_ref: f64,
    pub error: f64,
    pub pzt_position: f64,
}

pub const TRACE_CSV_HEADER: &str = "step,phi_ref,error,pzt_position";

pub fn write_trace_csv<W: Write>(trace: &[LoopTracePoint], mut w: W) -> Result<()> {
    writeln!(w, "{TRACE_CSV_HEADER}")?;
    for p in trace {
        writeln!(
            w,
            "{},{},{},{}",
            p.step, p.phi_ref, p.error, p.pzt_position
        )?;
    }
    Ok(())
}

/// Run the loop for `steps` steps, recording the trajectory.
pub fn run_loop<R: Rng + ?Sized>(
    state: &mut PhaseLoopState,
    steps: u64,
    rng: &mut R,
) -> Vec<LoopTracePoint> {
    let mut trace = Vec::with_capacity(steps as usize);
    for step in 0..steps {
        step_loop(state, rng);
        trace.push(LoopTracePoint {
            step,
            phi_ref: state.phi_ref,
            error: reference_current(state.phi_ref) - state.setpoint_current,
            pzt_position: state.pzt_position,
        });
    }
    trace
}
