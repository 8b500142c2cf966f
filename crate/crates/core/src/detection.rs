//! Gated single-photon detection: Monte-Carlo acquisition of singles,
//! coincidences and delayed-gate accidentals, plus the first-order closed-form
//! rates they converge to.
//!
//! Detectors are binary (no photon-number resolution): a channel clicks when
//! at least one of pair photon, background photon or dark count fires within
//! the gate. Accidentals are estimated by pairing each gate's signal click
//! with the *next* gate's idler click, which is unbiased under pulse-to-pulse
//! independence.

use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::quantum::{analyzer_outcome_probabilities, marginal_probability, AnalyzerSetting, Channel};
use crate::source::{poisson_for, sample_count, state_from_pump, SourceParams};

/// Per-channel detection parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorParams {
    /// Total detection efficiency of the signal channel (all optics included).
    pub alpha_signal: f64,
    /// Total detection efficiency of the idler channel.
    pub alpha_idler: f64,
    /// Dark-count probability per gate, signal detector.
    pub dark_signal: f64,
    /// Dark-count probability per gate, idler detector.
    pub dark_idler: f64,
    /// Gate repetition rate in Hz.
    pub gate_rate_hz: f64,
    /// Gate duration in seconds (informational).
    pub gate_duration_s: f64,
    /// Pump pulses examined per gate.
    pub pulses_per_gate: u32,
}

impl DetectorParams {
    /// Reference detectors: 9%/7% total efficiency, 588 kHz gating
    /// (1/128 of the pump rate), 1 ns gates.
    pub fn reference() -> Self {
        DetectorParams {
            alpha_signal: 0.09,
            alpha_idler: 0.07,
            dark_signal: 1e-4,
            dark_idler: 1e-4,
            gate_rate_hz: 588e3,
            gate_duration_s: 1e-9,
            pulses_per_gate: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha_signal", self.alpha_signal),
            ("alpha_idler", self.alpha_idler),
            ("dark_signal", self.dark_signal),
            ("dark_idler", self.dark_idler),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidParameter {
                    name,
                    message: format!("probability must lie in [0, 1], got {v}"),
                });
            }
        }
        if !(self.gate_rate_hz.is_finite() && self.gate_rate_hz > 0.0) {
            return Err(Error::invalid("gate_rate", "gate rate must be positive"));
        }
        if !(self.gate_duration_s.is_finite() && self.gate_duration_s > 0.0) {
            return Err(Error::invalid("gate_duration", "gate duration must be positive"));
        }
        if self.pulses_per_gate == 0 {
            return Err(Error::invalid("pulses_per_gate", "at least one pulse per gate"));
        }
        Ok(())
    }
}

impl Default for DetectorParams {
    fn default() -> Self {
        DetectorParams::reference()
    }
}

/// Tallies of one acquisition run at a fixed pair of analyzer settings.
#[derive(Debug, Clone, PartialEq)]
pub struct CountRecord {
    pub gates: u64,
    pub singles_signal: u64,
    pub singles_idler: u64,
    /// Same-gate double clicks.
    pub coincidences: u64,
    /// Signal click paired with the following gate's idler click.
    pub accidentals_delayed: u64,
    pub setting: (AnalyzerSetting, AnalyzerSetting),
    pub duration_s: f64,
}

impl CountRecord {
    pub const CSV_HEADER: &'static str = "theta_signal_deg,theta_idler_deg,gates,\
singles_signal,singles_idler,coincidences,accidentals_delayed,duration_s";

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.setting.0.theta_deg(),
            self.setting.1.theta_deg(),
            self.gates,
            self.singles_signal,
            self.singles_idler,
            self.coincidences,
            self.accidentals_delayed,
            self.duration_s,
        )
    }

    pub fn from_csv_row(row: &str) -> Result<Self> {
        let fields: Vec<&str> = row.trim().split(',').collect();
        if fields.len() != 8 {
            return Err(Error::MalformedRecord(format!(
                "expected 8 fields, got {}",
                fields.len()
            )));
        }
        let num =
            |i: usize| -> Result<f64> {
                fields[i].parse().map_err(|_| {
                    Error::MalformedRecord(format!("field {i} `{}` is not a number", fields[i]))
                })
            };
        let int = |i: usize| -> Result<u64> {
            fields[i].parse().map_err(|_| {
                Error::MalformedRecord(format!("field {i} `{}` is not a count", fields[i]))
            })
        };
        Ok(CountRecord {
            setting: (
                AnalyzerSetting::signal(num(0)?)?,
                AnalyzerSetting::idler(num(1)?)?,
            ),
            gates: int(2)?,
            singles_signal: int(3)?,
            singles_idler: int(4)?,
            coincidences: int(5)?,
            accidentals_delayed: int(6)?,
            duration_s: num(7)?,
        })
    }

    pub fn write_csv<W: Write>(records: &[CountRecord], mut w: W) -> Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for r in records {
            writeln!(w, "{}", r.to_csv_row())?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Vec<CountRecord>> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::MalformedRecord("missing header".into()))??;
        if header.trim() != Self::CSV_HEADER {
            return Err(Error::MalformedRecord("wrong header".into()));
        }
        lines
            .map(|line| CountRecord::from_csv_row(&line?))
            .collect()
    }
}

/// Deterministic random-stream derivation for a (possibly sharded)
/// acquisition. Worker `w` of the acquisition at `setting_index` draws from
/// ChaCha8 seeded with the user seed on stream id
/// `(setting_index << 32) | w`, so results depend only on
/// `(seed, setting_index, worker count)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamPlan {
    pub seed: u64,
    pub setting_index: u32,
    pub workers: u32,
}

impl StreamPlan {
    pub fn new(seed: u64, setting_index: u32, workers: u32) -> Self {
        StreamPlan {
            seed,
            setting_index,
            workers: workers.max(1),
        }
    }

    pub fn stream(&self, worker: u32) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(((self.setting_index as u64) << 32) | worker as u64);
        rng
    }
}

/// First-order-in-mu per-gate probabilities. The Monte-Carlo applies exact
/// Poisson statistics, so it differs from these by terms of relative order
/// `mu` (and by click-saturation terms of order of the click probabilities);
/// tolerances in the convergence tests account for that.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpectedRates {
    /// Signal click probability per gate.
    pub singles_signal: f64,
    /// Idler click probability per gate.
    pub singles_idler: f64,
    /// True (same-pair) coincidence probability per gate.
    pub coincidence: f64,
    /// Uncorrelated double-click probability per gate: the product of the
    /// two singles probabilities, which is what the delayed-gate estimator
    /// converges to. The raw same-gate coincidence rate is approximately
    /// `coincidence + accidental`.
    pub accidental: f64,
}

/// Closed-form expected rates for an acquisition at `settings`.
///
/// Singles: `alpha * (mu * marginal + bg / 2) + dark` per channel.
/// True coincidences: `alpha_1 alpha_2 mu * Tr(rho P1 x P2)`; for the
/// maximally entangled cross-polarized family the trace factor is the
/// two-photon interference law `[sin^2 t1 cos^2 t2 + cos^2 t1 sin^2 t2 +
/// 2 cos(phi) sin t1 cos t1 sin t2 cos t2] / 2`.
pub fn expected_rates(
    source: &SourceParams,
    idler_hwp: bool,
    det: &DetectorParams,
    settings: (AnalyzerSetting, AnalyzerSetting),
) -> Result<ExpectedRates> {
    det.validate()?;
    check_settings(settings)?;
    let state = state_from_pump(source, idler_hwp)?;
    let outcomes = analyzer_outcome_probabilities(&state, settings.0, settings.1)?;
    let m1 = marginal_probability(&state, settings.0);
    let m2 = marginal_probability(&state, settings.1);

    let ppg = det.pulses_per_gate as f64;
    let mu = source.mu_pair * ppg;
    let bg1 = source.bg_signal * ppg;
    let bg2 = source.bg_idler * ppg;

    let singles_signal = det.alpha_signal * (mu * m1 + 0.5 * bg1) + det.dark_signal;
    let singles_idler = det.alpha_idler * (mu * m2 + 0.5 * bg2) + det.dark_idler;
    let coincidence = det.alpha_signal * det.alpha_idler * mu * outcomes[0];
    Ok(ExpectedRates {
        singles_signal,
        singles_idler,
        coincidence,
        accidental: singles_signal * singles_idler,
    })
}

/// Accidental-corrected coincidence estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrectedCoincidences {
    /// `coincidences - accidentals_delayed`; may be negative, see `negative`.
    pub value: f64,
    /// Poisson propagation: `sqrt(coincidences + accidentals_delayed)`.
    pub sigma: f64,
    /// Set when the subtraction went below zero. The value is reported as-is
    /// so the caller decides how to treat it.
    pub negative: bool,
}

/// Subtract the delayed-gate accidental estimate from the raw coincidences.
pub fn subtract_accidentals(record: &CountRecord) -> CorrectedCoincidences {
    let value = record.coincidences as f64 - record.accidentals_delayed as f64;
    CorrectedCoincidences {
        value,
        sigma: ((record.coincidences + record.accidentals_delayed) as f64).sqrt(),
        negative: value < 0.0,
    }
}

fn check_settings(settings: (AnalyzerSetting, AnalyzerSetting)) -> Result<()> {
    if settings.0.channel() != Channel::Signal || settings.1.channel() != Channel::Idler {
        return Err(Error::ChannelMismatch);
    }
    Ok(())
}

#[derive(Debug, Default, Clone, Copy)]
struct ShardTally {
    singles_signal: u64,
    singles_idler: u64,
    coincidences: u64,
    accidentals: u64,
}

struct GateModel {
    outcome_cdf: [f64; 3],
    alpha_signal: f64,
    alpha_idler: f64,
    bg_detect_signal: f64,
    bg_detect_idler: f64,
    dark_signal: f64,
    dark_idler: f64,
    mu: f64,
    bg_signal: f64,
    bg_idler: f64,
    pulses_per_gate: u32,
}

impl GateModel {
    fn new(
        source: &SourceParams,
        idler_hwp: bool,
        det: &DetectorParams,
        settings: (AnalyzerSetting, AnalyzerSetting),
    ) -> Result<Self> {
        let state = state_from_pump(source, idler_hwp)?;
        det.validate()?;
        let p = analyzer_outcome_probabilities(&state, settings.0, settings.1)?;
        Ok(GateModel {
            outcome_cdf: [p[0], p[0] + p[1], p[0] + p[1] + p[2]],
            alpha_signal: det.alpha_signal,
            alpha_idler: det.alpha_idler,
            bg_detect_signal: 0.5 * det.alpha_signal,
            bg_detect_idler: 0.5 * det.alpha_idler,
            dark_signal: det.dark_signal,
            dark_idler: det.dark_idler,
            mu: source.mu_pair,
            bg_signal: source.bg_signal,
            bg_idler: source.bg_idler,
            pulses_per_gate: det.pulses_per_gate,
        })
    }

    /// One gate; returns (signal clicked, idler clicked).
    #[inline]
    fn sample_gate<R: Rng + ?Sized>(
        &self,
        pairs: Option<&rand_distr::Poisson<f64>>,
        bg_s: Option<&rand_distr::Poisson<f64>>,
        bg_i: Option<&rand_distr::Poisson<f64>>,
        rng: &mut R,
    ) -> (bool, bool) {
        let mut s_click = false;
        let mut i_click = false;
        for _ in 0..self.pulses_per_gate {
            let n_pairs = sample_count(pairs, rng);
            for _ in 0..n_pairs {
                let u: f64 = rng.random();
                let (pass_s, pass_i) = if u < self.outcome_cdf[0] {
                    (true, true)
                } else if u < self.outcome_cdf[1] {
                    (true, false)
                } else if u < self.outcome_cdf[2] {
                    (false, true)
                } else {
                    (false, false)
                };
                if pass_s && rng.random::<f64>() < self.alpha_signal {
                    s_click = true;
                }
                if pass_i && rng.random::<f64>() < self.alpha_idler {
                    i_click = true;
                }
            }
            for _ in 0..sample_count(bg_s, rng) {
                if rng.random::<f64>() < self.bg_detect_signal {
                    s_click = true;
                }
            }
            for _ in 0..sample_count(bg_i, rng) {
                if rng.random::<f64>() < self.bg_detect_idler {
                    i_click = true;
                }
            }
        }
        if rng.random::<f64>() < self.dark_signal {
            s_click = true;
        }
        if rng.random::<f64>() < self.dark_idler {
            i_click = true;
        }
        (s_click, i_click)
    }

    /// Run `gates` gates on one stream. Delayed accidentals pair gate `g`'s
    /// signal click with gate `g+1`'s idler click, wrapping the last gate to
    /// the first so the estimator covers exactly `gates` gate pairs.
    fn run_shard<R: Rng + ?Sized>(&self, gates: u64, rng: &mut R) -> ShardTally {
        let pairs = poisson_for(self.mu);
        let bg_s = poisson_for(self.bg_signal);
        let bg_i = poisson_for(self.bg_idler);
        let mut tally = ShardTally::default();
        let mut prev_signal = false;
        let mut first_idler = false;
        for g in 0..gates {
            let (s, i) =
                self.sample_gate(pairs.as_ref(), bg_s.as_ref(), bg_i.as_ref(), rng);
            tally.singles_signal += s as u64;
            tally.singles_idler += i as u64;
            tally.coincidences += (s && i) as u64;
            if g == 0 {
                first_idler = i;
            } else if prev_signal && i {
                tally.accidentals += 1;
            }
            prev_signal = s;
        }
        if prev_signal && first_idler {
            tally.accidentals += 1;
        }
        tally
    }
}

/// Acquire `gates` gates at one pair of analyzer settings.
///
/// Gates are split into `plan.workers` contiguous shards, each drawing from
/// its own deterministic stream; tallies are order-independent sums, so the
/// result depends only on `(seed, setting_index, workers)`. Shards of fewer
/// than two gates would degenerate the delayed-accidental estimator, so the
/// effective worker count is capped at `gates / 2`.
pub fn run_acquisition(
    source: &SourceParams,
    idler_hwp: bool,
    det: &DetectorParams,
    settings: (AnalyzerSetting, AnalyzerSetting),
    gates: u64,
    plan: &StreamPlan,
) -> Result<CountRecord> {
    if gates == 0 {
        return Err(Error::ZeroGates);
    }
    check_settings(settings)?;
    let model = GateModel::new(source, idler_hwp, det, settings)?;

    let workers = (plan.workers.max(1) as u64).min((gates / 2).max(1)) as u32;
    let total = if workers == 1 {
        let mut rng = plan.stream(0);
        model.run_shard(gates, &mut rng)
    } else {
        let base = gates / workers as u64;
        let rem = gates % workers as u64;
        let mut tallies: Vec<ShardTally> = Vec::with_capacity(workers as usize);
        std::thread::scope(|scope| {
            let model = &model;
            let handles: Vec<_> = (0..workers)
                .map(|w| {
                    let mut rng = plan.stream(w);
                    let shard_gates = base + ((w as u64) < rem) as u64;
                    scope.spawn(move || model.run_shard(shard_gates, &mut rng))
                })
                .collect();
            for h in handles {
                tallies.push(h.join().expect("shard thread panicked"));
            }
        });
        tallies.into_iter().fold(ShardTally::default(), |a, b| ShardTally {
            singles_signal: a.singles_signal + b.singles_signal,
            singles_idler: a.singles_idler + b.singles_idler,
            coincidences: a.coincidences + b.coincidences,
            accidentals: a.accidentals + b.accidentals,
        })
    };

    Ok(CountRecord {
        gates,
        singles_signal: total.singles_signal,
        singles_idler: total.singles_idler,
        coincidences: total.coincidences,
        accidentals_delayed: total.accidentals,
        setting: settings,
        duration_s: gates as f64 / det.gate_rate_hz,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn settings(t1: f64, t2: f64) -> (AnalyzerSetting, AnalyzerSetting) {
        (
            AnalyzerSetting::signal(t1).unwrap(),
            AnalyzerSetting::idler(t2).unwrap(),
        )
    }

    fn mc_sigma(p: f64, gates: u64) -> f64 {
        (p * (1.0 - p) / gates as f64).sqrt()
    }

    #[test]
    fn dead_detectors_count_nothing() {
        let source = SourceParams::reference();
        let det = DetectorParams {
            alpha_signal: 0.0,
            alpha_idler: 0.0,
            dark_signal: 0.0,
            dark_idler: 0.0,
            ..DetectorParams::reference()
        };
        let rec = run_acquisition(
            &source,
            false,
            &det,
            settings(45.0, 45.0),
            20_000,
            &StreamPlan::new(1, 0, 1),
        )
        .unwrap();
        assert_eq!(rec.singles_signal, 0);
        assert_eq!(rec.singles_idler, 0);
        assert_eq!(rec.coincidences, 0);
        assert_eq!(rec.accidentals_delayed, 0);
    }

    #[test]
    fn zero_gates_is_an_error() {
        let err = run_acquisition(
            &SourceParams::reference(),
            false,
            &DetectorParams::reference(),
            settings(0.0, 0.0),
            0,
            &StreamPlan::new(1, 0, 1),
        );
        assert!(matches!(err, Err(Error::ZeroGates)));
    }

    // Background-only run: coincidences per gate converge to the product of
    // the independent per-channel click probabilities (0.1*0.5*0.09) *
    // (0.1*0.5*0.07).
    #[test]
    fn background_only_coincidences_are_accidental() {
        let source = SourceParams {
            mu_pair: 0.0,
            bg_signal: 0.1,
            bg_idler: 0.1,
            ..SourceParams::reference()
        };
        let det = DetectorParams {
            dark_signal: 0.0,
            dark_idler: 0.0,
            ..DetectorParams::reference()
        };
        let gates = 6_000_000;
        let rec = run_acquisition(
            &source,
            false,
            &det,
            settings(45.0, 45.0),
            gates,
            &StreamPlan::new(11, 0, 2),
        )
        .unwrap();
        let p_expected = (0.1 * 0.5 * 0.09) * (0.1 * 0.5 * 0.07);
        let p_mc = rec.coincidences as f64 / gates as f64;
        assert!(
            (p_mc - p_expected).abs() < 4.0 * mc_sigma(p_expected, gates),
            "{p_mc} vs {p_expected}"
        );
        // the delayed estimator sees the same rate
        let p_acc = rec.accidentals_delayed as f64 / gates as f64;
        assert!((p_acc - p_expected).abs() < 4.0 * mc_sigma(p_expected, gates));
    }

    // Pairs only, no background or darks: singles ~ mu * alpha / 2 per gate;
    // at the reference 588 kHz this is ~2646 counts per second of gates, the
    // right order for the observed few-thousand counts/s.
    #[test]
    fn singles_rate_order_of_magnitude() {
        let source = SourceParams {
            bg_signal: 0.0,
            bg_idler: 0.0,
            ..SourceParams::reference()
        };
        let det = DetectorParams {
            dark_signal: 0.0,
            dark_idler: 0.0,
            ..DetectorParams::reference()
        };
        let gates = 588_000;
        let rec = run_acquisition(
            &source,
            false,
            &det,
            settings(45.0, 45.0),
            gates,
            &StreamPlan::new(5, 0, 1),
        )
        .unwrap();
        let expected = 0.1 * 0.09 * 0.5 * gates as f64;
        let sigma = mc_sigma(0.1 * 0.09 * 0.5, gates) * gates as f64;
        assert!(
            (rec.singles_signal as f64 - expected).abs() < 4.0 * sigma,
            "{} vs {expected}",
            rec.singles_signal
        );
        assert_relative_eq!(rec.duration_s, 1.0, epsilon = 1e-12);

        // with the reference background the rate stays within the same order
        let rec = run_acquisition(
            &SourceParams::reference(),
            false,
            &DetectorParams::reference(),
            settings(45.0, 45.0),
            gates,
            &StreamPlan::new(5, 1, 1),
        )
        .unwrap();
        let per_second = rec.singles_signal as f64 / rec.duration_s;
        assert!(
            (1_000.0..30_000.0).contains(&per_second),
            "singles/s = {per_second}"
        );
    }

    #[test]
    fn expected_rates_closed_form_points() {
        // unit efficiency, one pair per pulse, constructive interference
        let source = SourceParams {
            mu_pair: 1.0,
            bg_signal: 0.0,
            bg_idler: 0.0,
            coherence: 1.0,
            ..SourceParams::reference()
        };
        let det = DetectorParams {
            alpha_signal: 1.0,
            alpha_idler: 1.0,
            dark_signal: 0.0,
            dark_idler: 0.0,
            ..DetectorParams::reference()
        };
        let r = expected_rates(&source, true, &det, settings(45.0, 45.0)).unwrap();
        assert_relative_eq!(r.coincidence, 0.5, epsilon = 1e-12);

        // full destructive interference
        let source_pi = SourceParams {
            pump_phase: std::f64::consts::FRAC_PI_2,
            ..source.clone()
        };
        let r = expected_rates(&source_pi, true, &det, settings(45.0, 45.0)).unwrap();
        assert!(r.coincidence.abs() < 1e-12);

        // reference efficiencies
        let source = SourceParams {
            bg_signal: 0.0,
            bg_idler: 0.0,
            coherence: 1.0,
            ..SourceParams::reference()
        };
        let det = DetectorParams {
            dark_signal: 0.0,
            dark_idler: 0.0,
            ..DetectorParams::reference()
        };
        let r = expected_rates(&source, true, &det, settings(45.0, 45.0)).unwrap();
        assert_relative_eq!(r.coincidence, 3.15e-4, epsilon = 1e-12);
    }

    #[test]
    fn monte_carlo_matches_expected_rates() {
        let gates = 1_000_000;
        let grid = [
            (SourceParams::reference(), 45.0, 45.0, false),
            (
                SourceParams {
                    coherence: 1.0,
                    bg_signal: 0.05,
                    bg_idler: 0.2,
                    ..SourceParams::reference()
                },
                0.0,
                22.5,
                true,
            ),
            (
                SourceParams {
                    pump_phase: 0.9,
                    pump_power_ratio: 0.7,
                    ..SourceParams::reference()
                },
                -45.0,
                67.5,
                false,
            ),
        ];
        for (i, (source, t1, t2, hwp)) in grid.into_iter().enumerate() {
            let det = DetectorParams::reference();
            let exp = expected_rates(&source, hwp, &det, settings(t1, t2)).unwrap();
            let rec = run_acquisition(
                &source,
                hwp,
                &det,
                settings(t1, t2),
                gates,
                &StreamPlan::new(99, i as u32, 2),
            )
            .unwrap();
            let g = gates as f64;
            let checks = [
                (rec.singles_signal as f64 / g, exp.singles_signal, "singles_s"),
                (rec.singles_idler as f64 / g, exp.singles_idler, "singles_i"),
                (
                    rec.coincidences as f64 / g,
                    exp.coincidence + exp.accidental,
                    "coincidences",
                ),
                (rec.accidentals_delayed as f64 / g, exp.accidental, "accidentals"),
            ];
            for (mc, analytic, what) in checks {
                let sigma = mc_sigma(analytic.max(1e-12), gates);
                assert!(
                    (mc - analytic).abs() < 4.0 * sigma,
                    "point {i} {what}: mc={mc:.4e} analytic={analytic:.4e} sigma={sigma:.2e}"
                );
            }
        }
    }

    // Expected coincidence rate at the reference point, checked by Monte
    // Carlo to 3 sigma after accidental subtraction.
    #[test]
    fn reference_coincidence_rate_monte_carlo() {
        let source = SourceParams {
            bg_signal: 0.0,
            bg_idler: 0.0,
            coherence: 1.0,
            ..SourceParams::reference()
        };
        let det = DetectorParams {
            dark_signal: 0.0,
            dark_idler: 0.0,
            ..DetectorParams::reference()
        };
        let gates = 4_000_000;
        let rec = run_acquisition(
            &source,
            true,
            &det,
            settings(45.0, 45.0),
            gates,
            &StreamPlan::new(3, 0, 2),
        )
        .unwrap();
        let corrected = subtract_accidentals(&rec);
        let p_mc = corrected.value / gates as f64;
        let sigma = corrected.sigma / gates as f64;
        assert!(
            (p_mc - 3.15e-4).abs() < 3.0 * sigma,
            "corrected rate {p_mc:.3e} vs 3.15e-4 (sigma {sigma:.1e})"
        );
    }

    #[test]
    fn singles_do_not_depend_on_analyzer_angles() {
        let gates = 1_000_000;
        let mut rates = Vec::new();
        for (i, (t1, t2)) in [(0.0, 0.0), (45.0, -22.5), (-45.0, 67.5)].iter().enumerate() {
            let rec = run_acquisition(
                &SourceParams::reference(),
                false,
                &DetectorParams::reference(),
                settings(*t1, *t2),
                gates,
                &StreamPlan::new(17, i as u32, 2),
            )
            .unwrap();
            rates.push(rec.singles_signal as f64 / gates as f64);
        }
        let sigma = mc_sigma(rates[0], gates);
        for pair in rates.windows(2) {
            assert!((pair[0] - pair[1]).abs() < 4.0 * std::f64::consts::SQRT_2 * sigma);
        }
    }

    #[test]
    fn rates_monotonic_in_mu_and_alpha() {
        let det = DetectorParams::reference();
        let mut last = 0.0;
        for mu in [0.02, 0.1, 0.3] {
            let source = SourceParams {
                mu_pair: mu,
                ..SourceParams::reference()
            };
            let r = expected_rates(&source, false, &det, settings(45.0, 45.0)).unwrap();
            assert!(r.coincidence > last);
            last = r.coincidence;
        }
        let mut last = 0.0;
        for alpha in [0.02, 0.09, 0.4] {
            let det = DetectorParams {
                alpha_signal: alpha,
                ..DetectorParams::reference()
            };
            let r = expected_rates(&SourceParams::reference(), false, &det, settings(45.0, 45.0))
                .unwrap();
            assert!(r.coincidence > last);
            last = r.coincidence;
        }

        // coarse Monte-Carlo ordering
        let gates = 400_000;
        let rec_lo = run_acquisition(
            &SourceParams {
                mu_pair: 0.05,
                ..SourceParams::reference()
            },
            false,
            &DetectorParams::reference(),
            settings(45.0, 45.0),
            gates,
            &StreamPlan::new(23, 0, 1),
        )
        .unwrap();
        let rec_hi = run_acquisition(
            &SourceParams {
                mu_pair: 0.3,
                ..SourceParams::reference()
            },
            false,
            &DetectorParams::reference(),
            settings(45.0, 45.0),
            gates,
            &StreamPlan::new(23, 1, 1),
        )
        .unwrap();
        assert!(rec_hi.coincidences > rec_lo.coincidences);
    }

    #[test]
    fn subtraction_arithmetic() {
        let rec = CountRecord {
            gates: 1000,
            singles_signal: 500,
            singles_idler: 400,
            coincidences: 200,
            accidentals_delayed: 100,
            setting: settings(45.0, 45.0),
            duration_s: 1.0,
        };
        let c = subtract_accidentals(&rec);
        assert_relative_eq!(c.value, 100.0);
        assert_relative_eq!(c.sigma, 300f64.sqrt());
        assert!(!c.negative);

        let rec = CountRecord {
            accidentals_delayed: 0,
            ..rec
        };
        let c = subtract_accidentals(&rec);
        assert_relative_eq!(c.value, 200.0);

        let rec = CountRecord {
            coincidences: 40,
            accidentals_delayed: 90,
            ..rec
        };
        let c = subtract_accidentals(&rec);
        assert!(c.negative);
        assert_relative_eq!(c.value, -50.0);
    }

    #[test]
    fn worker_split_is_deterministic() {
        let run = |workers| {
            run_acquisition(
                &SourceParams::reference(),
                false,
                &DetectorParams::reference(),
                settings(45.0, 45.0),
                100_000,
                &StreamPlan::new(42, 7, workers),
            )
            .unwrap()
        };
        assert_eq!(run(3), run(3));
        assert_eq!(run(1), run(1));
        // tallies are plausible either way
        let a = run(1);
        let b = run(3);
        let sigma = mc_sigma(a.singles_signal as f64 / 1e5, 100_000) * 1e5;
        assert!((a.singles_signal as f64 - b.singles_signal as f64).abs() < 8.0 * sigma);
    }

    #[test]
    fn csv_round_trip() {
        let rec = CountRecord {
            gates: 588_000,
            singles_signal: 2712,
            singles_idler: 2034,
            coincidences: 371,
            accidentals_delayed: 355,
            setting: settings(-45.0, 67.5),
            duration_s: 588_000.0 / 588e3,
        };
        let mut buf = Vec::new();
        CountRecord::write_csv(&[rec.clone()], &mut buf).unwrap();
        let parsed = CountRecord::read_csv(&buf[..]).unwrap();
        assert_eq!(parsed, vec![rec]);
    }

    proptest! {
        #[test]
        fn csv_row_round_trips(
            t1 in -90.0f64..90.0,
            t2 in -90.0f64..90.0,
            gates in 1u64..10_000_000,
            s1 in 0u64..1_000_000,
            s2 in 0u64..1_000_000,
            c in 0u64..100_000,
            a in 0u64..100_000,
        ) {
            let rec = CountRecord {
                gates,
                singles_signal: s1,
                singles_idler: s2,
                coincidences: c,
                accidentals_delayed: a,
                setting: settings(t1, t2),
                duration_s: gates as f64 / 588e3,
            };
            let parsed = CountRecord::from_csv_row(&rec.to_csv_row()).unwrap();
            prop_assert_eq!(parsed, rec);
        }
    }
}
