//! From count records to physics results: fringe fits and visibility,
//! correlation values, and the CHSH combination with propagated uncertainty.
//!
//! All functions are pure over immutable inputs.

use nalgebra::{Matrix3, Vector3};

use crate::detection::{subtract_accidentals, CountRecord};
use crate::error::{Error, Result};
use crate::quantum::{
    normalize_axis_deg, projection_probability, AnalyzerSetting, BellState, TwoPhotonState,
};

/// One point of a fringe scan: abscissa in radians, counts and their
/// one-sigma uncertainty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FringePoint {
    pub x: f64,
    pub counts: f64,
    pub sigma: f64,
}

impl FringePoint {
    pub fn new(x: f64, counts: f64, sigma: f64) -> Self {
        FringePoint { x, counts, sigma }
    }
}

/// Weighted least-squares fit of `baseline * (1 + V cos(k x + phase))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FringeFit {
    pub baseline: f64,
    /// Fringe amplitude `baseline * visibility`, in counts.
    pub amplitude: f64,
    pub amplitude_sigma: f64,
    pub visibility: f64,
    pub visibility_sigma: f64,
    /// Phase offset in radians, in `(-pi, pi]`.
    pub phase_offset: f64,
    pub phase_sigma: f64,
    /// Angular frequency `k` of the fit (fixed or fitted).
    pub frequency: f64,
    /// Weighted sum of squared residuals.
    pub chi2: f64,
    pub dof: usize,
    pub converged: bool,
}

struct LinearFringeSolution {
    baseline: f64,
    p: f64,
    q: f64,
    cov: Matrix3<f64>,
    chi2: f64,
}

/// The model is linear in `(B, P, Q)` with `y = B + P cos(kx) + Q sin(kx)`,
/// `P = B V cos(phase)`, `Q = -B V sin(phase)`, so for fixed `k` the weighted
/// least-squares optimum is exact — no iteration or starting point needed.
fn solve_linear(points: &[FringePoint], k: f64) -> Result<LinearFringeSolution> {
    let mut m = Matrix3::<f64>::zeros();
    let mut v = Vector3::<f64>::zeros();
    for pt in points {
        if !(pt.x.is_finite() && pt.counts.is_finite() && pt.sigma.is_finite() && pt.sigma > 0.0) {
            return Err(Error::DegenerateFit(
                "points must be finite with positive uncertainties".into(),
            ));
        }
        let w = 1.0 / (pt.sigma * pt.sigma);
        let a = Vector3::new(1.0, (k * pt.x).cos(), (k * pt.x).sin());
        m += w * a * a.transpose();
        v += w * pt.counts * a;
    }
    let chol = nalgebra::Cholesky::new(m)
        .ok_or_else(|| Error::DegenerateFit("singular normal equations".into()))?;
    let params = chol.solve(&v);
    let cov = chol.inverse();
    let mut chi2 = 0.0;
    for pt in points {
        let model = params[0] + params[1] * (k * pt.x).cos() + params[2] * (k * pt.x).sin();
        let r = (pt.counts - model) / pt.sigma;
        chi2 += r * r;
    }
    Ok(LinearFringeSolution {
        baseline: params[0],
        p: params[1],
        q: params[2],
        cov,
        chi2,
    })
}

fn check_fringe_input(points: &[FringePoint], k: f64) -> Result<()> {
    if points.len() < 5 {
        return Err(Error::DegenerateFit(format!(
            "need at least 5 points, got {}",
            points.len()
        )));
    }
    if !(k.is_finite() && k > 0.0) {
        return Err(Error::DegenerateFit("frequency must be positive".into()));
    }
    let (min, max) = points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            (lo.min(p.x), hi.max(p.x))
        });
    let period = std::f64::consts::TAU / k;
    // a grid of n points covering [0, period) samples the full period while
    // its extreme points sit (n-1)/n of a period apart
    let required = period * (points.len() - 1) as f64 / points.len() as f64 * (1.0 - 1e-9);
    if max - min < required {
        return Err(Error::DegenerateFit(format!(
            "span {:.3} rad does not cover one period ({period:.3} rad)",
            max - min
        )));
    }
    Ok(())
}

/// Fit a fringe with fixed angular frequency `k` (`k = 1` for phase scans and
/// one-photon reference fringes, `k = 2` versus an analyzer angle in
/// radians).
pub fn fit_fringe(points: &[FringePoint], k: f64) -> Result<FringeFit> {
    check_fringe_input(points, k)?;
    let sol = solve_linear(points, k)?;
    build_fit(points.len(), k, sol)
}

fn build_fit(n: usize, k: f64, sol: LinearFringeSolution) -> Result<FringeFit> {
    let LinearFringeSolution {
        baseline,
        p,
        q,
        cov,
        chi2,
    } = sol;
    if !(baseline.is_finite() && baseline > 0.0) {
        return Err(Error::FitNotConverged(format!(
            "non-positive fitted baseline {baseline:.3e}"
        )));
    }
    let amplitude = (p * p + q * q).sqrt();
    let visibility = amplitude / baseline;
    let phase_offset = (-q).atan2(p);

    // delta-method propagation through V = sqrt(P^2+Q^2)/B and
    // phase = atan2(-Q, P); at zero amplitude fall back to the raw
    // parameter scatter.
    let (visibility_sigma, amplitude_sigma, phase_sigma) = if amplitude > 0.0 {
        let jv = Vector3::new(
            -amplitude / (baseline * baseline),
            p / (amplitude * baseline),
            q / (amplitude * baseline),
        );
        let ja = Vector3::new(0.0, p / amplitude, q / amplitude);
        let r2 = amplitude * amplitude;
        let jp = Vector3::new(0.0, q / r2, -p / r2);
        (
            (jv.transpose() * cov * jv)[(0, 0)].max(0.0).sqrt(),
            (ja.transpose() * cov * ja)[(0, 0)].max(0.0).sqrt(),
            (jp.transpose() * cov * jp)[(0, 0)].max(0.0).sqrt(),
        )
    } else {
        let s = (cov[(1, 1)] + cov[(2, 2)]).max(0.0).sqrt();
        (s / baseline, s, std::f64::consts::PI)
    };

    Ok(FringeFit {
        baseline,
        amplitude,
        amplitude_sigma,
        visibility,
        visibility_sigma,
        phase_offset,
        phase_sigma,
        frequency: k,
        chi2,
        dof: n.saturating_sub(3),
        converged: true,
    })
}

/// Fit a fringe with the angular frequency free, by scanning the
/// weighted-least-squares objective over `k` and refining the best candidate
/// by golden-section search. Used to measure fringe periods.
pub fn fit_fringe_free_frequency(points: &[FringePoint], k_range: (f64, f64)) -> Result<FringeFit> {
    let (k_lo, k_hi) = k_range;
    if !(k_lo.is_finite() && k_hi.is_finite() && 0.0 < k_lo && k_lo < k_hi) {
        return Err(Error::DegenerateFit("invalid frequency range".into()));
    }
    check_fringe_input(points, k_hi)?;

    let objective = |k: f64| solve_linear(points, k).map(|s| s.chi2);

    let steps = 400;
    let mut best_k = k_lo;
    let mut best_chi2 = f64::INFINITY;
    for i in 0..=steps {
        let k = k_lo + (k_hi - k_lo) * i as f64 / steps as f64;
        if let Ok(chi2) = objective(k) {
            if chi2 < best_chi2 {
                best_chi2 = chi2;
                best_k = k;
            }
        }
    }
    if !best_chi2.is_finite() {
        return Err(Error::FitNotConverged("no usable frequency in range".into()));
    }

    let step = (k_hi - k_lo) / steps as f64;
    let mut lo = (best_k - step).max(k_lo);
    let mut hi = (best_k + step).min(k_hi);
    let inv_phi = 0.618_033_988_749_894_9_f64;
    let mut a = hi - inv_phi * (hi - lo);
    let mut b = lo + inv_phi * (hi - lo);
    let mut fa = objective(a)?;
    let mut fb = objective(b)?;
    for _ in 0..80 {
        if fa < fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - inv_phi * (hi - lo);
            fa = objective(a)?;
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + inv_phi * (hi - lo);
            fb = objective(b)?;
        }
    }
    let k = 0.5 * (lo + hi);
    let sol = solve_linear(points, k)?;
    build_fit(points.len(), k, sol)
}

/// A correlation value `E` with its propagated uncertainty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correlation {
    pub e: f64,
    pub sigma: f64,
}

/// Coincidence count (possibly accidental-corrected, hence real-valued) and
/// its variance for one analyzer setting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SettingCount {
    pub value: f64,
    pub variance: f64,
}

/// `E = (C1 - C2 - C3 + C4) / (C1 + C2 + C3 + C4)` over the four settings
/// `(t1, t2), (t1, t2+90), (t1+90, t2), (t1+90, t2+90)`, with Poisson
/// propagation through the ratio.
pub fn correlation_from_counts(counts: &[SettingCount; 4]) -> Result<Correlation> {
    let total: f64 = counts.iter().map(|c| c.value).sum();
    if !(total.is_finite() && total > 0.0) {
        return Err(Error::ZeroCounts);
    }
    let signs = [1.0, -1.0, -1.0, 1.0];
    let e = counts
        .iter()
        .zip(signs)
        .map(|(c, s)| s * c.value)
        .sum::<f64>()
        / total;
    let var = counts
        .iter()
        .zip(signs)
        .map(|(c, s)| {
            let d = (s - e) / total;
            c.variance * d * d
        })
        .sum::<f64>();
    Ok(Correlation {
        e,
        sigma: var.sqrt(),
    })
}

fn setting_count(record: &CountRecord, corrected: bool) -> SettingCount {
    if corrected {
        let c = subtract_accidentals(record);
        SettingCount {
            value: c.value,
            variance: c.sigma * c.sigma,
        }
    } else {
        SettingCount {
            value: record.coincidences as f64,
            variance: record.coincidences as f64,
        }
    }
}

/// Correlation value from four records sharing base angles `(t1, t2)` in the
/// order `(t1,t2), (t1,t2+90), (t1+90,t2), (t1+90,t2+90)`.
pub fn correlation(records: &[CountRecord; 4], corrected: bool) -> Result<Correlation> {
    let t1 = records[0].setting.0.theta_deg();
    let t2 = records[0].setting.1.theta_deg();
    let expected = [
        (t1, t2),
        (t1, t2 + 90.0),
        (t1 + 90.0, t2),
        (t1 + 90.0, t2 + 90.0),
    ];
    for (rec, (e1, e2)) in records.iter().zip(expected) {
        if !angles_match(rec.setting.0.theta_deg(), e1)
            || !angles_match(rec.setting.1.theta_deg(), e2)
        {
            return Err(Error::MissingSetting {
                theta_signal: e1,
                theta_idler: e2,
            });
        }
    }
    let counts = [
        setting_count(&records[0], corrected),
        setting_count(&records[1], corrected),
        setting_count(&records[2], corrected),
        setting_count(&records[3], corrected),
    ];
    correlation_from_counts(&counts)
}

fn angles_match(a: f64, b: f64) -> bool {
    (normalize_axis_deg(a) - normalize_axis_deg(b)).abs() < 1e-6
}

/// Pairing of the measured base angles into the CHSH combination
/// `S = E(a,b) - E(a,b') + E(a',b) + E(a',b')`.
///
/// The measured grid (signal 0, 90, -45, 45 deg; idler -22.5, 67.5, 22.5,
/// 112.5 deg) supports all four pairings below; each is chosen so that its
/// target state gives `S = +2 sqrt(2)` exactly:
///
/// | target      | a   | a'  | b     | b'    |
/// |-------------|-----|-----|-------|-------|
/// | `psi-plus`  | -45 | 0   | -22.5 | 22.5  |
/// | `psi-minus` | -45 | 0   | 22.5  | -22.5 |
/// | `phi-plus`  | 45  | 90  | 22.5  | -22.5 |
/// | `phi-minus` | 45  | 90  | -22.5 | 22.5  |
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChshConvention {
    pub a_deg: f64,
    pub a_prime_deg: f64,
    pub b_deg: f64,
    pub b_prime_deg: f64,
}

impl ChshConvention {
    pub fn for_state(target: BellState) -> Self {
        match target {
            BellState::PsiPlus => ChshConvention {
                a_deg: -45.0,
                a_prime_deg: 0.0,
                b_deg: -22.5,
                b_prime_deg: 22.5,
            },
            BellState::PsiMinus => ChshConvention {
                a_deg: -45.0,
                a_prime_deg: 0.0,
                b_deg: 22.5,
                b_prime_deg: -22.5,
            },
            BellState::PhiPlus => ChshConvention {
                a_deg: 45.0,
                a_prime_deg: 90.0,
                b_deg: 22.5,
                b_prime_deg: -22.5,
            },
            BellState::PhiMinus => ChshConvention {
                a_deg: 45.0,
                a_prime_deg: 90.0,
                b_deg: -22.5,
                b_prime_deg: 22.5,
            },
        }
    }
}

/// The canonical 16-setting grid: every combination of the four signal and
/// four idler analyzer angles.
pub fn chsh_setting_grid() -> [(f64, f64); 16] {
    let mut grid = [(0.0, 0.0); 16];
    let t1 = [0.0, 90.0, -45.0, 45.0];
    let t2 = [-22.5, 67.5, 22.5, 112.5];
    for (i, &a) in t1.iter().enumerate() {
        for (j, &b) in t2.iter().enumerate() {
            grid[i * 4 + j] = (a, b);
        }
    }
    grid
}

/// The CHSH statistic with uncertainty and the ingredients it came from.
#[derive(Debug, Clone)]
pub struct ChshResult {
    /// `E(a,b), E(a,b'), E(a',b), E(a',b')`.
    pub e_values: [Correlation; 4],
    pub s: f64,
    pub sigma_s: f64,
    /// `(|S| - 2) / sigma_S`; negative when there is no violation,
    /// infinite when built from exact probabilities (zero variance).
    pub n_sigma_violation: f64,
    /// The 16 (theta_signal, theta_idler, count, sigma) the E values used.
    pub per_setting: Vec<(f64, f64, f64, f64)>,
}

impl ChshResult {
    /// `S` recomputed from the stored correlation values.
    pub fn s_from_e(&self) -> f64 {
        self.e_values[0].e - self.e_values[1].e + self.e_values[2].e + self.e_values[3].e
    }
}

/// Standard deviations by which `|S|` exceeds the local bound of 2.
pub fn violation_significance(result: &ChshResult) -> f64 {
    n_sigma(result.s, result.sigma_s)
}

fn n_sigma(s: f64, sigma: f64) -> f64 {
    let excess = s.abs() - 2.0;
    if sigma > 0.0 {
        excess / sigma
    } else if excess > 0.0 {
        f64::INFINITY
    } else if excess < 0.0 {
        f64::NEG_INFINITY
    } else {
        0.0
    }
}

/// CHSH from 16 measured counts, one per grid setting. Angles are compared
/// modulo 180 degrees with the orthogonal port of `x` found at `x + 90`.
pub fn chsh_from_counts(
    counts: &[(f64, f64, SettingCount)],
    convention: &ChshConvention,
) -> Result<ChshResult> {
    let lookup = |t1: f64, t2: f64| -> Result<SettingCount> {
        counts
            .iter()
            .find(|(a, b, _)| angles_match(*a, t1) && angles_match(*b, t2))
            .map(|(_, _, c)| *c)
            .ok_or(Error::MissingSetting {
                theta_signal: normalize_axis_deg(t1),
                theta_idler: normalize_axis_deg(t2),
            })
    };

    let pairs = [
        (convention.a_deg, convention.b_deg),
        (convention.a_deg, convention.b_prime_deg),
        (convention.a_prime_deg, convention.b_deg),
        (convention.a_prime_deg, convention.b_prime_deg),
    ];
    let mut e_values = [Correlation { e: 0.0, sigma: 0.0 }; 4];
    for (slot, (t1, t2)) in pairs.iter().enumerate() {
        let four = [
            lookup(*t1, *t2)?,
            lookup(*t1, *t2 + 90.0)?,
            lookup(*t1 + 90.0, *t2)?,
            lookup(*t1 + 90.0, *t2 + 90.0)?,
        ];
        e_values[slot] = correlation_from_counts(&four)?;
    }

    let s = e_values[0].e - e_values[1].e + e_values[2].e + e_values[3].e;
    let sigma_s = e_values
        .iter()
        .map(|c| c.sigma * c.sigma)
        .sum::<f64>()
        .sqrt();
    Ok(ChshResult {
        e_values,
        s,
        sigma_s,
        n_sigma_violation: n_sigma(s, sigma_s),
        per_setting: counts
            .iter()
            .map(|(a, b, c)| (*a, *b, c.value, c.variance.sqrt()))
            .collect(),
    })
}

/// CHSH from 16 acquisition records (the experimental path).
pub fn chsh_from_records(
    records: &[CountRecord],
    corrected: bool,
    convention: &ChshConvention,
) -> Result<ChshResult> {
    let counts: Vec<(f64, f64, SettingCount)> = records
        .iter()
        .map(|r| {
            (
                r.setting.0.theta_deg(),
                r.setting.1.theta_deg(),
                setting_count(r, corrected),
            )
        })
        .collect();
    chsh_from_counts(&counts, convention)
}

/// CHSH from exact projection probabilities of a state — the zero-variance
/// reference path used to pin conventions and tolerances.
pub fn chsh_from_state(state: &TwoPhotonState, convention: &ChshConvention) -> Result<ChshResult> {
    let counts: Vec<(f64, f64, SettingCount)> = chsh_setting_grid()
        .iter()
        .map(|&(t1, t2)| -> Result<(f64, f64, SettingCount)> {
            let p = projection_probability(
                state,
                AnalyzerSetting::signal(t1)?,
                AnalyzerSetting::idler(t2)?,
            )?;
            Ok((
                t1,
                t2,
                SettingCount {
                    value: p,
                    variance: 0.0,
                },
            ))
        })
        .collect::<Result<_>>()?;
    chsh_from_counts(&counts, convention)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantum::{bell_state, make_state, StateFamily};
    use approx::assert_relative_eq;
    use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2, TAU};

    fn synth_points(n: usize, b: f64, v: f64, k: f64, phase: f64) -> Vec<FringePoint> {
        (0..n)
            .map(|i| {
                let x = TAU * i as f64 / n as f64;
                FringePoint::new(x, b * (1.0 + v * (k * x + phase).cos()), b.sqrt())
            })
            .collect()
    }

    #[test]
    fn fit_recovers_exact_cosine() {
        let pts = synth_points(24, 1000.0, 0.93, 1.0, 0.7);
        let fit = fit_fringe(&pts, 1.0).unwrap();
        assert!((fit.visibility - 0.93).abs() < 1e-6);
        assert!((fit.phase_offset - 0.7).abs() < 1e-6);
        assert!(fit.converged);
        assert!(fit.chi2 < 1e-12);
    }

    #[test]
    fn fit_recovers_k2_fringe() {
        let pts = synth_points(24, 500.0, 0.8, 2.0, -1.1);
        let fit = fit_fringe(&pts, 2.0).unwrap();
        assert!((fit.visibility - 0.8).abs() < 1e-6);
        assert!((fit.phase_offset + 1.1).abs() < 1e-6);
    }

    #[test]
    fn fit_constant_data_gives_zero_visibility() {
        let pts: Vec<FringePoint> = (0..12)
            .map(|i| FringePoint::new(TAU * i as f64 / 12.0, 400.0, 20.0))
            .collect();
        let fit = fit_fringe(&pts, 1.0).unwrap();
        assert!(fit.visibility < 1e-9);
        assert!(fit.amplitude <= 2.0 * fit.amplitude_sigma);
    }

    #[test]
    fn fit_rejects_degenerate_input() {
        let pts = synth_points(4, 100.0, 0.5, 1.0, 0.0);
        assert!(matches!(fit_fringe(&pts, 1.0), Err(Error::DegenerateFit(_))));

        // half a period only
        let pts: Vec<FringePoint> = (0..10)
            .map(|i| FringePoint::new(PI * i as f64 / 10.0, 100.0, 10.0))
            .collect();
        assert!(matches!(fit_fringe(&pts, 1.0), Err(Error::DegenerateFit(_))));

        // zero uncertainties
        let pts: Vec<FringePoint> = (0..10)
            .map(|i| FringePoint::new(TAU * i as f64 / 10.0, 100.0, 0.0))
            .collect();
        assert!(fit_fringe(&pts, 1.0).is_err());
    }

    #[test]
    fn free_frequency_fit_finds_k() {
        for k_true in [1.0, 2.0] {
            let pts = synth_points(32, 800.0, 0.9, k_true, 0.4);
            let fit = fit_fringe_free_frequency(&pts, (0.5, 3.0)).unwrap();
            assert!(
                (fit.frequency - k_true).abs() < 1e-4,
                "k = {} vs {k_true}",
                fit.frequency
            );
        }
    }

    #[test]
    fn correlation_of_psi_plus_at_chsh_angles() {
        let state = bell_state(BellState::PsiPlus);
        let p = |t1: f64, t2: f64| {
            projection_probability(
                &state,
                AnalyzerSetting::signal(t1).unwrap(),
                AnalyzerSetting::idler(t2).unwrap(),
            )
            .unwrap()
        };
        let counts = [
            SettingCount { value: p(0.0, 22.5), variance: 0.0 },
            SettingCount { value: p(0.0, 112.5), variance: 0.0 },
            SettingCount { value: p(90.0, 22.5), variance: 0.0 },
            SettingCount { value: p(90.0, 112.5), variance: 0.0 },
        ];
        let c = correlation_from_counts(&counts).unwrap();
        assert_relative_eq!(c.e, FRAC_1_SQRT_2, epsilon = 1e-12);
    }

    #[test]
    fn correlation_of_dephased_state_vanishes() {
        let state = make_state(0.0, 1.0, 0.0, StateFamily::HhVv).unwrap();
        let p = |t1: f64, t2: f64| {
            projection_probability(
                &state,
                AnalyzerSetting::signal(t1).unwrap(),
                AnalyzerSetting::idler(t2).unwrap(),
            )
            .unwrap()
        };
        let counts = [
            SettingCount { value: p(45.0, 22.5), variance: 0.0 },
            SettingCount { value: p(45.0, 112.5), variance: 0.0 },
            SettingCount { value: p(135.0, 22.5), variance: 0.0 },
            SettingCount { value: p(135.0, 112.5), variance: 0.0 },
        ];
        let c = correlation_from_counts(&counts).unwrap();
        assert!(c.e.abs() < 1e-12);
    }

    #[test]
    fn correlation_equal_counts_is_zero() {
        let c = SettingCount { value: 250.0, variance: 250.0 };
        let corr = correlation_from_counts(&[c, c, c, c]).unwrap();
        assert_relative_eq!(corr.e, 0.0);
        assert!(corr.sigma > 0.0);
    }

    #[test]
    fn correlation_zero_total_is_error() {
        let c = SettingCount { value: 0.0, variance: 0.0 };
        assert!(matches!(
            correlation_from_counts(&[c, c, c, c]),
            Err(Error::ZeroCounts)
        ));
    }

    #[test]
    fn tsirelson_for_all_four_targets() {
        for target in BellState::ALL {
            let result = chsh_from_state(
                &bell_state(target),
                &ChshConvention::for_state(target),
            )
            .unwrap();
            assert_relative_eq!(result.s, 2.0 * SQRT_2, epsilon = 1e-12);
            assert_relative_eq!(result.s, result.s_from_e(), epsilon = 1e-15);
            assert!(result.n_sigma_violation.is_infinite());
        }
    }

    #[test]
    fn dephased_state_gives_sqrt_two() {
        let dephased = make_state(0.0, 1.0, 0.0, StateFamily::HhVv).unwrap();
        let result = chsh_from_state(
            &dephased,
            &ChshConvention::for_state(BellState::PsiPlus),
        )
        .unwrap();
        assert_relative_eq!(result.s, SQRT_2, epsilon = 1e-12);
    }

    #[test]
    fn s_scales_linearly_with_coherence() {
        for target in BellState::ALL {
            for gamma in [0.0, 0.25, 0.5, 0.75, 0.9, 1.0] {
                let state = make_state(target.phase(), 1.0, gamma, target.family()).unwrap();
                let result =
                    chsh_from_state(&state, &ChshConvention::for_state(target)).unwrap();
                assert_relative_eq!(result.s, SQRT_2 * (1.0 + gamma), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn chsh_invariant_under_uniform_count_scaling() {
        let state = bell_state(BellState::PsiPlus);
        let conv = ChshConvention::for_state(BellState::PsiPlus);
        let base: Vec<(f64, f64, SettingCount)> = chsh_setting_grid()
            .iter()
            .map(|&(t1, t2)| {
                let p = projection_probability(
                    &state,
                    AnalyzerSetting::signal(t1).unwrap(),
                    AnalyzerSetting::idler(t2).unwrap(),
                )
                .unwrap();
                (t1, t2, SettingCount { value: p, variance: 0.0 })
            })
            .collect();
        let scaled: Vec<(f64, f64, SettingCount)> = base
            .iter()
            .map(|(a, b, c)| {
                (*a, *b, SettingCount { value: 7.3e4 * c.value, variance: 0.0 })
            })
            .collect();
        let s1 = chsh_from_counts(&base, &conv).unwrap().s;
        let s2 = chsh_from_counts(&scaled, &conv).unwrap().s;
        assert_relative_eq!(s1, s2, epsilon = 1e-12);
    }

    #[test]
    fn chsh_missing_setting_is_reported() {
        let state = bell_state(BellState::PsiPlus);
        let conv = ChshConvention::for_state(BellState::PsiPlus);
        let mut counts: Vec<(f64, f64, SettingCount)> = chsh_setting_grid()
            .iter()
            .map(|&(t1, t2)| {
                let p = projection_probability(
                    &state,
                    AnalyzerSetting::signal(t1).unwrap(),
                    AnalyzerSetting::idler(t2).unwrap(),
                )
                .unwrap();
                (t1, t2, SettingCount { value: p, variance: 0.0 })
            })
            .collect();
        counts.pop();
        assert!(matches!(
            chsh_from_counts(&counts, &conv),
            Err(Error::MissingSetting { .. })
        ));
    }

    #[test]
    fn violation_significance_values() {
        let mk = |s: f64, sigma: f64| ChshResult {
            e_values: [Correlation { e: 0.0, sigma: 0.0 }; 4],
            s,
            sigma_s: sigma,
            n_sigma_violation: n_sigma(s, sigma),
            per_setting: Vec::new(),
        };
        let r = mk(2.75, 0.077);
        assert_relative_eq!(violation_significance(&r), 0.75 / 0.077, epsilon = 1e-12);
        assert!((violation_significance(&r) - 9.74).abs() < 0.01);

        let r = mk(2.0, 0.05);
        assert_relative_eq!(violation_significance(&r), 0.0);

        let r = mk(2.48, 0.078);
        assert!((violation_significance(&r) - 6.15).abs() < 0.01);

        // sign convention: |S| is what violates
        let r = mk(-2.4, 0.1);
        assert_relative_eq!(violation_significance(&r), 4.0, epsilon = 1e-12);
    }
}
