//! Two-photon polarization states and analyzer optics.
//!
//! The state of a signal/idler photon pair lives on the 4-dimensional
//! polarization space with basis order `{|HH>, |HV>, |VH>, |VV>}` (signal
//! factor first). All analyzer and waveplate angles are measured from
//! vertical, so a linear polarization at angle `theta` has Jones vector
//! `(sin theta, cos theta)` in the `(H, V)` basis.
//!
//! Everything here is an immutable value and every operation is a pure
//! function, so the module is safe for unrestricted parallel use.

use nalgebra::{Matrix2, Matrix4, Vector2};
use num_complex::Complex64;
use std::f64::consts::{FRAC_PI_2, PI};

use crate::error::{Error, Result};

type C = Complex64;

pub const HH: usize = 0;
pub const HV: usize = 1;
pub const VH: usize = 2;
pub const VV: usize = 3;

/// Hermiticity / unit-trace tolerance for state validation.
pub const STATE_TOL: f64 = 1e-12;
/// Lower bound on density-matrix eigenvalues.
pub const EIGENVALUE_TOL: f64 = -1e-10;

/// Which photon of the pair an optical element acts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    Signal,
    Idler,
}

/// The two superposition families the source can emit: co-polarized
/// (`HH`/`VV`) straight out of the fiber, or cross-polarized (`HV`/`VH`)
/// after the idler half-wave plate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StateFamily {
    HhVv,
    HvVh,
}

/// The four maximally entangled states, in the source's naming:
/// `PsiPlus`/`PsiMinus` are the co-polarized superpositions `HH ± VV` and
/// `PhiPlus`/`PhiMinus` the cross-polarized ones `HV ± VH`. Note that some
/// texts attach the letters the other way around; here `Phi-` is the singlet.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BellState {
    PsiPlus,
    PsiMinus,
    PhiPlus,
    PhiMinus,
}

impl BellState {
    pub const ALL: [BellState; 4] = [
        BellState::PsiPlus,
        BellState::PsiMinus,
        BellState::PhiPlus,
        BellState::PhiMinus,
    ];

    /// Pump relative phase `phi_p` that prepares this state (`phi = 2 phi_p`).
    pub fn pump_phase(self) -> f64 {
        match self {
            BellState::PsiPlus | BellState::PhiPlus => 0.0,
            BellState::PsiMinus | BellState::PhiMinus => FRAC_PI_2,
        }
    }

    /// Whether the 45-degree idler half-wave plate is in the beam path.
    pub fn needs_idler_hwp(self) -> bool {
        matches!(self, BellState::PhiPlus | BellState::PhiMinus)
    }

    pub fn family(self) -> StateFamily {
        if self.needs_idler_hwp() {
            StateFamily::HvVh
        } else {
            StateFamily::HhVv
        }
    }

    /// Relative phase between the two superposition amplitudes.
    pub fn phase(self) -> f64 {
        2.0 * self.pump_phase()
    }

    pub fn name(self) -> &'static str {
        match self {
            BellState::PsiPlus => "psi-plus",
            BellState::PsiMinus => "psi-minus",
            BellState::PhiPlus => "phi-plus",
            BellState::PhiMinus => "phi-minus",
        }
    }

    pub fn parse(text: &str) -> Option<BellState> {
        match text.trim().to_ascii_lowercase().as_str() {
            "psi-plus" | "psi+" => Some(BellState::PsiPlus),
            "psi-minus" | "psi-" => Some(BellState::PsiMinus),
            "phi-plus" | "phi+" => Some(BellState::PhiPlus),
            "phi-minus" | "phi-" => Some(BellState::PhiMinus),
            _ => None,
        }
    }
}

impl std::fmt::Display for BellState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A linear-polarization analyzer (half-wave plate plus polarizing beam
/// splitter) on one channel. The transmission axis is `theta` degrees from
/// vertical, normalized to `[-90, 90)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalyzerSetting {
    theta_deg: f64,
    channel: Channel,
}

impl AnalyzerSetting {
    pub fn new(theta_deg: f64, channel: Channel) -> Result<Self> {
        if !theta_deg.is_finite() {
            return Err(Error::invalid("theta", "analyzer angle must be finite"));
        }
        Ok(AnalyzerSetting {
            theta_deg: normalize_axis_deg(theta_deg),
            channel,
        })
    }

    pub fn signal(theta_deg: f64) -> Result<Self> {
        Self::new(theta_deg, Channel::Signal)
    }

    pub fn idler(theta_deg: f64) -> Result<Self> {
        Self::new(theta_deg, Channel::Idler)
    }

    pub fn theta_deg(&self) -> f64 {
        self.theta_deg
    }

    pub fn theta_rad(&self) -> f64 {
        self.theta_deg.to_radians()
    }

    pub fn channel(&self) -> Channel {
        self.channel
    }

    /// The rejected port of the same analyzer, 90 degrees away.
    pub fn orthogonal(&self) -> Self {
        AnalyzerSetting {
            theta_deg: normalize_axis_deg(self.theta_deg + 90.0),
            channel: self.channel,
        }
    }
}

/// Normalize a polarization-axis angle to `[-90, 90)` degrees (axes are
/// 180-degree periodic).
pub fn normalize_axis_deg(theta_deg: f64) -> f64 {
    let mut t = theta_deg % 180.0;
    if t < -90.0 {
        t += 180.0;
    } else if t >= 90.0 {
        t -= 180.0;
    }
    // avoid the negative-zero artifact from the fold above
    if t == 0.0 {
        t = 0.0;
    }
    t
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WaveplateKind {
    Half,
    Quarter,
}

impl WaveplateKind {
    /// Retardance between slow and fast axis.
    pub fn retardance(self) -> f64 {
        match self {
            WaveplateKind::Half => PI,
            WaveplateKind::Quarter => FRAC_PI_2,
        }
    }
}

/// A waveplate with its fast axis `axis_angle` degrees from vertical.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaveplateElement {
    pub kind: WaveplateKind,
    pub axis_angle_deg: f64,
}

impl WaveplateElement {
    pub fn new(kind: WaveplateKind, axis_angle_deg: f64) -> Result<Self> {
        if !axis_angle_deg.is_finite() {
            return Err(Error::invalid("axis_angle", "waveplate axis must be finite"));
        }
        Ok(WaveplateElement {
            kind,
            axis_angle_deg,
        })
    }

    pub fn half(axis_angle_deg: f64) -> Self {
        WaveplateElement {
            kind: WaveplateKind::Half,
            axis_angle_deg,
        }
    }

    pub fn quarter(axis_angle_deg: f64) -> Self {
        WaveplateElement {
            kind: WaveplateKind::Quarter,
            axis_angle_deg,
        }
    }

    /// Jones matrix in the `(H, V)` basis: `exp(-i G/2)` on the fast axis and
    /// `exp(+i G/2)` on the slow axis, `G` the retardance.
    pub fn jones(&self) -> Matrix2<C> {
        let rho = self.axis_angle_deg.to_radians();
        let (sin, cos) = rho.sin_cos();
        let fast = Vector2::new(C::new(sin, 0.0), C::new(cos, 0.0));
        let slow = Vector2::new(C::new(cos, 0.0), C::new(-sin, 0.0));
        let half = 0.5 * self.kind.retardance();
        fast * fast.transpose() * C::from_polar(1.0, -half)
            + slow * slow.transpose() * C::from_polar(1.0, half)
    }
}

/// Density matrix of the signal/idler polarization pair.
///
/// Valid states are Hermitian, unit-trace and positive semidefinite to the
/// tolerances [`STATE_TOL`] / [`EIGENVALUE_TOL`].
#[derive(Debug, Clone, PartialEq)]
pub struct TwoPhotonState {
    rho: Matrix4<C>,
}

impl TwoPhotonState {
    /// Wrap an explicit density matrix, checking the state invariants.
    pub fn from_density(rho: Matrix4<C>) -> Result<Self> {
        let state = TwoPhotonState { rho };
        state.check_physical()?;
        Ok(state)
    }

    pub fn density(&self) -> &Matrix4<C> {
        &self.rho
    }

    pub fn element(&self, row: usize, col: usize) -> C {
        self.rho[(row, col)]
    }

    /// Diagonal of the density matrix in the `{HH, HV, VH, VV}` basis.
    pub fn populations(&self) -> [f64; 4] {
        [
            self.rho[(0, 0)].re,
            self.rho[(1, 1)].re,
            self.rho[(2, 2)].re,
            self.rho[(3, 3)].re,
        ]
    }

    /// Smallest eigenvalue of the (Hermitian) density matrix.
    pub fn min_eigenvalue(&self) -> f64 {
        self.rho
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .fold(f64::INFINITY, |m, &e| m.min(e))
    }

    fn check_physical(&self) -> Result<()> {
        let adj = self.rho.adjoint();
        for i in 0..4 {
            for j in 0..4 {
                if (self.rho[(i, j)] - adj[(i, j)]).norm() > STATE_TOL {
                    return Err(Error::invalid("rho", "density matrix is not Hermitian"));
                }
            }
        }
        let trace = self.rho.trace();
        if (trace - C::new(1.0, 0.0)).norm() > STATE_TOL {
            return Err(Error::invalid(
                "rho",
                format!("density matrix trace {} differs from 1", trace.re),
            ));
        }
        let min = self.min_eigenvalue();
        if min < EIGENVALUE_TOL {
            return Err(Error::invalid(
                "rho",
                format!("density matrix has negative eigenvalue {min:.3e}"),
            ));
        }
        Ok(())
    }

    /// Elementwise comparison ignoring a global phase (meaningless for
    /// density matrices, useful when comparing against ket constructions).
    pub fn approx_eq(&self, other: &TwoPhotonState, tol: f64) -> bool {
        (self.rho - other.rho).iter().all(|d| d.norm() <= tol)
    }
}

/// Build the (possibly non-maximal, possibly dephased) two-photon state
///
/// `(|a0> + r e^{i phi} |a1>) / sqrt(1 + r^2)`
///
/// with `(a0, a1)` the family's basis pair, populations `(1, r^2)/(1+r^2)`
/// and off-diagonal coherence scaled by `gamma` in `[0, 1]`. `gamma = 1`
/// is the pure state, `gamma = 0` the fully dephased mixture.
pub fn make_state(
    phase_phi: f64,
    amplitude_ratio: f64,
    coherence_gamma: f64,
    family: StateFamily,
) -> Result<TwoPhotonState> {
    if !phase_phi.is_finite() {
        return Err(Error::invalid("phase_phi", "phase must be finite"));
    }
    if !(amplitude_ratio.is_finite() && amplitude_ratio >= 0.0) {
        return Err(Error::invalid(
            "amplitude_ratio",
            format!("amplitude ratio must be >= 0, got {amplitude_ratio}"),
        ));
    }
    if !(0.0..=1.0).contains(&coherence_gamma) {
        return Err(Error::invalid(
            "coherence_gamma",
            format!("coherence must lie in [0, 1], got {coherence_gamma}"),
        ));
    }

    let (lo, hi) = match family {
        StateFamily::HhVv => (HH, VV),
        StateFamily::HvVh => (HV, VH),
    };
    let norm = 1.0 + amplitude_ratio * amplitude_ratio;
    let coherence = coherence_gamma * amplitude_ratio / norm;

    let mut rho = Matrix4::zeros();
    rho[(lo, lo)] = C::new(1.0 / norm, 0.0);
    rho[(hi, hi)] = C::new(amplitude_ratio * amplitude_ratio / norm, 0.0);
    rho[(hi, lo)] = C::from_polar(coherence, phase_phi);
    rho[(lo, hi)] = C::from_polar(coherence, -phase_phi);
    Ok(TwoPhotonState { rho })
}

/// The four maximally entangled states as density matrices.
pub fn bell_state(which: BellState) -> TwoPhotonState {
    make_state(which.phase(), 1.0, 1.0, which.family()).expect("bell state parameters are valid")
}

/// Apply a waveplate to one channel: `rho -> (U ⊗ I) rho (U ⊗ I)^dag` for the
/// signal, `(I ⊗ U)` for the idler.
pub fn apply_waveplate(
    state: &TwoPhotonState,
    plate: WaveplateElement,
    channel: Channel,
) -> TwoPhotonState {
    let u = plate.jones();
    let eye = Matrix2::identity();
    let full = match channel {
        Channel::Signal => u.kronecker(&eye),
        Channel::Idler => eye.kronecker(&u),
    };
    TwoPhotonState {
        rho: full * state.rho * full.adjoint(),
    }
}

/// Projector onto the linear polarization `theta` radians from vertical.
fn projector(theta_rad: f64) -> Matrix2<C> {
    let (sin, cos) = theta_rad.sin_cos();
    let e = Vector2::new(C::new(sin, 0.0), C::new(cos, 0.0));
    e * e.transpose()
}

/// Probability that both photons pass their analyzers:
/// `Tr(rho · P(theta1) ⊗ P(theta2))`.
pub fn projection_probability(
    state: &TwoPhotonState,
    signal_setting: AnalyzerSetting,
    idler_setting: AnalyzerSetting,
) -> Result<f64> {
    if signal_setting.channel() != Channel::Signal || idler_setting.channel() != Channel::Idler {
        return Err(Error::ChannelMismatch);
    }
    let p = projector(signal_setting.theta_rad()).kronecker(&projector(idler_setting.theta_rad()));
    Ok((state.rho * p).trace().re)
}

/// Probability that the photon in `setting.channel()` passes its analyzer,
/// tracing out the partner photon.
pub fn marginal_probability(state: &TwoPhotonState, setting: AnalyzerSetting) -> f64 {
    let p = projector(setting.theta_rad());
    let eye = Matrix2::identity();
    let full = match setting.channel() {
        Channel::Signal => p.kronecker(&eye),
        Channel::Idler => eye.kronecker(&p),
    };
    (state.rho * full).trace().re
}

/// Joint probabilities of the four analyzer outcomes
/// `[pass/pass, pass/fail, fail/pass, fail/fail]` for a pair measured at
/// `(theta1, theta2)`. Sums to one; tiny negative round-off is clamped.
pub fn analyzer_outcome_probabilities(
    state: &TwoPhotonState,
    signal_setting: AnalyzerSetting,
    idler_setting: AnalyzerSetting,
) -> Result<[f64; 4]> {
    let pp = projection_probability(state, signal_setting, idler_setting)?;
    let pf = projection_probability(state, signal_setting, idler_setting.orthogonal())?;
    let fp = projection_probability(state, signal_setting.orthogonal(), idler_setting)?;
    let ff = 1.0 - pp - pf - fp;
    Ok([pp.max(0.0), pf.max(0.0), fp.max(0.0), ff.max(0.0)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_1_SQRT_2;

    fn assert_state_close(a: &TwoPhotonState, b: &TwoPhotonState, tol: f64) {
        assert!(
            a.approx_eq(b, tol),
            "states differ:\n{:?}\n{:?}",
            a.density(),
            b.density()
        );
    }

    #[test]
    fn make_state_pure_psi_plus() {
        let s = make_state(0.0, 1.0, 1.0, StateFamily::HhVv).unwrap();
        assert_relative_eq!(s.element(HH, VV).re, 0.5, epsilon = 1e-15);
        assert_relative_eq!(s.element(HH, VV).im, 0.0, epsilon = 1e-15);
        assert_relative_eq!(s.element(HH, HH).re, 0.5, epsilon = 1e-15);
        assert_relative_eq!(s.element(VV, VV).re, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn make_state_singlet_has_negative_coherence() {
        let s = make_state(PI, 1.0, 1.0, StateFamily::HvVh).unwrap();
        assert_relative_eq!(s.element(HV, VH).re, -0.5, epsilon = 1e-12);
        assert_relative_eq!(s.element(HV, VH).im, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn make_state_dephased_is_diagonal_mixture() {
        let s = make_state(1.234, 1.0, 0.0, StateFamily::HhVv).unwrap();
        assert_eq!(s.element(HH, VV), C::new(0.0, 0.0));
        assert_relative_eq!(s.element(HH, HH).re, 0.5);
        assert_relative_eq!(s.element(VV, VV).re, 0.5);
        assert_eq!(s.element(HV, HV), C::new(0.0, 0.0));
    }

    #[test]
    fn make_state_amplitude_ratio_populations() {
        let r = 0.7;
        let s = make_state(0.3, r, 0.8, StateFamily::HhVv).unwrap();
        let norm = 1.0 + r * r;
        assert_relative_eq!(s.element(HH, HH).re, 1.0 / norm, epsilon = 1e-15);
        assert_relative_eq!(s.element(VV, VV).re, r * r / norm, epsilon = 1e-15);
        assert_relative_eq!(s.element(VV, HH).norm(), 0.8 * r / norm, epsilon = 1e-15);
        assert_relative_eq!(s.element(VV, HH).arg(), 0.3, epsilon = 1e-15);
    }

    #[test]
    fn make_state_rejects_bad_inputs() {
        assert!(make_state(f64::NAN, 1.0, 1.0, StateFamily::HhVv).is_err());
        assert!(make_state(0.0, -0.1, 1.0, StateFamily::HhVv).is_err());
        assert!(make_state(0.0, 1.0, 1.2, StateFamily::HhVv).is_err());
        assert!(make_state(0.0, 1.0, -0.2, StateFamily::HhVv).is_err());
    }

    /// Independent oracle: apply the 2x2 Jones matrix to the ket directly and
    /// compare with the density-matrix conjugation path.
    fn ket_oracle_idler(plate: WaveplateElement, amps: [C; 4]) -> Matrix4<C> {
        let u = plate.jones();
        // |s i> amplitudes, idler index fastest
        let mut out = [C::new(0.0, 0.0); 4];
        for s in 0..2 {
            for i_out in 0..2 {
                let mut acc = C::new(0.0, 0.0);
                for i_in in 0..2 {
                    acc += u[(i_out, i_in)] * amps[2 * s + i_in];
                }
                out[2 * s + i_out] = acc;
            }
        }
        let v = nalgebra::Vector4::from_row_slice(&out);
        v * v.adjoint()
    }

    #[test]
    fn hwp_at_22p5_on_idler_equalizes_populations() {
        let psi_plus = bell_state(BellState::PsiPlus);
        let plate = WaveplateElement::half(22.5);
        let rotated = apply_waveplate(&psi_plus, plate, Channel::Idler);
        for p in rotated.populations() {
            assert_relative_eq!(p, 0.25, epsilon = 1e-12);
        }
        // against the ket-side oracle
        let amps = [
            C::new(FRAC_1_SQRT_2, 0.0),
            C::new(0.0, 0.0),
            C::new(0.0, 0.0),
            C::new(FRAC_1_SQRT_2, 0.0),
        ];
        let expected = ket_oracle_idler(plate, amps);
        for i in 0..4 {
            for j in 0..4 {
                assert!((rotated.density()[(i, j)] - expected[(i, j)]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn hwp_at_45_maps_psi_plus_to_phi_plus() {
        let psi_plus = bell_state(BellState::PsiPlus);
        let rotated = apply_waveplate(&psi_plus, WaveplateElement::half(45.0), Channel::Idler);
        assert_state_close(&rotated, &bell_state(BellState::PhiPlus), 1e-12);
    }

    #[test]
    fn two_quarter_waveplates_equal_one_half_waveplate() {
        let q = WaveplateElement::quarter(0.0).jones();
        let h = WaveplateElement::half(0.0).jones();
        let qq = q * q;
        // strip the global phase before comparing
        let phase = qq[(0, 0)] / h[(0, 0)];
        assert_relative_eq!(phase.norm(), 1.0, epsilon = 1e-12);
        for i in 0..2 {
            for j in 0..2 {
                assert!((qq[(i, j)] - phase * h[(i, j)]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn two_same_axis_half_waveplates_are_identity() {
        for angle in [0.0, 17.0, 45.0, -30.0] {
            let h = WaveplateElement::half(angle).jones();
            let hh = h * h;
            let phase = hh[(0, 0)];
            assert_relative_eq!(phase.norm(), 1.0, epsilon = 1e-12);
            let eye = Matrix2::<C>::identity();
            for i in 0..2 {
                for j in 0..2 {
                    assert!((hh[(i, j)] - phase * eye[(i, j)]).norm() < 1e-12);
                }
            }
        }
    }

    // The singlet is anticorrelated at equal analyzer angles, so the
    // pass/pass probability at (45, 45) is exactly zero; its orthogonal
    // partner `phi-plus` gives 1/2 there.
    #[test]
    fn projection_probability_singlet_and_triplet_at_45() {
        let singlet = bell_state(BellState::PhiMinus);
        let p = projection_probability(
            &singlet,
            AnalyzerSetting::signal(45.0).unwrap(),
            AnalyzerSetting::idler(45.0).unwrap(),
        )
        .unwrap();
        assert!(p.abs() < 1e-12, "singlet pass/pass at equal angles: {p}");

        let phi_plus = bell_state(BellState::PhiPlus);
        let p = projection_probability(
            &phi_plus,
            AnalyzerSetting::signal(45.0).unwrap(),
            AnalyzerSetting::idler(45.0).unwrap(),
        )
        .unwrap();
        assert_relative_eq!(p, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn projection_probability_dephased_mixture() {
        let s = make_state(0.0, 1.0, 0.0, StateFamily::HhVv).unwrap();
        let p = projection_probability(
            &s,
            AnalyzerSetting::signal(0.0).unwrap(),
            AnalyzerSetting::idler(0.0).unwrap(),
        )
        .unwrap();
        assert_relative_eq!(p, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn projection_probability_rejects_swapped_channels() {
        let s = bell_state(BellState::PsiPlus);
        let err = projection_probability(
            &s,
            AnalyzerSetting::idler(0.0).unwrap(),
            AnalyzerSetting::idler(0.0).unwrap(),
        );
        assert!(matches!(err, Err(Error::ChannelMismatch)));
    }

    /// Closed form for the cross-polarized family at unit detection
    /// efficiency: `[sin^2 t1 cos^2 t2 + cos^2 t1 sin^2 t2
    /// + 2 cos(phi) sin t1 cos t1 sin t2 cos t2] / 2`.
    fn coincidence_closed_form(phi: f64, t1: f64, t2: f64) -> f64 {
        let (s1, c1) = t1.sin_cos();
        let (s2, c2) = t2.sin_cos();
        0.5 * (s1 * s1 * c2 * c2
            + c1 * c1 * s2 * s2
            + 2.0 * phi.cos() * s1 * c1 * s2 * c2)
    }

    #[test]
    fn closed_form_matches_density_matrix_oracle() {
        for i in 0..5 {
            let phi = 2.0 * PI * i as f64 / 5.0;
            let state = make_state(phi, 1.0, 1.0, StateFamily::HvVh).unwrap();
            for j in 0..5 {
                let t1 = -80.0 + 40.0 * j as f64;
                for k in 0..4 {
                    let t2 = -70.0 + 45.0 * k as f64;
                    let oracle = projection_probability(
                        &state,
                        AnalyzerSetting::signal(t1).unwrap(),
                        AnalyzerSetting::idler(t2).unwrap(),
                    )
                    .unwrap();
                    let closed =
                        coincidence_closed_form(phi, t1.to_radians(), t2.to_radians());
                    assert!((oracle - closed).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn maximally_entangled_marginals_are_half() {
        for which in BellState::ALL {
            let s = bell_state(which);
            for theta in [-90.0, -45.0, -10.0, 0.0, 22.5, 45.0, 60.0] {
                let m = marginal_probability(&s, AnalyzerSetting::signal(theta).unwrap());
                assert_relative_eq!(m, 0.5, epsilon = 1e-12);
                let m = marginal_probability(&s, AnalyzerSetting::idler(theta).unwrap());
                assert_relative_eq!(m, 0.5, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn analyzer_axis_normalization() {
        assert_relative_eq!(normalize_axis_deg(112.5), -67.5);
        assert_relative_eq!(normalize_axis_deg(90.0), -90.0);
        assert_relative_eq!(normalize_axis_deg(-90.0), -90.0);
        assert_relative_eq!(normalize_axis_deg(270.0), -90.0);
        assert_relative_eq!(normalize_axis_deg(180.0), 0.0);
    }

    fn arb_plate() -> impl Strategy<Value = (WaveplateElement, Channel)> {
        (
            prop_oneof![Just(WaveplateKind::Half), Just(WaveplateKind::Quarter)],
            -180.0f64..180.0,
            prop_oneof![Just(Channel::Signal), Just(Channel::Idler)],
        )
            .prop_map(|(kind, angle, ch)| (WaveplateElement { kind, axis_angle_deg: angle }, ch))
    }

    proptest! {
        #[test]
        fn state_invariants_preserved_by_waveplates(
            phi in -10.0f64..10.0,
            r in 0.0f64..4.0,
            gamma in 0.0f64..1.0,
            hvvh in any::<bool>(),
            plates in prop::collection::vec(arb_plate(), 0..4),
        ) {
            let family = if hvvh { StateFamily::HvVh } else { StateFamily::HhVv };
            let mut state = make_state(phi, r, gamma, family).unwrap();
            for (plate, ch) in plates {
                state = apply_waveplate(&state, plate, ch);
            }
            // Hermitian, unit trace, PSD
            let adj = state.density().adjoint();
            for i in 0..4 {
                for j in 0..4 {
                    prop_assert!((state.density()[(i, j)] - adj[(i, j)]).norm() < 1e-12);
                }
            }
            prop_assert!((state.density().trace().re - 1.0).abs() < 1e-12);
            prop_assert!(state.density().trace().im.abs() < 1e-12);
            prop_assert!(state.min_eigenvalue() > -1e-10);
        }

        #[test]
        fn joint_outcome_probabilities_sum_to_one(
            phi in -10.0f64..10.0,
            r in 0.0f64..4.0,
            gamma in 0.0f64..1.0,
            t1 in -90.0f64..90.0,
            t2 in -90.0f64..90.0,
        ) {
            let state = make_state(phi, r, gamma, StateFamily::HhVv).unwrap();
            let s1 = AnalyzerSetting::signal(t1).unwrap();
            let s2 = AnalyzerSetting::idler(t2).unwrap();
            let mut total = 0.0;
            for a in [s1, s1.orthogonal()] {
                for b in [s2, s2.orthogonal()] {
                    let p = projection_probability(&state, a, b).unwrap();
                    prop_assert!(p > -1e-12 && p < 1.0 + 1e-12);
                    total += p;
                }
            }
            prop_assert!((total - 1.0).abs() < 1e-12);
        }
    }
}
