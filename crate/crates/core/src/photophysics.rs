//! The ideal two-level scatterer.
//!
//! A two-level atom driven at normalized intensity `s0 = I / I_sat` and angular
//! detuning `δ` scatters photons at
//!
//! ```text
//! γ_p = (Γ/2) · s0 / (1 + s0 + 4δ²/Γ²)
//! ```
//!
//! where `Γ = 1/τ` is the natural linewidth. Everything else in this module
//! (saturation intensity, resonant cross section, maximum absorbed power) follows
//! from the transition wavelength `λ` and excited-state lifetime `τ`, and the
//! three are tied together by `σ₀ · I_sat = P_max`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// CODATA 2018 exact and recommended values, SI units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalConstants {
    /// Planck constant, J·s.
    pub h: f64,
    /// Speed of light, m/s.
    pub c: f64,
    /// Boltzmann constant, J/K.
    pub k_b: f64,
    /// Reduced Planck constant, J·s.
    pub hbar: f64,
    /// Atomic mass unit, kg.
    pub amu: f64,
}

pub const CODATA_2018: PhysicalConstants = PhysicalConstants {
    h: 6.626_070_15e-34,
    c: 299_792_458.0,
    k_b: 1.380_649e-23,
    hbar: 6.626_070_15e-34 / (2.0 * PI),
    amu: 1.660_539_066_60e-27,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PhysicsError {
    #[error("invalid {name}: {value} ({reason})")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("no cooling equilibrium at detuning {detuning_mhz} MHz (requires red detuning)")]
    NoCoolingEquilibrium { detuning_mhz: f64 },
}

fn invalid(name: &'static str, value: f64, reason: &'static str) -> PhysicsError {
    PhysicsError::InvalidParameter { name, value, reason }
}

fn require_finite(name: &'static str, value: f64) -> Result<f64, PhysicsError> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(invalid(name, value, "must be finite"))
    }
}

/// Atomic transition: wavelength, excited-state lifetime and a dimensionless
/// level-structure/polarization factor applied to the absorbed fraction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTransition")]
pub struct TransitionParams {
    lambda: f64,
    tau: f64,
    kappa_pol: f64,
}

#[derive(Deserialize)]
struct RawTransition {
    lambda: f64,
    tau: f64,
    kappa_pol: f64,
}

impl TryFrom<RawTransition> for TransitionParams {
    type Error = PhysicsError;

    fn try_from(raw: RawTransition) -> Result<Self, Self::Error> {
        Self::new(raw.lambda, raw.tau, raw.kappa_pol)
    }
}

impl TransitionParams {
    pub fn new(lambda: f64, tau: f64, kappa_pol: f64) -> Result<Self, PhysicsError> {
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(invalid("lambda", lambda, "must be positive"));
        }
        if !(tau.is_finite() && tau > 0.0) {
            return Err(invalid("tau", tau, "must be positive"));
        }
        if !(kappa_pol > 0.0 && kappa_pol <= 1.0) {
            return Err(invalid("kappa_pol", kappa_pol, "must lie in (0, 1]"));
        }
        Ok(Self { lambda, tau, kappa_pol })
    }

    /// The 369.5 nm S₁/₂ → P₁/₂ line of ¹⁷⁴Yb⁺ (τ = 8.1 ns), with the default
    /// polarization factor of 0.5.
    pub fn yb174() -> Self {
        Self {
            lambda: 369.5e-9,
            tau: 8.1e-9,
            kappa_pol: 0.5,
        }
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn kappa_pol(&self) -> f64 {
        self.kappa_pol
    }

    /// Natural linewidth Γ in rad/s.
    pub fn linewidth(&self) -> f64 {
        1.0 / self.tau
    }

    /// Natural linewidth as an ordinary-frequency FWHM, Γ/2π in Hz.
    pub fn linewidth_hz(&self) -> f64 {
        1.0 / (2.0 * PI * self.tau)
    }

    /// hc/λ in joules.
    pub fn photon_energy(&self) -> f64 {
        CODATA_2018.h * CODATA_2018.c / self.lambda
    }
}

/// Illumination as seen by the atom.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaserParams {
    /// Angular detuning δ in rad/s; negative is red of resonance.
    pub detuning: f64,
    /// Intensity at the atom in W/m².
    pub intensity: f64,
}

impl LaserParams {
    pub fn new(detuning: f64, intensity: f64) -> Result<Self, PhysicsError> {
        require_finite("detuning", detuning)?;
        if !(intensity.is_finite() && intensity >= 0.0) {
            return Err(invalid("intensity", intensity, "must be non-negative"));
        }
        Ok(Self { detuning, intensity })
    }

    /// Detuning given as ordinary frequency in MHz.
    pub fn from_mhz(detuning_mhz: f64, intensity: f64) -> Result<Self, PhysicsError> {
        Self::new(crate::units::mhz_to_angular(detuning_mhz), intensity)
    }

    /// Saturation parameter s0 = I / I_sat.
    pub fn s0(&self, t: &TransitionParams) -> f64 {
        self.intensity / saturation_intensity(t)
    }
}

/// Photon scattering rate of the ideal two-level atom, photons/s.
pub fn scattering_rate(t: &TransitionParams, s0: f64, delta: f64) -> Result<f64, PhysicsError> {
    require_finite("s0", s0)?;
    require_finite("delta", delta)?;
    if s0 < 0.0 {
        return Err(invalid("s0", s0, "must be non-negative"));
    }
    let gamma = t.linewidth();
    let x = 2.0 * delta / gamma;
    Ok(0.5 * gamma * s0 / (1.0 + s0 + x * x))
}

/// Power removed from the beam by the atom, `γ_p · hc/λ`, in watts.
pub fn scattered_power(t: &TransitionParams, s0: f64, delta: f64) -> Result<f64, PhysicsError> {
    Ok(scattering_rate(t, s0, delta)? * t.photon_energy())
}

/// I_sat = πhc / (3λ³τ), W/m².
pub fn saturation_intensity(t: &TransitionParams) -> f64 {
    let k = &CODATA_2018;
    PI * k.h * k.c / (3.0 * t.lambda.powi(3) * t.tau)
}

/// σ₀ = 3λ² / 2π, m².
pub fn resonant_cross_section(t: &TransitionParams) -> f64 {
    3.0 * t.lambda * t.lambda / (2.0 * PI)
}

/// P_max = hc / (2λτ), W. The high-intensity limit of [`scattered_power`].
pub fn max_absorbed_power(t: &TransitionParams) -> f64 {
    t.photon_energy() / (2.0 * t.tau)
}

/// Effective absorption cross section `kappa_pol · P_scat / I` in m².
///
/// At low intensity and zero detuning with `kappa_pol = 1` this is σ₀; the ratio
/// σ_eff/σ₀ is the fraction of the power incident on σ₀ that the atom diverts.
pub fn effective_cross_section(t: &TransitionParams, laser: &LaserParams) -> Result<f64, PhysicsError> {
    if laser.intensity.is_nan() || laser.intensity <= 0.0 {
        return Err(invalid(
            "intensity",
            laser.intensity,
            "must be positive for a cross section",
        ));
    }
    let power = scattered_power(t, laser.s0(t), laser.detuning)?;
    Ok(t.kappa_pol * power / laser.intensity)
}

/// Doppler-cooling equilibrium temperature in kelvin,
/// `T = (ħΓ / 4k_B) · (1 + s0 + (2δ/Γ)²) / (2|δ|/Γ)`.
///
/// Only red detuning cools; `delta >= 0` has no equilibrium.
pub fn doppler_temperature(t: &TransitionParams, delta: f64, s0: f64) -> Result<f64, PhysicsError> {
    require_finite("delta", delta)?;
    require_finite("s0", s0)?;
    if s0 < 0.0 {
        return Err(invalid("s0", s0, "must be non-negative"));
    }
    if delta >= 0.0 {
        return Err(PhysicsError::NoCoolingEquilibrium {
            detuning_mhz: crate::units::angular_to_mhz(delta),
        });
    }
    let k = &CODATA_2018;
    let gamma = t.linewidth();
    let x = 2.0 * delta.abs() / gamma;
    Ok(k.hbar * gamma / (4.0 * k.k_b) * (1.0 + s0 + x * x) / x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::mhz_to_angular;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn yb() -> TransitionParams {
        TransitionParams::yb174()
    }

    #[test]
    fn hbar_is_h_over_two_pi() {
        let k = CODATA_2018;
        assert_relative_eq!(k.hbar * 2.0 * PI, k.h, max_relative = 1e-15);
        assert_relative_eq!(k.hbar, 1.054_571_817e-34, max_relative = 1e-9);
    }

    #[test]
    fn transition_validation() {
        assert!(TransitionParams::new(0.0, 8.1e-9, 0.5).is_err());
        assert!(TransitionParams::new(369.5e-9, -1.0, 0.5).is_err());
        assert!(TransitionParams::new(369.5e-9, 8.1e-9, 0.0).is_err());
        assert!(TransitionParams::new(369.5e-9, 8.1e-9, 1.0).is_ok());
        assert!(TransitionParams::new(369.5e-9, 8.1e-9, 1.01).is_err());
        assert!(LaserParams::new(0.0, -1.0).is_err());
        let bad: Result<TransitionParams, _> = serde_json::from_str(r#"{"lambda":-1.0,"tau":8.1e-9,"kappa_pol":0.5}"#);
        assert!(bad.is_err());
    }

    #[test]
    fn linewidth_of_yb() {
        assert_relative_eq!(yb().linewidth(), 1.0 / 8.1e-9);
        // 1/(2π·8.1 ns) = 19.6488 MHz
        assert!((yb().linewidth_hz() / 1e6 - 19.648_758).abs() < 1e-5);
    }

    #[test]
    fn rate_at_unit_saturation_on_resonance_is_quarter_gamma() {
        let t = yb();
        assert_relative_eq!(
            scattering_rate(&t, 1.0, 0.0).unwrap(),
            t.linewidth() / 4.0,
            max_relative = 1e-15
        );
    }

    #[test]
    fn rate_saturates_at_half_gamma() {
        let t = yb();
        let r = scattering_rate(&t, 1e12, 0.0).unwrap();
        assert_relative_eq!(r, t.linewidth() / 2.0, max_relative = 1e-11);
        assert!(r < t.linewidth() / 2.0);
    }

    #[test]
    fn rate_at_the_operating_point() {
        // Independent evaluation: 2.48414e7 photons/s.
        let r = scattering_rate(&yb(), 1.12, mhz_to_angular(-8.0)).unwrap();
        assert_relative_eq!(r, 2.484_141_955e7, max_relative = 1e-8);
    }

    #[test]
    fn rate_rejects_bad_inputs() {
        assert!(scattering_rate(&yb(), -0.1, 0.0).is_err());
        assert!(scattering_rate(&yb(), f64::NAN, 0.0).is_err());
        assert!(scattering_rate(&yb(), 1.0, f64::INFINITY).is_err());
    }

    #[test]
    fn scattered_power_values() {
        let t = yb();
        assert_eq!(scattered_power(&t, 0.0, 1e7).unwrap(), 0.0);
        let p = scattered_power(&t, 1.12, mhz_to_angular(-8.0)).unwrap();
        assert_relative_eq!(p, 1.335_484_031e-11, max_relative = 1e-8);
        let p_inf = scattered_power(&t, 1e13, 0.0).unwrap();
        assert_relative_eq!(p_inf, max_absorbed_power(&t), max_relative = 1e-12);
    }

    #[test]
    fn saturation_intensity_values() {
        let t = yb();
        let isat = saturation_intensity(&t);
        assert_relative_eq!(isat, 509.069_412_6, max_relative = 1e-9);
        // Commonly rounded to 508 W/m².
        assert!((isat - 508.0).abs() < 1.5);
        let t2 = TransitionParams::new(2.0 * t.lambda(), t.tau(), 0.5).unwrap();
        assert_relative_eq!(saturation_intensity(&t2), isat / 8.0, max_relative = 1e-14);
        let s0 = LaserParams::new(0.0, 570.0).unwrap().s0(&t);
        assert!((s0 - 1.12).abs() < 0.005);
    }

    #[test]
    fn cross_section_values() {
        let t = yb();
        let s = resonant_cross_section(&t);
        assert_relative_eq!(s, 6.518_839_25e-14, max_relative = 1e-9);
        let t2 = TransitionParams::new(2.0 * t.lambda(), t.tau(), 0.5).unwrap();
        assert_relative_eq!(resonant_cross_section(&t2), 4.0 * s, max_relative = 1e-14);
    }

    #[test]
    fn max_power_values() {
        let t = yb();
        let p = max_absorbed_power(&t);
        assert_relative_eq!(p, 3.318_541_668e-11, max_relative = 1e-9);
        // 33 pW expected; 34(6) pW measured.
        assert!((p * 1e12 - 34.0).abs() < 6.0);
        let t2 = TransitionParams::new(t.lambda(), 2.0 * t.tau(), 0.5).unwrap();
        assert_relative_eq!(max_absorbed_power(&t2), p / 2.0, max_relative = 1e-14);
    }

    #[test]
    fn identity_cross_section_times_isat_is_pmax() {
        let t = yb();
        let lhs = resonant_cross_section(&t) * saturation_intensity(&t);
        assert_relative_eq!(lhs, max_absorbed_power(&t), max_relative = 1e-12);
    }

    #[test]
    fn effective_cross_section_limits() {
        let full = TransitionParams::new(369.5e-9, 8.1e-9, 1.0).unwrap();
        let sigma0 = resonant_cross_section(&full);
        let weak = LaserParams::new(0.0, 1e-9).unwrap();
        assert_relative_eq!(
            effective_cross_section(&full, &weak).unwrap(),
            sigma0,
            max_relative = 1e-9
        );
        let red = LaserParams::from_mhz(-8.0, 1e-9).unwrap();
        let ratio = effective_cross_section(&full, &red).unwrap() / sigma0;
        assert!((ratio - 0.601_291_88).abs() < 1e-7);
        let ratio_half = effective_cross_section(&yb(), &red).unwrap() / sigma0;
        assert!((ratio_half - 0.30).abs() < 0.005);
        assert!(effective_cross_section(&yb(), &LaserParams::new(0.0, 0.0).unwrap()).is_err());
    }

    #[test]
    fn doppler_temperature_values() {
        let t = yb();
        let gamma = t.linewidth();
        let tmin = doppler_temperature(&t, -gamma / 2.0, 0.0).unwrap();
        let k = CODATA_2018;
        assert_relative_eq!(tmin, k.hbar * gamma / (2.0 * k.k_b), max_relative = 1e-14);
        assert!((tmin - 4.714_958e-4).abs() < 1e-9);
        let t1 = doppler_temperature(&t, -gamma, 0.0).unwrap();
        assert_relative_eq!(t1 / tmin, 1.25, max_relative = 1e-14);
        assert!(matches!(
            doppler_temperature(&t, 2.0 * PI, 0.0),
            Err(PhysicsError::NoCoolingEquilibrium { .. })
        ));
        assert!(doppler_temperature(&t, 0.0, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn rate_bounded_symmetric_and_monotone(
            s0 in 0.0f64..1e4,
            ds in 1e-6f64..10.0,
            delta_mhz in -200.0f64..200.0,
        ) {
            let t = yb();
            let delta = mhz_to_angular(delta_mhz);
            let r = scattering_rate(&t, s0, delta).unwrap();
            prop_assert!(r < t.linewidth() / 2.0);
            prop_assert_eq!(r, scattering_rate(&t, s0, -delta).unwrap());
            let r_more = scattering_rate(&t, s0 + ds, delta).unwrap();
            prop_assert!(r_more > r);
            if s0 > 0.0 {
                let farther = delta.abs() + mhz_to_angular(ds);
                prop_assert!(scattering_rate(&t, s0, farther).unwrap() < r);
            }
        }

        #[test]
        fn scattered_power_linear_at_low_intensity(
            s_a in 1e-6f64..0.01,
            s_b in 1e-6f64..0.01,
            delta_mhz in -50.0f64..50.0,
        ) {
            let t = yb();
            let delta = mhz_to_angular(delta_mhz);
            let ka = scattered_power(&t, s_a, delta).unwrap() / s_a;
            let kb = scattered_power(&t, s_b, delta).unwrap() / s_b;
            prop_assert!((ka / kb - 1.0).abs() < 0.01);
        }

        #[test]
        fn effective_cross_section_never_exceeds_sigma0(
            intensity in 1e-6f64..1e6,
            delta_mhz in -100.0f64..100.0,
            kappa in 0.01f64..=1.0,
        ) {
            let t = TransitionParams::new(369.5e-9, 8.1e-9, kappa).unwrap();
            let laser = LaserParams::from_mhz(delta_mhz, intensity).unwrap();
            prop_assert!(effective_cross_section(&t, &laser).unwrap() <= resonant_cross_section(&t));
        }
    }
}
