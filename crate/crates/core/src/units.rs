//! Unit conversions at the user-facing boundary.
//!
//! Internally everything is SI with detunings and linewidths in angular units
//! (rad/s). Users and file formats speak MHz, nm, nW and W/m².

use std::f64::consts::{LN_2, PI};

/// FWHM of a Gaussian divided by its standard deviation, √(8 ln 2).
pub fn fwhm_per_sigma() -> f64 {
    (8.0 * LN_2).sqrt()
}

pub fn fwhm_to_sigma(fwhm: f64) -> f64 {
    fwhm / fwhm_per_sigma()
}

pub fn sigma_to_fwhm(sigma: f64) -> f64 {
    sigma * fwhm_per_sigma()
}

/// Ordinary frequency in MHz to angular frequency in rad/s.
pub fn mhz_to_angular(mhz: f64) -> f64 {
    2.0 * PI * mhz * 1e6
}

/// Angular frequency in rad/s to ordinary frequency in MHz.
pub fn angular_to_mhz(omega: f64) -> f64 {
    omega / (2.0 * PI * 1e6)
}

pub const NM: f64 = 1e-9;
pub const NW: f64 = 1e-9;
pub const PW: f64 = 1e-12;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detuning_conversion_round_trips() {
        let w = mhz_to_angular(-8.0);
        assert!((w + 5.026_548_245_743_669e7).abs() < 1e-3);
        assert!((angular_to_mhz(w) + 8.0).abs() < 1e-12);
    }

    #[test]
    fn fwhm_sigma_relation() {
        assert!((fwhm_per_sigma() - 2.354_820_045_030_949).abs() < 1e-14);
        assert!((sigma_to_fwhm(fwhm_to_sigma(485.0)) - 485.0).abs() < 1e-12);
    }
}
