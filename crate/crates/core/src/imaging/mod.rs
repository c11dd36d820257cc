//! Forward model of the absorption-imaging optical train.
//!
//! A Gaussian illumination beam crosses the atom, which removes a Gaussian
//! "dip" of peak fractional depth `C` and object-plane width set by the imaging
//! resolution. The shadowed beam is relayed to the camera with some end-to-end
//! transmission, binned, and read out with shot and read noise.

mod frame;
pub mod pgm;
mod render;

use std::f64::consts::{LN_2, PI};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::Grid;
use crate::photophysics::{
    doppler_temperature, effective_cross_section, LaserParams, PhysicsError, TransitionParams, CODATA_2018,
};
use crate::units::{fwhm_per_sigma, fwhm_to_sigma};

pub use frame::{read_frame, write_frame, Frame, FrameKind, FrameMetadata, PlateScale};
pub use render::{render_frame, render_pair, PairMode};

/// Residual absorption of a shelved atom relative to its bright value (45 dB).
pub const SHELVED_SUPPRESSION: f64 = 3.162_277_660_168_379_5e-5;

#[derive(Debug, Error)]
pub enum ImagingError {
    #[error("invalid {name}: {value} ({reason})")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("field of view of {fov_x:.3e} x {fov_y:.3e} m does not cover the ion spot ±3 FWHM")]
    FieldOfView { fov_x: f64, fov_y: f64 },
    #[error(transparent)]
    Physics(#[from] PhysicsError),
    #[error("PGM: {0}")]
    Pgm(#[from] pgm::PgmError),
    #[error("frame sidecar: {0}")]
    Sidecar(#[from] serde_json::Error),
    #[error("sidecar describes a {}x{} frame but the image is {}x{}", sidecar.0, sidecar.1, image.0, image.1)]
    SidecarShape {
        sidecar: (usize, usize),
        image: (usize, usize),
    },
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

fn invalid(name: &'static str, value: f64, reason: &'static str) -> ImagingError {
    ImagingError::InvalidParameter { name, value, reason }
}

fn check(ok: bool, name: &'static str, value: f64, reason: &'static str) -> Result<(), ImagingError> {
    if ok {
        Ok(())
    } else {
        Err(invalid(name, value, reason))
    }
}

/// Focused Gaussian illumination beam.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamProfile {
    /// Total power in W.
    pub power: f64,
    /// Intensity FWHM at focus in m.
    pub fwhm: f64,
    /// Beam axis in the object plane, m.
    pub center: (f64, f64),
    /// RMS per-frame pointing jitter per axis, m.
    pub pointing_jitter_rms: f64,
}

impl BeamProfile {
    pub fn validate(&self) -> Result<(), ImagingError> {
        check(
            self.power.is_finite() && self.power >= 0.0,
            "beam power",
            self.power,
            "must be non-negative",
        )?;
        check(
            self.fwhm.is_finite() && self.fwhm > 0.0,
            "beam fwhm",
            self.fwhm,
            "must be positive",
        )?;
        check(
            self.pointing_jitter_rms.is_finite() && self.pointing_jitter_rms >= 0.0,
            "pointing jitter",
            self.pointing_jitter_rms,
            "must be non-negative",
        )?;
        check(
            self.center.0.is_finite() && self.center.1.is_finite(),
            "beam center",
            f64::NAN,
            "must be finite",
        )
    }

    pub fn peak_intensity(&self) -> f64 {
        self.power * 4.0 * LN_2 / (PI * self.fwhm * self.fwhm)
    }

    /// Beam whose peak intensity is `intensity`.
    pub fn with_peak_intensity(fwhm: f64, intensity: f64) -> Self {
        Self {
            power: intensity * PI * fwhm * fwhm / (4.0 * LN_2),
            fwhm,
            center: (0.0, 0.0),
            pointing_jitter_rms: 0.0,
        }
    }
}

/// Intensity of the beam at object-plane position `(x, y)`, W/m².
pub fn beam_intensity(beam: &BeamProfile, x: f64, y: f64) -> f64 {
    let dx = x - beam.center.0;
    let dy = y - beam.center.1;
    beam.peak_intensity() * (-4.0 * LN_2 * (dx * dx + dy * dy) / (beam.fwhm * beam.fwhm)).exp()
}

/// Sinusoidal transverse intensity ripple from the interference filter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Etalon {
    pub amplitude: f64,
    /// Object-plane period in m.
    pub period: f64,
    pub phase: f64,
}

impl Etalon {
    fn factor(&self, x: f64) -> f64 {
        1.0 + self.amplitude * (2.0 * PI * x / self.period + self.phase).sin()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImagingSystem {
    pub na: f64,
    pub magnification: f64,
    /// Object-plane point spread function FWHM, m.
    pub psf_fwhm: f64,
    /// End-to-end power transmission from the atom to the sensor.
    pub transmission: f64,
    pub etalon: Option<Etalon>,
}

impl ImagingSystem {
    /// Smallest resolvable FWHM, 0.51 λ/NA.
    pub fn diffraction_limit(&self, lambda: f64) -> f64 {
        0.51 * lambda / self.na
    }

    pub fn validate(&self, lambda: f64) -> Result<(), ImagingError> {
        check(self.na > 0.0 && self.na < 1.0, "na", self.na, "must lie in (0, 1)")?;
        check(
            self.magnification.is_finite() && self.magnification > 0.0,
            "magnification",
            self.magnification,
            "must be positive",
        )?;
        check(
            self.transmission > 0.0 && self.transmission <= 1.0,
            "transmission",
            self.transmission,
            "must lie in (0, 1]",
        )?;
        check(
            self.psf_fwhm.is_finite() && self.psf_fwhm >= self.diffraction_limit(lambda) - 1e-9,
            "psf_fwhm",
            self.psf_fwhm,
            "below the diffraction limit 0.51 λ/NA",
        )?;
        if let Some(e) = &self.etalon {
            check(
                (0.0..1.0).contains(&e.amplitude),
                "etalon amplitude",
                e.amplitude,
                "must lie in [0, 1)",
            )?;
            check(
                e.period.is_finite() && e.period > 0.0,
                "etalon period",
                e.period,
                "must be positive",
            )?;
            check(e.phase.is_finite(), "etalon phase", e.phase, "must be finite")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    /// Physical (unbinned) pixel pitch, m.
    pub pixel_pitch: f64,
    pub qe: f64,
    /// RMS read noise per binned readout, electrons.
    pub read_noise: f64,
    pub binning: u32,
    /// Exposure time, s.
    pub exposure: f64,
    /// Saturation level of a binned pixel, electrons.
    pub full_well: f64,
    /// Electrons per output count.
    pub gain: f64,
    pub bit_depth: u32,
}

impl Default for CameraModel {
    fn default() -> Self {
        Self {
            pixel_pitch: 13e-6,
            qe: 0.35,
            read_noise: 10.0,
            binning: 4,
            exposure: 1.0,
            full_well: 250_000.0,
            gain: 4.0,
            bit_depth: 16,
        }
    }
}

impl CameraModel {
    pub fn validate(&self) -> Result<(), ImagingError> {
        check(
            self.pixel_pitch.is_finite() && self.pixel_pitch > 0.0,
            "pixel_pitch",
            self.pixel_pitch,
            "must be positive",
        )?;
        check(self.qe > 0.0 && self.qe <= 1.0, "qe", self.qe, "must lie in (0, 1]")?;
        check(
            self.read_noise.is_finite() && self.read_noise >= 0.0,
            "read_noise",
            self.read_noise,
            "must be non-negative",
        )?;
        check(
            matches!(self.binning, 1 | 2 | 4 | 8),
            "binning",
            self.binning as f64,
            "must be one of 1, 2, 4, 8",
        )?;
        check(
            self.exposure.is_finite() && self.exposure > 0.0,
            "exposure",
            self.exposure,
            "must be positive",
        )?;
        check(
            self.full_well.is_finite() && self.full_well > 0.0,
            "full_well",
            self.full_well,
            "must be positive",
        )?;
        check(
            self.gain.is_finite() && self.gain > 0.0,
            "gain",
            self.gain,
            "must be positive",
        )?;
        check(
            (1..=16).contains(&self.bit_depth),
            "bit_depth",
            self.bit_depth as f64,
            "must lie in 1..=16",
        )
    }

    pub fn max_count(&self) -> u16 {
        ((1u32 << self.bit_depth) - 1) as u16
    }
}

/// The atom's shadow in the object plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IonSpotModel {
    pub peak_contrast: f64,
    pub fwhm_x: f64,
    pub fwhm_y: f64,
    pub center: (f64, f64),
    /// Pumped into the dark metastable state; absorbs 45 dB less.
    pub shelved: bool,
}

impl IonSpotModel {
    pub fn validate(&self) -> Result<(), ImagingError> {
        check(
            (0.0..=1.0).contains(&self.peak_contrast),
            "peak_contrast",
            self.peak_contrast,
            "must lie in [0, 1]",
        )?;
        check(
            self.fwhm_x.is_finite() && self.fwhm_x > 0.0,
            "spot fwhm_x",
            self.fwhm_x,
            "must be positive",
        )?;
        check(
            self.fwhm_y.is_finite() && self.fwhm_y > 0.0,
            "spot fwhm_y",
            self.fwhm_y,
            "must be positive",
        )?;
        check(
            self.center.0.is_finite() && self.center.1.is_finite(),
            "ion center",
            f64::NAN,
            "must be finite",
        )
    }

    pub fn effective_contrast(&self) -> f64 {
        if self.shelved {
            self.peak_contrast * SHELVED_SUPPRESSION
        } else {
            self.peak_contrast
        }
    }

    /// Fractional intensity removed at `(x, y)`.
    pub fn dip(&self, x: f64, y: f64) -> f64 {
        let dx = (x - self.center.0) / self.fwhm_x;
        let dy = (y - self.center.1) / self.fwhm_y;
        self.effective_contrast() * (-4.0 * LN_2 * (dx * dx + dy * dy)).exp()
    }
}

/// Everything needed to compute an expected camera frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub transition: TransitionParams,
    pub beam: BeamProfile,
    pub imaging: ImagingSystem,
    pub camera: CameraModel,
    pub ion: IonSpotModel,
    /// Frame size in binned pixels.
    pub width: usize,
    pub height: usize,
}

impl Scene {
    /// The reference operating point: 15 nW in a 4.8 µm beam, NA 0.64 at 615×,
    /// 6 % transmission, a 485 nm spot of 3.1 % contrast, 1 s at 4×4 binning on
    /// a 128×128 binned frame.
    pub fn operating_point() -> Self {
        Self {
            transition: TransitionParams::yb174(),
            beam: BeamProfile {
                power: 15e-9,
                fwhm: 4.8e-6,
                center: (0.0, 0.0),
                pointing_jitter_rms: 0.0,
            },
            imaging: ImagingSystem {
                na: 0.64,
                magnification: 615.0,
                psf_fwhm: 440e-9,
                transmission: 0.06,
                etalon: None,
            },
            camera: CameraModel::default(),
            ion: IonSpotModel {
                peak_contrast: 0.031,
                fwhm_x: 485e-9,
                fwhm_y: 485e-9,
                center: (0.0, 0.0),
                shelved: false,
            },
            width: 128,
            height: 128,
        }
    }

    /// Side of one binned pixel projected into the object plane, m.
    pub fn object_pixel(&self) -> f64 {
        self.camera.pixel_pitch * self.camera.binning as f64 / self.imaging.magnification
    }

    /// Object-plane coordinate of the center of binned pixel `(i, j)`.
    /// The optical axis sits at the center of the frame.
    pub fn pixel_position(&self, i: usize, j: usize) -> (f64, f64) {
        let p = self.object_pixel();
        (
            (i as f64 + 0.5 - self.width as f64 / 2.0) * p,
            (j as f64 + 0.5 - self.height as f64 / 2.0) * p,
        )
    }

    pub fn validate(&self) -> Result<(), ImagingError> {
        self.beam.validate()?;
        self.imaging.validate(self.transition.lambda())?;
        self.camera.validate()?;
        self.ion.validate()?;
        check(
            self.width > 0 && self.width <= 8192,
            "width",
            self.width as f64,
            "must lie in 1..=8192",
        )?;
        check(
            self.height > 0 && self.height <= 8192,
            "height",
            self.height as f64,
            "must lie in 1..=8192",
        )?;
        let p = self.object_pixel();
        let (fov_x, fov_y) = (self.width as f64 * p, self.height as f64 * p);
        let fits = |c: f64, w: f64, fov: f64| (c - 3.0 * w) >= -fov / 2.0 && (c + 3.0 * w) <= fov / 2.0;
        if !fits(self.ion.center.0, self.ion.fwhm_x, fov_x) || !fits(self.ion.center.1, self.ion.fwhm_y, fov_y) {
            return Err(ImagingError::FieldOfView { fov_x, fov_y });
        }
        Ok(())
    }

    /// Photoelectrons per second per unit intensity for one binned pixel.
    fn electrons_per_intensity(&self) -> f64 {
        let p = self.object_pixel();
        p * p * self.imaging.transmission * self.camera.exposure * self.camera.qe / self.transition.photon_energy()
    }
}

/// Noiseless expected photoelectrons per binned pixel.
///
/// Each pixel is sampled at its center: beam intensity × (1 − dip) × etalon
/// ripple × object-plane pixel area × transmission × exposure × QE / photon energy.
pub fn expected_image(scene: &Scene) -> Result<Grid<f64>, ImagingError> {
    scene.validate()?;
    Ok(expected_image_unchecked(scene))
}

pub(crate) fn expected_image_unchecked(scene: &Scene) -> Grid<f64> {
    let scale = scene.electrons_per_intensity();
    Grid::from_fn(scene.width, scene.height, |i, j| {
        let (x, y) = scene.pixel_position(i, j);
        let ripple = scene.imaging.etalon.map_or(1.0, |e| e.factor(x));
        beam_intensity(&scene.beam, x, y) * (1.0 - scene.ion.dip(x, y)) * ripple * scale
    })
}

/// Peak contrast of the shadow: `kappa_cal · σ_eff / (2πσ²)` with σ the spot's
/// Gaussian standard deviation, clamped to [0, 1].
pub fn predict_peak_contrast(
    t: &TransitionParams,
    laser: &LaserParams,
    spot_fwhm: f64,
    kappa_cal: f64,
) -> Result<f64, ImagingError> {
    check(
        spot_fwhm.is_finite() && spot_fwhm > 0.0,
        "spot_fwhm",
        spot_fwhm,
        "must be positive",
    )?;
    check(
        kappa_cal.is_finite() && kappa_cal > 0.0,
        "kappa_cal",
        kappa_cal,
        "must be positive",
    )?;
    if laser.intensity == 0.0 {
        // σ_eff is continuous at I → 0; use the low-intensity limit.
        let probe = LaserParams::new(laser.detuning, 1e-12)?;
        return predict_peak_contrast(t, &probe, spot_fwhm, kappa_cal);
    }
    let sigma = fwhm_to_sigma(spot_fwhm);
    let c = kappa_cal * effective_cross_section(t, laser)? / (2.0 * PI * sigma * sigma);
    Ok(c.clamp(0.0, 1.0))
}

/// The reference point the contrast calibration is pinned to: −8 MHz,
/// 570 W/m², a 485 nm spot and an observed contrast of 3.1 %.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationPoint {
    pub detuning_mhz: f64,
    pub intensity: f64,
    pub spot_fwhm: f64,
    pub contrast: f64,
}

pub const REFERENCE_POINT: CalibrationPoint = CalibrationPoint {
    detuning_mhz: -8.0,
    intensity: 570.0,
    spot_fwhm: 485e-9,
    contrast: 0.031,
};

/// Solves for `kappa_cal` such that [`predict_peak_contrast`] reproduces `point`.
pub fn calibrate_kappa_cal(t: &TransitionParams, point: &CalibrationPoint) -> Result<f64, ImagingError> {
    let laser = LaserParams::from_mhz(point.detuning_mhz, point.intensity)?;
    let sigma = fwhm_to_sigma(point.spot_fwhm);
    let naive = effective_cross_section(t, &laser)? / (2.0 * PI * sigma * sigma);
    Ok(point.contrast / naive)
}

/// `kappa_cal` for the Yb⁺ transition at [`REFERENCE_POINT`] (≈ 0.7054).
pub fn reference_kappa_cal() -> f64 {
    calibrate_kappa_cal(&TransitionParams::yb174(), &REFERENCE_POINT).expect("reference calibration point is valid")
}

/// Imaged spot FWHM: the PSF in quadrature with the thermal extent of the
/// trapped ion at its Doppler-cooling temperature.
pub fn spot_fwhm_model(
    t: &TransitionParams,
    laser: &LaserParams,
    imaging: &ImagingSystem,
    trap_omega: f64,
    ion_mass: f64,
) -> Result<f64, ImagingError> {
    check(
        trap_omega.is_finite() && trap_omega > 0.0,
        "trap_omega",
        trap_omega,
        "must be positive",
    )?;
    check(
        ion_mass.is_finite() && ion_mass > 0.0,
        "ion_mass",
        ion_mass,
        "must be positive",
    )?;
    let temperature = doppler_temperature(t, laser.detuning, laser.s0(t))?;
    let motion_fwhm = thermal_fwhm(temperature, trap_omega, ion_mass);
    Ok(imaging.psf_fwhm.hypot(motion_fwhm))
}

/// FWHM of the thermal position distribution in a harmonic trap.
pub fn thermal_fwhm(temperature: f64, trap_omega: f64, ion_mass: f64) -> f64 {
    let rms = (CODATA_2018.k_b * temperature / (ion_mass * trap_omega * trap_omega)).sqrt();
    fwhm_per_sigma() * rms
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use approx::assert_relative_eq;

    pub(crate) fn reference_scene() -> Scene {
        Scene::operating_point()
    }

    #[test]
    fn beam_peak_intensity_for_15_nw() {
        let beam = reference_scene().beam;
        // 4 ln2 · P / (π FWHM²) = 574.57 W/m²
        assert_relative_eq!(beam_intensity(&beam, 0.0, 0.0), 574.571_875_4, max_relative = 1e-9);
        assert!((beam.peak_intensity() / 570.0 - 1.0).abs() < 0.01);
        let half = beam_intensity(&beam, beam.fwhm / 2.0, 0.0);
        assert_relative_eq!(half, beam.peak_intensity() / 2.0, max_relative = 1e-12);
        let dark = BeamProfile { power: 0.0, ..beam };
        assert_eq!(beam_intensity(&dark, 1e-6, -2e-6), 0.0);
    }

    #[test]
    fn beam_integrates_to_power() {
        let beam = reference_scene().beam;
        let h = 20e-9;
        let n = 1200;
        let mut sum = 0.0;
        for i in 0..n {
            for j in 0..n {
                let x = (i as f64 - n as f64 / 2.0 + 0.5) * h;
                let y = (j as f64 - n as f64 / 2.0 + 0.5) * h;
                sum += beam_intensity(&beam, x, y) * h * h;
            }
        }
        assert_relative_eq!(sum, beam.power, max_relative = 1e-6);
    }

    #[test]
    fn with_peak_intensity_inverts_peak() {
        let b = BeamProfile::with_peak_intensity(4.8e-6, 570.0);
        assert_relative_eq!(b.peak_intensity(), 570.0, max_relative = 1e-14);
    }

    #[test]
    fn kappa_cal_reproduces_reference_point() {
        let k = reference_kappa_cal();
        assert!((k - 0.705_419_66).abs() < 1e-7);
        let t = TransitionParams::yb174();
        let laser = LaserParams::from_mhz(-8.0, 570.0).unwrap();
        let c = predict_peak_contrast(&t, &laser, 485e-9, k).unwrap();
        assert_relative_eq!(c, 0.031, max_relative = 1e-12);
        let c2 = predict_peak_contrast(&t, &laser, 970e-9, k).unwrap();
        assert_relative_eq!(c2, c / 4.0, max_relative = 1e-12);
        assert!(predict_peak_contrast(&t, &laser, 0.0, k).is_err());
        assert!(predict_peak_contrast(&t, &laser, 485e-9, 0.0).is_err());
    }

    #[test]
    fn contrast_vanishes_with_vanishing_cross_section() {
        let t = TransitionParams::yb174();
        let far = LaserParams::from_mhz(-1e12, 570.0).unwrap();
        let c = predict_peak_contrast(&t, &far, 485e-9, 1.0).unwrap();
        assert!(c < 1e-15);
        let dark = LaserParams::from_mhz(-8.0, 0.0).unwrap();
        assert!(predict_peak_contrast(&t, &dark, 485e-9, 1.0).unwrap() > 0.0);
    }

    #[test]
    fn spot_model_values() {
        let t = TransitionParams::yb174();
        let imaging = reference_scene().imaging;
        let m = 174.0 * CODATA_2018.amu;
        let omega = 2.0 * PI * 1e6;
        let laser = LaserParams::new(-t.linewidth() / 2.0, 1e-12).unwrap();
        let fwhm = spot_fwhm_model(&t, &laser, &imaging, omega, m).unwrap();
        let tmin = doppler_temperature(&t, -t.linewidth() / 2.0, 0.0).unwrap();
        let motion = thermal_fwhm(tmin, omega, m);
        // Closed-form thermal RMS: 56.25 nm FWHM, 443.6 nm total.
        assert!((motion - 56.254_757e-9).abs() < 1e-13);
        assert!((fwhm - 443.581_557e-9).abs() < 1e-13);
        // Expected spot 485(69) nm.
        assert!((fwhm - 485e-9).abs() < 69e-9);
        // T → 0 leaves the PSF.
        assert_relative_eq!(thermal_fwhm(0.0, omega, m), 0.0);
        let blue = LaserParams::from_mhz(1.0, 570.0).unwrap();
        assert!(matches!(
            spot_fwhm_model(&t, &blue, &imaging, omega, m),
            Err(ImagingError::Physics(PhysicsError::NoCoolingEquilibrium { .. }))
        ));
    }

    #[test]
    fn diffraction_floor_accepts_440_nm() {
        let scene = reference_scene();
        assert!(scene.validate().is_ok());
        let mut too_sharp = scene;
        too_sharp.imaging.psf_fwhm = 250e-9;
        assert!(too_sharp.validate().is_err());
        let mut at_limit = scene;
        at_limit.imaging.psf_fwhm = at_limit.imaging.diffraction_limit(369.5e-9);
        assert!(at_limit.validate().is_ok());
    }

    #[test]
    fn field_of_view_is_enforced() {
        let mut s = reference_scene();
        s.width = 16;
        assert!(matches!(s.validate(), Err(ImagingError::FieldOfView { .. })));
        let mut off = reference_scene();
        off.ion.center = (5e-6, 0.0);
        assert!(matches!(off.validate(), Err(ImagingError::FieldOfView { .. })));
    }

    #[test]
    fn photon_budget_at_beam_center() {
        let img = expected_image(&reference_scene()).unwrap();
        // Single-pixel oracle: 574.57 W/m² · (84.55 nm)² · 0.06 · 0.35 · 1 s / (hc/λ)
        // = 1.6046e5 e⁻ at the beam axis. Pixel centers sit 0.5 px off-axis.
        let mut s = reference_scene();
        s.ion.peak_contrast = 0.0;
        let bright = expected_image(&s).unwrap();
        let p = s.object_pixel();
        let off_axis = (-4.0 * LN_2 * (2.0 * (0.5 * p).powi(2)) / (4.8e-6f64).powi(2)).exp();
        assert_relative_eq!(*bright.get(64, 64), 160_456.688 * off_axis, max_relative = 1e-6);
        assert!(*img.get(64, 64) < *bright.get(64, 64));
    }

    #[test]
    fn shelved_ion_is_bright_field() {
        let mut s = reference_scene();
        s.ion.shelved = true;
        let shelved = expected_image(&s).unwrap();
        s.ion.peak_contrast = 0.0;
        let bright = expected_image(&s).unwrap();
        for (a, b) in shelved.as_slice().iter().zip(bright.as_slice()) {
            assert!((a - b).abs() <= b * 10f64.powf(-4.5) * 1.000_001);
        }
        assert_relative_eq!(SHELVED_SUPPRESSION, 10f64.powf(-4.5), max_relative = 1e-15);
    }

    #[test]
    fn dip_deficit_matches_gaussian_integral() {
        // Broad beam: the deficit is C · I · 2πσxσy · T · qe · t / (hc/λ).
        let mut s = reference_scene();
        s.beam = BeamProfile::with_peak_intensity(1.0, 570.0);
        s.ion.fwhm_y = 620e-9;
        let with = expected_image(&s).unwrap();
        let mut bright = s;
        bright.ion.peak_contrast = 0.0;
        let without = expected_image(&bright).unwrap();
        let deficit: f64 = without.as_slice().iter().zip(with.as_slice()).map(|(a, b)| a - b).sum();
        let sx = fwhm_to_sigma(s.ion.fwhm_x);
        let sy = fwhm_to_sigma(s.ion.fwhm_y);
        let expected =
            s.ion.peak_contrast * 570.0 * 2.0 * PI * sx * sy * s.imaging.transmission * s.camera.qe * s.camera.exposure
                / s.transition.photon_energy();
        assert_relative_eq!(deficit, expected, max_relative = 1e-3);

        // Reference beam: the exact overlap of two Gaussians applies instead.
        let s = reference_scene();
        let with = expected_image(&s).unwrap();
        let mut bright = s;
        bright.ion.peak_contrast = 0.0;
        let without = expected_image(&bright).unwrap();
        let deficit: f64 = without.as_slice().iter().zip(with.as_slice()).map(|(a, b)| a - b).sum();
        let sb = fwhm_to_sigma(s.beam.fwhm);
        let ss = fwhm_to_sigma(s.ion.fwhm_x);
        let overlap = 2.0 * PI * ss * ss * sb * sb / (ss * ss + sb * sb);
        let expected = s.ion.peak_contrast
            * s.beam.peak_intensity()
            * overlap
            * s.imaging.transmission
            * s.camera.qe
            * s.camera.exposure
            / s.transition.photon_energy();
        assert_relative_eq!(deficit, expected, max_relative = 1e-3);
    }

    #[test]
    fn etalon_modulates_bright_field() {
        let mut s = reference_scene();
        s.ion.peak_contrast = 0.0;
        let flat = expected_image(&s).unwrap();
        s.imaging.etalon = Some(Etalon {
            amplitude: 0.02,
            period: 2e-6,
            phase: 0.0,
        });
        let rippled = expected_image(&s).unwrap();
        let ratios: Vec<f64> = flat
            .as_slice()
            .iter()
            .zip(rippled.as_slice())
            .map(|(a, b)| b / a)
            .collect();
        let max = ratios.iter().copied().fold(f64::MIN, f64::max);
        let min = ratios.iter().copied().fold(f64::MAX, f64::min);
        assert!(max > 1.019 && max <= 1.02 + 1e-12);
        assert!((0.98 - 1e-12..0.981).contains(&min));
    }
}
