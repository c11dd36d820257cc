//! Synthetic spectroscopic scans: one rendered and analyzed image pair per
//! control value.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::models::{ContrastSaturation, CurveModel, PowerSaturation, StepLorentzian};
use super::series::{PointFlags, ScanKind, ScanPoint, ScanSeries};
use super::CurveFitError;
use crate::analysis::{
    analyze_image, fit_shared_shape, normalize_difference_with_floor, AbsorptionImage, AnalysisError, AnalysisOptions,
    AnalysisReport, GaussianFit2D, SearchWindow, SharedShape, SpotShape,
};
use crate::imaging::{render_pair, BeamProfile, Frame, PairMode, Scene};
use crate::photophysics::{
    effective_cross_section, max_absorbed_power, resonant_cross_section, LaserParams, TransitionParams,
};
use crate::rng::derive_seed;
use crate::units::fwhm_to_sigma;

/// σ assigned to points that carry no measurement (non-detections and failed
/// fits), in the series' value unit. Large enough to carry no weight.
pub const NON_DETECTION_SIGMA: f64 = 1.0;

/// The generator's ground truth: what each control value does to the scene.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "kebab-case")]
pub enum ScanTruth {
    /// Detuning scan at fixed intensity: peak contrast follows the
    /// step-weighted Lorentzian (`gamma_l` in MHz).
    StepLorentzian { amplitude: f64, gamma_l: f64 },
    /// Intensity scan: peak contrast `c_max / (1 + I/i_sat)`.
    ContrastSaturation { c_max: f64, i_sat: f64 },
    /// Power scan: absorbed power `p_max·x/(p_sat + x)` for incident power `x`
    /// on σ₀; the contrast is that power over intensity times spot area.
    PowerSaturation { p_max: f64, p_sat: f64 },
}

impl ScanTruth {
    pub fn kind(&self) -> ScanKind {
        match self {
            Self::StepLorentzian { .. } => ScanKind::Detuning,
            Self::ContrastSaturation { .. } => ScanKind::Intensity,
            Self::PowerSaturation { .. } => ScanKind::Power,
        }
    }

    /// Model parameters in the order the corresponding fit reports them.
    pub fn params(&self) -> [f64; 2] {
        match *self {
            Self::StepLorentzian { amplitude, gamma_l } => [amplitude, gamma_l],
            Self::ContrastSaturation { c_max, i_sat } => [c_max, i_sat],
            Self::PowerSaturation { p_max, p_sat } => [p_max, p_sat],
        }
    }

    /// Default truth for `kind`: a 35 MHz wide line of amplitude 0.03; contrast
    /// saturating from 0.032 at 585 W/m²; and absorbed power saturating at
    /// `hc/(2λτ)` with the low-intensity slope `σ_eff/σ₀` at `detuning_mhz`.
    pub fn default_for(kind: ScanKind, t: &TransitionParams, detuning_mhz: f64) -> Result<Self, CurveFitError> {
        Ok(match kind {
            ScanKind::Detuning => Self::StepLorentzian {
                amplitude: 0.03,
                gamma_l: 35.0,
            },
            ScanKind::Intensity => Self::ContrastSaturation {
                c_max: 0.032,
                i_sat: 585.0,
            },
            ScanKind::Power => {
                let p_max = max_absorbed_power(t);
                let slope = low_intensity_fraction(t, detuning_mhz)?;
                Self::PowerSaturation {
                    p_max,
                    p_sat: p_max / slope,
                }
            }
        })
    }
}

/// `σ_eff/σ₀` in the low-intensity limit.
pub fn low_intensity_fraction(t: &TransitionParams, detuning_mhz: f64) -> Result<f64, CurveFitError> {
    let laser = LaserParams::from_mhz(detuning_mhz, 1e-9)?;
    Ok(effective_cross_section(t, &laser)? / resonant_cross_section(t))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanConfig {
    /// Base scene. Its beam sets the intensity of detuning scans; its camera
    /// exposure is the longest exposure used.
    pub scene: Scene,
    pub truth: ScanTruth,
    pub analysis: AnalysisOptions,
    pub pair_mode: PairMode,
    /// Exposure is shortened so the brightest expected pixel stays below this
    /// fraction of full well.
    pub fill_fraction: f64,
    /// Shortest exposure, s.
    pub min_exposure: f64,
    /// Measure every point's amplitude with one spot shape shared by the scan.
    #[serde(default = "enabled")]
    pub shared_shape: bool,
}

fn enabled() -> bool {
    true
}

impl ScanConfig {
    pub fn new(scene: Scene, truth: ScanTruth) -> Self {
        Self {
            scene,
            truth,
            analysis: AnalysisOptions::default(),
            pair_mode: PairMode::Sequential,
            fill_fraction: 0.8,
            min_exposure: 0.05,
            shared_shape: true,
        }
    }

    /// The scene rendered for one control value.
    pub fn scene_for(&self, control: f64) -> Result<Scene, CurveFitError> {
        let mut scene = self.scene;
        let t = &scene.transition;
        let contrast = match self.truth {
            ScanTruth::StepLorentzian { amplitude, gamma_l } => StepLorentzian.eval(control, &[amplitude, gamma_l]),
            ScanTruth::ContrastSaturation { c_max, i_sat } => {
                scene.beam = with_intensity(&scene.beam, control);
                ContrastSaturation.eval(control, &[c_max, i_sat])
            }
            ScanTruth::PowerSaturation { p_max, p_sat } => {
                let intensity = control / resonant_cross_section(t);
                scene.beam = with_intensity(&scene.beam, intensity);
                let absorbed = PowerSaturation.eval(control, &[p_max, p_sat]);
                let area = 2.0 * PI * fwhm_to_sigma(scene.ion.fwhm_x) * fwhm_to_sigma(scene.ion.fwhm_y);
                absorbed / (intensity * area)
            }
        };
        scene.ion.peak_contrast = contrast.clamp(0.0, 1.0);
        scene.ion.shelved = false;
        scene.camera.exposure = self.exposure_for(&scene);
        scene.validate()?;
        Ok(scene)
    }

    fn exposure_for(&self, scene: &Scene) -> f64 {
        let p = scene.object_pixel();
        let rate = scene.beam.peak_intensity() * p * p * scene.imaging.transmission * scene.camera.qe
            / scene.transition.photon_energy();
        let limit = self.fill_fraction * scene.camera.full_well / rate;
        scene.camera.exposure.min(limit).max(self.min_exposure)
    }

    /// Pixel-coordinate window around the ion's trap position.
    fn search_window(&self) -> SearchWindow {
        let s = &self.scene;
        let p = s.object_pixel();
        SearchWindow {
            center_x: s.ion.center.0 / p + s.width as f64 / 2.0 - 0.5,
            center_y: s.ion.center.1 / p + s.height as f64 / 2.0 - 0.5,
            radius: 2.0 * s.ion.fwhm_x.max(s.ion.fwhm_y) / p,
        }
    }
}

fn with_intensity(beam: &BeamProfile, intensity: f64) -> BeamProfile {
    BeamProfile {
        center: beam.center,
        pointing_jitter_rms: beam.pointing_jitter_rms,
        ..BeamProfile::with_peak_intensity(beam.fwhm, intensity)
    }
}

/// One scan point with everything produced on the way.
#[derive(Debug, Clone)]
pub struct ScanRecord {
    pub point: ScanPoint,
    pub seed: u64,
    pub scene: Scene,
    /// `None` for points that were not analyzed (non-detections) or whose
    /// analysis failed outright.
    pub report: Option<AnalysisReport>,
    /// Signal and reference frames, when requested.
    pub frames: Option<(Frame, Frame)>,
    pub error: Option<String>,
}

/// The spot shape a scan's amplitudes were measured with.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanShape {
    pub shape: SharedShape,
    /// Relative 1σ error the shape's uncertainty puts on every point value
    /// alike.
    pub scale_uncertainty: f64,
}

/// A scan's points in control order, with the shared shape when one was used.
#[derive(Debug, Clone)]
pub struct ScanRun {
    pub records: Vec<ScanRecord>,
    pub shape: Option<ScanShape>,
}

/// Free fits at least this many σ from zero contribute to the shared shape.
pub const SHAPE_MIN_SIGNIFICANCE: f64 = 3.0;

/// Inverse-variance weighted center and widths of the significant fits. Narrow
/// fits carry smaller width errors, so this leans narrow; it starts the joint
/// fit rather than standing on its own.
pub fn shared_shape<'a>(fits: impl IntoIterator<Item = &'a GaussianFit2D>) -> Option<SpotShape> {
    let mut acc = [(0.0, 0.0); 4];
    for f in fits {
        let u = &f.uncertainties;
        if !(f.converged && f.amplitude > 0.0 && f.amplitude >= SHAPE_MIN_SIGNIFICANCE * u.amplitude) {
            continue;
        }
        let pairs = [
            (f.center_x, u.center_x),
            (f.center_y, u.center_y),
            (f.fwhm_x, u.fwhm_x),
            (f.fwhm_y, u.fwhm_y),
        ];
        if pairs.iter().any(|(v, s)| !(v.is_finite() && s.is_finite() && *s > 0.0)) {
            continue;
        }
        for ((sum, wsum), (v, s)) in acc.iter_mut().zip(pairs) {
            let w = 1.0 / (s * s);
            *sum += w * v;
            *wsum += w;
        }
    }
    if acc[0].1 == 0.0 {
        return None;
    }
    let [cx, cy, wx, wy] = acc.map(|(sum, wsum)| sum / wsum);
    Some(SpotShape {
        center_x: cx,
        center_y: cy,
        fwhm_x: wx,
        fwhm_y: wy,
    })
}

/// Renders and analyzes one image pair per control, in parallel. Point `i` uses seed `derive_seed(seed, i)`.
///
/// Every analyzed point is first fitted freely. With `shared_shape`, one
/// center and pair of widths is then fitted to all analyzed images jointly,
/// starting from the average of the significant free fits, and every point's
/// amplitude is measured with that shape held fixed. Without a significant
/// point, or when the joint fit fails, the free fits stand.
///
/// Detuning points at δ ≥ 0 are emitted as non-detections. Points whose fit
/// fails are kept and flagged.
pub fn generate_scan_records(
    config: &ScanConfig,
    controls: &[f64],
    seed: u64,
    keep_frames: bool,
) -> Result<ScanRun, CurveFitError> {
    let kind = config.truth.kind();
    let scenes: Vec<Scene> = controls
        .iter()
        .map(|&c| config.scene_for(c))
        .collect::<Result<_, _>>()?;
    let mut analysis = config.analysis;
    if analysis.search.is_none() {
        analysis.search = Some(config.search_window());
    }
    struct Pass {
        frames: (Frame, Frame),
        saturated: bool,
        image: Option<AbsorptionImage>,
        /// `None` for points that are not analyzed.
        free: Option<Result<AnalysisReport, AnalysisError>>,
    }
    let passes: Vec<Pass> = controls
        .par_iter()
        .zip(scenes.par_iter())
        .enumerate()
        .map(|(i, (&control, scene))| {
            let (signal, reference) = render_pair(scene, derive_seed(seed, i as u64), config.pair_mode)?;
            let saturated = [&signal, &reference]
                .iter()
                .any(|f| f.meta.as_ref().is_some_and(|m| m.saturated()));
            let (mut image, mut free) = (None, None);
            if kind != ScanKind::Detuning || control < 0.0 {
                match normalize_difference_with_floor(&signal, &reference, analysis.floor) {
                    Ok(im) => {
                        free = Some(analyze_image(&im, &analysis));
                        image = Some(im);
                    }
                    Err(e) => free = Some(Err(e)),
                }
            }
            Ok(Pass {
                frames: (signal, reference),
                saturated,
                image,
                free,
            })
        })
        .collect::<Result<_, CurveFitError>>()?;

    let joint = if config.shared_shape {
        shared_shape(
            passes
                .iter()
                .filter_map(|p| p.free.as_ref()?.as_ref().ok())
                .map(|r| &r.fit),
        )
        .and_then(|start| {
            let images: Vec<&AbsorptionImage> = passes.iter().filter_map(|p| p.image.as_ref()).collect();
            fit_shared_shape(&images, analysis.bandpass.as_ref(), &start)
                .ok()
                .flatten()
        })
    } else {
        None
    };
    let shape = joint.map(|j| j.shape);
    let fixed = AnalysisOptions { shape, ..analysis };

    let value_sigma = |r: &AnalysisReport| point_value(kind, r);
    let records: Vec<(ScanRecord, Option<AbsorptionImage>)> = passes
        .into_par_iter()
        .zip(controls.par_iter().zip(scenes.par_iter()))
        .enumerate()
        .map(|(i, (pass, (&control, scene)))| {
            let mut flags = PointFlags {
                saturated: pass.saturated,
                ..PointFlags::default()
            };
            let (mut value, mut sigma, mut report, mut error) = (0.0, NON_DETECTION_SIGMA, None, None);
            let result = match (&pass.image, shape) {
                (Some(image), Some(_)) => Some(analyze_image(image, &fixed)),
                _ => pass.free,
            };
            match result {
                None => flags.non_detection = true,
                Some(Ok(r)) => {
                    match value_sigma(&r) {
                        Some((v, s)) => (value, sigma) = (v, s),
                        None => {
                            flags.fit_failed = true;
                            error = Some(r.fit.message.clone());
                        }
                    }
                    report = Some(r);
                }
                Some(Err(e)) => {
                    flags.fit_failed = true;
                    error = Some(e.to_string());
                }
            }
            let record = ScanRecord {
                point: ScanPoint {
                    control,
                    value,
                    sigma,
                    flags,
                },
                seed: derive_seed(seed, i as u64),
                scene: *scene,
                report,
                frames: keep_frames.then_some(pass.frames),
                error,
            };
            (record, pass.image)
        })
        .collect();
    let shape = joint.map(|shape| ScanShape {
        shape,
        scale_uncertainty: scale_uncertainty(kind, &records, &fixed, &shape),
    });
    Ok(ScanRun {
        records: records.into_iter().map(|(r, _)| r).collect(),
        shape,
    })
}

/// The measured value of a point and its 1σ, when the fit converged.
fn point_value(kind: ScanKind, r: &AnalysisReport) -> Option<(f64, f64)> {
    if !r.converged() {
        return None;
    }
    match kind {
        ScanKind::Power => r.diverted_power.map(|d| (d.value, d.uncertainty)),
        _ => Some((r.fit.amplitude, r.fit.uncertainties.amplitude)),
    }
    .filter(|(v, s)| v.is_finite() && s.is_finite() && *s > 0.0)
}

/// `√(gᵀ C g)` with `g = ∂ ln(value)/∂(x0, y0, wx, wy)`, taken by central
/// differences on the most significant point; `C` is the shape covariance in
/// `fixed.shape`'s fit. A common error of the shape scales every value alike.
fn scale_uncertainty(
    kind: ScanKind,
    records: &[(ScanRecord, Option<AbsorptionImage>)],
    fixed: &AnalysisOptions,
    joint: &SharedShape,
) -> f64 {
    let best = records
        .iter()
        .filter(|(r, image)| image.is_some() && r.point.usable())
        .max_by(|a, b| (a.0.point.value / a.0.point.sigma).total_cmp(&(b.0.point.value / b.0.point.sigma)));
    let Some((_, Some(image))) = best else {
        return f64::NAN;
    };
    let base = joint.shape;
    let at = |k: usize, h: f64| -> Option<f64> {
        let mut shape = base;
        match k {
            0 => shape.center_x += h,
            1 => shape.center_y += h,
            2 => shape.fwhm_x += h,
            _ => shape.fwhm_y += h,
        }
        let options = AnalysisOptions {
            shape: Some(shape),
            ..*fixed
        };
        let r = analyze_image(image, &options).ok()?;
        point_value(kind, &r).map(|(v, _)| v.ln())
    };
    let steps = [0.01, 0.01, 1e-3 * base.fwhm_x, 1e-3 * base.fwhm_y];
    let mut g = [0.0; 4];
    for (k, &h) in steps.iter().enumerate() {
        match (at(k, h), at(k, -h)) {
            (Some(hi), Some(lo)) => g[k] = (hi - lo) / (2.0 * h),
            _ => return f64::NAN,
        }
    }
    let c = &joint.covariance;
    let mut var = 0.0;
    for i in 0..4 {
        for j in 0..4 {
            var += g[i] * c[i][j] * g[j];
        }
    }
    var.max(0.0).sqrt()
}

/// [`generate_scan_records`] reduced to the measured series.
pub fn generate_scan(config: &ScanConfig, controls: &[f64], seed: u64) -> Result<ScanSeries, CurveFitError> {
    let run = generate_scan_records(config, controls, seed, false)?;
    Ok(ScanSeries::new(
        config.truth.kind(),
        run.records.into_iter().map(|r| r.point).collect(),
    )?)
}
