//! Inverse pipeline: normalize a signal/reference pair into a contrast map,
//! bandpass-filter it, fit a 2D Gaussian, and derive SNR and diverted power.

mod filter;
mod gauss2d;

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::Grid;
use crate::imaging::{beam_intensity, Frame, FrameMetadata, PlateScale};
use crate::units::fwhm_to_sigma;

pub use filter::{bandpass_filter, gaussian_blur, Bandpass};
pub use gauss2d::{
    auto_init, auto_starts, fit_gaussian_2d, fit_gaussian_2d_auto, fit_gaussian_2d_bandpassed,
    fit_gaussian_2d_bandpassed_from, fit_gaussian_2d_from, fit_gaussian_2d_with_shape, fit_shared_shape,
    gaussian_model, GaussianFit2D, GaussianUncertainties, SearchWindow, SharedShape, SpotShape, NUM_PARAMS,
    PARAM_NAMES,
};

/// Reference pixels below this many counts are masked.
pub const DEFAULT_COUNT_FLOOR: f64 = 100.0;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("frame shapes differ: {signal:?} vs {reference:?}")]
    ShapeMismatch {
        signal: (usize, usize),
        reference: (usize, usize),
    },
    #[error("images differ in size: {expected:?} vs {found:?}")]
    SizeMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("signal and reference were taken with different {what}")]
    SettingsMismatch { what: &'static str },
    #[error("every pixel is masked")]
    FullyMasked,
    #[error("blur radius must be finite and non-negative, got {radius}")]
    BadRadius { radius: f64 },
    #[error("bandpass radii must satisfy 0 < r_high < r_low, got {r_high} and {r_low}")]
    BadBandpass { r_high: f64, r_low: f64 },
    #[error("a Gaussian fit needs more than 7 unmasked pixels, found {found}")]
    TooFewPixels { found: usize },
    #[error("initial parameters must be finite")]
    BadInit,
    #[error("fit did not converge: {0}")]
    NotConverged(String),
    #[error("SNR annulus of outer radius {radius:.1} px around ({center_x:.1}, {center_y:.1}) leaves the image")]
    AnnulusOutside { radius: f64, center_x: f64, center_y: f64 },
    #[error("no pixel-to-meter calibration: frames carry no metadata")]
    MissingCalibration,
}

/// Per-pixel fractional absorption `(reference − signal) / reference`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbsorptionImage {
    pub values: Grid<f64>,
    /// `true` where the pixel is valid.
    pub mask: Grid<bool>,
    /// Propagated per-pixel variance of `values`, when the noise model is known.
    pub variance: Option<Grid<f64>>,
    /// Metadata of the signal frame.
    pub provenance: Option<FrameMetadata>,
}

impl AbsorptionImage {
    pub fn width(&self) -> usize {
        self.values.width()
    }

    pub fn height(&self) -> usize {
        self.values.height()
    }

    pub fn plate_scale(&self) -> Result<PlateScale, AnalysisError> {
        self.provenance
            .as_ref()
            .map(FrameMetadata::plate_scale)
            .ok_or(AnalysisError::MissingCalibration)
    }

    /// Object-plane position (m) of pixel coordinate `(x, y)`, optical axis at
    /// the frame center.
    pub fn object_position(&self, x: f64, y: f64) -> Result<(f64, f64), AnalysisError> {
        let p = self.plate_scale()?.object_pixel;
        Ok((
            (x + 0.5 - self.width() as f64 / 2.0) * p,
            (y + 0.5 - self.height() as f64 / 2.0) * p,
        ))
    }
}

/// Variance of one readout in counts² for a pixel reading `counts`: shot noise
/// referred through the gain, read noise, and rounding.
fn count_variance(counts: f64, meta: Option<&FrameMetadata>) -> f64 {
    let (gain, read) = meta.map_or((1.0, 0.0), |m| (m.scene.camera.gain, m.scene.camera.read_noise));
    counts.max(0.0) / gain + (read / gain).powi(2) + 1.0 / 12.0
}

/// [`normalize_difference_with_floor`] at the default 100-count floor.
pub fn normalize_difference(signal: &Frame, reference: &Frame) -> Result<AbsorptionImage, AnalysisError> {
    normalize_difference_with_floor(signal, reference, DEFAULT_COUNT_FLOOR)
}

/// `(reference − signal) / reference` per pixel. Pixels whose reference falls
/// below `floor` counts, or where either frame sits at the top of its range,
/// are masked.
pub fn normalize_difference_with_floor(
    signal: &Frame,
    reference: &Frame,
    floor: f64,
) -> Result<AbsorptionImage, AnalysisError> {
    if !signal.counts.same_shape(&reference.counts) {
        return Err(AnalysisError::ShapeMismatch {
            signal: (signal.width(), signal.height()),
            reference: (reference.width(), reference.height()),
        });
    }
    if let (Some(s), Some(r)) = (&signal.meta, &reference.meta) {
        if s.binning() != r.binning() {
            return Err(AnalysisError::SettingsMismatch { what: "binning" });
        }
        if s.exposure() != r.exposure() {
            return Err(AnalysisError::SettingsMismatch { what: "exposure" });
        }
        if s.scene.camera.gain != r.scene.camera.gain {
            return Err(AnalysisError::SettingsMismatch { what: "gain" });
        }
    }
    let clip_s = signal.meta.as_ref().map(|m| m.scene.camera.max_count());
    let clip_r = reference.meta.as_ref().map(|m| m.scene.camera.max_count());
    let (w, h) = (signal.width(), signal.height());
    let mask = Grid::from_fn(w, h, |x, y| {
        let (s, r) = (*signal.counts.get(x, y), *reference.counts.get(x, y));
        r as f64 >= floor && r > 0 && Some(s) != clip_s && Some(r) != clip_r
    });
    if !mask.as_slice().iter().any(|&m| m) {
        return Err(AnalysisError::FullyMasked);
    }
    let values = Grid::from_fn(w, h, |x, y| {
        if !*mask.get(x, y) {
            return 0.0;
        }
        let (s, r) = (*signal.counts.get(x, y) as f64, *reference.counts.get(x, y) as f64);
        (r - s) / r
    });
    let variance = Grid::from_fn(w, h, |x, y| {
        if !*mask.get(x, y) {
            return 0.0;
        }
        let (s, r) = (*signal.counts.get(x, y) as f64, *reference.counts.get(x, y) as f64);
        let vs = count_variance(s, signal.meta.as_ref());
        let vr = count_variance(r, reference.meta.as_ref());
        (vs + (s / r).powi(2) * vr) / (r * r)
    });
    Ok(AbsorptionImage {
        values,
        mask,
        variance: Some(variance),
        provenance: signal.meta.clone(),
    })
}

/// Amplitude over the scatter of the map about the fitted spot, measured in an
/// annulus from 2 to 4 mean FWHM around the fitted center.
///
/// The scatter is the standard deviation of `image − A·shape` over unmasked
/// annulus pixels, so a local baseline does not count as noise.
pub fn image_snr(image: &AbsorptionImage, fit: &GaussianFit2D) -> Result<f64, AnalysisError> {
    if !fit.converged {
        return Err(AnalysisError::NotConverged(fit.message.clone()));
    }
    let f = fit.mean_fwhm();
    let (r_in, r_out) = (2.0 * f, 4.0 * f);
    let (cx, cy) = (fit.center_x, fit.center_y);
    if cx - r_out < -0.5
        || cy - r_out < -0.5
        || cx + r_out > image.width() as f64 - 0.5
        || cy + r_out > image.height() as f64 - 0.5
    {
        return Err(AnalysisError::AnnulusOutside {
            radius: r_out,
            center_x: cx,
            center_y: cy,
        });
    }
    let mut resid = Vec::new();
    for y in 0..image.height() {
        for x in 0..image.width() {
            let r = (x as f64 - cx).hypot(y as f64 - cy);
            if r >= r_in && r <= r_out && *image.mask.get(x, y) {
                resid.push(image.values.get(x, y) - fit.amplitude * fit.shape(x as f64, y as f64));
            }
        }
    }
    if resid.len() < 2 {
        return Err(AnalysisError::FullyMasked);
    }
    let mean = resid.iter().sum::<f64>() / resid.len() as f64;
    let var = resid.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (resid.len() - 1) as f64;
    Ok(fit.amplitude / var.sqrt())
}

/// Power removed from the beam, with its 1σ uncertainty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DivertedPower {
    /// W.
    #[serde(with = "crate::json::float")]
    pub value: f64,
    #[serde(with = "crate::json::float")]
    pub uncertainty: f64,
}

/// `A · 2π σx σy · I` with the widths converted to object-plane meters.
/// The uncertainty propagates the fit covariance of `(A, wx, wy)`.
pub fn diverted_power(
    fit: &GaussianFit2D,
    peak_intensity: f64,
    scale: &PlateScale,
) -> Result<DivertedPower, AnalysisError> {
    if !fit.converged {
        return Err(AnalysisError::NotConverged(fit.message.clone()));
    }
    let p = scale.object_pixel;
    let sx = fwhm_to_sigma(fit.fwhm_x * p);
    let sy = fwhm_to_sigma(fit.fwhm_y * p);
    let area = 2.0 * PI * sx * sy;
    let value = fit.amplitude * area * peak_intensity;
    // ∂P/∂A, ∂P/∂wx, ∂P/∂wy with covariance indices 0, 3, 4.
    let grad = [
        (0, area * peak_intensity),
        (3, value / fit.fwhm_x),
        (4, value / fit.fwhm_y),
    ];
    let mut var = 0.0;
    for &(i, gi) in &grad {
        for &(j, gj) in &grad {
            var += gi * gj * fit.covariance[i][j];
        }
    }
    Ok(DivertedPower {
        value,
        uncertainty: var.max(0.0).sqrt(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalysisOptions {
    /// Reference-count floor for masking.
    pub floor: f64,
    /// `None` fits the unfiltered map.
    pub bandpass: Option<Bandpass>,
    /// Restricts the search for the starting extremum, e.g. to the known trap
    /// position. The fit itself always uses the whole image.
    pub search: Option<SearchWindow>,
    /// Holds the spot's center and widths fixed and fits only its amplitude.
    #[serde(default)]
    pub shape: Option<SpotShape>,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            floor: DEFAULT_COUNT_FLOOR,
            bandpass: Some(Bandpass::default()),
            search: None,
            shape: None,
        }
    }
}

/// Everything the pipeline reports for one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub fit: GaussianFit2D,
    pub masked_pixels: usize,
    /// Mean FWHM in object-plane nm, when calibrated.
    #[serde(with = "crate::json::float")]
    pub fwhm_nm: f64,
    #[serde(with = "crate::json::float")]
    pub fwhm_nm_uncertainty: f64,
    #[serde(with = "crate::json::float")]
    pub snr: f64,
    /// Beam intensity at the fitted center, W/m².
    #[serde(with = "crate::json::float")]
    pub intensity: f64,
    pub diverted_power: Option<DivertedPower>,
    /// Set when the fitted spot is brighter than its surroundings, e.g. when
    /// signal and reference were swapped.
    pub inverted: bool,
    pub warnings: Vec<String>,
}

impl AnalysisReport {
    pub fn converged(&self) -> bool {
        self.fit.converged
    }
}

/// Fits `image` and derives the reported quantities. Only a failure to fit at
/// all is an error; a non-converged fit is returned with `converged == false`.
pub fn analyze_image(image: &AbsorptionImage, options: &AnalysisOptions) -> Result<AnalysisReport, AnalysisError> {
    let fit = match &options.shape {
        Some(shape) => fit_gaussian_2d_with_shape(image, options.bandpass.as_ref(), shape)?,
        None => fit_gaussian_2d_auto(image, options.bandpass.as_ref(), options.search.as_ref())?,
    };
    let masked_pixels = image.mask.as_slice().iter().filter(|m| !**m).count();
    let mut warnings = Vec::new();
    let inverted = fit.converged && fit.amplitude < 0.0;
    if inverted {
        warnings.push("negative amplitude: signal and reference may be swapped".to_string());
    }
    if image.provenance.as_ref().is_some_and(|m| m.saturated()) {
        warnings.push("signal frame has saturated pixels".to_string());
    }
    let mut report = AnalysisReport {
        fwhm_nm: f64::NAN,
        fwhm_nm_uncertainty: f64::NAN,
        snr: f64::NAN,
        intensity: f64::NAN,
        diverted_power: None,
        fit,
        masked_pixels,
        inverted,
        warnings,
    };
    if !report.fit.converged {
        return Ok(report);
    }
    let fit = &report.fit;
    match image_snr(image, fit) {
        Ok(snr) => report.snr = snr,
        Err(e) => report.warnings.push(format!("SNR unavailable: {e}")),
    }
    match (&image.provenance, image.plate_scale()) {
        (Some(meta), Ok(scale)) => {
            let p_nm = scale.object_pixel * 1e9;
            report.fwhm_nm = fit.mean_fwhm() * p_nm;
            let c = &fit.covariance;
            report.fwhm_nm_uncertainty = 0.5 * (c[3][3] + c[4][4] + 2.0 * c[3][4]).max(0.0).sqrt() * p_nm;
            let (x, y) = image.object_position(fit.center_x, fit.center_y)?;
            let mut beam = meta.scene.beam;
            beam.center.0 += meta.beam_offset.0;
            beam.center.1 += meta.beam_offset.1;
            report.intensity = beam_intensity(&beam, x, y);
            report.diverted_power = Some(diverted_power(fit, report.intensity, &scale)?);
        }
        _ => report
            .warnings
            .push("no calibration metadata: FWHM in nm and diverted power unavailable".to_string()),
    }
    Ok(report)
}

/// Normalizes a signal/reference pair and analyzes the resulting map.
pub fn analyze_pair(
    signal: &Frame,
    reference: &Frame,
    options: &AnalysisOptions,
) -> Result<AnalysisReport, AnalysisError> {
    let image = normalize_difference_with_floor(signal, reference, options.floor)?;
    analyze_image(&image, options)
}
