//! Least-squares fit of an elliptical 2D Gaussian to a contrast map.
//!
//! Coordinates are pixel indices: the center of pixel `(i, j)` sits at `(i, j)`.
//! The model is `offset + A·exp(−4 ln2·((x−x0)²/wx² + (y−y0)²/wy²))` with
//! parameters ordered `[A, x0, y0, wx, wy, offset]`.
//!
//! [`fit_gaussian_2d_bandpassed`] fits the same intrinsic Gaussian to a
//! bandpass-filtered map. A Gaussian blurred by a Gaussian kernel stays
//! Gaussian, so the filtered model is the difference of two broadened copies
//! and the reported amplitude and widths are those of the unfiltered spot.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::filter::{convolve_separable, kernel, Bandpass, BandpassOperator, MaskedBlur};
use super::{AbsorptionImage, AnalysisError};
use crate::curvefit::{minimize, LmOptions, LmOutcome, Problem, Termination};
use crate::grid::Grid;
use crate::units::fwhm_per_sigma;

pub const NUM_PARAMS: usize = 6;
pub const PARAM_NAMES: [&str; NUM_PARAMS] = ["amplitude", "center_x", "center_y", "fwhm_x", "fwhm_y", "offset"];

/// Per-parameter 1σ uncertainties.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianUncertainties {
    #[serde(with = "crate::json::float")]
    pub amplitude: f64,
    #[serde(with = "crate::json::float")]
    pub center_x: f64,
    #[serde(with = "crate::json::float")]
    pub center_y: f64,
    #[serde(with = "crate::json::float")]
    pub fwhm_x: f64,
    #[serde(with = "crate::json::float")]
    pub fwhm_y: f64,
    #[serde(with = "crate::json::float")]
    pub offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianFit2D {
    /// Peak contrast; negative for a bright spot.
    pub amplitude: f64,
    /// Pixels.
    pub center_x: f64,
    pub center_y: f64,
    /// Pixels.
    pub fwhm_x: f64,
    pub fwhm_y: f64,
    /// Baseline of the fitted map (near zero after bandpass filtering).
    pub offset: f64,
    pub uncertainties: GaussianUncertainties,
    /// Parameter covariance in `[A, x0, y0, wx, wy, offset]` order.
    #[serde(with = "crate::json::matrix")]
    pub covariance: Vec<Vec<f64>>,
    pub converged: bool,
    /// Weighted sum of squared residuals at the solution.
    #[serde(with = "crate::json::float")]
    pub chi2: f64,
    /// RMS of the unweighted residuals of the fitted map.
    #[serde(with = "crate::json::float")]
    pub residual_rms: f64,
    pub iterations: usize,
    pub termination: Termination,
    /// Whether the fit was made to the bandpass-filtered map.
    pub filtered: bool,
    pub message: String,
}

impl GaussianFit2D {
    pub fn params(&self) -> [f64; NUM_PARAMS] {
        [
            self.amplitude,
            self.center_x,
            self.center_y,
            self.fwhm_x,
            self.fwhm_y,
            self.offset,
        ]
    }

    pub fn mean_fwhm(&self) -> f64 {
        0.5 * (self.fwhm_x + self.fwhm_y)
    }

    /// The unfiltered model at pixel coordinate `(x, y)`.
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        self.offset + self.amplitude * self.shape(x, y)
    }

    /// Unit-amplitude profile at `(x, y)`.
    pub fn shape(&self, x: f64, y: f64) -> f64 {
        let a = 4.0 * std::f64::consts::LN_2;
        let dx = (x - self.center_x) / self.fwhm_x;
        let dy = (y - self.center_y) / self.fwhm_y;
        (-a * (dx * dx + dy * dy)).exp()
    }
}

/// One term `sign · (σx/Sx)(σy/Sy)·exp(−dx²/2Sx² − dy²/2Sy²)` with `S² = σ² + blur²`.
#[derive(Debug, Clone, Copy)]
struct Component {
    blur: f64,
    sign: f64,
}

/// Per-axis factor and its derivatives with respect to center and FWHM.
struct Axis {
    value: Vec<f64>,
    d_center: Vec<f64>,
    d_fwhm: Vec<f64>,
}

fn axis(n: usize, center: f64, fwhm: f64, blur: f64) -> Axis {
    let c = fwhm_per_sigma();
    let s = fwhm / c;
    let s2 = s * s + blur * blur;
    let peak = s / s2.sqrt();
    let mut out = Axis {
        value: Vec::with_capacity(n),
        d_center: Vec::with_capacity(n),
        d_fwhm: Vec::with_capacity(n),
    };
    for i in 0..n {
        let d = i as f64 - center;
        let f = peak * (-d * d / (2.0 * s2)).exp();
        out.value.push(f);
        out.d_center.push(f * d / s2);
        out.d_fwhm.push(f * (1.0 / s - s / s2 + d * d * s / (s2 * s2)) / c);
    }
    out
}

/// The (possibly filtered) Gaussian model evaluated on a pixel list.
struct Model {
    width: usize,
    height: usize,
    components: Vec<Component>,
}

impl Model {
    fn new(width: usize, height: usize, band: Option<&Bandpass>) -> Self {
        let components = match band {
            None => vec![Component { blur: 0.0, sign: 1.0 }],
            Some(b) => vec![
                Component {
                    blur: b.r_high,
                    sign: 1.0,
                },
                Component {
                    blur: b.r_low,
                    sign: -1.0,
                },
            ],
        };
        Self {
            width,
            height,
            components,
        }
    }

    fn axes(&self, p: &[f64]) -> Vec<(Axis, Axis, f64)> {
        self.components
            .iter()
            .map(|k| {
                (
                    axis(self.width, p[1], p[3], k.blur),
                    axis(self.height, p[2], p[4], k.blur),
                    k.sign,
                )
            })
            .collect()
    }

    fn value(axes: &[(Axis, Axis, f64)], p: &[f64], x: usize, y: usize) -> f64 {
        let shape: f64 = axes.iter().map(|(ax, ay, s)| s * ax.value[x] * ay.value[y]).sum();
        p[5] + p[0] * shape
    }

    fn gradient(axes: &[(Axis, Axis, f64)], p: &[f64], x: usize, y: usize, out: &mut [f64; NUM_PARAMS]) {
        *out = [0.0, 0.0, 0.0, 0.0, 0.0, 1.0];
        for (ax, ay, s) in axes {
            out[0] += s * ax.value[x] * ay.value[y];
            out[1] += s * p[0] * ax.d_center[x] * ay.value[y];
            out[2] += s * p[0] * ax.value[x] * ay.d_center[y];
            out[3] += s * p[0] * ax.d_fwhm[x] * ay.value[y];
            out[4] += s * p[0] * ax.value[x] * ay.d_fwhm[y];
        }
    }
}

/// Model value and its gradient with respect to `[A, x0, y0, wx, wy, offset]`
/// at pixel `(x, y)` of a `width`×`height` map, optionally as seen through `band`.
pub fn gaussian_model(
    width: usize,
    height: usize,
    band: Option<&Bandpass>,
    p: &[f64; NUM_PARAMS],
    x: usize,
    y: usize,
) -> (f64, [f64; NUM_PARAMS]) {
    assert!(x < width && y < height, "pixel ({x}, {y}) outside {width}x{height}");
    let model = Model::new(width, height, band);
    let axes = model.axes(p);
    let mut g = [0.0; NUM_PARAMS];
    Model::gradient(&axes, p, x, y, &mut g);
    (Model::value(&axes, p, x, y), g)
}

/// Indices of the parameters that vary when the spot shape is held fixed.
const AMPLITUDE_AND_OFFSET: [usize; 2] = [0, 5];
const ALL_PARAMS: [usize; NUM_PARAMS] = [0, 1, 2, 3, 4, 5];

struct ImageProblem<'a> {
    model: &'a Model,
    pixels: &'a [(usize, usize)],
    data: &'a [f64],
    /// √weight per pixel.
    root_w: &'a [f64],
    /// Values of the parameters not in `free`.
    base: [f64; NUM_PARAMS],
    free: &'a [usize],
}

impl ImageProblem<'_> {
    fn expand(&self, q: &[f64]) -> [f64; NUM_PARAMS] {
        let mut p = self.base;
        for (&i, &v) in self.free.iter().zip(q) {
            p[i] = v;
        }
        p
    }
}

impl Problem for ImageProblem<'_> {
    fn num_params(&self) -> usize {
        self.free.len()
    }

    fn num_residuals(&self) -> usize {
        self.pixels.len()
    }

    fn residuals(&self, q: &[f64], out: &mut [f64]) {
        let p = self.expand(q);
        let axes = self.model.axes(&p);
        for (k, &(x, y)) in self.pixels.iter().enumerate() {
            out[k] = self.root_w[k] * (self.data[k] - Model::value(&axes, &p, x, y));
        }
    }

    fn jacobian(&self, q: &[f64], out: &mut DMatrix<f64>) {
        let p = self.expand(q);
        let axes = self.model.axes(&p);
        let mut g = [0.0; NUM_PARAMS];
        for (k, &(x, y)) in self.pixels.iter().enumerate() {
            Model::gradient(&axes, &p, x, y, &mut g);
            for (j, &i) in self.free.iter().enumerate() {
                out[(k, j)] = self.root_w[k] * g[i];
            }
        }
    }

    fn project(&self, q: &mut [f64]) {
        let mut p = self.expand(q);
        let (w, h) = (self.model.width as f64, self.model.height as f64);
        let max = max_width(self.model.width, self.model.height);
        p[1] = p[1].clamp(-0.5, w - 0.5);
        p[2] = p[2].clamp(-0.5, h - 0.5);
        p[3] = p[3].abs().clamp(MIN_WIDTH, max);
        p[4] = p[4].abs().clamp(MIN_WIDTH, max);
        for (&i, v) in self.free.iter().zip(q.iter_mut()) {
            *v = p[i];
        }
    }
}

fn unmasked_pixels(image: &AbsorptionImage) -> Vec<(usize, usize)> {
    let w = image.values.width();
    image
        .mask
        .as_slice()
        .iter()
        .enumerate()
        .filter(|(_, &m)| m)
        .map(|(k, _)| (k % w, k / w))
        .collect()
}

fn check_pixels(n: usize) -> Result<(), AnalysisError> {
    if n > 7 {
        Ok(())
    } else {
        Err(AnalysisError::TooFewPixels { found: n })
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Center and widths of a spot, in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpotShape {
    pub center_x: f64,
    pub center_y: f64,
    pub fwhm_x: f64,
    pub fwhm_y: f64,
}

impl SpotShape {
    pub fn of(fit: &GaussianFit2D) -> Self {
        Self {
            center_x: fit.center_x,
            center_y: fit.center_y,
            fwhm_x: fit.fwhm_x,
            fwhm_y: fit.fwhm_y,
        }
    }
}

/// Region searched for the starting extremum, in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchWindow {
    pub center_x: f64,
    pub center_y: f64,
    pub radius: f64,
}

impl SearchWindow {
    fn contains(&self, x: usize, y: usize) -> bool {
        self.contains_point(x as f64, y as f64)
    }

    fn contains_point(&self, x: f64, y: f64) -> bool {
        (x - self.center_x).hypot(y - self.center_y) <= self.radius
    }
}

/// Starting points from the map itself: offset from the median of the unmasked
/// two-pixel border; amplitude and center from the most significant positive
/// and negative excursions of the 1-px-smoothed map (optionally restricted to
/// `window`; measured in units of the pixel noise when the image carries a
/// variance), plus the window center itself; widths from thresholded second
/// moments around each.
pub fn auto_starts(image: &AbsorptionImage, window: Option<&SearchWindow>) -> Vec<[f64; NUM_PARAMS]> {
    let (w, h) = (image.values.width(), image.values.height());
    let smooth = MaskedBlur::new(1.0, &image.mask).apply(&image.values);
    let border: Vec<f64> = unmasked_pixels(image)
        .into_iter()
        .filter(|&(x, y)| x < 2 || y < 2 || x + 2 >= w || y + 2 >= h)
        .map(|(x, y)| *image.values.get(x, y))
        .collect();
    let offset = if border.is_empty() {
        median(
            unmasked_pixels(image)
                .into_iter()
                .map(|(x, y)| *image.values.get(x, y))
                .collect(),
        )
    } else {
        median(border)
    };

    // (score, x, y, excursion) of the best candidate of each sign.
    let mut best: [Option<(f64, usize, usize, f64)>; 2] = [None, None];
    for (x, y) in unmasked_pixels(image) {
        if window.is_some_and(|win| !win.contains(x, y)) {
            continue;
        }
        let v = smooth.get(x, y) - offset;
        let score = match &image.variance {
            Some(var) => v.abs() / var.get(x, y).sqrt().max(f64::MIN_POSITIVE),
            None => v.abs(),
        };
        let slot = &mut best[(v < 0.0) as usize];
        if v != 0.0 && slot.is_none_or(|b| score > b.0) {
            *slot = Some((score, x, y, v));
        }
    }
    let mut found: Vec<(f64, usize, usize, f64)> = best.into_iter().flatten().collect();
    found.sort_by(|a, b| b.0.total_cmp(&a.0));
    if let Some(win) = window {
        let (cx, cy) = (win.center_x.round(), win.center_y.round());
        if cx >= 0.0 && cy >= 0.0 && (cx as usize) < w && (cy as usize) < h {
            let (cx, cy) = (cx as usize, cy as usize);
            found.push((0.0, cx, cy, smooth.get(cx, cy) - offset));
        }
    }
    if found.is_empty() {
        found.push((0.0, w / 2, h / 2, 0.0));
    }
    found
        .into_iter()
        .map(|(_, cx, cy, peak)| start_at(image, &smooth, offset, cx, cy, peak))
        .collect()
}

/// The single most significant of [`auto_starts`].
pub fn auto_init(image: &AbsorptionImage, window: Option<&SearchWindow>) -> [f64; NUM_PARAMS] {
    auto_starts(image, window)[0]
}

fn start_at(
    image: &AbsorptionImage,
    smooth: &Grid<f64>,
    offset: f64,
    cx: usize,
    cy: usize,
    peak: f64,
) -> [f64; NUM_PARAMS] {
    let (w, h) = (image.values.width(), image.values.height());
    let sign = if peak < 0.0 { -1.0 } else { 1.0 };
    // Moments over the 4-connected region above half the peak. For weights
    // (g − ½)₊ on a Gaussian of variance s², ⟨dx²⟩ = 0.21713·s².
    let reach = (w.min(h) / 4).max(2) as isize;
    let excess = |x: usize, y: usize| sign * (smooth.get(x, y) - offset) - peak.abs() / 2.0;
    let (mut sw, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    let mut seen = Grid::filled(w, h, false);
    let mut stack = vec![(cx, cy)];
    *seen.get_mut(cx, cy) = true;
    while let Some((x, y)) = stack.pop() {
        let u = excess(x, y);
        if u <= 0.0 && (x, y) != (cx, cy) {
            continue;
        }
        let (dx, dy) = (x as isize - cx as isize, y as isize - cy as isize);
        sw += u.max(0.0);
        sxx += u.max(0.0) * (dx * dx) as f64;
        syy += u.max(0.0) * (dy * dy) as f64;
        let neighbours = [(x.wrapping_sub(1), y), (x + 1, y), (x, y.wrapping_sub(1)), (x, y + 1)];
        for (nx, ny) in neighbours {
            if nx < w
                && ny < h
                && (nx as isize - cx as isize).abs() <= reach
                && (ny as isize - cy as isize).abs() <= reach
                && *image.mask.get(nx, ny)
                && !*seen.get(nx, ny)
            {
                *seen.get_mut(nx, ny) = true;
                stack.push((nx, ny));
            }
        }
    }
    let max_fwhm = (w.min(h) as f64 / 2.0).max(1.5);
    let width = |m2: f64| -> (f64, f64) {
        let smoothed_var = if sw > 0.0 { m2 / sw / 0.217_13 } else { 4.0 };
        let var = (smoothed_var - 1.0).max(0.25);
        let fwhm = (fwhm_per_sigma() * var.sqrt()).clamp(1.5, max_fwhm);
        let s2 = (fwhm / fwhm_per_sigma()).powi(2);
        (fwhm, (s2 / (s2 + 1.0)).sqrt())
    };
    let (wx, kx) = width(sxx);
    let (wy, ky) = width(syy);
    [peak / (kx * ky), cx as f64, cy as f64, wx, wy, offset]
}

/// Widths are kept within `[MIN_WIDTH, max_width]` and centers within the frame
/// during the fit; a solution on any of these bounds is not a detection.
const MIN_WIDTH: f64 = 0.5;

fn max_width(w: usize, h: usize) -> f64 {
    2.0 * w.max(h) as f64
}

fn sane(p: &[f64], w: usize, h: usize) -> Option<&'static str> {
    let max = max_width(w, h);
    let tol = 1e-9;
    if !(p[3] > MIN_WIDTH + tol && p[4] > MIN_WIDTH + tol) {
        Some("fitted width at the half-pixel bound")
    } else if p[3] >= max - tol || p[4] >= max - tol {
        Some("fitted width exceeds the frame")
    } else if p[1] <= -0.5 + tol || p[2] <= -0.5 + tol || p[1] >= w as f64 - 0.5 - tol || p[2] >= h as f64 - 0.5 - tol {
        Some("fitted center outside the frame")
    } else {
        None
    }
}

#[allow(clippy::too_many_arguments)]
fn build_fit(
    p: &[f64],
    covariance: Option<DMatrix<f64>>,
    iterations: usize,
    termination: Termination,
    chi2: f64,
    residual_rms: f64,
    filtered: bool,
    dims: (usize, usize),
) -> GaussianFit2D {
    let mut message = if termination.converged() {
        "converged".to_string()
    } else {
        format!("not converged: {termination:?}")
    };
    let mut converged = termination.converged() && covariance.is_some();
    if converged {
        if let Some(why) = sane(p, dims.0, dims.1) {
            converged = false;
            message = format!("not converged: {why}");
        }
    }
    let cov: Vec<Vec<f64>> = match &covariance {
        Some(c) => (0..NUM_PARAMS)
            .map(|i| (0..NUM_PARAMS).map(|j| c[(i, j)]).collect())
            .collect(),
        None => vec![vec![f64::NAN; NUM_PARAMS]; NUM_PARAMS],
    };
    let sd = |j: usize| cov[j][j].max(0.0).sqrt();
    GaussianFit2D {
        amplitude: p[0],
        center_x: p[1],
        center_y: p[2],
        fwhm_x: p[3],
        fwhm_y: p[4],
        offset: p[5],
        uncertainties: GaussianUncertainties {
            amplitude: sd(0),
            center_x: sd(1),
            center_y: sd(2),
            fwhm_x: sd(3),
            fwhm_y: sd(4),
            offset: sd(5),
        },
        covariance: cov,
        converged,
        chi2,
        residual_rms,
        iterations,
        termination,
        filtered,
        message,
    }
}

fn explicit(init: &GaussianFit2D) -> Result<[f64; NUM_PARAMS], AnalysisError> {
    let p = init.params();
    if p.iter().all(|v| v.is_finite()) {
        Ok(p)
    } else {
        Err(AnalysisError::BadInit)
    }
}

/// Converged fits beat unconverged ones; then lower χ² wins.
fn better(a: &GaussianFit2D, b: &GaussianFit2D) -> bool {
    match (a.converged, b.converged) {
        (true, false) => true,
        (false, true) => false,
        _ => a.chi2 <= b.chi2,
    }
}

fn reject_outside(fit: &mut GaussianFit2D, window: Option<&SearchWindow>) {
    if fit.converged && window.is_some_and(|win| !win.contains_point(fit.center_x, fit.center_y)) {
        fit.converged = false;
        fit.message = "not converged: fitted center left the search window".to_string();
    }
}

/// What a filtered fit needs beyond the weighted data, for its covariance.
struct FilterState {
    op: BandpassOperator,
    raw_var: Grid<f64>,
    fvar: Grid<f64>,
    mask: Grid<bool>,
}

/// Weighted data and model for one image, shared by every start.
struct Prepared {
    pixels: Vec<(usize, usize)>,
    data: Vec<f64>,
    weights: Vec<f64>,
    root_w: Vec<f64>,
    model: Model,
    filter: Option<FilterState>,
    free: &'static [usize],
}

impl Prepared {
    fn plain(image: &AbsorptionImage) -> Result<Self, AnalysisError> {
        let pixels = unmasked_pixels(image);
        check_pixels(pixels.len())?;
        let data = pixels.iter().map(|&(x, y)| *image.values.get(x, y)).collect();
        let weights: Vec<f64> = match &image.variance {
            Some(v) => pixels.iter().map(|&(x, y)| 1.0 / v.get(x, y)).collect(),
            None => vec![1.0; pixels.len()],
        };
        Ok(Self {
            root_w: weights.iter().map(|w| w.sqrt()).collect(),
            weights,
            data,
            pixels,
            model: Model::new(image.values.width(), image.values.height(), None),
            filter: None,
            free: &ALL_PARAMS,
        })
    }

    fn filtered(image: &AbsorptionImage, band: &Bandpass) -> Result<Self, AnalysisError> {
        band.validate()?;
        let pixels = unmasked_pixels(image);
        check_pixels(pixels.len())?;
        let (w, h) = (image.values.width(), image.values.height());
        let op = band.operator(&image.mask);
        let filtered = op.apply(&image.values);
        let raw_var = image.variance.clone().unwrap_or_else(|| Grid::filled(w, h, 1.0));
        let fvar = filtered_variance(band, &image.mask, &raw_var);
        let data = pixels.iter().map(|&(x, y)| *filtered.get(x, y)).collect();
        let weights: Vec<f64> = pixels
            .iter()
            .map(|&(x, y)| {
                let v = *fvar.get(x, y);
                if v > 0.0 {
                    1.0 / v
                } else {
                    0.0
                }
            })
            .collect();
        Ok(Self {
            root_w: weights.iter().map(|w| w.sqrt()).collect(),
            weights,
            data,
            pixels,
            model: Model::new(w, h, Some(band)),
            filter: Some(FilterState {
                op,
                raw_var,
                fvar,
                mask: image.mask.clone(),
            }),
            free: &ALL_PARAMS,
        })
    }

    /// Fits from `start`; parameters outside `free` keep their start values.
    /// The outcome is expanded to all parameters, with zero covariance for
    /// the fixed ones.
    fn solve(&self, start: [f64; NUM_PARAMS]) -> LmOutcome {
        let problem = ImageProblem {
            model: &self.model,
            pixels: &self.pixels,
            data: &self.data,
            root_w: &self.root_w,
            base: start,
            free: self.free,
        };
        let q: Vec<f64> = self.free.iter().map(|&i| start[i]).collect();
        let mut out = minimize(&problem, &q, &LmOptions::default());
        out.params = problem.expand(&out.params).to_vec();
        out.covariance = out.covariance.map(|c| {
            let mut full = DMatrix::zeros(NUM_PARAMS, NUM_PARAMS);
            for (a, &i) in self.free.iter().enumerate() {
                for (b, &j) in self.free.iter().enumerate() {
                    full[(i, j)] = c[(a, b)];
                }
            }
            full
        });
        out
    }

    /// The fit with `(JᵀWJ)⁻¹` scaled by χ²/dof as covariance. Exact for the
    /// unfiltered fit; for a filtered fit only a screening result.
    fn screen(&self, out: &LmOutcome) -> GaussianFit2D {
        let dof = (self.pixels.len() - self.free.len()) as f64;
        let covariance = out.covariance.as_ref().map(|c| c * (out.cost / dof));
        self.build(out, covariance)
    }

    /// The final fit. Filtering correlates neighbouring pixels, so a filtered
    /// fit's covariance is the sandwich `H⁻¹ (Jᵀ W B V Bᵀ W J) H⁻¹`, scaled by
    /// the ratio of observed to predicted weighted residual power.
    fn finish(&self, out: &LmOutcome) -> GaussianFit2D {
        let Some(f) = &self.filter else {
            return self.screen(out);
        };
        let covariance = out.covariance.as_ref().map(|h_inv| {
            let p: [f64; NUM_PARAMS] = out.params.as_slice().try_into().expect("six parameters");
            let (m, predicted) = self.meat(f, &p);
            sandwich(h_inv, &m, out.cost, predicted)
        });
        self.build(out, covariance.filter(|c| c.iter().all(|v| v.is_finite())))
    }

    /// `Jᵀ W B V Bᵀ W J` over all six parameters at `p`, and the weighted
    /// residual power `Σ w·var` the filtered noise alone would produce.
    fn meat(&self, f: &FilterState, p: &[f64; NUM_PARAMS]) -> (DMatrix<f64>, f64) {
        let (w, h) = (self.model.width, self.model.height);
        let axes = self.model.axes(p);
        let mut columns: Vec<Grid<f64>> = (0..NUM_PARAMS).map(|_| Grid::filled(w, h, 0.0)).collect();
        let mut g = [0.0; NUM_PARAMS];
        for (k, &(x, y)) in self.pixels.iter().enumerate() {
            Model::gradient(&axes, p, x, y, &mut g);
            for j in 0..NUM_PARAMS {
                *columns[j].get_mut(x, y) = self.weights[k] * g[j];
            }
        }
        let u: Vec<Grid<f64>> = columns.iter().map(|c| f.op.apply_adjoint(c)).collect();
        let mut m = DMatrix::zeros(NUM_PARAMS, NUM_PARAMS);
        for i in 0..NUM_PARAMS {
            for j in i..NUM_PARAMS {
                let s: f64 = u[i]
                    .as_slice()
                    .iter()
                    .zip(u[j].as_slice())
                    .zip(f.raw_var.as_slice().iter().zip(f.mask.as_slice()))
                    .filter(|(_, (_, &m))| m)
                    .map(|((a, b), (v, _))| a * b * v)
                    .sum();
                m[(i, j)] = s;
                m[(j, i)] = s;
            }
        }
        let predicted = self
            .weights
            .iter()
            .zip(&self.pixels)
            .map(|(wk, &(x, y))| wk * f.fvar.get(x, y))
            .sum();
        (m, predicted)
    }

    fn build(&self, out: &LmOutcome, covariance: Option<DMatrix<f64>>) -> GaussianFit2D {
        let rms = unweighted_rms(&self.model, &out.params, &self.pixels, &self.data);
        build_fit(
            &out.params,
            covariance,
            out.iterations,
            out.termination,
            out.cost,
            rms,
            self.filter.is_some(),
            (self.model.width, self.model.height),
        )
    }

    /// Fits from each start and finishes the best result.
    fn best_of(&self, starts: &[[f64; NUM_PARAMS]], window: Option<&SearchWindow>) -> GaussianFit2D {
        let mut best: Option<(GaussianFit2D, LmOutcome)> = None;
        for &start in starts {
            let out = self.solve(start);
            let mut fit = self.screen(&out);
            reject_outside(&mut fit, window);
            if best.as_ref().is_none_or(|(b, _)| better(&fit, b) && !better(b, &fit)) {
                best = Some((fit, out));
            }
        }
        let (_, out) = best.expect("at least one start");
        let mut fit = self.finish(&out);
        reject_outside(&mut fit, window);
        fit
    }
}

/// `H⁻¹ M H⁻¹` scaled by observed over predicted residual power, symmetrized.
fn sandwich(h_inv: &DMatrix<f64>, m: &DMatrix<f64>, cost: f64, predicted: f64) -> DMatrix<f64> {
    let scale = if predicted > 0.0 { cost / predicted } else { f64::NAN };
    let c = h_inv * m * h_inv * scale;
    (&c + c.transpose()) * 0.5
}

/// Fits from every automatic start and keeps the best result. With a bandpass
/// the filter-propagated model is fitted, starting from a zero offset.
pub fn fit_gaussian_2d_auto(
    image: &AbsorptionImage,
    band: Option<&Bandpass>,
    window: Option<&SearchWindow>,
) -> Result<GaussianFit2D, AnalysisError> {
    let mut starts = auto_starts(image, window);
    let prepared = match band {
        Some(b) => {
            for s in &mut starts {
                s[5] = 0.0;
            }
            Prepared::filtered(image, b)?
        }
        None => Prepared::plain(image)?,
    };
    Ok(prepared.best_of(&starts, window))
}

/// Fits amplitude and offset only, with the center and widths held at
/// `shape`. The model is linear in what remains, so the fit has a unique
/// minimum and its uncertainties do not depend on a fitted shape. With a
/// bandpass the filter-propagated model is used.
pub fn fit_gaussian_2d_with_shape(
    image: &AbsorptionImage,
    band: Option<&Bandpass>,
    shape: &SpotShape,
) -> Result<GaussianFit2D, AnalysisError> {
    let p = [shape.center_x, shape.center_y, shape.fwhm_x, shape.fwhm_y];
    if !(p.iter().all(|v| v.is_finite()) && p[2] > MIN_WIDTH && p[3] > MIN_WIDTH) {
        return Err(AnalysisError::BadInit);
    }
    let mut prepared = match band {
        Some(b) => Prepared::filtered(image, b)?,
        None => Prepared::plain(image)?,
    };
    prepared.free = &AMPLITUDE_AND_OFFSET;
    let out = prepared.solve([0.0, p[0], p[1], p[2], p[3], 0.0]);
    Ok(prepared.finish(&out))
}

/// Several images of one spot: a shared center and widths with an amplitude
/// and offset per image. Parameters `[x0, y0, wx, wy, A₁, c₁, A₂, c₂, …]`.
struct JointProblem<'a> {
    images: &'a [Prepared],
    rows: usize,
}

impl JointProblem<'_> {
    fn params_of(q: &[f64], i: usize) -> [f64; NUM_PARAMS] {
        [q[4 + 2 * i], q[0], q[1], q[2], q[3], q[5 + 2 * i]]
    }
}

impl Problem for JointProblem<'_> {
    fn num_params(&self) -> usize {
        4 + 2 * self.images.len()
    }

    fn num_residuals(&self) -> usize {
        self.rows
    }

    fn residuals(&self, q: &[f64], out: &mut [f64]) {
        let mut k = 0;
        for (i, im) in self.images.iter().enumerate() {
            let p = Self::params_of(q, i);
            let axes = im.model.axes(&p);
            for (j, &(x, y)) in im.pixels.iter().enumerate() {
                out[k] = im.root_w[j] * (im.data[j] - Model::value(&axes, &p, x, y));
                k += 1;
            }
        }
    }

    fn jacobian(&self, q: &[f64], out: &mut DMatrix<f64>) {
        out.fill(0.0);
        let mut g = [0.0; NUM_PARAMS];
        let mut k = 0;
        for (i, im) in self.images.iter().enumerate() {
            let p = Self::params_of(q, i);
            let axes = im.model.axes(&p);
            for (j, &(x, y)) in im.pixels.iter().enumerate() {
                Model::gradient(&axes, &p, x, y, &mut g);
                let r = im.root_w[j];
                for c in 0..4 {
                    out[(k, c)] = r * g[c + 1];
                }
                out[(k, 4 + 2 * i)] = r * g[0];
                out[(k, 5 + 2 * i)] = r * g[5];
                k += 1;
            }
        }
    }

    fn project(&self, q: &mut [f64]) {
        let model = &self.images[0].model;
        let max = max_width(model.width, model.height);
        q[0] = q[0].clamp(-0.5, model.width as f64 - 0.5);
        q[1] = q[1].clamp(-0.5, model.height as f64 - 0.5);
        q[2] = q[2].abs().clamp(MIN_WIDTH, max);
        q[3] = q[3].abs().clamp(MIN_WIDTH, max);
    }
}

/// A spot shape fitted jointly to several images.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SharedShape {
    pub shape: SpotShape,
    /// Covariance of `[x0, y0, wx, wy]`, px².
    pub covariance: [[f64; 4]; 4],
}

/// The spot shape that best fits all `images` at once, each with its own
/// amplitude and offset, starting from `start`. The images must share their
/// dimensions. Returns `None` when the joint fit does not converge. The
/// covariance is χ²-scaled, or the sandwich form with a bandpass.
pub fn fit_shared_shape(
    images: &[&AbsorptionImage],
    band: Option<&Bandpass>,
    start: &SpotShape,
) -> Result<Option<SharedShape>, AnalysisError> {
    let Some(first) = images.first() else {
        return Ok(None);
    };
    let dims = (first.values.width(), first.values.height());
    let mut prepared = Vec::with_capacity(images.len());
    let mut q = vec![start.center_x, start.center_y, start.fwhm_x, start.fwhm_y];
    for image in images {
        let found = (image.values.width(), image.values.height());
        if found != dims {
            return Err(AnalysisError::SizeMismatch { expected: dims, found });
        }
        let fit = fit_gaussian_2d_with_shape(image, band, start)?;
        q.extend([fit.amplitude, fit.offset]);
        prepared.push(match band {
            Some(b) => Prepared::filtered(image, b)?,
            None => Prepared::plain(image)?,
        });
    }
    let problem = JointProblem {
        rows: prepared.iter().map(|p| p.pixels.len()).sum(),
        images: &prepared,
    };
    let out = minimize(&problem, &q, &LmOptions::default());
    let p = &out.params;
    if !out.converged() || sane(&JointProblem::params_of(p, 0), dims.0, dims.1).is_some() {
        return Ok(None);
    }
    let Some(h_inv) = &out.covariance else {
        return Ok(None);
    };
    let n = problem.num_params();
    let covariance = if band.is_some() {
        // Joint index of each image's [A, x0, y0, wx, wy, c].
        let mut m = DMatrix::zeros(n, n);
        let mut predicted = 0.0;
        for (i, im) in prepared.iter().enumerate() {
            let f = im.filter.as_ref().expect("filtered");
            let (mi, pi) = im.meat(f, &JointProblem::params_of(p, i));
            let idx = [4 + 2 * i, 0, 1, 2, 3, 5 + 2 * i];
            for a in 0..NUM_PARAMS {
                for b in 0..NUM_PARAMS {
                    m[(idx[a], idx[b])] += mi[(a, b)];
                }
            }
            predicted += pi;
        }
        sandwich(h_inv, &m, out.cost, predicted)
    } else {
        h_inv * (out.cost / (problem.rows - n) as f64)
    };
    if covariance.iter().any(|v| !v.is_finite()) {
        return Ok(None);
    }
    Ok(Some(SharedShape {
        shape: SpotShape {
            center_x: p[0],
            center_y: p[1],
            fwhm_x: p[2],
            fwhm_y: p[3],
        },
        covariance: std::array::from_fn(|i| std::array::from_fn(|j| covariance[(i, j)])),
    }))
}

/// Fits the Gaussian model to every unmasked pixel. Pixels are weighted by
/// their inverse variance when the image carries one. Uncertainties come from
/// the covariance scaled by χ²/dof. Without `init`, see [`fit_gaussian_2d_auto`].
pub fn fit_gaussian_2d(image: &AbsorptionImage, init: Option<&GaussianFit2D>) -> Result<GaussianFit2D, AnalysisError> {
    match init {
        Some(f) => fit_gaussian_2d_from(image, explicit(f)?),
        None => fit_gaussian_2d_auto(image, None, None),
    }
}

/// [`fit_gaussian_2d`] from an explicit parameter vector.
pub fn fit_gaussian_2d_from(image: &AbsorptionImage, start: [f64; NUM_PARAMS]) -> Result<GaussianFit2D, AnalysisError> {
    if start.iter().any(|v| !v.is_finite()) {
        return Err(AnalysisError::BadInit);
    }
    let prepared = Prepared::plain(image)?;
    Ok(prepared.finish(&prepared.solve(start)))
}

fn unweighted_rms(model: &Model, p: &[f64], pixels: &[(usize, usize)], data: &[f64]) -> f64 {
    let axes = model.axes(p);
    let ss: f64 = pixels
        .iter()
        .zip(data)
        .map(|(&(x, y), d)| (d - Model::value(&axes, p, x, y)).powi(2))
        .sum();
    (ss / pixels.len() as f64).sqrt()
}

/// Product of two truncated 1D kernels aligned at their centers, over the
/// shorter support.
fn kernel_product(a: &[f64], b: &[f64]) -> Vec<f64> {
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let shift = (long.len() - short.len()) / 2;
    short.iter().enumerate().map(|(i, s)| s * long[i + shift]).collect()
}

/// Per-pixel variance of the bandpassed map for independent input variances.
fn filtered_variance(band: &Bandpass, mask: &Grid<bool>, var: &Grid<f64>) -> Grid<f64> {
    let kh = kernel(band.r_high);
    let kl = kernel(band.r_low);
    let ones = mask.map(|&m| if m { 1.0 } else { 0.0 });
    let nh = convolve_separable(&ones, &kh);
    let nl = convolve_separable(&ones, &kl);
    let masked_var = Grid::from_fn(var.width(), var.height(), |x, y| {
        if *mask.get(x, y) {
            *var.get(x, y)
        } else {
            0.0
        }
    });
    let sq = |k: &[f64]| k.iter().map(|v| v * v).collect::<Vec<f64>>();
    let hh = convolve_separable(&masked_var, &sq(&kh));
    let ll = convolve_separable(&masked_var, &sq(&kl));
    let hl = convolve_separable(&masked_var, &kernel_product(&kh, &kl));
    Grid::from_fn(var.width(), var.height(), |x, y| {
        if !*mask.get(x, y) {
            return 0.0;
        }
        let (a, b) = (*nh.get(x, y), *nl.get(x, y));
        (hh.get(x, y) / (a * a) - 2.0 * hl.get(x, y) / (a * b) + ll.get(x, y) / (b * b)).max(0.0)
    })
}

/// Bandpass-filters `image` and fits the filter-propagated Gaussian model to
/// the result, reporting the amplitude and widths of the unfiltered spot.
/// Filtered pixels are weighted by the inverse of their propagated variance.
pub fn fit_gaussian_2d_bandpassed(
    image: &AbsorptionImage,
    band: &Bandpass,
    init: Option<&GaussianFit2D>,
) -> Result<GaussianFit2D, AnalysisError> {
    match init {
        Some(f) => fit_gaussian_2d_bandpassed_from(image, band, explicit(f)?),
        None => fit_gaussian_2d_auto(image, Some(band), None),
    }
}

/// [`fit_gaussian_2d_bandpassed`] from an explicit parameter vector. The offset
/// refers to the filtered map.
pub fn fit_gaussian_2d_bandpassed_from(
    image: &AbsorptionImage,
    band: &Bandpass,
    start: [f64; NUM_PARAMS],
) -> Result<GaussianFit2D, AnalysisError> {
    if start.iter().any(|v| !v.is_finite()) {
        return Err(AnalysisError::BadInit);
    }
    let prepared = Prepared::filtered(image, band)?;
    Ok(prepared.finish(&prepared.solve(start)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::tests::{gaussian_image, image_from};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..100 {
            let p = [
                rng.random_range(-0.05..0.05),
                rng.random_range(5.0..25.0),
                rng.random_range(5.0..25.0),
                rng.random_range(2.0..12.0),
                rng.random_range(2.0..12.0),
                rng.random_range(-0.01..0.01),
            ];
            let (x, y) = (rng.random_range(0..32usize), rng.random_range(0..32usize));
            for band in [None, Some(Bandpass::default())] {
                let model = Model::new(32, 32, band.as_ref());
                let mut g = [0.0; NUM_PARAMS];
                Model::gradient(&model.axes(&p), &p, x, y, &mut g);
                assert_eq!(g[5], 1.0);
                // The offset is additive; differencing the remainder avoids cancellation.
                let shape_part = |q: &[f64; NUM_PARAMS]| {
                    let mut q = *q;
                    q[5] = 0.0;
                    Model::value(&model.axes(&q), &q, x, y)
                };
                for j in 0..NUM_PARAMS - 1 {
                    let h = 1e-5 * p[j].abs();
                    let (mut hi, mut lo) = (p, p);
                    hi[j] += h;
                    lo[j] -= h;
                    let num = (shape_part(&hi) - shape_part(&lo)) / (2.0 * h);
                    let scale = g[j].abs().max(num.abs());
                    // Entries that vanish analytically are compared absolutely.
                    let err = if scale > 1e-12 {
                        (g[j] - num).abs() / scale
                    } else {
                        (g[j] - num).abs()
                    };
                    assert!(err < 1e-6, "param {j}: analytic {} numeric {}", g[j], num);
                }
            }
        }
    }

    #[test]
    fn noiseless_recovery() {
        let img = gaussian_image(64, 64, 0.031, 31.3, 32.6, 5.7, 5.7, 0.0);
        let fit = fit_gaussian_2d(&img, None).unwrap();
        assert!(fit.converged, "{}", fit.message);
        let truth = [0.031, 31.3, 32.6, 5.7, 5.7];
        for (got, want) in fit.params().iter().zip(truth) {
            assert!((got - want).abs() <= 1e-6 * want.abs(), "{got} vs {want}");
        }
        assert!(fit.offset.abs() < 1e-9);
        assert!(fit.residual_rms < 1e-9);
    }

    #[test]
    fn elliptical_and_negative_spots() {
        let img = gaussian_image(64, 48, -0.02, 20.0, 25.5, 4.0, 8.0, 0.003);
        let fit = fit_gaussian_2d(&img, None).unwrap();
        assert!(fit.converged);
        assert!((fit.amplitude + 0.02).abs() < 1e-8);
        assert!((fit.fwhm_x - 4.0).abs() < 1e-6 && (fit.fwhm_y - 8.0).abs() < 1e-6);
        assert!((fit.offset - 0.003).abs() < 1e-9);
    }

    #[test]
    fn bandpassed_fit_recovers_intrinsic_spot() {
        // Noiseless: the filtered model is exact up to kernel truncation and borders.
        let img = gaussian_image(128, 128, 0.031, 63.5, 64.0, 5.736, 5.736, 0.0);
        let fit = fit_gaussian_2d_bandpassed(&img, &Bandpass::default(), None).unwrap();
        assert!(fit.converged, "{}", fit.message);
        assert!(fit.filtered);
        assert!((fit.amplitude / 0.031 - 1.0).abs() < 2e-3, "{}", fit.amplitude);
        assert!((fit.fwhm_x / 5.736 - 1.0).abs() < 2e-3);
        assert!((fit.center_x - 63.5).abs() < 1e-3);
    }

    #[test]
    fn filtered_uncertainty_matches_scatter() {
        // White noise of known variance; the sandwich σ should match the
        // empirical scatter of the amplitude across realizations.
        let n = 48;
        let sigma = 0.004;
        let mut amps = Vec::new();
        let mut reported = Vec::new();
        for seed in 0..60 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let clean = gaussian_image(n, n, 0.03, 23.5, 24.0, 5.7, 5.7, 0.0);
            let mut img = image_from(clean.values.map(|v| v + sigma * rng.sample::<f64, _>(StandardNormal)));
            img.variance = Some(Grid::filled(n, n, sigma * sigma));
            let fit = fit_gaussian_2d_bandpassed(
                &img,
                &Bandpass {
                    r_high: 1.0,
                    r_low: 10.0,
                },
                None,
            )
            .unwrap();
            assert!(fit.converged);
            amps.push(fit.amplitude);
            reported.push(fit.uncertainties.amplitude);
        }
        let mean = amps.iter().sum::<f64>() / amps.len() as f64;
        let sd = (amps.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (amps.len() - 1) as f64).sqrt();
        let rep = reported.iter().sum::<f64>() / reported.len() as f64;
        assert!((rep / sd - 1.0).abs() < 0.3, "reported {rep} empirical {sd}");
        assert!((mean / 0.03 - 1.0).abs() < 0.05);
    }

    #[test]
    fn too_few_pixels() {
        let mut img = gaussian_image(8, 8, 0.03, 4.0, 4.0, 2.0, 2.0, 0.0);
        for (k, m) in img.mask.as_mut_slice().iter_mut().enumerate() {
            *m = k < 7;
        }
        assert!(matches!(
            fit_gaussian_2d(&img, None),
            Err(AnalysisError::TooFewPixels { found: 7 })
        ));
    }

    #[test]
    fn explicit_init_is_used() {
        let img = gaussian_image(40, 40, 0.03, 20.0, 18.0, 5.0, 5.0, 0.0);
        let mut init = fit_gaussian_2d(&img, None).unwrap();
        init.amplitude = 0.01;
        init.fwhm_x = 7.0;
        let fit = fit_gaussian_2d(&img, Some(&init)).unwrap();
        assert!(fit.converged);
        assert!((fit.amplitude - 0.03).abs() < 1e-8);
        init.amplitude = f64::NAN;
        assert!(matches!(
            fit_gaussian_2d(&img, Some(&init)),
            Err(AnalysisError::BadInit)
        ));
    }

    #[test]
    fn kernel_product_alignment() {
        let a = [1.0, 2.0, 3.0];
        let b = [1.0, 10.0, 20.0, 30.0, 1.0];
        assert_eq!(kernel_product(&a, &b), vec![10.0, 40.0, 90.0]);
    }

    #[test]
    fn filtered_variance_matches_explicit_sum() {
        let band = Bandpass {
            r_high: 1.0,
            r_low: 3.0,
        };
        let (w, h) = (15, 11);
        let mut mask = Grid::filled(w, h, true);
        *mask.get_mut(4, 4) = false;
        let var = Grid::from_fn(w, h, |x, y| 1.0 + 0.1 * x as f64 + 0.05 * y as f64);
        let fast = filtered_variance(&band, &mask, &var);
        let op = band.operator(&mask);
        for (px, py) in [(0, 0), (7, 5), (4, 5), (14, 10)] {
            // Row p of B is the adjoint applied to the indicator of p.
            let mut e = Grid::filled(w, h, 0.0);
            *e.get_mut(px, py) = 1.0;
            let row = op.apply_adjoint(&e);
            let slow: f64 = row.as_slice().iter().zip(var.as_slice()).map(|(b, v)| b * b * v).sum();
            assert!((fast.get(px, py) - slow).abs() < 1e-12 * slow.max(1e-300));
        }
    }

    #[test]
    fn fixed_shape_fit_recovers_amplitude_and_offset() {
        let img = gaussian_image(40, 40, 0.03, 20.3, 18.6, 5.0, 6.0, 0.002);
        let shape = SpotShape {
            center_x: 20.3,
            center_y: 18.6,
            fwhm_x: 5.0,
            fwhm_y: 6.0,
        };
        let fit = fit_gaussian_2d_with_shape(&img, None, &shape).unwrap();
        assert!(fit.converged);
        assert!((fit.amplitude - 0.03).abs() < 1e-10);
        assert!((fit.offset - 0.002).abs() < 1e-10);
        assert_eq!((fit.center_x, fit.fwhm_y), (20.3, 6.0));
        assert_eq!(fit.uncertainties.center_x, 0.0);
        assert_eq!(fit.uncertainties.fwhm_x, 0.0);
        let bad = SpotShape {
            fwhm_x: f64::NAN,
            ..shape
        };
        assert!(fit_gaussian_2d_with_shape(&img, None, &bad).is_err());
    }

    #[test]
    fn shared_shape_fit_recovers_common_spot() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let images: Vec<_> = [0.005, 0.01, 0.02, 0.04]
            .iter()
            .map(|&a| {
                let mut img = gaussian_image(40, 40, a, 19.5, 20.5, 5.5, 6.0, 0.0);
                for v in img.values.as_mut_slice() {
                    *v += 2e-4 * rng.sample::<f64, _>(StandardNormal);
                }
                img
            })
            .collect();
        let refs: Vec<_> = images.iter().collect();
        let start = SpotShape {
            center_x: 19.0,
            center_y: 21.0,
            fwhm_x: 5.0,
            fwhm_y: 5.0,
        };
        let joint = fit_shared_shape(&refs, None, &start).unwrap().unwrap();
        let s = &joint.shape;
        let got = [s.center_x, s.center_y, s.fwhm_x, s.fwhm_y];
        for (i, (g, t)) in got.iter().zip([19.5, 20.5, 5.5, 6.0]).enumerate() {
            let sd = joint.covariance[i][i].sqrt();
            assert!(sd > 0.0 && sd < 0.05, "param {i}: sd {sd}");
            assert!((g - t).abs() < 5.0 * sd, "param {i}: {g} vs {t} ({sd})");
        }
        assert!(fit_shared_shape(&[], None, &start).unwrap().is_none());
    }
}
