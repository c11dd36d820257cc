//! Weighted nonlinear least squares and the spectroscopic scan fits.

pub mod lm;
pub mod models;
mod scan;
mod series;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use lm::{minimize, LmOptions, LmOutcome, Problem, Termination};
pub use models::{ContrastSaturation, CurveModel, PowerSaturation, StepLorentzian};
pub use scan::{
    generate_scan, generate_scan_records, low_intensity_fraction, shared_shape, ScanConfig, ScanRecord, ScanRun,
    ScanShape, ScanTruth, NON_DETECTION_SIGMA, SHAPE_MIN_SIGNIFICANCE,
};
pub use series::{PointFlags, ScanKind, ScanPoint, ScanSeries, SeriesError};

#[derive(Debug, Error)]
pub enum CurveFitError {
    #[error("{model} needs at least {needed} usable points, found {found}")]
    InsufficientPoints {
        model: &'static str,
        needed: usize,
        found: usize,
    },
    #[error("{model} cannot fit a {found} series")]
    WrongKind { model: &'static str, found: ScanKind },
    #[error("initial guess must have {expected} finite values")]
    BadInit { expected: usize },
    #[error("power fit needs at least two points below P_sat/2 = {half_p_sat:.3e} W, found {found}")]
    NoLowPowerAnchor { half_p_sat: f64, found: usize },
    #[error(transparent)]
    Series(#[from] SeriesError),
    #[error(transparent)]
    Analysis(#[from] crate::analysis::AnalysisError),
    #[error(transparent)]
    Imaging(#[from] crate::imaging::ImagingError),
    #[error(transparent)]
    Physics(#[from] crate::photophysics::PhysicsError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    #[serde(with = "crate::json::float")]
    pub value: f64,
    /// 1σ.
    #[serde(with = "crate::json::float")]
    pub uncertainty: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: String,
    pub params: Vec<Param>,
    /// Quantities computed from the parameters, with propagated errors.
    pub derived: Vec<Param>,
    #[serde(with = "crate::json::matrix")]
    pub covariance: Vec<Vec<f64>>,
    #[serde(with = "crate::json::float")]
    pub chi2: f64,
    pub dof: usize,
    pub converged: bool,
    pub iterations: usize,
    pub termination: Termination,
    pub message: String,
}

impl FitResult {
    pub fn param(&self, name: &str) -> Option<&Param> {
        self.params.iter().chain(&self.derived).find(|p| p.name == name)
    }

    pub fn value(&self, name: &str) -> f64 {
        self.param(name).map_or(f64::NAN, |p| p.value)
    }

    pub fn uncertainty(&self, name: &str) -> f64 {
        self.param(name).map_or(f64::NAN, |p| p.uncertainty)
    }

    pub fn reduced_chi2(&self) -> f64 {
        self.chi2 / self.dof as f64
    }

    /// Adds a relative error `rel` shared by every data value. Scaling all
    /// values by `k` scales the first parameter of each scan model and the
    /// derived slope by `k` and leaves the rest unchanged, so the covariance
    /// gains `rel²·v·vᵀ` with `v` the first parameter's value in slot 0.
    pub fn with_scale_uncertainty(mut self, rel: f64) -> Self {
        if !(rel.is_finite() && rel > 0.0) || self.params.is_empty() {
            return self;
        }
        let v0 = self.params[0].value;
        self.covariance[0][0] += (rel * v0).powi(2);
        self.params[0].uncertainty = self.covariance[0][0].max(0.0).sqrt();
        for d in &mut self.derived {
            if d.name == "slope" {
                d.uncertainty = d.uncertainty.hypot(rel * d.value);
            }
        }
        self
    }
}

struct CurveProblem<'a> {
    model: &'a dyn CurveModel,
    points: Vec<&'a ScanPoint>,
}

impl Problem for CurveProblem<'_> {
    fn num_params(&self) -> usize {
        self.model.param_names().len()
    }

    fn num_residuals(&self) -> usize {
        self.points.len()
    }

    fn residuals(&self, params: &[f64], out: &mut [f64]) {
        for (r, p) in out.iter_mut().zip(&self.points) {
            *r = (p.value - self.model.eval(p.control, params)) / p.sigma;
        }
    }

    fn jacobian(&self, params: &[f64], out: &mut DMatrix<f64>) {
        let mut g = vec![0.0; params.len()];
        for (i, p) in self.points.iter().enumerate() {
            self.model.gradient(p.control, params, &mut g);
            for (j, gj) in g.iter().enumerate() {
                out[(i, j)] = gj / p.sigma;
            }
        }
    }

    fn project(&self, params: &mut [f64]) {
        self.model.project(params);
    }
}

/// Levenberg-Marquardt fit of `model` to the usable points of `series`,
/// minimizing `Σ((value − model)/σ)²`. Uncertainties come from `(JᵀJ)⁻¹`
/// without rescaling: the σ are taken as absolute.
pub fn least_squares(model: &dyn CurveModel, series: &ScanSeries, init: &[f64]) -> Result<FitResult, CurveFitError> {
    let n = model.param_names().len();
    if init.len() != n || init.iter().any(|v| !v.is_finite()) {
        return Err(CurveFitError::BadInit { expected: n });
    }
    let points: Vec<&ScanPoint> = series.points().iter().filter(|p| p.usable()).collect();
    if points.len() < n + 1 {
        return Err(CurveFitError::InsufficientPoints {
            model: model.name(),
            needed: n + 1,
            found: points.len(),
        });
    }
    let dof = points.len() - n;
    let problem = CurveProblem { model, points };
    let outcome = minimize(&problem, init, &LmOptions::default());
    Ok(fit_result(model, &outcome, dof))
}

fn fit_result(model: &dyn CurveModel, outcome: &LmOutcome, dof: usize) -> FitResult {
    let n = outcome.params.len();
    let covariance: Vec<Vec<f64>> = match &outcome.covariance {
        Some(c) => (0..n).map(|i| (0..n).map(|j| c[(i, j)]).collect()).collect(),
        None => vec![vec![f64::NAN; n]; n],
    };
    let params = model
        .param_names()
        .iter()
        .enumerate()
        .map(|(j, name)| Param {
            name: name.to_string(),
            value: outcome.params[j],
            uncertainty: covariance[j][j].max(0.0).sqrt(),
        })
        .collect();
    let converged = outcome.converged();
    FitResult {
        model: model.name().to_string(),
        params,
        derived: Vec::new(),
        covariance,
        chi2: outcome.cost,
        dof,
        converged,
        iterations: outcome.iterations,
        termination: outcome.termination,
        message: if converged {
            "converged".to_string()
        } else {
            format!("not converged: {:?}", outcome.termination)
        },
    }
}

/// Control value at which the piecewise-linear interpolant of `(x, y)` first
/// crosses `level` walking from the start; `log_x` interpolates in ln x.
fn crossing(points: &[(f64, f64)], level: f64, log_x: bool) -> Option<f64> {
    let tx = |x: f64| if log_x { x.ln() } else { x };
    points.windows(2).find_map(|w| {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        let straddles = (y0 - level) * (y1 - level) <= 0.0 && y0 != y1;
        straddles.then(|| {
            let t = (level - y0) / (y1 - y0);
            let x = tx(x0) + t * (tx(x1) - tx(x0));
            if log_x {
                x.exp()
            } else {
                x
            }
        })
    })
}

fn require_kind(series: &ScanSeries, kind: ScanKind, model: &'static str) -> Result<(), CurveFitError> {
    if series.kind() == kind {
        Ok(())
    } else {
        Err(CurveFitError::WrongKind {
            model,
            found: series.kind(),
        })
    }
}

/// Sorted (control, value) pairs of usable, detected points.
fn detected(series: &ScanSeries, keep: impl Fn(&ScanPoint) -> bool) -> Vec<(f64, f64)> {
    let mut pts: Vec<(f64, f64)> = series
        .points()
        .iter()
        .filter(|p| p.usable() && !p.flags.non_detection && keep(p))
        .map(|p| (p.control, p.value))
        .collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    pts
}

/// Amplitude guess: the largest value, or the largest σ when nothing is positive.
fn amplitude_guess(series: &ScanSeries, pts: &[(f64, f64)]) -> f64 {
    let max = pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    if max > 0.0 {
        max
    } else {
        series
            .points()
            .iter()
            .map(|p| p.sigma)
            .fold(f64::MIN_POSITIVE, f64::max)
    }
}

/// Fits the step-weighted Lorentzian to a detuning scan (controls in MHz).
/// Reports `amplitude` and `gamma_l` (FWHM, MHz).
pub fn fit_lineshape(series: &ScanSeries) -> Result<FitResult, CurveFitError> {
    require_kind(series, ScanKind::Detuning, StepLorentzian.name())?;
    let red = detected(series, |p| p.control < 0.0);
    let red_usable = series.points().iter().filter(|p| p.usable() && p.control < 0.0).count();
    if red_usable < 4 {
        return Err(CurveFitError::InsufficientPoints {
            model: StepLorentzian.name(),
            needed: 4,
            found: red_usable,
        });
    }
    let amplitude = amplitude_guess(series, &red);
    let far = red.first().map_or(-1.0, |p| p.0);
    let gamma = match crossing(&red, amplitude / 2.0, false) {
        Some(d) if d < 0.0 => 2.0 * d.abs(),
        _ => 4.0 * far.abs(),
    };
    least_squares(&StepLorentzian, series, &[amplitude, gamma])
}

/// Fits `C_max / (1 + I/I_sat)` to an intensity scan. A scan spanning less
/// than a factor 5 in intensity cannot separate the two parameters and is
/// reported as not converged.
pub fn fit_contrast_saturation(series: &ScanSeries) -> Result<FitResult, CurveFitError> {
    require_kind(series, ScanKind::Intensity, ContrastSaturation.name())?;
    let pts = detected(series, |p| p.control > 0.0);
    if pts.len() < 4 {
        return Err(CurveFitError::InsufficientPoints {
            model: ContrastSaturation.name(),
            needed: 4,
            found: pts.len(),
        });
    }
    let c_max = amplitude_guess(series, &pts);
    let (lo, hi) = (pts[0].0, pts[pts.len() - 1].0);
    let i_sat = crossing(&pts, c_max / 2.0, true).unwrap_or(hi);
    let mut fit = least_squares(&ContrastSaturation, series, &[c_max, i_sat])?;
    if hi / lo < 5.0 {
        fit.converged = false;
        fit.message = format!("insufficient dynamic range: intensities span only {:.2}x", hi / lo);
    }
    Ok(fit)
}

/// Fits the absorbed-power saturation curve to a power scan (controls and values
/// in W). Also reports the low-power slope `P_max/P_sat`.
pub fn fit_power_saturation(series: &ScanSeries) -> Result<FitResult, CurveFitError> {
    require_kind(series, ScanKind::Power, PowerSaturation.name())?;
    let pts = detected(series, |p| p.control > 0.0);
    if pts.len() < 4 {
        return Err(CurveFitError::InsufficientPoints {
            model: PowerSaturation.name(),
            needed: 4,
            found: pts.len(),
        });
    }
    let p_max = amplitude_guess(series, &pts);
    let p_sat = crossing(&pts, p_max / 2.0, true)
        .unwrap_or(pts[pts.len() - 1].0)
        .max(p_max);
    let mut fit = least_squares(&PowerSaturation, series, &[p_max, p_sat])?;

    let (pm, ps) = (fit.params[0].value, fit.params[1].value);
    let anchors = pts.iter().filter(|p| p.0 < ps / 2.0).count();
    if anchors < 2 {
        return Err(CurveFitError::NoLowPowerAnchor {
            half_p_sat: ps / 2.0,
            found: anchors,
        });
    }
    let c = &fit.covariance;
    let slope = pm / ps;
    let rel_var = c[0][0] / (pm * pm) + c[1][1] / (ps * ps) - 2.0 * c[0][1] / (pm * ps);
    fit.derived.push(Param {
        name: "slope".to_string(),
        value: slope,
        uncertainty: slope * rel_var.max(0.0).sqrt(),
    });
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synth(kind: ScanKind, model: &dyn CurveModel, truth: &[f64], controls: &[f64], sigma: f64) -> ScanSeries {
        let points = controls
            .iter()
            .map(|&x| {
                let mut p = ScanPoint::new(x, model.eval(x, truth), sigma);
                if kind == ScanKind::Detuning && x >= 0.0 {
                    p.flags.non_detection = true;
                    p.sigma = NON_DETECTION_SIGMA;
                }
                p
            })
            .collect();
        ScanSeries::new(kind, points).unwrap()
    }

    fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
    }

    fn logspace(a: f64, b: f64, n: usize) -> Vec<f64> {
        linspace(a.ln(), b.ln(), n).into_iter().map(f64::exp).collect()
    }

    #[test]
    fn lineshape_exact_recovery() {
        let s = synth(
            ScanKind::Detuning,
            &StepLorentzian,
            &[0.03, 35.0],
            &linspace(-40.0, 0.0, 12),
            0.001,
        );
        let fit = fit_lineshape(&s).unwrap();
        assert!(fit.converged);
        assert!((fit.value("amplitude") - 0.03).abs() < 1e-10);
        assert!((fit.value("gamma_l") - 35.0).abs() < 1e-7);
        assert!(fit.chi2 < 1e-16);
        assert_eq!(fit.dof, 10);
    }

    #[test]
    fn lineshape_needs_red_points() {
        let s = synth(
            ScanKind::Detuning,
            &StepLorentzian,
            &[0.03, 35.0],
            &[-3.0, -2.0, -1.0, 0.0, 1.0],
            0.001,
        );
        assert!(matches!(
            fit_lineshape(&s),
            Err(CurveFitError::InsufficientPoints { found: 3, .. })
        ));
        let wrong = synth(
            ScanKind::Power,
            &StepLorentzian,
            &[0.03, 35.0],
            &[-3.0, -2.0, -1.0, -0.5],
            0.001,
        );
        assert!(matches!(fit_lineshape(&wrong), Err(CurveFitError::WrongKind { .. })));
    }

    #[test]
    fn fitted_lineshape_vanishes_for_blue_detuning() {
        let s = synth(
            ScanKind::Detuning,
            &StepLorentzian,
            &[0.03, 35.0],
            &linspace(-40.0, 0.0, 12),
            0.001,
        );
        let fit = fit_lineshape(&s).unwrap();
        let p = [fit.value("amplitude"), fit.value("gamma_l")];
        for d in [0.0, 0.1, 1.0, 8.0, 100.0] {
            assert_eq!(StepLorentzian.eval(d, &p), 0.0);
        }
    }

    #[test]
    fn contrast_saturation_exact_recovery() {
        let s = synth(
            ScanKind::Intensity,
            &ContrastSaturation,
            &[0.032, 585.0],
            &logspace(50.0, 2000.0, 8),
            0.001,
        );
        let fit = fit_contrast_saturation(&s).unwrap();
        assert!(fit.converged);
        assert!((fit.value("c_max") - 0.032).abs() < 1e-10);
        assert!((fit.value("i_sat") - 585.0).abs() < 1e-6);
    }

    #[test]
    fn contrast_saturation_needs_range() {
        let s = synth(
            ScanKind::Intensity,
            &ContrastSaturation,
            &[0.032, 585.0],
            &linspace(400.0, 1000.0, 6),
            0.001,
        );
        let fit = fit_contrast_saturation(&s).unwrap();
        assert!(!fit.converged);
        assert!(fit.message.contains("dynamic range"));
    }

    #[test]
    fn power_saturation_exact_recovery() {
        let truth = [33e-12, 110e-12];
        let s = synth(
            ScanKind::Power,
            &PowerSaturation,
            &truth,
            &logspace(5e-12, 600e-12, 10),
            1e-12,
        );
        let fit = fit_power_saturation(&s).unwrap();
        assert!(fit.converged);
        assert!((fit.value("p_max") / 33e-12 - 1.0).abs() < 1e-9);
        assert!((fit.value("slope") - 0.3).abs() < 1e-9);
        assert!(fit.value("slope") <= 1.0);
    }

    #[test]
    fn power_saturation_needs_low_anchor() {
        let truth = [33e-12, 50e-12];
        let s = synth(
            ScanKind::Power,
            &PowerSaturation,
            &truth,
            &logspace(40e-12, 600e-12, 6),
            1e-12,
        );
        assert!(matches!(
            fit_power_saturation(&s),
            Err(CurveFitError::NoLowPowerAnchor { .. })
        ));
    }

    #[test]
    fn slope_bound_is_enforced() {
        // Data that would prefer a slope above one.
        let s = synth(
            ScanKind::Power,
            &PowerSaturation,
            &[100e-12, 50e-12],
            &logspace(1e-12, 400e-12, 10),
            1e-12,
        );
        let fit = fit_power_saturation(&s).unwrap();
        assert!(fit.value("slope") <= 1.0 + 1e-12);
    }

    #[test]
    fn fit_result_serializes() {
        let s = synth(
            ScanKind::Intensity,
            &ContrastSaturation,
            &[0.032, 585.0],
            &logspace(50.0, 2000.0, 8),
            0.001,
        );
        let fit = fit_contrast_saturation(&s).unwrap();
        let json = serde_json::to_string(&fit).unwrap();
        assert!(json.starts_with(r#"{"model":"contrast-saturation","params":[{"name":"c_max""#));
        let back: FitResult = serde_json::from_str(&json).unwrap();
        assert_eq!(back, fit);
    }

    #[test]
    fn crossing_interpolates() {
        let pts = [(1.0, 4.0), (2.0, 2.0), (3.0, 0.0)];
        assert_eq!(crossing(&pts, 3.0, false), Some(1.5));
        assert_eq!(crossing(&pts, 5.0, false), None);
        let x = crossing(&[(1.0, 1.0), (100.0, 0.0)], 0.5, true).unwrap();
        assert!((x - 10.0).abs() < 1e-12);
    }

    #[test]
    fn scale_uncertainty_adds_to_first_parameter_and_slope() {
        let s = synth(
            ScanKind::Intensity,
            &ContrastSaturation,
            &[0.05, 509.0],
            &logspace(50.0, 4000.0, 8),
            0.001,
        );
        let fit = fit_contrast_saturation(&s).unwrap();
        let widened = fit.clone().with_scale_uncertainty(0.1);
        let (u0, v0) = (fit.params[0].uncertainty, fit.params[0].value);
        assert!((widened.params[0].uncertainty - u0.hypot(0.1 * v0)).abs() < 1e-12 * v0);
        assert_eq!(widened.params[1].uncertainty, fit.params[1].uncertainty);
        assert_eq!(widened.covariance[0][1], fit.covariance[0][1]);
        let same = fit.clone().with_scale_uncertainty(0.0);
        assert_eq!(same.params[0].uncertainty, u0);
        assert_eq!(same.covariance, fit.covariance);

        let s = synth(
            ScanKind::Power,
            &PowerSaturation,
            &[33e-12, 110e-12],
            &logspace(5e-12, 600e-12, 10),
            1e-12,
        );
        let fit = fit_power_saturation(&s).unwrap();
        let slope = |f: &FitResult| f.derived.iter().find(|d| d.name == "slope").unwrap().clone();
        let (before, after) = (slope(&fit), slope(&fit.clone().with_scale_uncertainty(0.02)));
        assert_eq!(after.value, before.value);
        assert!((after.uncertainty - before.uncertainty.hypot(0.02 * before.value)).abs() < 1e-12);
    }
}
