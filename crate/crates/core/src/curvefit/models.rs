//! Spectroscopic response models fitted to scan series.

/// A scalar model `f(control; params)` with an analytic parameter gradient.
pub trait CurveModel: Sync {
    fn name(&self) -> &'static str;

    fn param_names(&self) -> &'static [&'static str];

    fn eval(&self, x: f64, params: &[f64]) -> f64;

    fn gradient(&self, x: f64, params: &[f64], out: &mut [f64]);

    /// Maps parameters onto the model's admissible region.
    fn project(&self, _params: &mut [f64]) {}
}

/// Red-side Lorentzian cut off by a hard step at zero detuning:
/// `C(δ) = A / (1 + 4δ²/γ²)` for `δ < 0` and exactly `0` otherwise.
/// Parameters `[A, γ]`, with γ the FWHM in the control's unit (MHz).
#[derive(Debug, Clone, Copy, Default)]
pub struct StepLorentzian;

impl CurveModel for StepLorentzian {
    fn name(&self) -> &'static str {
        "step-lorentzian"
    }

    fn param_names(&self) -> &'static [&'static str] {
        &["amplitude", "gamma_l"]
    }

    fn eval(&self, delta: f64, p: &[f64]) -> f64 {
        if delta >= 0.0 {
            return 0.0;
        }
        let u = 2.0 * delta / p[1];
        p[0] / (1.0 + u * u)
    }

    fn gradient(&self, delta: f64, p: &[f64], out: &mut [f64]) {
        if delta >= 0.0 {
            out[0] = 0.0;
            out[1] = 0.0;
            return;
        }
        let (a, g) = (p[0], p[1]);
        let u2 = 4.0 * delta * delta / (g * g);
        let d = 1.0 + u2;
        out[0] = 1.0 / d;
        out[1] = a * 2.0 * u2 / (g * d * d);
    }

    fn project(&self, p: &mut [f64]) {
        p[1] = p[1].abs().max(f64::MIN_POSITIVE);
    }
}

/// Contrast bleaching with intensity: `C(I) = C_max / (1 + I/I_sat)`.
/// Parameters `[C_max, I_sat]`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ContrastSaturation;

impl CurveModel for ContrastSaturation {
    fn name(&self) -> &'static str {
        "contrast-saturation"
    }

    fn param_names(&self) -> &'static [&'static str] {
        &["c_max", "i_sat"]
    }

    fn eval(&self, i: f64, p: &[f64]) -> f64 {
        p[0] / (1.0 + i / p[1])
    }

    fn gradient(&self, i: f64, p: &[f64], out: &mut [f64]) {
        let d = 1.0 + i / p[1];
        out[0] = 1.0 / d;
        out[1] = p[0] * i / (p[1] * p[1] * d * d);
    }

    fn project(&self, p: &mut [f64]) {
        p[1] = p[1].abs().max(f64::MIN_POSITIVE);
    }
}

/// Absorbed power against power incident on σ₀:
/// `P_abs = P_max · (P_in/P_sat) / (1 + P_in/P_sat)`.
/// Parameters `[P_max, P_sat]`. The low-power slope `P_max/P_sat` is held at or
/// below 1.
#[derive(Debug, Clone, Copy, Default)]
pub struct PowerSaturation;

impl CurveModel for PowerSaturation {
    fn name(&self) -> &'static str {
        "power-saturation"
    }

    fn param_names(&self) -> &'static [&'static str] {
        &["p_max", "p_sat"]
    }

    fn eval(&self, x: f64, p: &[f64]) -> f64 {
        p[0] * x / (p[1] + x)
    }

    fn gradient(&self, x: f64, p: &[f64], out: &mut [f64]) {
        let d = p[1] + x;
        out[0] = x / d;
        out[1] = -p[0] * x / (d * d);
    }

    fn project(&self, p: &mut [f64]) {
        p[1] = p[1].abs().max(f64::MIN_POSITIVE);
        if p[1] < p[0] {
            p[1] = p[0];
        }
    }
}
