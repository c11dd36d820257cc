//! Masked Gaussian smoothing and the two-step bandpass.
//!
//! A "radius" is the standard deviation of the Gaussian kernel in pixels. The
//! kernel is truncated at ±4σ and normalized after truncation. Masked pixels and
//! pixels outside the frame do not contribute; each output pixel is renormalized
//! by the kernel weight that did.

use super::{AbsorptionImage, AnalysisError};
use crate::grid::Grid;

/// Truncated, normalized 1D Gaussian taps for offsets `-half..=half`.
pub(crate) fn kernel(sigma: f64) -> Vec<f64> {
    let half = (4.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-half..=half)
        .map(|i| (-(i as f64).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / sum).collect()
}

/// Zero-padded separable convolution of `data` with `taps` along both axes.
pub(crate) fn convolve_separable(data: &Grid<f64>, taps: &[f64]) -> Grid<f64> {
    let (w, h) = (data.width(), data.height());
    let half = taps.len() / 2;
    // Taps k that land inside 0..n for output index i: i + k − half ∈ [0, n).
    let range = |i: usize, n: usize| half.saturating_sub(i)..taps.len().min(n + half - i);
    let mut tmp = Grid::filled(w, h, 0.0);
    for (src, dst) in data.rows().zip(tmp.as_mut_slice().chunks_mut(w)) {
        for (x, out) in dst.iter_mut().enumerate() {
            let r = range(x, w);
            let start = x + r.start - half;
            *out = taps[r.clone()]
                .iter()
                .zip(&src[start..start + r.len()])
                .map(|(t, v)| t * v)
                .sum();
        }
    }
    let mut out = Grid::filled(w, h, 0.0);
    let src = tmp.as_slice();
    for (y, dst) in out.as_mut_slice().chunks_mut(w).enumerate() {
        for k in range(y, h) {
            let row = &src[(y + k - half) * w..][..w];
            let t = taps[k];
            for (o, v) in dst.iter_mut().zip(row) {
                *o += t * v;
            }
        }
    }
    out
}

/// A masked, renormalized Gaussian blur bound to one mask. Linear in the image
/// values, so it also exposes its adjoint.
pub(crate) struct MaskedBlur {
    taps: Vec<f64>,
    mask: Grid<bool>,
    /// Kernel weight landing on valid pixels, per output pixel.
    norm: Grid<f64>,
}

impl MaskedBlur {
    pub(crate) fn new(sigma: f64, mask: &Grid<bool>) -> Self {
        let taps = kernel(sigma);
        let norm = convolve_separable(&mask.map(|&m| if m { 1.0 } else { 0.0 }), &taps);
        Self {
            taps,
            mask: mask.clone(),
            norm,
        }
    }

    fn masked(&self, values: &Grid<f64>) -> Grid<f64> {
        Grid::from_fn(values.width(), values.height(), |x, y| {
            if *self.mask.get(x, y) {
                *values.get(x, y)
            } else {
                0.0
            }
        })
    }

    /// Output is zero wherever the input mask is unset.
    pub(crate) fn apply(&self, values: &Grid<f64>) -> Grid<f64> {
        let num = convolve_separable(&self.masked(values), &self.taps);
        Grid::from_fn(values.width(), values.height(), |x, y| {
            let n = *self.norm.get(x, y);
            if *self.mask.get(x, y) && n > 0.0 {
                num.get(x, y) / n
            } else {
                0.0
            }
        })
    }

    /// Adjoint of [`apply`](Self::apply) with respect to the plain dot product.
    pub(crate) fn apply_adjoint(&self, values: &Grid<f64>) -> Grid<f64> {
        let scaled = Grid::from_fn(values.width(), values.height(), |x, y| {
            let n = *self.norm.get(x, y);
            if *self.mask.get(x, y) && n > 0.0 {
                values.get(x, y) / n
            } else {
                0.0
            }
        });
        self.masked(&convolve_separable(&scaled, &self.taps))
    }
}

/// Gaussian smoothing with standard deviation `radius` pixels. Radius 0 is the
/// identity. The mask is carried through unchanged.
pub fn gaussian_blur(image: &AbsorptionImage, radius: f64) -> Result<AbsorptionImage, AnalysisError> {
    if !(radius.is_finite() && radius >= 0.0) {
        return Err(AnalysisError::BadRadius { radius });
    }
    if radius == 0.0 {
        return Ok(image.clone());
    }
    let blur = MaskedBlur::new(radius, &image.mask);
    Ok(AbsorptionImage {
        values: blur.apply(&image.values),
        ..image.clone()
    })
}

/// The two-step bandpass: `blur(r_high) − blur(r_low)`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Bandpass {
    /// Noise-removing radius, px.
    pub r_high: f64,
    /// Background-removing radius, px.
    pub r_low: f64,
}

impl Default for Bandpass {
    fn default() -> Self {
        Self {
            r_high: 1.0,
            r_low: 20.0,
        }
    }
}

impl Bandpass {
    pub fn validate(&self) -> Result<(), AnalysisError> {
        if self.r_high > 0.0 && self.r_high < self.r_low && self.r_low.is_finite() {
            Ok(())
        } else {
            Err(AnalysisError::BadBandpass {
                r_high: self.r_high,
                r_low: self.r_low,
            })
        }
    }

    pub(crate) fn operator(&self, mask: &Grid<bool>) -> BandpassOperator {
        BandpassOperator {
            high: MaskedBlur::new(self.r_high, mask),
            low: MaskedBlur::new(self.r_low, mask),
        }
    }
}

pub(crate) struct BandpassOperator {
    high: MaskedBlur,
    low: MaskedBlur,
}

impl BandpassOperator {
    pub(crate) fn apply(&self, values: &Grid<f64>) -> Grid<f64> {
        let a = self.high.apply(values);
        let b = self.low.apply(values);
        Grid::from_fn(values.width(), values.height(), |x, y| a.get(x, y) - b.get(x, y))
    }

    pub(crate) fn apply_adjoint(&self, values: &Grid<f64>) -> Grid<f64> {
        let a = self.high.apply_adjoint(values);
        let b = self.low.apply_adjoint(values);
        Grid::from_fn(values.width(), values.height(), |x, y| a.get(x, y) - b.get(x, y))
    }
}

/// Removes pixel-scale noise and large-scale background:
/// `blur(image, r_high) − blur(image, r_low)`.
pub fn bandpass_filter(image: &AbsorptionImage, r_high: f64, r_low: f64) -> Result<AbsorptionImage, AnalysisError> {
    let band = Bandpass { r_high, r_low };
    band.validate()?;
    Ok(AbsorptionImage {
        values: band.operator(&image.mask).apply(&image.values),
        ..image.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::tests::{gaussian_image, image_from};

    #[test]
    fn radius_zero_is_identity() {
        let img = gaussian_image(32, 32, 0.03, 15.3, 16.1, 5.0, 6.0, 0.001);
        assert_eq!(gaussian_blur(&img, 0.0).unwrap(), img);
        assert!(gaussian_blur(&img, -1.0).is_err());
        assert!(gaussian_blur(&img, f64::NAN).is_err());
    }

    #[test]
    fn constant_image_is_unchanged() {
        let mut img = image_from(Grid::filled(40, 30, 0.25));
        *img.mask.get_mut(3, 4) = false;
        *img.mask.get_mut(20, 20) = false;
        for r in [0.5, 1.0, 3.0, 20.0] {
            let out = gaussian_blur(&img, r).unwrap();
            for (v, m) in out.values.as_slice().iter().zip(out.mask.as_slice()) {
                if *m {
                    assert!((v - 0.25).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn delta_function_becomes_unit_sum_discrete_gaussian() {
        let mut g = Grid::filled(31, 31, 0.0);
        *g.get_mut(15, 15) = 1.0;
        let out = gaussian_blur(&image_from(g), 1.0).unwrap();
        let sum: f64 = out.values.as_slice().iter().sum();
        assert!((sum - 1.0).abs() < 1e-14);
        // Direct kernel-sum oracle: taps ∝ exp(−i²/2), |i| ≤ 4.
        let norm: f64 = (-4..=4).map(|i: i32| (-(i * i) as f64 / 2.0).exp()).sum();
        for dx in -4i32..=4 {
            for dy in -4i32..=4 {
                let expected = (-((dx * dx + dy * dy) as f64) / 2.0).exp() / (norm * norm);
                let got = out.values.get((15 + dx) as usize, (15 + dy) as usize);
                assert!((got - expected).abs() < 1e-15);
            }
        }
        assert_eq!(*out.values.get(15 + 5, 15), 0.0);
    }

    #[test]
    fn bandpass_removes_constant_and_gradient() {
        let img = image_from(Grid::filled(64, 64, 0.7));
        let out = bandpass_filter(&img, 1.0, 20.0).unwrap();
        assert!(out.values.as_slice().iter().all(|v| v.abs() < 1e-13));
        // A linear ramp is removed exactly wherever both truncated kernels fit
        // inside the frame (80 px margin for r_low = 20).
        let ramp = image_from(Grid::from_fn(201, 201, |x, y| 0.01 * x as f64 - 0.003 * y as f64));
        let out = bandpass_filter(&ramp, 1.0, 20.0).unwrap();
        for y in 80..121 {
            for x in 80..121 {
                assert!(out.values.get(x, y).abs() < 1e-12, "{}", out.values.get(x, y));
            }
        }
    }

    #[test]
    fn bandpass_ordering_is_enforced() {
        let img = image_from(Grid::filled(8, 8, 0.0));
        assert!(bandpass_filter(&img, 20.0, 1.0).is_err());
        assert!(bandpass_filter(&img, 0.0, 1.0).is_err());
        assert!(bandpass_filter(&img, 2.0, 2.0).is_err());
    }

    #[test]
    fn checkerboard_is_suppressed() {
        let img = image_from(Grid::from_fn(
            64,
            64,
            |x, y| if (x + y) % 2 == 0 { 0.01 } else { -0.01 },
        ));
        let out = bandpass_filter(&img, 1.0, 20.0).unwrap();
        // Nyquist transfer of the σ=1 kernel is Π over axes of Σ k_i (−1)^i ≈ 1e-4.
        let max_in = 0.01;
        let mut max_out = 0.0f64;
        for y in 20..44 {
            for x in 20..44 {
                max_out = max_out.max(out.values.get(x, y).abs());
            }
        }
        assert!(max_out < max_in / 5.0, "{max_out}");
        let taps = kernel(1.0);
        let nyquist: f64 = taps
            .iter()
            .enumerate()
            .map(|(i, t)| if i % 2 == 0 { *t } else { -*t })
            .sum::<f64>()
            .abs();
        assert!((max_out - max_in * nyquist * nyquist).abs() < 1e-6);
    }

    #[test]
    fn adjoint_identity() {
        let mut mask = Grid::filled(23, 17, true);
        *mask.get_mut(5, 5) = false;
        *mask.get_mut(0, 16) = false;
        let op = Bandpass {
            r_high: 1.0,
            r_low: 4.0,
        }
        .operator(&mask);
        let u = Grid::from_fn(23, 17, |x, y| ((x * 7 + y * 3) % 11) as f64 - 5.0);
        let v = Grid::from_fn(23, 17, |x, y| ((x * 5 + y * 13) % 7) as f64 * 0.3);
        let dot =
            |a: &Grid<f64>, b: &Grid<f64>| -> f64 { a.as_slice().iter().zip(b.as_slice()).map(|(p, q)| p * q).sum() };
        let lhs = dot(&op.apply(&u), &v);
        let rhs = dot(&u, &op.apply_adjoint(&v));
        assert!((lhs - rhs).abs() < 1e-12 * lhs.abs().max(1.0));
    }
}
