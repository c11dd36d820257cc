//! Run configuration: every experiment parameter in reporting units, a flat
//! `key = value` file format, and the conversion into library types.
//!
//! Units at the boundary: MHz for detuning, W/m² for intensity, nW for beam
//! power, nm for lengths, s for exposure.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use shadowcast::analysis::{AnalysisOptions, Bandpass};
use shadowcast::curvefit::{low_intensity_fraction, ScanConfig, ScanKind, ScanTruth};
use shadowcast::imaging::{BeamProfile, CameraModel, Etalon, ImagingSystem, IonSpotModel, PairMode, Scene};
use shadowcast::photophysics::{max_absorbed_power, resonant_cross_section, TransitionParams};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Spacing {
    Linear,
    Log,
}

/// The complete resolved configuration of one run. Serializes to a flat JSON
/// object whose keys are also the keys of the config file format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub keep_frames: bool,

    pub lambda_nm: f64,
    pub tau_ns: f64,
    pub kappa_pol: f64,
    pub detuning_mhz: f64,
    /// Intensity at the atom for the constants table, W/m².
    pub intensity: f64,

    pub beam_power_nw: f64,
    pub beam_fwhm_nm: f64,
    pub beam_jitter_nm: f64,

    pub na: f64,
    pub magnification: f64,
    pub psf_fwhm_nm: f64,
    pub transmission: f64,
    /// Zero disables the etalon ripple.
    pub etalon_amplitude: f64,
    pub etalon_period_nm: f64,
    pub etalon_phase: f64,

    pub pixel_pitch_nm: f64,
    pub qe: f64,
    pub read_noise_e: f64,
    pub binning: u32,
    pub exposure_s: f64,
    pub full_well_e: f64,
    pub gain: f64,
    pub bit_depth: u32,
    pub width: usize,
    pub height: usize,
    pub pair_mode: PairMode,

    pub contrast: f64,
    pub spot_fwhm_x_nm: f64,
    pub spot_fwhm_y_nm: f64,
    pub ion_x_nm: f64,
    pub ion_y_nm: f64,

    pub filter: bool,
    pub bandpass_high_px: f64,
    pub bandpass_low_px: f64,
    pub count_floor: f64,

    /// Scan range in the control's unit; W/m² of incident intensity for power
    /// scans. Unset values take the per-kind defaults.
    pub scan_start: Option<f64>,
    pub scan_stop: Option<f64>,
    pub scan_points: Option<usize>,
    pub scan_spacing: Option<Spacing>,
    pub fill_fraction: f64,
    pub min_exposure_s: f64,
    /// Measure scan amplitudes with one spot shape shared by all points.
    pub shared_shape: bool,

    pub truth_amplitude: f64,
    pub truth_gamma_mhz: f64,
    pub truth_c_max: f64,
    pub truth_i_sat: f64,
    /// Unset: `hc/(2λτ)`.
    pub truth_p_max_pw: Option<f64>,
    /// Low-intensity slope `P_max/P_sat`. Unset: `σ_eff/σ₀` at the detuning.
    pub truth_slope: Option<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("."),
            keep_frames: false,
            lambda_nm: 369.5,
            tau_ns: 8.1,
            kappa_pol: 0.5,
            detuning_mhz: -8.0,
            intensity: 570.0,
            beam_power_nw: 15.0,
            beam_fwhm_nm: 4800.0,
            beam_jitter_nm: 0.0,
            na: 0.64,
            magnification: 615.0,
            psf_fwhm_nm: 440.0,
            transmission: 0.06,
            etalon_amplitude: 0.0,
            etalon_period_nm: 2000.0,
            etalon_phase: 0.0,
            pixel_pitch_nm: 13_000.0,
            qe: 0.35,
            read_noise_e: 10.0,
            binning: 4,
            exposure_s: 1.0,
            full_well_e: 250_000.0,
            gain: 4.0,
            bit_depth: 16,
            width: 128,
            height: 128,
            pair_mode: PairMode::Sequential,
            contrast: 0.031,
            spot_fwhm_x_nm: 485.0,
            spot_fwhm_y_nm: 485.0,
            ion_x_nm: 0.0,
            ion_y_nm: 0.0,
            filter: true,
            bandpass_high_px: 1.0,
            bandpass_low_px: 20.0,
            count_floor: 100.0,
            scan_start: None,
            scan_stop: None,
            scan_points: None,
            scan_spacing: None,
            fill_fraction: 0.8,
            min_exposure_s: 0.05,
            shared_shape: true,
            truth_amplitude: 0.03,
            truth_gamma_mhz: 35.0,
            truth_c_max: 0.032,
            truth_i_sat: 585.0,
            truth_p_max_pw: None,
            truth_slope: None,
        }
    }
}

/// One `key = value` assignment with the line it came from; line 0 marks a
/// command-line `--set`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    pub line: usize,
    pub key: String,
    pub value: String,
}

impl Assignment {
    fn origin(&self) -> String {
        if self.line == 0 {
            "--set".to_string()
        } else {
            format!("line {}", self.line)
        }
    }
}

/// Parses the flat config format: one `key = value` per line, `#` starts a
/// comment, blank lines are ignored. Keys are not checked here.
pub fn parse_assignments(text: &str) -> Result<Vec<Assignment>, CliError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split_once('#').map_or(raw, |(before, _)| before).trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("line {line}: expected key = value, found {content:?}")))?;
        let key = key.trim();
        if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            return Err(CliError::Config(format!("line {line}: invalid key {key:?}")));
        }
        out.push(Assignment {
            line,
            key: key.to_string(),
            value: value.trim().to_string(),
        });
    }
    Ok(out)
}

/// Parses a duration with an optional unit suffix (`s`, `ms`, `us`, `µs`, `ns`,
/// `ps`) into nanoseconds. A bare number is in nanoseconds.
pub fn parse_duration_ns(text: &str) -> Result<f64, CliError> {
    let t = text.trim();
    let split = t.find(|c: char| c.is_alphabetic() || c == 'µ').unwrap_or(t.len());
    let (num, unit) = t.split_at(split);
    let scale = match unit.trim() {
        "s" => 1e9,
        "ms" => 1e6,
        "us" | "µs" => 1e3,
        "" | "ns" => 1.0,
        "ps" => 1e-3,
        other => return Err(CliError::Config(format!("unknown time unit {other:?} in {text:?}"))),
    };
    let v: f64 = num
        .trim()
        .parse()
        .map_err(|_| CliError::Config(format!("not a duration: {text:?}")))?;
    if !v.is_finite() {
        return Err(CliError::Config(format!("not a duration: {text:?}")));
    }
    Ok(v * scale)
}

/// Types `text` like the default value of its key; `Null` marks optional keys.
fn typed_value(kind: &Value, text: &str) -> Value {
    let parse_number = || -> Option<Value> {
        if let Ok(u) = text.parse::<u64>() {
            return Some(Value::from(u));
        }
        text.parse::<f64>()
            .ok()
            .and_then(serde_json::Number::from_f64)
            .map(Value::Number)
    };
    match kind {
        Value::Bool(_) => match text {
            "true" | "yes" | "on" | "1" => Value::Bool(true),
            "false" | "no" | "off" | "0" => Value::Bool(false),
            _ => Value::String(text.to_string()),
        },
        Value::Number(_) => parse_number().unwrap_or_else(|| Value::String(text.to_string())),
        Value::Null if text.is_empty() || text == "none" || text == "auto" => Value::Null,
        Value::Null => parse_number().unwrap_or_else(|| Value::String(text.to_string())),
        _ => Value::String(text.to_string()),
    }
}

impl RunConfig {
    fn as_map(&self) -> Map<String, Value> {
        match serde_json::to_value(self).expect("config serializes") {
            Value::Object(m) => m,
            _ => unreachable!("config is a struct"),
        }
    }

    /// Applies assignments in order; later ones win. Unknown keys and values
    /// of the wrong type are errors.
    pub fn apply<'a>(&mut self, assignments: impl IntoIterator<Item = &'a Assignment>) -> Result<(), CliError> {
        let defaults = Self::default().as_map();
        let mut map = self.as_map();
        for a in assignments {
            let kind = defaults
                .get(&a.key)
                .ok_or_else(|| CliError::Config(format!("{}: unknown key {:?}", a.origin(), a.key)))?;
            let value = typed_value(kind, &a.value);
            let mut probe = map.clone();
            probe.insert(a.key.clone(), value.clone());
            serde_json::from_value::<RunConfig>(Value::Object(probe))
                .map_err(|e| CliError::Config(format!("{}: bad value {:?} for {}: {e}", a.origin(), a.value, a.key)))?;
            map.insert(a.key.clone(), value);
        }
        *self = serde_json::from_value(Value::Object(map)).expect("checked above");
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        self.apply(&[Assignment {
            line: 0,
            key: key.to_string(),
            value: value.to_string(),
        }])
    }

    /// Loads a config file: either the flat format or a JSON document that is
    /// a config echo (a `RunConfig` object, or any object with a `config` key).
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_text(&text)
    }

    pub fn from_text(text: &str) -> Result<Self, CliError> {
        if text.trim_start().starts_with('{') {
            let mut doc: Value =
                serde_json::from_str(text).map_err(|e| CliError::Config(format!("config JSON: {e}")))?;
            if let Some(inner) = doc.get_mut("config") {
                doc = inner.take();
            }
            return serde_json::from_value(doc).map_err(|e| CliError::Config(format!("config JSON: {e}")));
        }
        let mut config = Self::default();
        config.apply(&parse_assignments(text)?)?;
        Ok(config)
    }

    /// The config in the flat file format, keys in declaration order.
    pub fn to_flat(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.as_map() {
            let v = match v {
                Value::Null => "auto".to_string(),
                Value::String(s) => s,
                other => other.to_string(),
            };
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    pub fn transition(&self) -> Result<TransitionParams, CliError> {
        Ok(TransitionParams::new(
            self.lambda_nm / 1e9,
            self.tau_ns / 1e9,
            self.kappa_pol,
        )?)
    }

    pub fn scene(&self) -> Result<Scene, CliError> {
        let scene = Scene {
            transition: self.transition()?,
            beam: BeamProfile {
                power: self.beam_power_nw / 1e9,
                fwhm: self.beam_fwhm_nm / 1e9,
                center: (0.0, 0.0),
                pointing_jitter_rms: self.beam_jitter_nm / 1e9,
            },
            imaging: ImagingSystem {
                na: self.na,
                magnification: self.magnification,
                psf_fwhm: self.psf_fwhm_nm / 1e9,
                transmission: self.transmission,
                etalon: (self.etalon_amplitude != 0.0).then_some(Etalon {
                    amplitude: self.etalon_amplitude,
                    period: self.etalon_period_nm / 1e9,
                    phase: self.etalon_phase,
                }),
            },
            camera: CameraModel {
                pixel_pitch: self.pixel_pitch_nm / 1e9,
                qe: self.qe,
                read_noise: self.read_noise_e,
                binning: self.binning,
                exposure: self.exposure_s,
                full_well: self.full_well_e,
                gain: self.gain,
                bit_depth: self.bit_depth,
            },
            ion: IonSpotModel {
                peak_contrast: self.contrast,
                fwhm_x: self.spot_fwhm_x_nm / 1e9,
                fwhm_y: self.spot_fwhm_y_nm / 1e9,
                center: (self.ion_x_nm / 1e9, self.ion_y_nm / 1e9),
                shelved: false,
            },
            width: self.width,
            height: self.height,
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn analysis_options(&self) -> Result<AnalysisOptions, CliError> {
        let bandpass = Bandpass {
            r_high: self.bandpass_high_px,
            r_low: self.bandpass_low_px,
        };
        bandpass.validate()?;
        if !(self.count_floor.is_finite() && self.count_floor >= 0.0) {
            return Err(CliError::Config(format!(
                "count_floor must be non-negative, got {}",
                self.count_floor
            )));
        }
        Ok(AnalysisOptions {
            floor: self.count_floor,
            bandpass: self.filter.then_some(bandpass),
            search: None,
            shape: None,
        })
    }

    pub fn truth(&self, kind: ScanKind) -> Result<ScanTruth, CliError> {
        Ok(match kind {
            ScanKind::Detuning => ScanTruth::StepLorentzian {
                amplitude: self.truth_amplitude,
                gamma_l: self.truth_gamma_mhz,
            },
            ScanKind::Intensity => ScanTruth::ContrastSaturation {
                c_max: self.truth_c_max,
                i_sat: self.truth_i_sat,
            },
            ScanKind::Power => {
                let t = self.transition()?;
                let p_max = self.truth_p_max_pw.map_or_else(|| max_absorbed_power(&t), |p| p / 1e12);
                let slope = match self.truth_slope {
                    Some(s) => s,
                    None => low_intensity_fraction(&t, self.detuning_mhz)?,
                };
                if !(slope > 0.0 && slope <= 1.0 && p_max > 0.0) {
                    return Err(CliError::Config(format!(
                        "power truth needs 0 < slope <= 1 and P_max > 0, got {slope} and {p_max}"
                    )));
                }
                ScanTruth::PowerSaturation {
                    p_max,
                    p_sat: p_max / slope,
                }
            }
        })
    }

    /// Control values of a scan of `kind`, in the series unit (W for power
    /// scans, from the configured intensity range times σ₀).
    pub fn controls(&self, kind: ScanKind) -> Result<Vec<f64>, CliError> {
        let (start, stop, points, spacing) = match kind {
            ScanKind::Detuning => (-40.0, 0.0, 12, Spacing::Linear),
            ScanKind::Intensity => (50.0, 2000.0, 8, Spacing::Log),
            ScanKind::Power => (50.0, 4000.0, 8, Spacing::Log),
        };
        let start = self.scan_start.unwrap_or(start);
        let stop = self.scan_stop.unwrap_or(stop);
        let points = self.scan_points.unwrap_or(points);
        let spacing = self.scan_spacing.unwrap_or(spacing);
        if points < 4 {
            return Err(CliError::Config(format!(
                "a scan needs at least 4 points, got {points}"
            )));
        }
        if !(start.is_finite() && stop.is_finite()) || start == stop {
            return Err(CliError::Config(format!("bad scan range {start}..{stop}")));
        }
        if kind != ScanKind::Detuning && (start <= 0.0 || stop <= 0.0) {
            return Err(CliError::Config(format!(
                "{kind} range must be positive, got {start}..{stop}"
            )));
        }
        if spacing == Spacing::Log && (start <= 0.0 || stop <= 0.0) {
            return Err(CliError::Config("log spacing needs a positive range".to_string()));
        }
        let step = |i: usize| i as f64 / (points - 1) as f64;
        let mut values: Vec<f64> = (0..points)
            .map(|i| match spacing {
                Spacing::Linear => start + (stop - start) * step(i),
                Spacing::Log => (start.ln() + (stop.ln() - start.ln()) * step(i)).exp(),
            })
            .collect();
        values[points - 1] = stop;
        if kind == ScanKind::Power {
            let sigma0 = resonant_cross_section(&self.transition()?);
            for v in &mut values {
                *v *= sigma0;
            }
        }
        Ok(values)
    }

    pub fn scan_config(&self, kind: ScanKind) -> Result<ScanConfig, CliError> {
        if !(self.fill_fraction > 0.0 && self.fill_fraction <= 1.0) {
            return Err(CliError::Config(format!(
                "fill_fraction must lie in (0, 1], got {}",
                self.fill_fraction
            )));
        }
        if !(self.min_exposure_s > 0.0 && self.min_exposure_s.is_finite()) {
            return Err(CliError::Config(format!(
                "min_exposure_s must be positive, got {}",
                self.min_exposure_s
            )));
        }
        let mut config = ScanConfig::new(self.scene()?, self.truth(kind)?);
        config.analysis = self.analysis_options()?;
        config.pair_mode = self.pair_mode;
        config.fill_fraction = self.fill_fraction;
        config.min_exposure = self.min_exposure_s;
        config.shared_shape = self.shared_shape;
        Ok(config)
    }
}
