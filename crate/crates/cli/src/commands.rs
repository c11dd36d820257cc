//! The subcommands. Each writes its files, returns a printable summary, and
//! reports a non-convergence after its outputs are on disk.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use shadowcast::analysis::{analyze_pair, AnalysisReport};
use shadowcast::curvefit::{
    fit_contrast_saturation, fit_lineshape, fit_power_saturation, generate_scan_records, FitResult, ScanKind,
    ScanSeries, ScanShape, ScanTruth,
};
use shadowcast::imaging::{expected_image, read_frame, render_pair, write_frame, Frame};
use shadowcast::photophysics::{
    max_absorbed_power, resonant_cross_section, saturation_intensity, LaserParams, TransitionParams,
};

use crate::config::RunConfig;
use crate::error::CliError;

const VERSION: &str = env!("CARGO_PKG_VERSION");

/// What a command produced.
#[derive(Debug)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub summary: String,
    /// Set when the outputs were written but the analysis did not converge.
    pub failure: Option<CliError>,
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<PathBuf, CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::io(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))?;
    Ok(path.to_path_buf())
}

fn save_frame(dir: &Path, stem: &str, frame: &Frame) -> Result<PathBuf, CliError> {
    write_frame(dir, stem, frame).map_err(|e| CliError::io(&dir.join(stem), e))
}

fn load_frame(path: &Path) -> Result<Frame, CliError> {
    read_frame(path).map_err(|e| CliError::io(path, e))
}

#[derive(Debug, Serialize)]
struct FrameSummary {
    file: String,
    seed: u64,
    saturated_pixels: usize,
    max_count: u16,
    mean_count: f64,
}

fn frame_summary(file: &str, frame: &Frame) -> FrameSummary {
    let counts = frame.counts.as_slice();
    FrameSummary {
        file: file.to_string(),
        seed: frame.meta.as_ref().map_or(0, |m| m.seed),
        saturated_pixels: frame.meta.as_ref().map_or(0, |m| m.saturated_pixels),
        max_count: counts.iter().copied().max().unwrap_or(0),
        mean_count: counts.iter().map(|&c| c as f64).sum::<f64>() / counts.len() as f64,
    }
}

#[derive(Debug, Serialize)]
struct SimulateRecord<'a> {
    command: &'static str,
    version: &'static str,
    config: &'a RunConfig,
    /// Noiseless photoelectrons at the brightest reference pixel.
    reference_peak_electrons: f64,
    signal: FrameSummary,
    reference: FrameSummary,
}

/// Renders one signal/reference pair at the configured scene.
pub fn simulate(config: &RunConfig) -> Result<Outcome, CliError> {
    let scene = config.scene()?;
    let (signal, reference) = render_pair(&scene, config.seed, config.pair_mode)?;
    let mut shelved = scene;
    shelved.ion.shelved = true;
    let peak = expected_image(&shelved)?.as_slice().iter().copied().fold(0.0, f64::max);

    let dir = &config.out;
    create_dir(dir)?;
    let mut files = vec![
        save_frame(dir, "signal", &signal)?,
        save_frame(dir, "reference", &reference)?,
    ];
    let record = SimulateRecord {
        command: "simulate",
        version: VERSION,
        config,
        reference_peak_electrons: peak,
        signal: frame_summary("signal.pgm", &signal),
        reference: frame_summary("reference.pgm", &reference),
    };
    files.push(write_json(&dir.join("metadata.json"), &record)?);

    let mut summary = String::new();
    writeln!(summary, "seed                {}", config.seed).unwrap();
    writeln!(summary, "reference peak      {peak:.1} e-").unwrap();
    for f in [&record.signal, &record.reference] {
        writeln!(
            summary,
            "{:<20}max {} mean {:.1} saturated {}",
            f.file, f.max_count, f.mean_count, f.saturated_pixels
        )
        .unwrap();
    }
    Ok(Outcome {
        files,
        summary,
        failure: None,
    })
}

#[derive(Debug, Serialize)]
struct AnalyzeRecord<'a> {
    command: &'static str,
    version: &'static str,
    config: &'a RunConfig,
    signal: String,
    reference: String,
    filtered: bool,
    report: &'a AnalysisReport,
}

fn report_summary(report: &AnalysisReport) -> String {
    let fit = &report.fit;
    let mut s = String::new();
    writeln!(s, "converged           {} ({})", fit.converged, fit.message).unwrap();
    writeln!(
        s,
        "contrast            {:.5} ± {:.5}",
        fit.amplitude, fit.uncertainties.amplitude
    )
    .unwrap();
    writeln!(s, "center              ({:.2}, {:.2}) px", fit.center_x, fit.center_y).unwrap();
    writeln!(
        s,
        "fwhm                {:.1} ± {:.1} nm",
        report.fwhm_nm, report.fwhm_nm_uncertainty
    )
    .unwrap();
    writeln!(s, "snr                 {:.2}", report.snr).unwrap();
    match report.diverted_power {
        Some(d) => writeln!(
            s,
            "diverted power      {:.3} ± {:.3} pW",
            d.value * 1e12,
            d.uncertainty * 1e12
        )
        .unwrap(),
        None => writeln!(s, "diverted power      unavailable").unwrap(),
    }
    for w in &report.warnings {
        writeln!(s, "warning: {w}").unwrap();
    }
    s
}

/// Normalizes and fits a frame pair; writes `analysis.json`.
pub fn analyze(config: &RunConfig, signal_path: &Path, reference_path: &Path) -> Result<Outcome, CliError> {
    let options = config.analysis_options()?;
    let signal = load_frame(signal_path)?;
    let reference = load_frame(reference_path)?;
    let report = analyze_pair(&signal, &reference, &options)?;

    let dir = &config.out;
    create_dir(dir)?;
    let record = AnalyzeRecord {
        command: "analyze",
        version: VERSION,
        config,
        signal: signal_path.display().to_string(),
        reference: reference_path.display().to_string(),
        filtered: options.bandpass.is_some(),
        report: &report,
    };
    let files = vec![write_json(&dir.join("analysis.json"), &record)?];
    let failure = (!report.converged()).then(|| CliError::NotConverged(report.fit.message.clone()));
    Ok(Outcome {
        files,
        summary: report_summary(&report),
        failure,
    })
}

/// Fits the model that belongs to the series' kind.
pub fn fit_series(series: &ScanSeries) -> Result<FitResult, CliError> {
    Ok(match series.kind() {
        ScanKind::Detuning => fit_lineshape(series)?,
        ScanKind::Intensity => fit_contrast_saturation(series)?,
        ScanKind::Power => fit_power_saturation(series)?,
    })
}

fn fit_summary(fit: &FitResult) -> String {
    let mut s = String::new();
    writeln!(s, "model               {} ({})", fit.model, fit.message).unwrap();
    for p in fit.params.iter().chain(&fit.derived) {
        writeln!(s, "{:<20}{:.6e} ± {:.6e}", p.name, p.value, p.uncertainty).unwrap();
    }
    writeln!(s, "chi2/dof            {:.3} / {}", fit.chi2, fit.dof).unwrap();
    s
}

#[derive(Debug, Serialize)]
struct PointRecord {
    index: usize,
    control: f64,
    seed: u64,
    exposure_s: f64,
    truth_contrast: f64,
    value: f64,
    sigma: f64,
    flags: String,
    error: Option<String>,
    signal: Option<String>,
    reference: Option<String>,
}

#[derive(Debug, Serialize)]
struct ScanRecordOut<'a> {
    command: &'static str,
    version: &'static str,
    config: &'a RunConfig,
    kind: ScanKind,
    unit: &'static str,
    truth: ScanTruth,
    /// Pixel-coordinate spot shape shared by the scan's amplitude fits, and
    /// the relative error it puts on every value. The fit includes that error.
    spot_shape: Option<ScanShape>,
    fit: Option<FitResult>,
    fit_error: Option<String>,
    points: Vec<PointRecord>,
}

/// Runs a synthetic scan of `kind`; writes `scan.csv` and `fit.json`, plus the
/// frames and `frames.csv` under `keep_frames`.
pub fn scan(config: &RunConfig, kind: ScanKind) -> Result<Outcome, CliError> {
    let scan_config = config.scan_config(kind)?;
    let controls = config.controls(kind)?;
    let run = generate_scan_records(&scan_config, &controls, config.seed, config.keep_frames)?;
    let records = run.records;

    let dir = &config.out;
    create_dir(dir)?;
    let mut files = Vec::new();
    let mut points = Vec::new();
    let mut manifest = config.keep_frames.then(Vec::new);
    if config.keep_frames {
        create_dir(&dir.join("frames"))?;
    }
    for (i, r) in records.iter().enumerate() {
        let mut paths = (None, None);
        if let Some((s, f)) = &r.frames {
            let frames = dir.join("frames");
            save_frame(&frames, &format!("point_{i:03}_signal"), s)?;
            save_frame(&frames, &format!("point_{i:03}_reference"), f)?;
            paths = (
                Some(format!("frames/point_{i:03}_signal.pgm")),
                Some(format!("frames/point_{i:03}_reference.pgm")),
            );
        }
        if let (Some(m), (Some(s), Some(f))) = (&mut manifest, &paths) {
            m.push([
                i.to_string(),
                r.point.control.to_string(),
                r.seed.to_string(),
                s.clone(),
                f.clone(),
            ]);
        }
        points.push(PointRecord {
            index: i,
            control: r.point.control,
            seed: r.seed,
            exposure_s: r.scene.camera.exposure,
            truth_contrast: r.scene.ion.peak_contrast,
            value: r.point.value,
            sigma: r.point.sigma,
            flags: r.point.flags.to_string(),
            error: r.error.clone(),
            signal: paths.0,
            reference: paths.1,
        });
    }
    let spot_shape = run.shape;
    let series = ScanSeries::new(kind, records.into_iter().map(|r| r.point).collect())?;
    let csv_path = dir.join("scan.csv");
    fs::write(&csv_path, series.to_csv_string()).map_err(|e| CliError::io(&csv_path, e))?;
    files.push(csv_path);
    if let Some(rows) = manifest {
        let path = dir.join("frames.csv");
        let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::io(&path, e))?;
        let write = |w: &mut csv::Writer<fs::File>| -> Result<(), csv::Error> {
            w.write_record(["index", "control", "seed", "signal", "reference"])?;
            for row in &rows {
                w.write_record(row)?;
            }
            w.flush()?;
            Ok(())
        };
        write(&mut w).map_err(|e| CliError::io(&path, e))?;
        files.push(path);
    }

    let (fit, fit_error) = match fit_series(&series) {
        Ok(f) => (
            Some(f.with_scale_uncertainty(spot_shape.map_or(0.0, |s| s.scale_uncertainty))),
            None,
        ),
        Err(e) => (None, Some(e.to_string())),
    };
    let failure = match (&fit, &fit_error) {
        (Some(f), _) if !f.converged => Some(CliError::NotConverged(f.message.clone())),
        (None, Some(e)) => Some(CliError::NotConverged(e.clone())),
        _ => None,
    };
    let mut summary = String::new();
    let failed = series.points().iter().filter(|p| p.flags.fit_failed).count();
    let undetected = series.points().iter().filter(|p| p.flags.non_detection).count();
    writeln!(
        summary,
        "{kind}: {} points, {undetected} non-detections, {failed} failed",
        series.len()
    )
    .unwrap();
    if let Some(s) = &spot_shape {
        let p = &s.shape.shape;
        writeln!(
            summary,
            "{:<20}FWHM {:.3} x {:.3} px at ({:.2}, {:.2}); scale error {:.2} %",
            "shared spot",
            p.fwhm_x,
            p.fwhm_y,
            p.center_x,
            p.center_y,
            100.0 * s.scale_uncertainty
        )
        .unwrap();
    }
    match &fit {
        Some(f) => summary.push_str(&fit_summary(f)),
        None => writeln!(summary, "fit failed: {}", fit_error.as_deref().unwrap_or("")).unwrap(),
    }
    let record = ScanRecordOut {
        command: "scan",
        version: VERSION,
        config,
        kind,
        unit: kind.unit(),
        truth: scan_config.truth,
        spot_shape,
        fit,
        fit_error,
        points,
    };
    files.push(write_json(&dir.join("fit.json"), &record)?);
    Ok(Outcome {
        files,
        summary,
        failure,
    })
}

#[derive(Debug, Serialize)]
struct FitRecord<'a> {
    command: &'static str,
    version: &'static str,
    config: &'a RunConfig,
    input: String,
    kind: ScanKind,
    fit: &'a FitResult,
}

/// Fits a scan CSV; writes `fit.json`.
pub fn fit(config: &RunConfig, input: &Path) -> Result<Outcome, CliError> {
    let file = fs::File::open(input).map_err(|e| CliError::io(input, e))?;
    let series = ScanSeries::read_csv(file).map_err(|e| CliError::io(input, e))?;
    let fit = fit_series(&series)?;
    let dir = &config.out;
    create_dir(dir)?;
    let record = FitRecord {
        command: "fit",
        version: VERSION,
        config,
        input: input.display().to_string(),
        kind: series.kind(),
        fit: &fit,
    };
    let files = vec![write_json(&dir.join("fit.json"), &record)?];
    let failure = (!fit.converged).then(|| CliError::NotConverged(fit.message.clone()));
    Ok(Outcome {
        files,
        summary: fit_summary(&fit),
        failure,
    })
}

/// The desk-check quantities of the configured transition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Constants {
    pub lambda_nm: f64,
    pub tau_ns: f64,
    /// Γ/2π, MHz.
    pub linewidth_mhz: f64,
    /// W/m².
    pub i_sat: f64,
    /// m².
    pub sigma0: f64,
    /// pW.
    pub p_max_pw: f64,
    /// σ₀·I_sat, pW.
    pub sigma0_i_sat_pw: f64,
    /// W/m².
    pub intensity: f64,
    pub s0: f64,
}

pub fn constants(config: &RunConfig) -> Result<Constants, CliError> {
    let t: TransitionParams = config.transition()?;
    let laser = LaserParams::from_mhz(config.detuning_mhz, config.intensity)?;
    let i_sat = saturation_intensity(&t);
    let sigma0 = resonant_cross_section(&t);
    Ok(Constants {
        lambda_nm: t.lambda() * 1e9,
        tau_ns: t.tau() * 1e9,
        linewidth_mhz: t.linewidth_hz() * 1e-6,
        i_sat,
        sigma0,
        p_max_pw: max_absorbed_power(&t) * 1e12,
        sigma0_i_sat_pw: sigma0 * i_sat * 1e12,
        intensity: laser.intensity,
        s0: laser.s0(&t),
    })
}

impl Constants {
    pub fn table(&self) -> String {
        let rows = [
            ("λ", format!("{:.4}", self.lambda_nm), "nm"),
            ("τ", format!("{:.4}", self.tau_ns), "ns"),
            ("Γ/2π", format!("{:.5}", self.linewidth_mhz), "MHz"),
            ("I_sat", format!("{:.4}", self.i_sat), "W/m²"),
            ("σ₀", format!("{:.6e}", self.sigma0), "m²"),
            ("P_max", format!("{:.5}", self.p_max_pw), "pW"),
            ("σ₀·I_sat", format!("{:.5}", self.sigma0_i_sat_pw), "pW"),
            ("s0", format!("{:.5}", self.s0), &format!("at {} W/m²", self.intensity)),
        ];
        let mut s = String::new();
        for (name, value, unit) in rows {
            writeln!(s, "{name:<10}{value:>16}  {unit}").unwrap();
        }
        s
    }
}

#[derive(Debug, Serialize)]
pub struct ConstantsRecord<'a> {
    pub command: &'static str,
    pub version: &'static str,
    pub config: &'a RunConfig,
    pub constants: Constants,
}

pub fn constants_json(config: &RunConfig) -> Result<String, CliError> {
    let record = ConstantsRecord {
        command: "constants",
        version: VERSION,
        config,
        constants: constants(config)?,
    };
    let mut text = serde_json::to_string_pretty(&record).expect("constants serialize");
    text.push('\n');
    Ok(text)
}
