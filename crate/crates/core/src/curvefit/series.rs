//! Scan data: (control, value, σ) points with per-point flags, and their CSV form.
//!
//! ```text
//! # kind=detuning-scan unit=MHz
//! control,value,sigma,flags
//! -40,0.0021,0.0009,ok
//! 0,0,1,non-detection
//! ```
//!
//! Numbers are written in Rust's shortest round-trip representation so that a
//! read-back series is bit-identical.

use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScanKind {
    #[serde(rename = "detuning-scan")]
    Detuning,
    #[serde(rename = "intensity-scan")]
    Intensity,
    #[serde(rename = "power-scan")]
    Power,
}

impl ScanKind {
    pub fn unit(self) -> &'static str {
        match self {
            Self::Detuning => "MHz",
            Self::Intensity => "W/m2",
            Self::Power => "W",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Detuning => "detuning-scan",
            Self::Intensity => "intensity-scan",
            Self::Power => "power-scan",
        }
    }
}

impl fmt::Display for ScanKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScanKind {
    type Err = SeriesError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "detuning-scan" | "detuning" => Ok(Self::Detuning),
            "intensity-scan" | "intensity" => Ok(Self::Intensity),
            "power-scan" | "power" => Ok(Self::Power),
            other => Err(SeriesError::UnknownKind(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PointFlags {
    /// No absorption detectable; value is a placeholder with a large σ.
    pub non_detection: bool,
    /// Image analysis failed; excluded from fits.
    pub fit_failed: bool,
    /// A frame behind this point hit the camera's dynamic range.
    pub saturated: bool,
}

impl PointFlags {
    const NAMES: [&'static str; 3] = ["non-detection", "fit-failed", "saturated"];

    fn bits(&self) -> [bool; 3] {
        [self.non_detection, self.fit_failed, self.saturated]
    }
}

impl fmt::Display for PointFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let set: Vec<&str> = Self::NAMES
            .iter()
            .zip(self.bits())
            .filter_map(|(name, on)| on.then_some(*name))
            .collect();
        if set.is_empty() {
            f.write_str("ok")
        } else {
            f.write_str(&set.join(";"))
        }
    }
}

impl FromStr for PointFlags {
    type Err = SeriesError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut flags = PointFlags::default();
        if s == "ok" {
            return Ok(flags);
        }
        for name in s.split(';') {
            match name {
                "non-detection" => flags.non_detection = true,
                "fit-failed" => flags.fit_failed = true,
                "saturated" => flags.saturated = true,
                other => return Err(SeriesError::UnknownFlag(other.to_string())),
            }
        }
        Ok(flags)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanPoint {
    pub control: f64,
    pub value: f64,
    pub sigma: f64,
    pub flags: PointFlags,
}

impl ScanPoint {
    pub fn new(control: f64, value: f64, sigma: f64) -> Self {
        Self {
            control,
            value,
            sigma,
            flags: PointFlags::default(),
        }
    }

    /// Whether the point takes part in a fit.
    pub fn usable(&self) -> bool {
        !self.flags.fit_failed
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanSeries {
    kind: ScanKind,
    points: Vec<ScanPoint>,
}

#[derive(Debug, Error)]
pub enum SeriesError {
    #[error("point {index}: sigma must be positive and finite, got {sigma}")]
    BadSigma { index: usize, sigma: f64 },
    #[error("point {index}: control and value must be finite")]
    NonFinite { index: usize },
    #[error("controls must be strictly monotone (point {index})")]
    NotMonotone { index: usize },
    #[error("unknown scan kind {0:?}")]
    UnknownKind(String),
    #[error("unknown point flag {0:?}")]
    UnknownFlag(String),
    #[error("missing or malformed kind preamble")]
    MissingKind,
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

const HEADER: [&str; 4] = ["control", "value", "sigma", "flags"];

impl ScanSeries {
    pub fn new(kind: ScanKind, points: Vec<ScanPoint>) -> Result<Self, SeriesError> {
        for (index, p) in points.iter().enumerate() {
            if !(p.sigma.is_finite() && p.sigma > 0.0) {
                return Err(SeriesError::BadSigma { index, sigma: p.sigma });
            }
            if !(p.control.is_finite() && p.value.is_finite()) {
                return Err(SeriesError::NonFinite { index });
            }
        }
        if points.len() >= 2 {
            let ascending = points[1].control > points[0].control;
            for (index, w) in points.windows(2).enumerate() {
                let ok = if ascending {
                    w[1].control > w[0].control
                } else {
                    w[1].control < w[0].control
                };
                if !ok {
                    return Err(SeriesError::NotMonotone { index: index + 1 });
                }
            }
        }
        Ok(Self { kind, points })
    }

    pub fn empty(kind: ScanKind) -> Self {
        Self {
            kind,
            points: Vec::new(),
        }
    }

    pub fn kind(&self) -> ScanKind {
        self.kind
    }

    pub fn points(&self) -> &[ScanPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Multiplies every value and σ by `k`.
    pub fn scaled(&self, k: f64) -> Self {
        Self {
            kind: self.kind,
            points: self
                .points
                .iter()
                .map(|p| ScanPoint {
                    value: p.value * k,
                    sigma: p.sigma * k,
                    ..*p
                })
                .collect(),
        }
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<(), SeriesError> {
        writeln!(out, "# kind={} unit={}", self.kind, self.kind.unit())?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(HEADER)?;
        for p in &self.points {
            w.write_record([
                p.control.to_string(),
                p.value.to_string(),
                p.sigma.to_string(),
                p.flags.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv output is UTF-8")
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self, SeriesError> {
        let mut reader = BufReader::new(input);
        let mut preamble = String::new();
        reader.read_line(&mut preamble)?;
        let kind = preamble
            .trim_end()
            .strip_prefix('#')
            .and_then(|rest| rest.split_whitespace().find_map(|tok| tok.strip_prefix("kind=")))
            .ok_or(SeriesError::MissingKind)?
            .parse()?;

        let mut csv = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        if csv.headers()?.iter().ne(HEADER) {
            return Err(SeriesError::Parse {
                line: 2,
                message: format!("expected header {}", HEADER.join(",")),
            });
        }
        let mut points = Vec::new();
        for record in csv.records() {
            let record = record?;
            let line = record.position().map_or(0, |p| p.line()) + 1;
            if record.len() != 4 {
                return Err(SeriesError::Parse {
                    line,
                    message: format!("expected 4 fields, found {}", record.len()),
                });
            }
            let num = |i: usize| -> Result<f64, SeriesError> {
                record[i].trim().parse().map_err(|_| SeriesError::Parse {
                    line,
                    message: format!("{} is not a number: {:?}", HEADER[i], &record[i]),
                })
            };
            points.push(ScanPoint {
                control: num(0)?,
                value: num(1)?,
                sigma: num(2)?,
                flags: record[3].trim().parse()?,
            });
        }
        Self::new(kind, points)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> ScanSeries {
        let mut points = vec![
            ScanPoint::new(-40.0, 0.0021, 0.0009),
            ScanPoint::new(-8.0, 0.031, 0.002),
            ScanPoint::new(0.0, 0.0, 1.0),
        ];
        points[2].flags.non_detection = true;
        points[1].flags.saturated = true;
        ScanSeries::new(ScanKind::Detuning, points).unwrap()
    }

    #[test]
    fn csv_layout() {
        let text = sample().to_csv_string();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "# kind=detuning-scan unit=MHz");
        assert_eq!(lines[1], "control,value,sigma,flags");
        assert_eq!(lines[2], "-40,0.0021,0.0009,ok");
        assert_eq!(lines[3], "-8,0.031,0.002,saturated");
        assert_eq!(lines[4], "0,0,1,non-detection");
        assert_eq!(ScanSeries::read_csv(text.as_bytes()).unwrap(), sample());
    }

    #[test]
    fn validation() {
        assert!(matches!(
            ScanSeries::new(ScanKind::Power, vec![ScanPoint::new(1.0, 1.0, 0.0)]),
            Err(SeriesError::BadSigma { .. })
        ));
        assert!(matches!(
            ScanSeries::new(
                ScanKind::Power,
                vec![ScanPoint::new(1.0, 1.0, 1.0), ScanPoint::new(1.0, 1.0, 1.0)]
            ),
            Err(SeriesError::NotMonotone { index: 1 })
        ));
        assert!(matches!(
            ScanSeries::new(
                ScanKind::Power,
                vec![
                    ScanPoint::new(1.0, 1.0, 1.0),
                    ScanPoint::new(2.0, 1.0, 1.0),
                    ScanPoint::new(1.5, 1.0, 1.0)
                ]
            ),
            Err(SeriesError::NotMonotone { index: 2 })
        ));
        let descending = ScanSeries::new(
            ScanKind::Detuning,
            vec![ScanPoint::new(0.0, 0.0, 1.0), ScanPoint::new(-1.0, 0.0, 1.0)],
        );
        assert!(descending.is_ok());
        assert!(ScanSeries::new(ScanKind::Power, vec![ScanPoint::new(f64::NAN, 1.0, 1.0)]).is_err());
    }

    #[test]
    fn malformed_csv() {
        assert!(matches!(
            ScanSeries::read_csv("control,value,sigma,flags\n".as_bytes()),
            Err(SeriesError::MissingKind)
        ));
        assert!(matches!(
            ScanSeries::read_csv("# kind=bogus\ncontrol,value,sigma,flags\n".as_bytes()),
            Err(SeriesError::UnknownKind(_))
        ));
        assert!(matches!(
            ScanSeries::read_csv("# kind=power-scan\na,b,c,d\n".as_bytes()),
            Err(SeriesError::Parse { .. })
        ));
        assert!(matches!(
            ScanSeries::read_csv("# kind=power-scan\ncontrol,value,sigma,flags\n1,x,1,ok\n".as_bytes()),
            Err(SeriesError::Parse { line: 3, .. })
        ));
        assert!(matches!(
            ScanSeries::read_csv("# kind=power-scan\ncontrol,value,sigma,flags\n1,1,1,weird\n".as_bytes()),
            Err(SeriesError::UnknownFlag(_))
        ));
        assert!(ScanSeries::read_csv("# kind=power-scan\ncontrol,value,sigma,flags\n1,1,1\n".as_bytes()).is_err());
    }

    #[test]
    fn empty_series_round_trips() {
        let s = ScanSeries::empty(ScanKind::Intensity);
        assert_eq!(ScanSeries::read_csv(s.to_csv_string().as_bytes()).unwrap(), s);
    }

    proptest! {
        #[test]
        fn csv_round_trip_is_bit_exact(
            start in -1e3f64..1e3,
            steps in proptest::collection::vec((1e-9f64..10.0, -1e6f64..1e6, 1e-20f64..1e3, any::<[bool; 3]>()), 0..20),
        ) {
            let mut control = start;
            let points: Vec<ScanPoint> = steps.iter().map(|&(dc, value, sigma, f)| {
                control += dc;
                ScanPoint { control, value, sigma, flags: PointFlags { non_detection: f[0], fit_failed: f[1], saturated: f[2] } }
            }).collect();
            let s = ScanSeries::new(ScanKind::Power, points).unwrap();
            let text = s.to_csv_string();
            let back = ScanSeries::read_csv(text.as_bytes()).unwrap();
            prop_assert_eq!(&back, &s);
            prop_assert_eq!(back.to_csv_string(), text);
        }
    }
}
