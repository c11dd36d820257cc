use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::pgm::{self, PgmImage};
use super::{ImagingError, Scene};
use crate::grid::Grid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrameKind {
    /// Atom absorbing.
    Signal,
    /// Atom shelved; bright-field reference.
    Reference,
}

/// Everything recorded alongside a frame's counts. Serialized as the JSON
/// sidecar next to the PGM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameMetadata {
    pub kind: FrameKind,
    pub seed: u64,
    /// Number of pixels clipped at full well or at the top of the output range.
    pub saturated_pixels: usize,
    /// Beam pointing offset drawn for this frame, m.
    pub beam_offset: (f64, f64),
    pub scene: Scene,
}

impl FrameMetadata {
    /// Parses and validates a JSON sidecar.
    pub fn from_json(bytes: &[u8]) -> Result<Self, ImagingError> {
        let meta: Self = serde_json::from_slice(bytes)?;
        meta.scene.validate()?;
        Ok(meta)
    }

    pub fn exposure(&self) -> f64 {
        self.scene.camera.exposure
    }

    pub fn binning(&self) -> u32 {
        self.scene.camera.binning
    }

    pub fn saturated(&self) -> bool {
        self.saturated_pixels > 0
    }

    pub fn plate_scale(&self) -> PlateScale {
        PlateScale {
            object_pixel: self.scene.object_pixel(),
        }
    }
}

/// Conversion from binned pixels to object-plane meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlateScale {
    /// Object-plane size of one binned pixel, m.
    pub object_pixel: f64,
}

/// Quantized camera readout. `meta` is absent for frames read without a sidecar.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub counts: Grid<u16>,
    pub meta: Option<FrameMetadata>,
}

impl Frame {
    pub fn width(&self) -> usize {
        self.counts.width()
    }

    pub fn height(&self) -> usize {
        self.counts.height()
    }

    pub fn maxval(&self) -> u16 {
        self.meta.as_ref().map_or(u16::MAX, |m| m.scene.camera.max_count())
    }

    pub fn to_pgm(&self) -> PgmImage {
        PgmImage {
            maxval: self.maxval(),
            samples: self.counts.clone(),
        }
    }
}

fn sidecar_path(pgm_path: &Path) -> PathBuf {
    pgm_path.with_extension("json")
}

/// Writes `<stem>.pgm` and, when metadata is present, `<stem>.json` into `dir`.
/// Returns the PGM path.
pub fn write_frame(dir: &Path, stem: &str, frame: &Frame) -> Result<PathBuf, ImagingError> {
    let path = dir.join(format!("{stem}.pgm"));
    fs::write(&path, pgm::encode(&frame.to_pgm()))?;
    if let Some(meta) = &frame.meta {
        let mut json = serde_json::to_string_pretty(meta)?;
        json.push('\n');
        fs::write(sidecar_path(&path), json)?;
    }
    Ok(path)
}

/// Reads a PGM and its JSON sidecar, if one sits next to it.
pub fn read_frame(pgm_path: &Path) -> Result<Frame, ImagingError> {
    let image = pgm::decode(&fs::read(pgm_path)?)?;
    let sidecar = sidecar_path(pgm_path);
    let meta = if sidecar.exists() {
        let meta = FrameMetadata::from_json(&fs::read(sidecar)?)?;
        if (meta.scene.width, meta.scene.height) != (image.width(), image.height()) {
            return Err(ImagingError::SidecarShape {
                sidecar: (meta.scene.width, meta.scene.height),
                image: (image.width(), image.height()),
            });
        }
        Some(meta)
    } else {
        None
    };
    Ok(Frame {
        counts: image.samples,
        meta,
    })
}
