use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use super::frame::{Frame, FrameKind, FrameMetadata};
use super::{expected_image_unchecked, ImagingError, Scene};
use crate::grid::Grid;
use crate::rng::{derive_seed, stream, NoiseRng};

const STREAM_PIXELS: u64 = 1;
const STREAM_JITTER: u64 = 2;
const PAIR_SIGNAL: u64 = 11;
const PAIR_REFERENCE: u64 = 12;
const PAIR_SHARED_JITTER: u64 = 13;

/// How a signal/reference pair shares beam pointing.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairMode {
    /// Two consecutive exposures; each draws its own pointing jitter.
    #[default]
    Sequential,
    /// Interleaved within one exposure window; both see the same pointing.
    Interleaved,
}

fn draw_jitter(rng: &mut NoiseRng, rms: f64) -> (f64, f64) {
    if rms == 0.0 {
        return (0.0, 0.0);
    }
    let dx: f64 = rng.sample(StandardNormal);
    let dy: f64 = rng.sample(StandardNormal);
    (rms * dx, rms * dy)
}

/// Draws `Poisson(mean)` photoelectrons. Means beyond the sampler's range are
/// far above any full well and are returned as the mean itself.
fn poisson(rng: &mut NoiseRng, mean: f64) -> f64 {
    if mean.is_nan() || mean <= 0.0 {
        return 0.0;
    }
    match Poisson::new(mean) {
        Ok(d) => d.sample(rng),
        Err(_) => mean,
    }
}

/// One stochastic camera readout of `scene`. A pure function of `(scene, seed)`.
///
/// Per pixel: `counts = round(clip(Poisson(expected) + N(0, read_noise), 0, full_well) / gain)`,
/// clipped to the output range. The frame kind follows the ion's shelving flag.
pub fn render_frame(scene: &Scene, seed: u64) -> Result<Frame, ImagingError> {
    scene.validate()?;
    let offset = draw_jitter(&mut stream(seed, STREAM_JITTER), scene.beam.pointing_jitter_rms);
    Ok(render_with_offset(scene, seed, offset))
}

fn render_with_offset(scene: &Scene, seed: u64, offset: (f64, f64)) -> Frame {
    let mut shifted = *scene;
    shifted.beam.center.0 += offset.0;
    shifted.beam.center.1 += offset.1;
    let expected = expected_image_unchecked(&shifted);

    let cam = &scene.camera;
    let max_count = cam.max_count();
    let mut rng = stream(seed, STREAM_PIXELS);
    let mut saturated_pixels = 0;
    let counts: Vec<u16> = expected
        .as_slice()
        .iter()
        .map(|&mean| {
            let read: f64 = rng.sample(StandardNormal);
            let electrons = poisson(&mut rng, mean) + cam.read_noise * read;
            let mut clipped = electrons > cam.full_well;
            let adu = (electrons.clamp(0.0, cam.full_well) / cam.gain).round();
            if adu > max_count as f64 {
                clipped = true;
            }
            saturated_pixels += clipped as usize;
            adu.min(max_count as f64) as u16
        })
        .collect();

    Frame {
        counts: Grid::from_vec(scene.width, scene.height, counts).expect("shape matches scene"),
        meta: Some(FrameMetadata {
            kind: if scene.ion.shelved {
                FrameKind::Reference
            } else {
                FrameKind::Signal
            },
            seed,
            saturated_pixels,
            beam_offset: offset,
            scene: *scene,
        }),
    }
}

/// Signal (absorbing) and reference (shelved) frames with independent noise
/// streams derived from `seed`.
pub fn render_pair(scene: &Scene, seed: u64, mode: PairMode) -> Result<(Frame, Frame), ImagingError> {
    scene.validate()?;
    let mut signal_scene = *scene;
    signal_scene.ion.shelved = false;
    let mut reference_scene = *scene;
    reference_scene.ion.shelved = true;
    let signal_seed = derive_seed(seed, PAIR_SIGNAL);
    let reference_seed = derive_seed(seed, PAIR_REFERENCE);
    let rms = scene.beam.pointing_jitter_rms;
    let (signal_offset, reference_offset) = match mode {
        PairMode::Sequential => (
            draw_jitter(&mut stream(signal_seed, STREAM_JITTER), rms),
            draw_jitter(&mut stream(reference_seed, STREAM_JITTER), rms),
        ),
        PairMode::Interleaved => {
            let shared = draw_jitter(&mut stream(seed, PAIR_SHARED_JITTER), rms);
            (shared, shared)
        }
    };
    Ok((
        render_with_offset(&signal_scene, signal_seed, signal_offset),
        render_with_offset(&reference_scene, reference_seed, reference_offset),
    ))
}
