//! Binary PGM (`P5`) codec.
//!
//! Samples are one byte when `maxval < 256` and two bytes, most significant
//! byte first, otherwise. The writer always emits the canonical header
//! `P5\n<width> <height>\n<maxval>\n`; the reader also accepts comments and
//! arbitrary whitespace between header tokens.

use thiserror::Error;

use crate::grid::Grid;

/// Upper bound on decoded pixel count; larger headers are rejected before allocating.
pub const MAX_PIXELS: usize = 1 << 28;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PgmError {
    #[error("not a binary PGM (expected magic P5)")]
    BadMagic,
    #[error("malformed header: {0}")]
    Header(&'static str),
    #[error("image of {width}x{height} exceeds the decoder limit")]
    TooLarge { width: usize, height: usize },
    #[error("pixel data truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("sample {value} at index {index} exceeds maxval {maxval}")]
    SampleRange { index: usize, value: u16, maxval: u16 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PgmImage {
    pub maxval: u16,
    pub samples: Grid<u16>,
}

impl PgmImage {
    pub fn width(&self) -> usize {
        self.samples.width()
    }

    pub fn height(&self) -> usize {
        self.samples.height()
    }
}

pub fn encode(image: &PgmImage) -> Vec<u8> {
    let header = format!("P5\n{} {}\n{}\n", image.width(), image.height(), image.maxval);
    let wide = image.maxval >= 256;
    let mut out = Vec::with_capacity(header.len() + image.samples.len() * if wide { 2 } else { 1 });
    out.extend_from_slice(header.as_bytes());
    for &v in image.samples.as_slice() {
        if wide {
            out.extend_from_slice(&v.to_be_bytes());
        } else {
            out.push(v as u8);
        }
    }
    out
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.data.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.data.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &'static str) -> Result<usize, PgmError> {
        self.skip_space_and_comments();
        let start = self.pos;
        let mut value: usize = 0;
        while let Some(&b) = self.data.get(self.pos) {
            if !b.is_ascii_digit() {
                break;
            }
            value = value
                .checked_mul(10)
                .and_then(|v| v.checked_add((b - b'0') as usize))
                .ok_or(PgmError::Header(what))?;
            self.pos += 1;
        }
        if self.pos == start {
            return Err(PgmError::Header(what));
        }
        Ok(value)
    }
}

pub fn decode(data: &[u8]) -> Result<PgmImage, PgmError> {
    if data.len() < 2 || &data[..2] != b"P5" {
        return Err(PgmError::BadMagic);
    }
    let mut cur = Cursor { data, pos: 2 };
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval = cur.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(PgmError::Header("zero dimension"));
    }
    if maxval == 0 || maxval > u16::MAX as usize {
        return Err(PgmError::Header("maxval must lie in 1..=65535"));
    }
    // Exactly one whitespace byte separates the header from the raster.
    match data.get(cur.pos) {
        Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
        _ => return Err(PgmError::Header("missing separator after maxval")),
    }
    let pixels = width
        .checked_mul(height)
        .filter(|&n| n <= MAX_PIXELS)
        .ok_or(PgmError::TooLarge { width, height })?;
    let maxval = maxval as u16;
    let bytes_per = if maxval >= 256 { 2 } else { 1 };
    let raster = &data[cur.pos..];
    let expected = pixels * bytes_per;
    if raster.len() < expected {
        return Err(PgmError::Truncated {
            expected,
            found: raster.len(),
        });
    }
    let mut samples = Vec::with_capacity(pixels);
    for (index, chunk) in raster[..expected].chunks_exact(bytes_per).enumerate() {
        let value = if bytes_per == 2 {
            u16::from_be_bytes([chunk[0], chunk[1]])
        } else {
            chunk[0] as u16
        };
        if value > maxval {
            return Err(PgmError::SampleRange { index, value, maxval });
        }
        samples.push(value);
    }
    let samples = Grid::from_vec(width, height, samples).expect("length checked above");
    Ok(PgmImage { maxval, samples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn canonical_sixteen_bit_layout() {
        let img = PgmImage {
            maxval: 65535,
            samples: Grid::from_vec(2, 1, vec![0x0102, 0xfffe]).unwrap(),
        };
        let bytes = encode(&img);
        assert_eq!(bytes, b"P5\n2 1\n65535\n\x01\x02\xff\xfe");
        assert_eq!(decode(&bytes).unwrap(), img);
    }

    #[test]
    fn eight_bit_and_comments() {
        let bytes = b"P5 # comment\n 3\t1 # another\n255\n\x00\x7f\xff";
        let img = decode(bytes).unwrap();
        assert_eq!(img.samples.as_slice(), &[0, 127, 255]);
        assert_eq!(img.maxval, 255);
    }

    #[test]
    fn rejects_malformed_input() {
        assert_eq!(decode(b"P6\n1 1\n255\n\x00"), Err(PgmError::BadMagic));
        assert_eq!(decode(b""), Err(PgmError::BadMagic));
        assert!(matches!(decode(b"P5\n1 1\n"), Err(PgmError::Header(_))));
        assert!(matches!(decode(b"P5\n0 1\n255\n"), Err(PgmError::Header(_))));
        assert!(matches!(decode(b"P5\n1 1\n70000\n\x00\x00"), Err(PgmError::Header(_))));
        assert!(matches!(
            decode(b"P5\n2 2\n65535\n\x00\x00"),
            Err(PgmError::Truncated { expected: 8, found: 2 })
        ));
        assert!(matches!(
            decode(b"P5\n1 1\n1000\n\x04\x00"),
            Err(PgmError::SampleRange { value: 1024, .. })
        ));
        assert!(matches!(
            decode(b"P5\n99999999999 99999999999\n255\n"),
            Err(PgmError::TooLarge { .. })
        ));
        assert!(matches!(
            decode(b"P5\n999999999999999999999999 1\n255\n"),
            Err(PgmError::Header("width"))
        ));
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            width in 1usize..12,
            height in 1usize..12,
            maxval in 1u16..=u16::MAX,
            seed in any::<u64>(),
        ) {
            let mut state = seed;
            let samples = Grid::from_fn(width, height, |_, _| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((state >> 33) % (maxval as u64 + 1)) as u16
            });
            let img = PgmImage { maxval, samples };
            let bytes = encode(&img);
            let back = decode(&bytes).unwrap();
            prop_assert_eq!(&back, &img);
            prop_assert_eq!(encode(&back), bytes);
        }
    }
}
