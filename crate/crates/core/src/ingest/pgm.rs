//! Binary PGM (P5) codec.
//!
//! Only the two maxvals used by the corpus are accepted: 255 (one byte per
//! sample) and 65535 (two bytes, big-endian).

use crate::domain::Image2D;
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PgmError {
    #[error("malformed PGM header: {0}")]
    MalformedHeader(String),
    #[error("unsupported maxval {0} (expected 255 or 65535)")]
    UnsupportedMaxval(u32),
    #[error("truncated payload: need {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PgmDepth {
    Eight,
    Sixteen,
}

impl PgmDepth {
    pub fn maxval(self) -> u32 {
        match self {
            PgmDepth::Eight => 255,
            PgmDepth::Sixteen => 65535,
        }
    }
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderCursor<'a> {
    fn skip_ws_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<u32, PgmError> {
        self.skip_ws_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(PgmError::MalformedHeader(format!("expected numeric {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| PgmError::MalformedHeader(format!("{what} out of range")))
    }
}

pub fn parse_pgm(bytes: &[u8]) -> Result<Image2D, PgmError> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(PgmError::MalformedHeader("magic is not P5".into()));
    }
    let mut cur = HeaderCursor { bytes, pos: 2 };
    if !cur.bytes.get(2).is_some_and(|b| b.is_ascii_whitespace() || *b == b'#') {
        return Err(PgmError::MalformedHeader("magic is not P5".into()));
    }
    let width = cur.number("width")? as usize;
    let height = cur.number("height")? as usize;
    if width == 0 || height == 0 {
        return Err(PgmError::MalformedHeader("zero dimension".into()));
    }
    let maxval = cur.number("maxval")?;
    let depth = match maxval {
        255 => PgmDepth::Eight,
        65535 => PgmDepth::Sixteen,
        other => return Err(PgmError::UnsupportedMaxval(other)),
    };
    // Exactly one whitespace byte separates the header from the raster.
    if !cur.bytes.get(cur.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(PgmError::MalformedHeader("missing separator before raster".into()));
    }
    let payload = &bytes[cur.pos + 1..];
    let n = width * height;
    let max = maxval as f64;
    let data: Vec<f64> = match depth {
        PgmDepth::Eight => {
            if payload.len() < n {
                return Err(PgmError::TruncatedPayload { expected: n, found: payload.len() });
            }
            payload[..n].iter().map(|&v| v as f64 / max).collect()
        }
        PgmDepth::Sixteen => {
            if payload.len() < 2 * n {
                return Err(PgmError::TruncatedPayload { expected: 2 * n, found: payload.len() });
            }
            payload[..2 * n]
                .chunks_exact(2)
                .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / max)
                .collect()
        }
    };
    Ok(Image2D::new(width, height, data).expect("samples scaled by maxval lie in [0, 1]"))
}

/// Quantizes `v` to the nearest level of `depth`.
pub fn quantize(v: f64, depth: PgmDepth) -> u32 {
    (v.clamp(0.0, 1.0) * depth.maxval() as f64).round() as u32
}

pub fn encode_pgm(img: &Image2D, depth: PgmDepth) -> Vec<u8> {
    let header = format!("P5\n{} {}\n{}\n", img.width(), img.height(), depth.maxval());
    let bpp = if depth == PgmDepth::Eight { 1 } else { 2 };
    let mut out = Vec::with_capacity(header.len() + img.data().len() * bpp);
    out.extend_from_slice(header.as_bytes());
    for &v in img.data() {
        let q = quantize(v, depth);
        match depth {
            PgmDepth::Eight => out.push(q as u8),
            PgmDepth::Sixteen => out.extend_from_slice(&(q as u16).to_be_bytes()),
        }
    }
    out
}

pub fn write_pgm(path: &std::path::Path, img: &Image2D, depth: PgmDepth) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(&encode_pgm(img, depth))?;
    f.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sixteen_bit_full_scale() {
        let mut bytes = b"P5\n2 2\n65535\n".to_vec();
        bytes.extend([0xFF; 8]);
        let img = parse_pgm(&bytes).unwrap();
        assert_eq!(img.dims(), (2, 2));
        assert!(img.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn eight_bit_zero() {
        let mut bytes = b"P5 1 1 255\n".to_vec();
        bytes.push(0);
        assert_eq!(parse_pgm(&bytes).unwrap().data(), &[0.0]);
    }

    #[test]
    fn big_endian_samples() {
        let mut bytes = b"P5\n1 1\n65535\n".to_vec();
        bytes.extend([0x80, 0x00]);
        assert_eq!(parse_pgm(&bytes).unwrap().data(), &[32768.0 / 65535.0]);
    }

    #[test]
    fn wrong_magic() {
        let mut bytes = b"P6\n1 1\n255\n".to_vec();
        bytes.extend([0, 0, 0]);
        assert!(matches!(parse_pgm(&bytes), Err(PgmError::MalformedHeader(_))));
        assert!(matches!(parse_pgm(b"P55 1 1 255\n\0"), Err(PgmError::MalformedHeader(_))));
    }

    #[test]
    fn non_numeric_dims() {
        assert!(matches!(parse_pgm(b"P5\nx 1\n255\n\0"), Err(PgmError::MalformedHeader(_))));
    }

    #[test]
    fn unsupported_maxval() {
        assert_eq!(parse_pgm(b"P5\n1 1\n1023\n\0\0"), Err(PgmError::UnsupportedMaxval(1023)));
    }

    #[test]
    fn truncated() {
        assert_eq!(
            parse_pgm(b"P5\n2 2\n255\n\0\0\0"),
            Err(PgmError::TruncatedPayload { expected: 4, found: 3 })
        );
    }

    #[test]
    fn comments_are_ignored() {
        let bytes = b"P5\n# made by hand\n2 # width\n1\n# max\n255\n\x00\xff";
        assert_eq!(parse_pgm(bytes).unwrap().data(), &[0.0, 1.0]);
    }

    proptest! {
        #[test]
        fn roundtrip_quantized(w in 1usize..12, h in 1usize..12, seed in any::<u64>(), sixteen in any::<bool>()) {
            let depth = if sixteen { PgmDepth::Sixteen } else { PgmDepth::Eight };
            let mut rng = crate::domain::stream(seed, &["pgm"]);
            let max = depth.maxval() as f64;
            let data: Vec<f64> = (0..w * h).map(|_| rng.below(depth.maxval() as usize + 1) as f64 / max).collect();
            let img = Image2D::new(w, h, data).unwrap();
            let back = parse_pgm(&encode_pgm(&img, depth)).unwrap();
            prop_assert_eq!(back, img);
        }
    }
}
