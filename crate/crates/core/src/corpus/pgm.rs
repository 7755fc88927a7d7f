//! Binary (P5) PGM with maxval 255.

use std::fs;
use std::path::Path;

use super::{Image, IMAGE_SIZE};
use crate::error::{Error, PgmError, Result};

pub fn encode_pgm(image: &Image) -> Vec<u8> {
    let header = format!("P5\n{} {}\n255\n", image.width(), image.height());
    let mut out = Vec::with_capacity(header.len() + image.pixels().len());
    out.extend_from_slice(header.as_bytes());
    out.extend(image.pixels().iter().map(|&p| (p * 255.0).round() as u8));
    out
}

pub fn write_pgm(image: &Image, path: &Path) -> Result<()> {
    fs::write(path, encode_pgm(image)).map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&c| c != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> std::result::Result<usize, PgmError> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| PgmError::MalformedHeader(format!("missing or invalid {what}")))
    }
}

/// Decodes a P5 image of any size.
pub fn decode_pgm(bytes: &[u8]) -> std::result::Result<Image, PgmError> {
    if !bytes.starts_with(b"P5") {
        return Err(PgmError::MalformedHeader("magic is not P5".into()));
    }
    let mut cur = Cursor { bytes, pos: 2 };
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval = cur.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(PgmError::MalformedHeader(format!("zero dimension {width}x{height}")));
    }
    if maxval != 255 {
        return Err(PgmError::MalformedHeader(format!("maxval {maxval} is not 255")));
    }
    match bytes.get(cur.pos) {
        Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
        _ => return Err(PgmError::MalformedHeader("no whitespace after maxval".into())),
    }
    let payload = &bytes[cur.pos..];
    let expected = width * height;
    if payload.len() < expected {
        return Err(PgmError::Truncated { expected, found: payload.len() });
    }
    if payload.len() > expected {
        return Err(PgmError::TrailingData(payload.len() - expected));
    }
    let pixels = payload.iter().map(|&b| f64::from(b) / 255.0).collect();
    Ok(Image::new(width, height, pixels).expect("bytes map into [0, 1]"))
}

/// Reads a PGM frame of any size.
pub fn read_pgm_any(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes).map_err(|source| Error::Pgm { path: path.to_path_buf(), source })
}

/// Reads a PGM that must be 64x64.
pub fn read_pgm(path: &Path) -> Result<Image> {
    let img = read_pgm_any(path)?;
    if !img.is_working_size() {
        return Err(Error::Pgm {
            path: path.to_path_buf(),
            source: PgmError::WrongDimensions {
                expected_w: IMAGE_SIZE,
                expected_h: IMAGE_SIZE,
                found_w: img.width(),
                found_h: img.height(),
            },
        });
    }
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;
    use proptest::prelude::*;

    const HEADER: &[u8] = b"P5\n64 64\n255\n";

    #[test]
    fn zero_image_layout() {
        let bytes = encode_pgm(&Image::filled(64, 64, 0.0).unwrap());
        assert_eq!(&bytes[..HEADER.len()], HEADER);
        assert_eq!(bytes.len(), HEADER.len() + 4096);
        assert!(bytes[HEADER.len()..].iter().all(|&b| b == 0));
    }

    #[test]
    fn white_round_trips_exactly() {
        let bytes = encode_pgm(&Image::filled(64, 64, 1.0).unwrap());
        assert!(bytes[HEADER.len()..].iter().all(|&b| b == 255));
        let back = decode_pgm(&bytes).unwrap();
        assert!(back.pixels().iter().all(|&p| p == 1.0));
    }

    #[test]
    fn random_round_trip_within_half_step() {
        let mut rng = Rng::new(10);
        let img = Image::from_fn(64, 64, |_, _| rng.next_f64());
        let back = decode_pgm(&encode_pgm(&img)).unwrap();
        let worst = img
            .pixels()
            .iter()
            .zip(back.pixels())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(worst <= 1.0 / 510.0 + 1e-15, "{worst}");
    }

    #[test]
    fn distinct_errors() {
        assert!(matches!(decode_pgm(b"P2\n64 64\n255\n"), Err(PgmError::MalformedHeader(_))));
        assert!(matches!(decode_pgm(b"P5\n64\n"), Err(PgmError::MalformedHeader(_))));
        assert!(matches!(decode_pgm(b"P5\n2 2\n65535\n"), Err(PgmError::MalformedHeader(_))));
        let mut short = HEADER.to_vec();
        short.extend(vec![0u8; 100]);
        assert_eq!(
            decode_pgm(&short).unwrap_err(),
            PgmError::Truncated { expected: 4096, found: 100 }
        );
        let mut long = HEADER.to_vec();
        long.extend(vec![0u8; 4097]);
        assert_eq!(decode_pgm(&long).unwrap_err(), PgmError::TrailingData(1));
    }

    #[test]
    fn comments_in_header_are_skipped() {
        let img = decode_pgm(b"P5\n# made by hand\n2 1 # dims\n255\n\x00\xff").unwrap();
        assert_eq!(img.pixels(), &[0.0, 1.0]);
    }

    #[test]
    fn strict_reader_checks_dimensions() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("small.pgm");
        write_pgm(&Image::filled(8, 4, 0.5).unwrap(), &path).unwrap();
        assert_eq!(read_pgm_any(&path).unwrap().width(), 8);
        match read_pgm(&path) {
            Err(Error::Pgm { source: PgmError::WrongDimensions { found_w: 8, found_h: 4, .. }, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn round_trip_error_bound(w in 1usize..20, h in 1usize..20, seed: u64) {
            let mut rng = Rng::new(seed);
            let img = Image::from_fn(w, h, |_, _| rng.next_f64());
            let bytes = encode_pgm(&img);
            let back = decode_pgm(&bytes).unwrap();
            prop_assert_eq!(back.width(), w);
            prop_assert_eq!(back.height(), h);
            for (a, b) in img.pixels().iter().zip(back.pixels()) {
                prop_assert!((a - b).abs() <= 1.0 / 510.0 + 1e-15);
            }
            // Re-encoding the decoded image is a fixed point.
            prop_assert_eq!(encode_pgm(&back), bytes);
        }
    }
}
