//! Binary PGM (P5) and PPM (P6) images with maxval 255.

use std::path::Path;

use sadnet_core::data::ImageBuffer;

use crate::error::{self, Error, Result};

fn parse_err(offset: usize, msg: impl std::fmt::Display) -> Error {
    Error::Data(format!("{msg} at byte {offset}"))
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(parse_err(start, format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| parse_err(start, format!("{what} out of range")))
    }
}

/// Parses a P5 or P6 file.
pub fn decode(bytes: &[u8]) -> Result<ImageBuffer> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(parse_err(0, "missing P5/P6 magic")),
    };
    let mut h = Header { bytes, pos: 2 };
    let width = h.number("width")?;
    let height = h.number("height")?;
    h.skip_space();
    let maxval_at = h.pos;
    let maxval = h.number("maxval")?;
    if maxval != 255 {
        return Err(parse_err(maxval_at, format!("unsupported maxval {maxval}")));
    }
    match bytes.get(h.pos) {
        Some(b) if b.is_ascii_whitespace() => h.pos += 1,
        _ => return Err(parse_err(h.pos, "expected whitespace after maxval")),
    }
    if width == 0 || height == 0 {
        return Err(parse_err(2, format!("empty image {width}x{height}")));
    }
    let len = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| parse_err(2, "image dimensions overflow"))?;
    let payload = &bytes[h.pos..];
    if payload.len() < len {
        return Err(parse_err(
            bytes.len(),
            format!("truncated payload: expected {len} bytes, found {}", payload.len()),
        ));
    }
    if payload.len() > len {
        return Err(parse_err(h.pos + len, "trailing bytes after payload"));
    }
    Ok(ImageBuffer::new(width, height, channels, payload.to_vec())?)
}

/// Serializes with a minimal header: `P5\n{w} {h}\n255\n`.
pub fn encode(image: &ImageBuffer) -> Vec<u8> {
    let magic = if image.channels() == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend_from_slice(image.samples());
    out
}

pub fn load_image(path: &Path) -> Result<ImageBuffer> {
    decode(&error::read(path)?).map_err(|e| match e {
        Error::Data(m) => Error::Data(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn save_image(image: &ImageBuffer, path: &Path) -> Result<()> {
    error::write(path, encode(image))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_two_by_two_gray() {
        let mut bytes = b"P5\n2 2\n255\n".to_vec();
        bytes.extend([0, 128, 255, 7]);
        let img = decode(&bytes).unwrap();
        assert_eq!((img.width(), img.height(), img.channels()), (2, 2, 1));
        assert_eq!(img.samples(), &[0, 128, 255, 7]);
    }

    #[test]
    fn comments_and_odd_whitespace() {
        let mut bytes = b"P6 # rgb\n# another\n1\t1\r\n255 ".to_vec();
        bytes.extend([1, 2, 3]);
        assert_eq!(decode(&bytes).unwrap().samples(), &[1, 2, 3]);
    }

    #[test]
    fn deep_maxval_rejected() {
        let err = decode(b"P6\n1 1\n65535\n\0\0\0\0\0\0").unwrap_err().to_string();
        assert!(err.contains("unsupported maxval"), "{err}");
        assert!(err.contains("byte 7"), "{err}");
    }

    #[test]
    fn truncation_reports_offset() {
        let err = decode(b"P5\n3 1\n255\n\x01\x02").unwrap_err().to_string();
        assert!(err.contains("truncated") && err.contains("byte 13"), "{err}");
    }

    #[test]
    fn malformed_headers() {
        for bad in [&b"P3\n1 1\n255\n0"[..], b"P5\nx 1\n255\n\0", b"P5\n1 1\n255", b"P5\n0 1\n255\n"] {
            assert!(matches!(decode(bad), Err(Error::Data(_))), "{:?}", String::from_utf8_lossy(bad));
        }
    }

    #[test]
    fn encode_decode_round_trip() {
        let img = ImageBuffer::new(3, 2, 3, (0..18).map(|v| (v * 14) as u8).collect()).unwrap();
        let bytes = encode(&img);
        assert_eq!(decode(&bytes).unwrap(), img);
        assert_eq!(encode(&decode(&bytes).unwrap()), bytes);
    }
}
