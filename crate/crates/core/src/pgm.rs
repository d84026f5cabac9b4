//! Binary (P5) portable graymap I/O with 8-bit depth.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Quantizes values in `[0, 1]` to 0..=255 (round to nearest).
pub fn quantize(values: &[f64]) -> Vec<u8> {
    values
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect()
}

pub fn encode_pgm(width: usize, height: usize, values: &[f64]) -> Vec<u8> {
    assert_eq!(width * height, values.len(), "pixel count mismatch");
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(quantize(values));
    out
}

pub fn write_pgm(path: &Path, width: usize, height: usize, values: &[f64]) -> Result<()> {
    fs::write(path, encode_pgm(width, height, values)).map_err(|e| Error::io(path, e))
}

/// Parses a P5 file with maxval 255. Returns (width, height, pixels).
pub fn decode_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let bad = |offset: usize, message: &str| Error::Format {
        offset,
        message: message.to_string(),
    };
    let mut pos = 0;
    let mut fields = Vec::new();
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad(pos, "truncated PGM header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad(start, "non-ASCII header"))?);
    }
    if fields[0] != "P5" {
        return Err(bad(0, "not a binary PGM (P5)"));
    }
    let num = |i: usize| fields[i].parse::<usize>().map_err(|_| bad(0, "bad header number"));
    let (w, h, max) = (num(1)?, num(2)?, num(3)?);
    if max != 255 {
        return Err(bad(0, "only maxval 255 is supported"));
    }
    pos += 1;
    let end = pos + w * h;
    if bytes.len() < end {
        return Err(bad(bytes.len(), "truncated pixel data"));
    }
    Ok((w, h, bytes[pos..end].to_vec()))
}

pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    decode_pgm(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_within_quantization() {
        let vals: Vec<f64> = (0..12).map(|i| i as f64 / 11.0).collect();
        let (w, h, px) = decode_pgm(&encode_pgm(4, 3, &vals)).unwrap();
        assert_eq!((w, h), (4, 3));
        for (p, v) in px.iter().zip(&vals) {
            assert!((*p as f64 / 255.0 - v).abs() <= 1.0 / 255.0);
        }
        assert_eq!(px[11], 255);
    }

    #[test]
    fn header_comments_and_errors() {
        let bytes = b"P5\n# made by hand\n2 1\n255\n\x00\xff";
        assert_eq!(decode_pgm(bytes).unwrap(), (2, 1, vec![0, 255]));
        assert!(decode_pgm(b"P2\n1 1\n255\n0").is_err());
        assert!(decode_pgm(b"P5\n4 4\n255\n\x00").is_err());
    }
}
