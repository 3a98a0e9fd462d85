//! Grayscale PFM (`Pf`) disparity files.
//!
//! Rows are stored bottom-up. The sign of the scale field selects byte
//! order (negative means little-endian). Invalid pixels are written as
//! `+inf`; on read, any non-finite value is invalid.

use std::path::Path;

use crate::disparity::DisparityMap;
use crate::error::{Error, Result};

/// Parsed PFM header.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PfmHeader {
    pub width: usize,
    pub height: usize,
    /// Nonzero; negative means little-endian payload.
    pub scale: f32,
}

impl PfmHeader {
    pub fn little_endian(&self) -> bool {
        self.scale < 0.0
    }
}

/// Encodes a map as little-endian PFM. Values are narrowed to `f32`.
pub fn encode_pfm(map: &DisparityMap) -> Vec<u8> {
    let (w, h) = (map.width(), map.height());
    let mut out = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(w * h * 4);
    for y in (0..h).rev() {
        for x in 0..w {
            let v = map.get(x, y).map_or(f32::INFINITY, |d| d as f32);
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Reads one whitespace-delimited token, skipping leading whitespace.
fn token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<(usize, &'a str)> {
    while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::format(start as u64, "unexpected end of header"));
    }
    let s = std::str::from_utf8(&bytes[start..*pos]).map_err(|_| Error::format(start as u64, "header is not ASCII"))?;
    Ok((start, s))
}

/// Parses the header and returns it with the payload offset.
pub fn parse_pfm_header(bytes: &[u8]) -> Result<(PfmHeader, usize)> {
    let mut pos = 0;
    let (off, magic) = token(bytes, &mut pos)?;
    match magic {
        "Pf" => {}
        "PF" => return Err(Error::format(off as u64, "colour PFM (`PF`) is not a disparity map")),
        other => return Err(Error::format(off as u64, format!("bad magic {other:?}"))),
    }
    let dim = |pos: &mut usize| -> Result<usize> {
        let (off, t) = token(bytes, pos)?;
        t.parse::<usize>()
            .ok()
            .filter(|&v| v > 0)
            .ok_or_else(|| Error::format(off as u64, format!("bad dimension {t:?}")))
    };
    let width = dim(&mut pos)?;
    let height = dim(&mut pos)?;
    let (off, s) = token(bytes, &mut pos)?;
    let scale: f32 = s.parse().map_err(|_| Error::format(off as u64, format!("bad scale {s:?}")))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::format(off as u64, format!("scale must be nonzero and finite, got {s}")));
    }
    // exactly one whitespace byte separates the header from the payload
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::format(pos as u64, "missing separator after scale"));
    }
    Ok((PfmHeader { width, height, scale }, pos + 1))
}

pub fn decode_pfm(bytes: &[u8]) -> Result<DisparityMap> {
    let (header, start) = parse_pfm_header(bytes)?;
    let (w, h) = (header.width, header.height);
    let needed =
        w.checked_mul(h).and_then(|n| n.checked_mul(4)).ok_or_else(|| Error::format(0, "image dimensions overflow"))?;
    let payload = &bytes[start..];
    if payload.len() < needed {
        return Err(Error::format(
            bytes.len() as u64,
            format!("truncated payload: {} of {needed} bytes", payload.len()),
        ));
    }
    let le = header.little_endian();
    let mut values = vec![0.0; w * h];
    let mut valid = vec![false; w * h];
    for (k, chunk) in payload[..needed].chunks_exact(4).enumerate() {
        let raw: [u8; 4] = chunk.try_into().unwrap();
        let v = if le { f32::from_le_bytes(raw) } else { f32::from_be_bytes(raw) };
        let (row_from_bottom, x) = (k / w, k % w);
        let i = (h - 1 - row_from_bottom) * w + x;
        if v.is_finite() {
            values[i] = f64::from(v);
            valid[i] = true;
        }
    }
    DisparityMap::new(w, h, values, valid)
}

pub fn read_pfm(path: impl AsRef<Path>) -> Result<DisparityMap> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pfm(&bytes)
}

pub fn write_pfm(map: &DisparityMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_pfm(map)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_point_five_payload() {
        let map = DisparityMap::dense(1, 1, vec![3.5]).unwrap();
        let bytes = encode_pfm(&map);
        assert_eq!(&bytes[bytes.len() - 4..], &[0x00, 0x00, 0x60, 0x40]);
        assert!(bytes.starts_with(b"Pf\n1 1\n-1.0\n"));
    }

    #[test]
    fn big_endian_file() {
        // 2x1, values 1.5 and 3.5, big-endian
        let mut bytes = b"Pf\n2 1\n1.0\n".to_vec();
        bytes.extend_from_slice(&1.5f32.to_be_bytes());
        bytes.extend_from_slice(&3.5f32.to_be_bytes());
        let map = decode_pfm(&bytes).unwrap();
        assert_eq!(map.values(), &[1.5, 3.5]);
    }

    #[test]
    fn rows_are_bottom_up() {
        let map = DisparityMap::dense(1, 2, vec![1.0, 2.0]).unwrap();
        let bytes = encode_pfm(&map);
        let n = bytes.len();
        assert_eq!(&bytes[n - 8..n - 4], &2.0f32.to_le_bytes());
        assert_eq!(decode_pfm(&bytes).unwrap(), map);
    }

    #[test]
    fn invalid_pixels() {
        let map = DisparityMap::from_options(3, 1, &[Some(1.0), None, Some(2.0)]).unwrap();
        let back = decode_pfm(&encode_pfm(&map)).unwrap();
        assert_eq!(back, map);
        let mut bytes = b"Pf\n1 1\n-1\n".to_vec();
        bytes.extend_from_slice(&f32::NAN.to_le_bytes());
        assert_eq!(decode_pfm(&bytes).unwrap().valid_count(), 0);
    }

    #[test]
    fn malformed() {
        assert!(matches!(decode_pfm(b"P6\n1 1\n-1\n"), Err(Error::Format { offset: 0, .. })));
        assert!(matches!(decode_pfm(b"PF\n1 1\n-1\n"), Err(Error::Format { .. })));
        assert!(matches!(decode_pfm(b"Pf\n1 1\n0\n\0\0\0\0"), Err(Error::Format { offset: 7, .. })));
        assert!(matches!(decode_pfm(b"Pf\n2 1\n-1\n\0\0\0\0"), Err(Error::Format { offset: 14, .. })));
        assert!(decode_pfm(b"Pf\n0 1\n-1\n").is_err());
        assert!(decode_pfm(b"").is_err());
    }
}
