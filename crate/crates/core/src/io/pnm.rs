//! Binary PGM (`P5`) images and PGM/PPM visualizations.

use std::path::Path;

use crate::disparity::{DisparityMap, Region, RegionPartition};
use crate::error::{Error, Result};
use crate::image::GrayImage;

pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend_from_slice(img.data());
    out
}

fn skip_ws_and_comments(bytes: &[u8], pos: &mut usize) {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
        } else {
            return;
        }
    }
}

fn header_number(bytes: &[u8], pos: &mut usize) -> Result<usize> {
    skip_ws_and_comments(bytes, pos);
    let start = *pos;
    while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
        *pos += 1;
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .filter(|&v: &usize| v > 0)
        .ok_or_else(|| Error::format(start as u64, "expected a positive integer"))
}

/// Decodes an 8-bit binary PGM.
pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage> {
    if !bytes.starts_with(b"P5") {
        return Err(Error::format(0, "expected binary PGM magic `P5`"));
    }
    let mut pos = 2;
    let width = header_number(bytes, &mut pos)?;
    let height = header_number(bytes, &mut pos)?;
    let maxval_at = pos;
    let maxval = header_number(bytes, &mut pos)?;
    if maxval != 255 {
        return Err(Error::format(maxval_at as u64, format!("only 8-bit PGM supported, maxval {maxval}")));
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::format(pos as u64, "missing separator after header"));
    }
    pos += 1;
    let n = width.checked_mul(height).ok_or_else(|| Error::format(0, "image dimensions overflow"))?;
    if bytes.len() - pos < n {
        return Err(Error::format(
            bytes.len() as u64,
            format!("truncated payload: {} of {n} bytes", bytes.len() - pos),
        ));
    }
    GrayImage::new(width, height, bytes[pos..pos + n].to_vec())
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes)
}

pub fn write_pgm(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_pgm(img)).map_err(|e| Error::io(path, e))
}

/// Grayscale rendering of a disparity map: valid values linearly scaled so
/// the range maps to `[1, 255]`, invalid pixels black. A constant map renders
/// as uniform 255.
pub fn disparity_to_image(map: &DisparityMap) -> GrayImage {
    let range = map.valid_range();
    let data = (0..map.len())
        .map(|i| match (map.value(i), range) {
            (Some(d), Some((lo, hi))) if hi > lo => (1.0 + 254.0 * (d - lo) / (hi - lo)).round() as u8,
            (Some(_), _) => 255,
            (None, _) => 0,
        })
        .collect();
    GrayImage::new(map.width(), map.height(), data).expect("size matches map")
}

/// Colour of each region in partition renderings.
pub fn region_color(region: Region) -> [u8; 3] {
    match region {
        Region::Consistent => [0, 255, 0],
        Region::Inconsistent => [255, 0, 0],
        Region::Invalid => [0, 0, 0],
    }
}

pub fn encode_partition_ppm(partition: &RegionPartition) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", partition.width(), partition.height()).into_bytes();
    for &r in partition.labels() {
        out.extend_from_slice(&region_color(r));
    }
    out
}

/// Anything that can be rendered for inspection.
pub enum Visualization<'a> {
    Disparity(&'a DisparityMap),
    Partition(&'a RegionPartition),
}

/// Writes a PGM for disparity maps, a PPM for partitions.
pub fn write_visualization(what: Visualization<'_>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = match what {
        Visualization::Disparity(m) => encode_pgm(&disparity_to_image(m)),
        Visualization::Partition(p) => encode_partition_ppm(p),
    };
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
