//! KITTI-style 16-bit PNG disparity maps: `disparity = stored / 256`,
//! stored `0` marks a pixel without ground truth.

use std::io::Cursor;
use std::path::Path;

use crate::disparity::DisparityMap;
use crate::error::{Error, Result};

/// Disparity scale of the 16-bit encoding.
pub const KITTI_SCALE: f64 = 256.0;

/// Stored 16-bit value of a valid disparity: rounded to the nearest step
/// and clamped to `[1, 65535]` so that it never collides with the sentinel.
pub fn quantize(d: f64) -> u16 {
    (d * KITTI_SCALE).round().clamp(1.0, 65535.0) as u16
}

pub fn encode_kitti_png(map: &DisparityMap) -> Result<Vec<u8>> {
    let (w, h) = (map.width() as u32, map.height() as u32);
    let mut data = Vec::with_capacity(map.len() * 2);
    for i in 0..map.len() {
        let stored = map.value(i).map_or(0, quantize);
        data.extend_from_slice(&stored.to_be_bytes());
    }
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, w, h);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Sixteen);
        let mut writer = enc.write_header().map_err(|e| Error::format(0, format!("png encode: {e}")))?;
        writer.write_image_data(&data).map_err(|e| Error::format(0, format!("png encode: {e}")))?;
    }
    Ok(out)
}

pub fn decode_kitti_png(bytes: &[u8]) -> Result<DisparityMap> {
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(|e| Error::format(0, format!("png decode: {e}")))?;
    let info = reader.info();
    if info.bit_depth != png::BitDepth::Sixteen || info.color_type != png::ColorType::Grayscale {
        return Err(Error::format(
            0,
            format!("expected 16-bit grayscale PNG, got {:?} {:?}", info.bit_depth, info.color_type),
        ));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let size = reader.output_buffer_size().ok_or_else(|| Error::format(0, "png too large"))?;
    let mut buf = vec![0u8; size];
    reader.next_frame(&mut buf).map_err(|e| Error::format(0, format!("png decode: {e}")))?;
    let pixels: Vec<Option<f64>> = buf[..w * h * 2]
        .chunks_exact(2)
        .map(|c| match u16::from_be_bytes([c[0], c[1]]) {
            0 => None,
            v => Some(f64::from(v) / KITTI_SCALE),
        })
        .collect();
    DisparityMap::from_options(w, h, &pixels)
}

pub fn read_kitti_png(path: impl AsRef<Path>) -> Result<DisparityMap> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_kitti_png(&bytes)
}

pub fn write_kitti_png(map: &DisparityMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_kitti_png(map)?).map_err(|e| Error::io(path, e))
}
