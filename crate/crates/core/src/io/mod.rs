//! File formats: disparity maps, images, configs, CSV reports and dataset
//! directories.

pub mod config;
pub mod dataset;
pub mod kitti;
pub mod pfm;
pub mod pnm;
pub mod report;

use std::path::Path;

use crate::disparity::DisparityMap;
use crate::error::{Error, Result};

/// Reads a disparity map, choosing the codec by extension (`.pfm` or `.png`).
pub fn read_disparity(path: impl AsRef<Path>) -> Result<DisparityMap> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some("pfm") => pfm::read_pfm(path),
        Some("png") => kitti::read_kitti_png(path),
        _ => Err(Error::InvalidArgument(format!("{}: expected a .pfm or .png disparity file", path.display()))),
    }
}

/// Writes a disparity map, choosing the codec by extension (`.pfm` or `.png`).
pub fn write_disparity(map: &DisparityMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some("pfm") => pfm::write_pfm(map, path),
        Some("png") => kitti::write_kitti_png(map, path),
        _ => Err(Error::InvalidArgument(format!("{}: expected a .pfm or .png disparity file", path.display()))),
    }
}
