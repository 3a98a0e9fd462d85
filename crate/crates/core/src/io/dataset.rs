//! On-disk dataset directories.
//!
//! Layout: `manifest.txt` with one `id seed` line per sample, plus
//! `left_XXXX.pgm`, `right_XXXX.pgm`, `gt_XXXX.pfm` and `dense_gt_XXXX.pfm`
//! for each id.

use std::fmt::Write as _;
use std::path::Path;

use super::pfm::{read_pfm, write_pfm};
use super::pnm::{read_pgm, write_pgm};
use crate::error::{Error, Result};
use crate::synth::Sample;

pub const MANIFEST: &str = "manifest.txt";

fn file(dir: &Path, stem: &str, id: usize, ext: &str) -> std::path::PathBuf {
    dir.join(format!("{stem}_{id:04}.{ext}"))
}

/// Writes `samples` with their generating seeds; creates `dir` if needed.
pub fn write_dataset(dir: impl AsRef<Path>, samples: &[Sample], seeds: &[u64]) -> Result<()> {
    let dir = dir.as_ref();
    if seeds.len() != samples.len() {
        return Err(Error::InvalidArgument(format!("{} seeds for {} samples", seeds.len(), samples.len())));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = String::new();
    for (id, (s, seed)) in samples.iter().zip(seeds).enumerate() {
        write_pgm(&s.left, file(dir, "left", id, "pgm"))?;
        write_pgm(&s.right, file(dir, "right", id, "pgm"))?;
        write_pfm(&s.gt, file(dir, "gt", id, "pfm"))?;
        write_pfm(&s.dense_gt, file(dir, "dense_gt", id, "pfm"))?;
        writeln!(manifest, "{id} {seed}").expect("writing to a String");
    }
    let path = dir.join(MANIFEST);
    std::fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
}

/// Reads the manifest of `dir` as `(id, seed)` pairs.
pub fn read_manifest(dir: impl AsRef<Path>) -> Result<Vec<(usize, u64)>> {
    let path = dir.as_ref().join(MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut offset = 0u64;
    let mut out = Vec::new();
    for line in text.lines() {
        let here = offset;
        offset += line.len() as u64 + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        let parsed = match (it.next(), it.next(), it.next()) {
            (Some(a), Some(b), None) => a.parse().ok().zip(b.parse().ok()),
            _ => None,
        };
        out.push(parsed.ok_or_else(|| Error::format(here, format!("bad manifest line {line:?}")))?);
    }
    Ok(out)
}

/// Loads every sample listed in the manifest, in manifest order.
pub fn read_dataset(dir: impl AsRef<Path>) -> Result<Vec<Sample>> {
    let dir = dir.as_ref();
    read_manifest(dir)?
        .into_iter()
        .map(|(id, _)| {
            Ok(Sample {
                left: read_pgm(file(dir, "left", id, "pgm"))?,
                right: read_pgm(file(dir, "right", id, "pgm"))?,
                gt: read_pfm(file(dir, "gt", id, "pfm"))?,
                dense_gt: read_pfm(file(dir, "dense_gt", id, "pfm"))?,
            })
        })
        .collect()
}
