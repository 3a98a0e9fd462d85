//! Disparity maps, region decomposition and bad-pixel metrics.
//!
//! A [`DisparityMap`] always carries an explicit validity mask. File formats
//! that encode invalid pixels with sentinels (`+inf` in PFM, `0` in 16-bit
//! PNG) translate them at the codec boundary, so none of the math here ever
//! inspects a sentinel value.

use crate::error::{Error, Result};

/// Dense grid of disparities (pixels of horizontal shift) with a validity mask.
///
/// Values at invalid pixels are unspecified: they are kept as stored but
/// never read by any metric, and equality ignores them.
#[derive(Debug, Clone)]
pub struct DisparityMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
    valid: Vec<bool>,
}

impl DisparityMap {
    /// Builds a map from row-major values and a validity mask.
    pub fn new(width: usize, height: usize, values: Vec<f64>, valid: Vec<bool>) -> Result<Self> {
        let n = width * height;
        if values.len() != n || valid.len() != n {
            return Err(Error::shape(
                format!("{n} pixels ({width}x{height})"),
                format!("{} values, {} mask entries", values.len(), valid.len()),
            ));
        }
        if let Some(i) = (0..n).find(|&i| valid[i] && !values[i].is_finite()) {
            return Err(Error::Numeric { what: "valid disparity", x: i % width, y: i / width });
        }
        Ok(Self { width, height, values, valid })
    }

    /// A map that is valid at every pixel.
    pub fn dense(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        let n = values.len();
        Self::new(width, height, values, vec![true; n])
    }

    /// A map with no valid pixel.
    pub fn all_invalid(width: usize, height: usize) -> Self {
        Self { width, height, values: vec![0.0; width * height], valid: vec![false; width * height] }
    }

    /// Builds a map from optional per-pixel values (`None` is invalid).
    pub fn from_options(width: usize, height: usize, pixels: &[Option<f64>]) -> Result<Self> {
        let values = pixels.iter().map(|p| p.unwrap_or(0.0)).collect();
        let valid = pixels.iter().map(Option::is_some).collect();
        Self::new(width, height, values, valid)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Raw row-major values, including the unspecified ones at invalid pixels.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mask(&self) -> &[bool] {
        &self.valid
    }

    pub fn is_valid(&self, i: usize) -> bool {
        self.valid[i]
    }

    /// Value at linear index `i` if that pixel is valid.
    pub fn value(&self, i: usize) -> Option<f64> {
        self.valid[i].then(|| self.values[i])
    }

    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        self.value(y * self.width + x)
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    pub fn same_shape(&self, other: &DisparityMap) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub(crate) fn check_shape(&self, other: &DisparityMap) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::shape(format!("{}x{}", self.width, self.height), format!("{}x{}", other.width, other.height)))
        }
    }

    /// Copy of this map whose validity is `self.valid && keep`.
    pub fn restricted(&self, keep: &[bool]) -> Result<Self> {
        if keep.len() != self.len() {
            return Err(Error::shape(self.len(), keep.len()));
        }
        let valid = self.valid.iter().zip(keep).map(|(&a, &b)| a && b).collect();
        Ok(Self { width: self.width, height: self.height, values: self.values.clone(), valid })
    }

    /// Same values, every pixel marked valid.
    ///
    /// Only meaningful for maps whose invalid slots still hold real values,
    /// such as predictions or blended pseudo labels.
    pub fn densified(&self) -> Self {
        Self { width: self.width, height: self.height, values: self.values.clone(), valid: vec![true; self.len()] }
    }

    /// Range of the valid values, or `None` when nothing is valid.
    pub fn valid_range(&self) -> Option<(f64, f64)> {
        self.values.iter().zip(&self.valid).filter(|(_, &v)| v).fold(None, |acc, (&d, _)| match acc {
            None => Some((d, d)),
            Some((lo, hi)) => Some((lo.min(d), hi.max(d))),
        })
    }
}

impl PartialEq for DisparityMap {
    fn eq(&self, other: &Self) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.valid == other.valid
            && self.values.iter().zip(&other.values).zip(&self.valid).all(|((a, b), &v)| !v || a == b)
    }
}

/// Label of a pixel relative to a (ground truth, pseudo label, threshold) triple.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Region {
    /// `|pl - gt| < tau`
    Consistent,
    /// `|pl - gt| >= tau`
    Inconsistent,
    /// No ground truth at this pixel.
    Invalid,
}

/// Per-pixel region labels for a given threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionPartition {
    tau: f64,
    width: usize,
    height: usize,
    labels: Vec<Region>,
}

/// Pixel counts of each region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RegionCounts {
    pub consistent: usize,
    pub inconsistent: usize,
    pub invalid: usize,
}

impl RegionCounts {
    pub fn total(&self) -> usize {
        self.consistent + self.inconsistent + self.invalid
    }

    /// Pixels with ground truth.
    pub fn valid(&self) -> usize {
        self.consistent + self.inconsistent
    }
}

impl RegionPartition {
    pub fn from_labels(width: usize, height: usize, tau: f64, labels: Vec<Region>) -> Result<Self> {
        if labels.len() != width * height {
            return Err(Error::shape(width * height, labels.len()));
        }
        Ok(Self { tau, width, height, labels })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> &[Region] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> Region {
        self.labels[i]
    }

    pub fn counts(&self) -> RegionCounts {
        let mut c = RegionCounts::default();
        for l in &self.labels {
            match l {
                Region::Consistent => c.consistent += 1,
                Region::Inconsistent => c.inconsistent += 1,
                Region::Invalid => c.invalid += 1,
            }
        }
        c
    }

    /// Membership mask of one region.
    pub fn mask_of(&self, region: Region) -> Vec<bool> {
        self.labels.iter().map(|&l| l == region).collect()
    }

    fn check_shape(&self, map: &DisparityMap) -> Result<()> {
        if self.width == map.width() && self.height == map.height() {
            Ok(())
        } else {
            Err(Error::shape(format!("{}x{}", self.width, self.height), format!("{}x{}", map.width(), map.height())))
        }
    }
}

/// Splits the ground-truth pixels into consistent and inconsistent regions
/// according to their disagreement with a pseudo label.
///
/// The pseudo label is treated as dense; its validity mask is ignored. A
/// difference of exactly `tau` is inconsistent.
pub fn decompose_regions(gt: &DisparityMap, pl: &DisparityMap, tau: f64) -> Result<RegionPartition> {
    gt.check_shape(pl)?;
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("tau must be positive, got {tau}")));
    }
    let labels = (0..gt.len())
        .map(|i| match gt.value(i) {
            None => Region::Invalid,
            Some(g) if (pl.values()[i] - g).abs() < tau => Region::Consistent,
            Some(_) => Region::Inconsistent,
        })
        .collect();
    Ok(RegionPartition { tau, width: gt.width(), height: gt.height(), labels })
}

/// Bad-pixel rate and masked mean absolute error over the valid ground truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub threshold: f64,
    pub bad_pixel_rate: f64,
    pub mean_abs_error: f64,
    pub n_valid: usize,
}

/// Fraction of valid ground-truth pixels whose absolute error is strictly
/// larger than `threshold`.
pub fn bad_pixel_rate(pred: &DisparityMap, gt: &DisparityMap, threshold: f64) -> Result<MetricReport> {
    gt.check_shape(pred)?;
    let mut n_valid = 0usize;
    let mut n_bad = 0usize;
    let mut abs_sum = 0.0;
    for i in 0..gt.len() {
        if let Some(g) = gt.value(i) {
            let err = (pred.values()[i] - g).abs();
            n_valid += 1;
            abs_sum += err;
            if err > threshold {
                n_bad += 1;
            }
        }
    }
    if n_valid == 0 {
        return Err(Error::EmptyEvaluation);
    }
    Ok(MetricReport {
        threshold,
        bad_pixel_rate: n_bad as f64 / n_valid as f64,
        mean_abs_error: abs_sum / n_valid as f64,
        n_valid,
    })
}

/// Standard bad-pixel thresholds per benchmark family.
pub mod thresholds {
    /// KITTI and DrivingStereo.
    pub const KITTI: f64 = 3.0;
    /// Middlebury and Booster.
    pub const MIDDLEBURY: f64 = 2.0;
    /// ETH3D.
    pub const ETH3D: f64 = 1.0;
}

/// Which pixels of a map to keep as supervision.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegionSelector {
    /// Pixels with ground truth.
    Valid,
    ConsistentOnly,
    InconsistentOnly,
    /// The map unchanged, including pixels without ground truth.
    All,
}

/// Intersects the map's validity with the selected region of `partition`.
pub fn apply_region_selector(
    map: &DisparityMap,
    partition: &RegionPartition,
    selector: RegionSelector,
) -> Result<DisparityMap> {
    partition.check_shape(map)?;
    let keep: Vec<bool> = match selector {
        RegionSelector::All => return Ok(map.clone()),
        RegionSelector::Valid => partition.labels.iter().map(|&l| l != Region::Invalid).collect(),
        RegionSelector::ConsistentOnly => partition.mask_of(Region::Consistent),
        RegionSelector::InconsistentOnly => partition.mask_of(Region::Inconsistent),
    };
    map.restricted(&keep)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn three_pixel() -> (DisparityMap, DisparityMap) {
        let gt = DisparityMap::from_options(3, 1, &[Some(10.0), Some(20.0), None]).unwrap();
        let pl = DisparityMap::dense(3, 1, vec![11.5, 25.0, 7.0]).unwrap();
        (gt, pl)
    }

    #[test]
    fn three_pixel_fixture() {
        let (gt, pl) = three_pixel();
        let p = decompose_regions(&gt, &pl, 3.0).unwrap();
        assert_eq!(p.labels(), &[Region::Consistent, Region::Inconsistent, Region::Invalid]);
    }

    #[test]
    fn boundary_goes_to_inconsistent() {
        let gt = DisparityMap::dense(1, 1, vec![10.0]).unwrap();
        let pl = DisparityMap::dense(1, 1, vec![13.0]).unwrap();
        let p = decompose_regions(&gt, &pl, 3.0).unwrap();
        assert_eq!(p.labels(), &[Region::Inconsistent]);
    }

    #[test]
    fn equal_maps_are_consistent() {
        let gt = DisparityMap::dense(4, 2, (0..8).map(f64::from).collect()).unwrap();
        let p = decompose_regions(&gt, &gt, 3.0).unwrap();
        let c = p.counts();
        assert_eq!(c.consistent, 8);
        assert_eq!(c.inconsistent, 0);
    }

    #[test]
    fn all_invalid_gt() {
        let gt = DisparityMap::all_invalid(5, 3);
        let pl = DisparityMap::dense(5, 3, vec![1.0; 15]).unwrap();
        let p = decompose_regions(&gt, &pl, 1.0).unwrap();
        assert_eq!(p.counts().invalid, 15);
    }

    #[test]
    fn pl_mask_is_ignored() {
        let gt = DisparityMap::dense(2, 1, vec![1.0, 1.0]).unwrap();
        let pl = DisparityMap::new(2, 1, vec![1.0, 9.0], vec![false, false]).unwrap();
        let p = decompose_regions(&gt, &pl, 3.0).unwrap();
        assert_eq!(p.labels(), &[Region::Consistent, Region::Inconsistent]);
    }

    #[test]
    fn decompose_errors() {
        let a = DisparityMap::all_invalid(2, 2);
        let b = DisparityMap::all_invalid(2, 3);
        assert!(matches!(decompose_regions(&a, &b, 1.0), Err(Error::Shape { .. })));
        assert!(matches!(decompose_regions(&a, &a, 0.0), Err(Error::InvalidArgument(_))));
        assert!(matches!(decompose_regions(&a, &a, -1.0), Err(Error::InvalidArgument(_))));
        assert!(matches!(decompose_regions(&a, &a, f64::NAN), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn bad_pixel_examples() {
        let gt = DisparityMap::dense(4, 1, vec![5.0; 4]).unwrap();
        let pred = DisparityMap::dense(4, 1, vec![5.0, 5.0, 5.0, 9.0]).unwrap();
        let r = bad_pixel_rate(&pred, &gt, 3.0).unwrap();
        assert_eq!(r.bad_pixel_rate, 0.25);
        assert_eq!(r.mean_abs_error, 1.0);
        assert_eq!(r.n_valid, 4);
        assert_eq!(bad_pixel_rate(&gt, &gt, 3.0).unwrap().bad_pixel_rate, 0.0);
    }

    #[test]
    fn error_equal_to_threshold_is_not_bad() {
        let gt = DisparityMap::dense(1, 1, vec![5.0]).unwrap();
        let pred = DisparityMap::dense(1, 1, vec![8.0]).unwrap();
        assert_eq!(bad_pixel_rate(&pred, &gt, 3.0).unwrap().bad_pixel_rate, 0.0);
    }

    #[test]
    fn empty_evaluation() {
        let gt = DisparityMap::all_invalid(3, 3);
        let pred = DisparityMap::dense(3, 3, vec![0.0; 9]).unwrap();
        assert!(matches!(bad_pixel_rate(&pred, &gt, 3.0), Err(Error::EmptyEvaluation)));
    }

    #[test]
    fn selectors() {
        let (gt, pl) = three_pixel();
        let p = decompose_regions(&gt, &pl, 3.0).unwrap();
        let c = apply_region_selector(&gt, &p, RegionSelector::ConsistentOnly).unwrap();
        assert_eq!(c.mask(), &[true, false, false]);
        let all = apply_region_selector(&pl, &p, RegionSelector::All).unwrap();
        assert_eq!(all, pl);
        let valid = apply_region_selector(&pl, &p, RegionSelector::Valid).unwrap();
        assert_eq!(valid.mask(), &[true, true, false]);

        let consistent = decompose_regions(&gt, &gt, 3.0).unwrap();
        let inc = apply_region_selector(&gt, &consistent, RegionSelector::InconsistentOnly).unwrap();
        assert_eq!(inc.valid_count(), 0);
    }

    #[test]
    fn non_finite_valid_value_rejected() {
        let err = DisparityMap::dense(2, 1, vec![1.0, f64::INFINITY]).unwrap_err();
        assert!(matches!(err, Error::Numeric { x: 1, y: 0, .. }));
        assert!(DisparityMap::new(1, 1, vec![f64::NAN], vec![false]).is_ok());
    }
}
