//! Filter-and-ensemble label engineering.
//!
//! Two operators improve the supervision handed to the student:
//!
//! * [`fe_gt`] works on ground truth. The inconsistent region (where the
//!   EMA teacher disagrees with ground truth by at least `tau`) is dropped
//!   with probability `|X_inc| / |X_valid|`; the consistent region is blended
//!   with the EMA teacher's prediction and truncated to stay within
//!   `clamp_radius` of the ground truth.
//! * [`fe_pl`] works on the frozen teacher's pseudo label. Pixels where it
//!   disagrees with the EMA teacher by `tau` or more are masked out, and the
//!   label is blended with the EMA prediction everywhere.
//!
//! All randomness arrives through [`EnsembleDraw`] values, so the operators
//! are pure.

use rand::Rng;

use crate::disparity::{DisparityMap, Region, RegionPartition};
use crate::error::{Error, Result};

/// Uniform draws consumed by one filter-and-ensemble call.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnsembleDraw {
    /// Compared against the inconsistent fraction to decide whether the
    /// inconsistent ground truth is kept.
    pub keep_u: f64,
    /// Weight of the ground truth in the consistent-region blend.
    pub alpha: f64,
    /// Weight of the frozen-teacher pseudo label in its blend.
    pub beta: f64,
}

impl EnsembleDraw {
    pub fn new(keep_u: f64, alpha: f64, beta: f64) -> Result<Self> {
        for (name, v) in [("keep_u", keep_u), ("alpha", alpha), ("beta", beta)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::InvalidArgument(format!("{name} must lie in [0, 1), got {v}")));
            }
        }
        Ok(Self { keep_u, alpha, beta })
    }

    /// Draws the three values in the order keep, alpha, beta.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let keep_u = rng.random::<f64>();
        let alpha = rng.random::<f64>();
        let beta = rng.random::<f64>();
        Self { keep_u, alpha, beta }
    }
}

/// Whether a draw is shared by the whole image or made per pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Granularity {
    #[default]
    Image,
    Pixel,
}

impl std::str::FromStr for Granularity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "image" => Ok(Granularity::Image),
            "pixel" => Ok(Granularity::Pixel),
            other => Err(Error::InvalidArgument(format!("granularity must be `image` or `pixel`, got `{other}`"))),
        }
    }
}

impl std::fmt::Display for Granularity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Granularity::Image => "image",
            Granularity::Pixel => "pixel",
        })
    }
}

/// Draws for a whole image: one shared value, or one per pixel.
#[derive(Debug, Clone, PartialEq)]
pub enum Draws {
    Image(EnsembleDraw),
    Pixel(Vec<EnsembleDraw>),
}

impl Draws {
    fn at(&self, i: usize) -> EnsembleDraw {
        match self {
            Draws::Image(d) => *d,
            Draws::Pixel(v) => v[i],
        }
    }

    fn check_len(&self, n: usize) -> Result<()> {
        match self {
            Draws::Pixel(v) if v.len() != n => Err(Error::shape(n, v.len())),
            _ => Ok(()),
        }
    }
}

/// Improved supervision for one training step.
///
/// The masks are the validity masks of the two maps.
#[derive(Debug, Clone, PartialEq)]
pub struct ImprovedLabels {
    pub gt_bar: DisparityMap,
    pub pl_bar: DisparityMap,
}

impl ImprovedLabels {
    pub fn gt_only(gt_bar: DisparityMap) -> Self {
        let pl_bar = DisparityMap::all_invalid(gt_bar.width(), gt_bar.height());
        Self { gt_bar, pl_bar }
    }

    pub fn pl_only(pl_bar: DisparityMap) -> Self {
        let gt_bar = DisparityMap::all_invalid(pl_bar.width(), pl_bar.height());
        Self { gt_bar, pl_bar }
    }

    pub fn gt_mask(&self) -> &[bool] {
        self.gt_bar.mask()
    }

    pub fn pl_mask(&self) -> &[bool] {
        self.pl_bar.mask()
    }
}

/// Fraction of valid ground truth that is inconsistent; `None` when there is
/// no valid ground truth at all.
pub fn inconsistent_fraction(partition: &RegionPartition) -> Option<f64> {
    let c = partition.counts();
    (c.valid() > 0).then(|| c.inconsistent as f64 / c.valid() as f64)
}

/// F&E-GT with image-level draws.
pub fn fe_gt(
    gt: &DisparityMap,
    ema_pred: &DisparityMap,
    partition: &RegionPartition,
    draw: EnsembleDraw,
    clamp_radius: f64,
) -> Result<DisparityMap> {
    fe_gt_with(gt, ema_pred, partition, &Draws::Image(draw), clamp_radius)
}

/// F&E-GT with arbitrary draw granularity. `partner` is the prediction the
/// consistent region is blended with.
pub fn fe_gt_with(
    gt: &DisparityMap,
    partner: &DisparityMap,
    partition: &RegionPartition,
    draws: &Draws,
    clamp_radius: f64,
) -> Result<DisparityMap> {
    check_inputs(gt, partner, partition, draws, clamp_radius)?;
    let partner = partner.values();
    fe_gt_core(gt, partition, draws, |i, g, alpha| {
        let blended = alpha * g + (1.0 - alpha) * partner[i];
        blended.max(g - clamp_radius).min(g + clamp_radius)
    })
}

/// Blend partner for the consistent region in the permutation ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Permutation {
    /// Uniform noise in (-1, 1) added to the ground truth.
    RandomNoise,
    /// Blend with the frozen teacher's pseudo label.
    FrozenTeacher,
    /// Blend with the EMA teacher's prediction; identical to [`fe_gt`].
    EmaTeacher,
}

/// F&E-GT with an alternative perturbation of the consistent region.
///
/// `partition` must come from the EMA teacher for every variant. For the
/// teacher variants `aux_pred` is the blend partner and `noise` is ignored;
/// for [`Permutation::RandomNoise`] `noise` holds one value in (-1, 1) per
/// pixel and `aux_pred` is ignored.
pub fn fe_gt_permutation_variant(
    gt: &DisparityMap,
    partition: &RegionPartition,
    draws: &Draws,
    variant: Permutation,
    aux_pred: &DisparityMap,
    noise: &[f64],
    clamp_radius: f64,
) -> Result<DisparityMap> {
    match variant {
        Permutation::FrozenTeacher | Permutation::EmaTeacher => {
            fe_gt_with(gt, aux_pred, partition, draws, clamp_radius)
        }
        Permutation::RandomNoise => {
            if noise.len() != gt.len() {
                return Err(Error::shape(gt.len(), noise.len()));
            }
            if let Some(n) = noise.iter().find(|n| !(n.abs() < 1.0)) {
                return Err(Error::InvalidArgument(format!("noise {n} outside (-1, 1)")));
            }
            check_inputs(gt, gt, partition, draws, clamp_radius)?;
            fe_gt_core(gt, partition, draws, |i, g, _| g + noise[i])
        }
    }
}

/// Uniform noise field in the open interval (-1, 1).
pub fn uniform_noise<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| loop {
            let v = rng.random_range(-1.0..1.0);
            if v != -1.0 {
                break v;
            }
        })
        .collect()
}

fn check_inputs(
    gt: &DisparityMap,
    partner: &DisparityMap,
    partition: &RegionPartition,
    draws: &Draws,
    clamp_radius: f64,
) -> Result<()> {
    gt.check_shape(partner)?;
    if partition.width() != gt.width() || partition.height() != gt.height() {
        return Err(Error::shape(
            format!("{}x{}", gt.width(), gt.height()),
            format!("{}x{}", partition.width(), partition.height()),
        ));
    }
    draws.check_len(gt.len())?;
    if !(clamp_radius >= 0.0) {
        return Err(Error::InvalidArgument(format!("clamp radius must be non-negative, got {clamp_radius}")));
    }
    Ok(())
}

fn fe_gt_core(
    gt: &DisparityMap,
    partition: &RegionPartition,
    draws: &Draws,
    consistent_value: impl Fn(usize, f64, f64) -> f64,
) -> Result<DisparityMap> {
    let ratio = inconsistent_fraction(partition);
    let n = gt.len();
    let mut values = gt.values().to_vec();
    let mut valid = vec![false; n];
    for i in 0..n {
        let Some(g) = gt.value(i) else { continue };
        let draw = draws.at(i);
        match partition.label(i) {
            Region::Consistent => {
                values[i] = consistent_value(i, g, draw.alpha);
                valid[i] = true;
            }
            Region::Inconsistent => {
                // ratio is Some whenever an inconsistent pixel exists
                valid[i] = ratio.is_some_and(|r| draw.keep_u > r);
            }
            Region::Invalid => {}
        }
    }
    DisparityMap::new(gt.width(), gt.height(), values, valid)
}

/// F&E-PL with an image-level draw.
pub fn fe_pl(pl_frozen: &DisparityMap, ema_pred: &DisparityMap, tau: f64, draw: EnsembleDraw) -> Result<DisparityMap> {
    fe_pl_with(pl_frozen, ema_pred, tau, &Draws::Image(draw))
}

/// F&E-PL with arbitrary blend granularity. Both inputs are read as dense.
pub fn fe_pl_with(pl_frozen: &DisparityMap, ema_pred: &DisparityMap, tau: f64, draws: &Draws) -> Result<DisparityMap> {
    pl_frozen.check_shape(ema_pred)?;
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("tau must be positive, got {tau}")));
    }
    draws.check_len(pl_frozen.len())?;
    let (frozen, ema) = (pl_frozen.values(), ema_pred.values());
    let mut values = Vec::with_capacity(frozen.len());
    let mut mask = Vec::with_capacity(frozen.len());
    for i in 0..frozen.len() {
        let beta = draws.at(i).beta;
        mask.push((frozen[i] - ema[i]).abs() < tau);
        values.push(beta * frozen[i] + (1.0 - beta) * ema[i]);
    }
    DisparityMap::new(pl_frozen.width(), pl_frozen.height(), values, mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::disparity::decompose_regions;

    fn draw(keep_u: f64, alpha: f64, beta: f64) -> EnsembleDraw {
        EnsembleDraw::new(keep_u, alpha, beta).unwrap()
    }

    fn single(v: f64) -> DisparityMap {
        DisparityMap::dense(1, 1, vec![v]).unwrap()
    }

    #[test]
    fn blend_within_radius() {
        let gt = single(10.0);
        let ema = single(10.4);
        let p = decompose_regions(&gt, &ema, 3.0).unwrap();
        let out = fe_gt(&gt, &ema, &p, draw(0.5, 0.25, 0.0), 1.0).unwrap();
        assert!((out.get(0, 0).unwrap() - 10.3).abs() < 1e-12);
    }

    #[test]
    fn blend_is_clamped() {
        let gt = single(10.0);
        let ema = single(12.0);
        let p = decompose_regions(&gt, &ema, 3.0).unwrap();
        let out = fe_gt(&gt, &ema, &p, draw(0.5, 0.0, 0.0), 1.0).unwrap();
        assert_eq!(out.get(0, 0), Some(11.0));
    }

    #[test]
    fn identical_prediction_leaves_gt() {
        let gt = DisparityMap::from_options(3, 1, &[Some(4.0), Some(7.5), None]).unwrap();
        let ema = DisparityMap::dense(3, 1, vec![4.0, 7.5, 1.0]).unwrap();
        let p = decompose_regions(&gt, &ema, 3.0).unwrap();
        for alpha in [0.0, 0.3, 0.999] {
            let out = fe_gt(&gt, &ema, &p, draw(0.1, alpha, 0.0), 1.0).unwrap();
            assert_eq!(out, gt);
        }
    }

    #[test]
    fn no_inconsistent_region_never_drops() {
        let gt = DisparityMap::dense(2, 1, vec![1.0, 2.0]).unwrap();
        let p = decompose_regions(&gt, &gt, 3.0).unwrap();
        assert_eq!(inconsistent_fraction(&p), Some(0.0));
        let out = fe_gt(&gt, &gt, &p, draw(1e-9, 0.5, 0.5), 1.0).unwrap();
        assert_eq!(out.valid_count(), 2);
    }

    #[test]
    fn inconsistent_region_kept_or_dropped_whole() {
        // 2 of 4 valid pixels inconsistent -> ratio 0.5
        let gt = DisparityMap::dense(4, 1, vec![1.0, 1.0, 1.0, 1.0]).unwrap();
        let ema = DisparityMap::dense(4, 1, vec![1.0, 1.0, 9.0, 9.0]).unwrap();
        let p = decompose_regions(&gt, &ema, 3.0).unwrap();
        let kept = fe_gt(&gt, &ema, &p, draw(0.6, 0.5, 0.0), 1.0).unwrap();
        assert_eq!(kept.mask(), &[true, true, true, true]);
        assert_eq!(kept.get(2, 0), Some(1.0));
        let dropped = fe_gt(&gt, &ema, &p, draw(0.5, 0.5, 0.0), 1.0).unwrap();
        assert_eq!(dropped.mask(), &[true, true, false, false]);
    }

    #[test]
    fn empty_valid_region() {
        let gt = DisparityMap::all_invalid(2, 2);
        let ema = DisparityMap::dense(2, 2, vec![1.0; 4]).unwrap();
        let p = decompose_regions(&gt, &ema, 3.0).unwrap();
        assert_eq!(inconsistent_fraction(&p), None);
        let out = fe_gt(&gt, &ema, &p, draw(0.5, 0.5, 0.5), 1.0).unwrap();
        assert_eq!(out.valid_count(), 0);
    }

    #[test]
    fn pixel_granularity() {
        let gt = DisparityMap::dense(2, 1, vec![1.0, 1.0]).unwrap();
        let ema = DisparityMap::dense(2, 1, vec![9.0, 9.0]).unwrap();
        let p = decompose_regions(&gt, &ema, 3.0).unwrap();
        // ratio 1.0: nothing can be kept
        let draws = Draws::Pixel(vec![draw(0.9, 0.0, 0.0), draw(0.1, 0.0, 0.0)]);
        let out = fe_gt_with(&gt, &ema, &p, &draws, 1.0).unwrap();
        assert_eq!(out.valid_count(), 0);

        let ema = DisparityMap::dense(2, 1, vec![2.0, 2.0]).unwrap();
        let p = decompose_regions(&gt, &ema, 3.0).unwrap();
        let draws = Draws::Pixel(vec![draw(0.0, 0.0, 0.0), draw(0.0, 0.5, 0.0)]);
        let out = fe_gt_with(&gt, &ema, &p, &draws, 1.0).unwrap();
        assert_eq!(out.values(), &[2.0, 1.5]);

        let short = Draws::Pixel(vec![draw(0.0, 0.0, 0.0)]);
        assert!(fe_gt_with(&gt, &ema, &p, &short, 1.0).is_err());
    }

    #[test]
    fn fe_pl_examples() {
        let out = fe_pl(&single(10.0), &single(14.0), 3.0, draw(0.0, 0.0, 0.5)).unwrap();
        assert_eq!(out.mask(), &[false]);
        let out = fe_pl(&single(10.0), &single(12.0), 3.0, draw(0.0, 0.0, 0.5)).unwrap();
        assert_eq!(out.mask(), &[true]);
        assert_eq!(out.values(), &[11.0]);
        let pl = DisparityMap::dense(3, 1, vec![1.0, 2.5, 8.0]).unwrap();
        for beta in [0.0, 0.5, 0.75] {
            let out = fe_pl(&pl, &pl, 3.0, draw(0.0, 0.0, beta)).unwrap();
            assert_eq!(out, pl);
        }
    }

    #[test]
    fn fe_pl_errors() {
        let a = single(1.0);
        let b = DisparityMap::dense(2, 1, vec![1.0, 1.0]).unwrap();
        assert!(fe_pl(&a, &b, 3.0, draw(0.0, 0.0, 0.0)).is_err());
        assert!(fe_pl(&a, &a, 0.0, draw(0.0, 0.0, 0.0)).is_err());
    }

    #[test]
    fn permutation_variants() {
        let gt = single(10.0);
        let p = decompose_regions(&gt, &gt, 3.0).unwrap();
        let d = Draws::Image(draw(0.5, 0.5, 0.5));
        let noisy = fe_gt_permutation_variant(&gt, &p, &d, Permutation::RandomNoise, &gt, &[-0.7], 1.0).unwrap();
        assert!((noisy.get(0, 0).unwrap() - 9.3).abs() < 1e-12);
        let zero = fe_gt_permutation_variant(&gt, &p, &d, Permutation::RandomNoise, &gt, &[0.0], 1.0).unwrap();
        assert_eq!(zero, gt);
        assert!(fe_gt_permutation_variant(&gt, &p, &d, Permutation::RandomNoise, &gt, &[1.0], 1.0).is_err());

        let ema = single(10.6);
        let via_variant = fe_gt_permutation_variant(&gt, &p, &d, Permutation::EmaTeacher, &ema, &[], 1.0).unwrap();
        let direct = fe_gt(&gt, &ema, &p, draw(0.5, 0.5, 0.5), 1.0).unwrap();
        assert_eq!(via_variant.values()[0].to_bits(), direct.values()[0].to_bits());
    }

    #[test]
    fn draw_validation() {
        assert!(EnsembleDraw::new(1.0, 0.0, 0.0).is_err());
        assert!(EnsembleDraw::new(0.0, -0.1, 0.0).is_err());
        assert!(EnsembleDraw::new(0.0, 0.0, f64::NAN).is_err());
    }

    #[test]
    fn noise_is_open_interval() {
        let mut rng = crate::rng::stream(1, 0, 0, crate::rng::Stream::PixelNoise);
        assert!(uniform_noise(&mut rng, 10_000).iter().all(|v| v.abs() < 1.0));
    }
}
