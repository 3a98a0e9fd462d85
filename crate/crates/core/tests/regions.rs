use dkt_core::disparity::{
    apply_region_selector, bad_pixel_rate, decompose_regions, thresholds, DisparityMap, Region, RegionSelector,
};
use proptest::prelude::*;

fn map_strategy(n: usize) -> impl Strategy<Value = Vec<Option<f64>>> {
    prop::collection::vec(prop::option::weighted(0.8, (0u32..200).prop_map(|v| f64::from(v) / 4.0)), n)
}

fn pair() -> impl Strategy<Value = (usize, usize, Vec<Option<f64>>, Vec<f64>)> {
    (1usize..12, 1usize..12).prop_flat_map(|(w, h)| {
        (
            Just(w),
            Just(h),
            map_strategy(w * h),
            prop::collection::vec((0u32..200).prop_map(|v| f64::from(v) / 4.0), w * h),
        )
    })
}

#[test]
fn three_pixel_fixture() {
    let gt = DisparityMap::from_options(3, 1, &[Some(10.0), Some(20.0), None]).unwrap();
    let pl = DisparityMap::dense(3, 1, vec![11.5, 25.0, 7.0]).unwrap();
    let p = decompose_regions(&gt, &pl, 3.0).unwrap();
    assert_eq!(p.labels(), &[Region::Consistent, Region::Inconsistent, Region::Invalid]);
    let c = p.counts();
    assert_eq!((c.consistent, c.inconsistent, c.invalid), (1, 1, 1));
}

#[test]
fn pl_validity_is_ignored() {
    let gt = DisparityMap::dense(2, 1, vec![5.0, 5.0]).unwrap();
    let pl = DisparityMap::new(2, 1, vec![5.5, 9.0], vec![false, false]).unwrap();
    let p = decompose_regions(&gt, &pl, 3.0).unwrap();
    assert_eq!(p.labels(), &[Region::Consistent, Region::Inconsistent]);
}

#[test]
fn benchmark_thresholds() {
    assert_eq!((thresholds::KITTI, thresholds::MIDDLEBURY, thresholds::ETH3D), (3.0, 2.0, 1.0));
}

#[test]
fn bad_pixel_rate_is_strict() {
    let gt = DisparityMap::dense(3, 1, vec![0.0, 0.0, 0.0]).unwrap();
    let pred = DisparityMap::dense(3, 1, vec![1.0, 1.5, 0.2]).unwrap();
    let r = bad_pixel_rate(&pred, &gt, 1.0).unwrap();
    assert!((r.bad_pixel_rate - 1.0 / 3.0).abs() < 1e-15);
    assert!((r.mean_abs_error - 0.9).abs() < 1e-15);
    assert_eq!(r.n_valid, 3);
}

#[test]
fn empty_evaluation_is_an_error() {
    let gt = DisparityMap::all_invalid(2, 2);
    let pred = DisparityMap::dense(2, 2, vec![1.0; 4]).unwrap();
    assert!(bad_pixel_rate(&pred, &gt, 1.0).is_err());
}

proptest! {
    #[test]
    fn regions_partition_every_pixel((w, h, gt, pl) in pair(), tau in 0.25f64..10.0) {
        let gt = DisparityMap::from_options(w, h, &gt).unwrap();
        let pl = DisparityMap::dense(w, h, pl).unwrap();
        let p = decompose_regions(&gt, &pl, tau).unwrap();
        let c = p.counts();
        prop_assert_eq!(c.total(), w * h);
        prop_assert_eq!(c.valid(), gt.valid_count());
        for i in 0..w * h {
            let expect = match gt.value(i) {
                None => Region::Invalid,
                Some(g) if (pl.values()[i] - g).abs() < tau => Region::Consistent,
                Some(_) => Region::Inconsistent,
            };
            prop_assert_eq!(p.label(i), expect);
        }
    }

    #[test]
    fn consistent_region_grows_with_tau((w, h, gt, pl) in pair(), a in 0.25f64..5.0, b in 0.25f64..5.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let gt = DisparityMap::from_options(w, h, &gt).unwrap();
        let pl = DisparityMap::dense(w, h, pl).unwrap();
        let small = decompose_regions(&gt, &pl, lo).unwrap();
        let large = decompose_regions(&gt, &pl, hi).unwrap();
        for i in 0..w * h {
            if small.label(i) == Region::Consistent {
                prop_assert_eq!(large.label(i), Region::Consistent);
            }
        }
        prop_assert!(small.counts().consistent <= large.counts().consistent);
    }

    #[test]
    fn selectors_restrict_validity((w, h, gt, pl) in pair(), tau in 0.5f64..6.0) {
        let gt = DisparityMap::from_options(w, h, &gt).unwrap();
        let pl = DisparityMap::dense(w, h, pl).unwrap();
        let p = decompose_regions(&gt, &pl, tau).unwrap();
        let cons = apply_region_selector(&gt, &p, RegionSelector::ConsistentOnly).unwrap();
        let inc = apply_region_selector(&gt, &p, RegionSelector::InconsistentOnly).unwrap();
        let valid = apply_region_selector(&gt, &p, RegionSelector::Valid).unwrap();
        let all = apply_region_selector(&pl, &p, RegionSelector::All).unwrap();
        prop_assert_eq!(&valid, &gt);
        prop_assert_eq!(all.valid_count(), w * h);
        prop_assert_eq!(cons.valid_count() + inc.valid_count(), gt.valid_count());
        for i in 0..w * h {
            prop_assert_eq!(cons.is_valid(i), p.label(i) == Region::Consistent);
            prop_assert_eq!(inc.is_valid(i), p.label(i) == Region::Inconsistent);
            if let Some(v) = cons.value(i).or(inc.value(i)) {
                prop_assert_eq!(Some(v), gt.value(i));
            }
        }
    }

    #[test]
    fn bad_pixel_rate_falls_as_threshold_rises((w, h, gt, pl) in pair(), a in 0.0f64..8.0, b in 0.0f64..8.0) {
        let gt = DisparityMap::from_options(w, h, &gt).unwrap();
        prop_assume!(gt.valid_count() > 0);
        let pred = DisparityMap::dense(w, h, pl).unwrap();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let r_lo = bad_pixel_rate(&pred, &gt, lo).unwrap();
        let r_hi = bad_pixel_rate(&pred, &gt, hi).unwrap();
        prop_assert!(r_hi.bad_pixel_rate <= r_lo.bad_pixel_rate);
        prop_assert!((0.0..=1.0).contains(&r_lo.bad_pixel_rate));
        prop_assert_eq!(r_lo.mean_abs_error, r_hi.mean_abs_error);
    }
}
