//! Toy stereo matching with domain-adaptive fine-tuning.
//!
//! A tiny differentiable matcher is pre-trained on one synthetic domain and
//! fine-tuned on another. Fine-tuning strategies differ in how they combine
//! sparse ground truth with pseudo-labels from a frozen teacher, and the
//! distillation strategies additionally keep an exponential moving average
//! teacher to filter and ensemble both label sources.
//!
//! ```
//! use dkt_core::{decompose_regions, DisparityMap, Region};
//!
//! let gt = DisparityMap::from_options(3, 1, &[Some(10.0), Some(20.0), None]).unwrap();
//! let pl = DisparityMap::dense(3, 1, vec![11.5, 25.0, 7.0]).unwrap();
//! let p = decompose_regions(&gt, &pl, 3.0).unwrap();
//! assert_eq!(p.labels(), &[Region::Consistent, Region::Inconsistent, Region::Invalid]);
//! ```

// `!(x > 0.0)` rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod disparity;
pub mod error;
pub mod experiment;
pub mod image;
pub mod io;
pub mod labels;
pub mod matcher;
pub mod params;
pub mod rng;
pub mod synth;
pub mod trainer;

pub use disparity::{
    apply_region_selector, bad_pixel_rate, decompose_regions, DisparityMap, MetricReport, Region, RegionCounts,
    RegionPartition, RegionSelector,
};
pub use error::{Error, Result};
pub use image::GrayImage;
pub use labels::{fe_gt, fe_pl, EnsembleDraw, Granularity, ImprovedLabels};
pub use matcher::{MatcherParams, Prediction};
pub use params::{ema_update, reinit, EmaConfig, ParamVector};
pub use synth::{Domain, DomainSpec, Sample};
pub use trainer::{finetune, pretrain, RunReport, Strategy, TrainConfig};
