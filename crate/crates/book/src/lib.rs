//! Guide chapters, compiled as doc-tests.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/regions.md")]
pub mod regions {}

#[doc = include_str!("../../../book/src/filter_and_ensemble.md")]
pub mod filter_and_ensemble {}

#[doc = include_str!("../../../book/src/ema_teacher.md")]
pub mod ema_teacher {}

#[doc = include_str!("../../../book/src/matcher.md")]
pub mod matcher {}

#[doc = include_str!("../../../book/src/synthetic_domains.md")]
pub mod synthetic_domains {}

#[doc = include_str!("../../../book/src/formats.md")]
pub mod formats {}

#[doc = include_str!("../../../book/src/training.md")]
pub mod training {}
