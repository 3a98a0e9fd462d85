//! Pre-training, fine-tuning under every labeling strategy, evaluation and
//! the ablation suite.
//!
//! Fine-tuning keeps three copies of the matcher:
//!
//! * the **student**, trained by SGD and returned at the end;
//! * the **frozen teacher**, the pre-trained weights, which produces the
//!   pseudo labels (cached per sample since it never changes);
//! * the **EMA teacher**, a moving average of the student used by the
//!   filter-and-ensemble strategies to judge what the student has learned.
//!
//! Per step: pick a sample, assemble labels for the strategy, take one SGD
//! step on the student, then update the EMA teacher (and reset it to the
//! student once the re-initialization step is reached).

use std::cell::Cell;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use rand::Rng;

use crate::disparity::{
    apply_region_selector, bad_pixel_rate, decompose_regions, DisparityMap, MetricReport, RegionSelector,
};
use crate::error::{Error, Result};
use crate::labels::{
    fe_gt_permutation_variant, fe_gt_with, fe_pl_with, uniform_noise, Draws, EnsembleDraw, Granularity, ImprovedLabels,
    Permutation,
};
use crate::matcher::{build_cost_volume, loss_and_gradient, predict, sgd_step, CostVolume, LossConfig, MatcherParams};
use crate::params::{ema_update, reinit, EmaConfig};
use crate::rng::{derive_seed, stream, Stream};
use crate::synth::Sample;

/// Region of the pseudo label paired with ground truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PlRegion {
    All,
    Valid,
    Consistent(f64),
    Inconsistent(f64),
}

/// A fine-tuning recipe.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Strategy {
    GtValid,
    GtConsistent(f64),
    GtInconsistent(f64),
    PlAll,
    PlValid,
    PlConsistent(f64),
    PlInconsistent(f64),
    GtPlusPl(PlRegion),
    /// F&E-GT and F&E-PL together.
    DktFull,
    /// As `DktFull`, with the EMA teacher's prediction in place of the
    /// frozen teacher's pseudo label.
    DktNoFrozenTeacher,
    /// F&E-GT with the raw pseudo label.
    DktFeGtOnly,
    /// F&E-PL with the raw ground truth.
    DktFePlOnly,
    /// `DktFull` with an alternative consistent-region perturbation.
    FeGtPermutation(Permutation),
}

fn fmt_tau(tau: f64) -> String {
    if tau.fract() == 0.0 && tau.abs() < 1e9 {
        format!("{}", tau as i64)
    } else {
        format!("{tau}")
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match *self {
            Strategy::GtValid => "gt-valid".to_string(),
            Strategy::GtConsistent(t) => format!("gt-consistent-{}", fmt_tau(t)),
            Strategy::GtInconsistent(t) => format!("gt-inconsistent-{}", fmt_tau(t)),
            Strategy::PlAll => "pl-all".to_string(),
            Strategy::PlValid => "pl-valid".to_string(),
            Strategy::PlConsistent(t) => format!("pl-consistent-{}", fmt_tau(t)),
            Strategy::PlInconsistent(t) => format!("pl-inconsistent-{}", fmt_tau(t)),
            Strategy::GtPlusPl(PlRegion::All) => "gt-pl-all".to_string(),
            Strategy::GtPlusPl(PlRegion::Valid) => "gt-pl-valid".to_string(),
            Strategy::GtPlusPl(PlRegion::Consistent(t)) => format!("gt-pl-consistent-{}", fmt_tau(t)),
            Strategy::GtPlusPl(PlRegion::Inconsistent(t)) => format!("gt-pl-inconsistent-{}", fmt_tau(t)),
            Strategy::DktFull => "dkt-full".to_string(),
            Strategy::DktNoFrozenTeacher => "dkt-no-frozen".to_string(),
            Strategy::DktFeGtOnly => "dkt-fe-gt-only".to_string(),
            Strategy::DktFePlOnly => "dkt-fe-pl-only".to_string(),
            Strategy::FeGtPermutation(Permutation::RandomNoise) => "dkt-perm-noise".to_string(),
            Strategy::FeGtPermutation(Permutation::FrozenTeacher) => "dkt-perm-frozen".to_string(),
            Strategy::FeGtPermutation(Permutation::EmaTeacher) => "dkt-perm-ema".to_string(),
        };
        f.write_str(&s)
    }
}

/// Name patterns accepted by [`Strategy::from_str`]; `<tau>` is a positive number.
pub const STRATEGY_NAMES: &[&str] = &[
    "gt-valid",
    "gt-consistent-<tau>",
    "gt-inconsistent-<tau>",
    "pl-all",
    "pl-valid",
    "pl-consistent-<tau>",
    "pl-inconsistent-<tau>",
    "gt-pl-all",
    "gt-pl-valid",
    "gt-pl-consistent-<tau>",
    "gt-pl-inconsistent-<tau>",
    "dkt-full",
    "dkt-no-frozen",
    "dkt-fe-gt-only",
    "dkt-fe-pl-only",
    "dkt-perm-noise",
    "dkt-perm-frozen",
    "dkt-perm-ema",
];

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let unknown =
            || Error::InvalidArgument(format!("unknown strategy `{s}`; valid names: {}", STRATEGY_NAMES.join(", ")));
        let tau = |rest: &str| -> Result<f64> {
            rest.parse::<f64>().ok().filter(|t| *t > 0.0 && t.is_finite()).ok_or_else(unknown)
        };
        Ok(match s {
            "gt-valid" => Strategy::GtValid,
            "pl-all" => Strategy::PlAll,
            "pl-valid" => Strategy::PlValid,
            "gt-pl-all" => Strategy::GtPlusPl(PlRegion::All),
            "gt-pl-valid" => Strategy::GtPlusPl(PlRegion::Valid),
            "dkt-full" => Strategy::DktFull,
            "dkt-no-frozen" => Strategy::DktNoFrozenTeacher,
            "dkt-fe-gt-only" => Strategy::DktFeGtOnly,
            "dkt-fe-pl-only" => Strategy::DktFePlOnly,
            "dkt-perm-noise" => Strategy::FeGtPermutation(Permutation::RandomNoise),
            "dkt-perm-frozen" => Strategy::FeGtPermutation(Permutation::FrozenTeacher),
            "dkt-perm-ema" => Strategy::FeGtPermutation(Permutation::EmaTeacher),
            _ => {
                if let Some(r) = s.strip_prefix("gt-pl-consistent-") {
                    Strategy::GtPlusPl(PlRegion::Consistent(tau(r)?))
                } else if let Some(r) = s.strip_prefix("gt-pl-inconsistent-") {
                    Strategy::GtPlusPl(PlRegion::Inconsistent(tau(r)?))
                } else if let Some(r) = s.strip_prefix("gt-consistent-") {
                    Strategy::GtConsistent(tau(r)?)
                } else if let Some(r) = s.strip_prefix("gt-inconsistent-") {
                    Strategy::GtInconsistent(tau(r)?)
                } else if let Some(r) = s.strip_prefix("pl-consistent-") {
                    Strategy::PlConsistent(tau(r)?)
                } else if let Some(r) = s.strip_prefix("pl-inconsistent-") {
                    Strategy::PlInconsistent(tau(r)?)
                } else {
                    return Err(unknown());
                }
            }
        })
    }
}

/// Which loss terms a strategy uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Terms {
    GtOnly,
    PlOnly,
    Both,
}

impl Strategy {
    /// Table presets: region isolation, joint GT+PL, component ablation and
    /// permutation ablation, in that order.
    pub fn presets() -> Vec<Strategy> {
        vec![
            Strategy::GtValid,
            Strategy::GtConsistent(3.0),
            Strategy::GtInconsistent(3.0),
            Strategy::GtConsistent(1.0),
            Strategy::PlAll,
            Strategy::PlValid,
            Strategy::PlConsistent(3.0),
            Strategy::PlInconsistent(3.0),
            Strategy::PlConsistent(1.0),
            Strategy::GtPlusPl(PlRegion::All),
            Strategy::GtPlusPl(PlRegion::Consistent(3.0)),
            Strategy::GtPlusPl(PlRegion::Consistent(1.0)),
            Strategy::DktFeGtOnly,
            Strategy::DktFePlOnly,
            Strategy::DktFull,
            Strategy::DktNoFrozenTeacher,
            Strategy::FeGtPermutation(Permutation::RandomNoise),
            Strategy::FeGtPermutation(Permutation::FrozenTeacher),
            Strategy::FeGtPermutation(Permutation::EmaTeacher),
        ]
    }

    fn terms(self) -> Terms {
        match self {
            Strategy::GtValid | Strategy::GtConsistent(_) | Strategy::GtInconsistent(_) => Terms::GtOnly,
            Strategy::PlAll | Strategy::PlValid | Strategy::PlConsistent(_) | Strategy::PlInconsistent(_) => {
                Terms::PlOnly
            }
            _ => Terms::Both,
        }
    }

    /// Supervised by ground truth alone.
    pub fn is_gt_only(self) -> bool {
        self.terms() == Terms::GtOnly
    }

    /// Supervised by pseudo labels alone.
    pub fn is_pl_only(self) -> bool {
        self.terms() == Terms::PlOnly
    }

    pub fn uses_ema(self) -> bool {
        matches!(
            self,
            Strategy::DktFull
                | Strategy::DktNoFrozenTeacher
                | Strategy::DktFeGtOnly
                | Strategy::DktFePlOnly
                | Strategy::FeGtPermutation(_)
        )
    }

    pub fn uses_frozen_pl(self) -> bool {
        !matches!(self, Strategy::GtValid | Strategy::DktNoFrozenTeacher)
    }

    /// Weight of the pseudo-label term: zero for ground-truth-only recipes,
    /// one when the pseudo label is the sole supervision.
    fn effective_lambda(self, lambda: f64) -> f64 {
        match self.terms() {
            Terms::GtOnly => 0.0,
            Terms::PlOnly => 1.0,
            Terms::Both => lambda,
        }
    }
}

/// Training hyper-parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f64,
    /// Region threshold for filter-and-ensemble, pixels.
    pub tau: f64,
    /// Weight of the pseudo-label loss term.
    pub lambda: f64,
    pub momentum: f64,
    /// Step at which the EMA teacher is reset; `None` means `steps / 10`.
    pub reinit_step: Option<usize>,
    pub periodic_reinit: bool,
    pub seed: u64,
    pub filter_granularity: Granularity,
    pub blend_granularity: Granularity,
    pub clamp_radius: f64,
    /// Evaluate every this many steps; `None` means `max(1, steps / 50)`.
    pub eval_interval: Option<usize>,
    /// Bad-pixel threshold used for evaluation rows.
    pub eval_threshold: f64,
    /// Number of candidate disparities.
    pub d_max: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            lr: 0.1,
            tau: 3.0,
            lambda: 1.0,
            momentum: 0.999,
            reinit_step: None,
            periodic_reinit: false,
            seed: 0,
            filter_granularity: Granularity::Image,
            blend_granularity: Granularity::Image,
            clamp_radius: 1.0,
            eval_interval: None,
            eval_threshold: 1.0,
            d_max: 16,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.tau > 0.0) {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be finite and non-negative, got {}", self.lambda));
        }
        if !(0.0..=1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1], got {}", self.momentum));
        }
        if !(self.clamp_radius >= 0.0) {
            return bad(format!("clamp radius must be non-negative, got {}", self.clamp_radius));
        }
        if self.d_max < 2 {
            return bad(format!("d_max must be at least 2, got {}", self.d_max));
        }
        if self.eval_interval == Some(0) {
            return bad("eval interval must be positive".into());
        }
        Ok(())
    }

    pub fn ema(&self) -> EmaConfig {
        EmaConfig {
            momentum: self.momentum,
            reinit_step: self.reinit_step.unwrap_or(self.steps / 10),
            periodic_reinit: self.periodic_reinit,
        }
    }

    pub fn eval_every(&self) -> usize {
        self.eval_interval.unwrap_or((self.steps / 50).max(1))
    }
}

/// Counts how often each label path ran; used to check strategy isolation.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PathCounters {
    pub frozen_pl_predictions: usize,
    pub pl_labels_used: usize,
    pub gt_labels_used: usize,
    pub ema_predictions: usize,
    pub fe_gt_calls: usize,
    pub fe_pl_calls: usize,
    pub ema_reinits: usize,
}

/// One evaluation row.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub step: usize,
    pub domain: String,
    pub bad_pixel_rate: f64,
    pub mean_abs_error: f64,
}

/// Metric trace and final weights of a fine-tuning run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub strategy: String,
    pub rows: Vec<EvalRow>,
    pub student: MatcherParams,
    pub frozen_teacher: MatcherParams,
    pub ema_teacher: MatcherParams,
    pub counters: PathCounters,
    pub checkpoint: Option<PathBuf>,
}

impl RunReport {
    /// Last evaluation row of a domain.
    pub fn final_row(&self, domain: &str) -> Option<&EvalRow> {
        self.rows.iter().rev().find(|r| r.domain == domain)
    }

    /// First evaluation row of a domain (the starting point).
    pub fn initial_row(&self, domain: &str) -> Option<&EvalRow> {
        self.rows.iter().find(|r| r.domain == domain)
    }
}

/// A named evaluation set.
#[derive(Debug, Clone, Copy)]
pub struct EvalSet<'a> {
    pub name: &'a str,
    pub samples: &'a [Sample],
}

/// Mean over images of the per-image metrics against `dense_gt`.
pub fn evaluate(params: &MatcherParams, dataset: &[Sample], threshold: f64) -> Result<MetricReport> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate an empty dataset".into()));
    }
    let mut rate = 0.0;
    let mut mae = 0.0;
    let mut n_valid = 0;
    for s in dataset {
        let cv = build_cost_volume(&s.left, &s.right, params.d_max())?;
        let r = bad_pixel_rate(&predict(params, &cv)?, &s.dense_gt, threshold)?;
        rate += r.bad_pixel_rate;
        mae += r.mean_abs_error;
        n_valid += r.n_valid;
    }
    let n = dataset.len() as f64;
    Ok(MetricReport { threshold, bad_pixel_rate: rate / n, mean_abs_error: mae / n, n_valid })
}

/// Cost volumes of a dataset, built once.
pub struct VolumeCache<'a> {
    samples: &'a [Sample],
    d_max: usize,
    volumes: Vec<Option<CostVolume>>,
    keep: bool,
}

impl<'a> VolumeCache<'a> {
    /// `keep = false` rebuilds volumes on demand instead of storing them.
    pub fn new(samples: &'a [Sample], d_max: usize, keep: bool) -> Self {
        Self { samples, d_max, volumes: vec![None; samples.len()], keep }
    }

    fn with<T>(&mut self, i: usize, f: impl FnOnce(&CostVolume) -> Result<T>) -> Result<T> {
        if let Some(cv) = &self.volumes[i] {
            return f(cv);
        }
        let s = &self.samples[i];
        let cv = build_cost_volume(&s.left, &s.right, self.d_max)?;
        let out = f(&cv);
        if self.keep {
            self.volumes[i] = Some(cv);
        }
        out
    }
}

fn sample_index(seed: u64, step: usize, n: usize) -> usize {
    (derive_seed(seed, &[step as u64, 0, Stream::SampleOrder as u64]) % n as u64) as usize
}

fn check_finite_loss(step: usize, loss: f64) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence { step, loss })
    }
}

fn check_d_max(cfg: &TrainConfig, params: &MatcherParams) -> Result<()> {
    if params.d_max() != cfg.d_max {
        return Err(Error::Incompatible(format!(
            "checkpoint covers {} disparities, config expects {}",
            params.d_max(),
            cfg.d_max
        )));
    }
    Ok(())
}

/// Trains a matcher from the deterministic initialization with ground truth
/// only.
pub fn pretrain(cfg: &TrainConfig, dataset: &[Sample]) -> Result<MatcherParams> {
    pretrain_from(cfg, MatcherParams::init(cfg.d_max), dataset)
}

/// Ground-truth-only training from given weights.
pub fn pretrain_from(cfg: &TrainConfig, init: MatcherParams, dataset: &[Sample]) -> Result<MatcherParams> {
    cfg.validate()?;
    check_d_max(cfg, &init)?;
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("pre-training needs at least one sample".into()));
    }
    let mut params = init;
    let mut volumes = VolumeCache::new(dataset, cfg.d_max, false);
    for step in 0..cfg.steps {
        let i = sample_index(cfg.seed, step, dataset.len());
        let labels = ImprovedLabels::gt_only(dataset[i].gt.clone());
        let lg = volumes.with(i, |cv| loss_and_gradient(&params, cv, &labels, LossConfig { lambda: 0.0 }))?;
        check_finite_loss(step, lg.loss)?;
        params = sgd_step(&params, &lg.gradient, cfg.lr)?;
        if !params.is_finite() {
            return Err(Error::Divergence { step, loss: lg.loss });
        }
    }
    Ok(params)
}

fn image_draws(cfg: &TrainConfig, step: usize, sample: usize, n: usize) -> Draws {
    let image = EnsembleDraw::sample(&mut stream(cfg.seed, step as u64, sample as u64, Stream::ImageDraws));
    if cfg.filter_granularity == Granularity::Image && cfg.blend_granularity == Granularity::Image {
        return Draws::Image(image);
    }
    let mut keep_rng = stream(cfg.seed, step as u64, sample as u64, Stream::PixelKeep);
    let mut blend_rng = stream(cfg.seed, step as u64, sample as u64, Stream::PixelBlend);
    Draws::Pixel(
        (0..n)
            .map(|_| {
                let keep_u = match cfg.filter_granularity {
                    Granularity::Image => image.keep_u,
                    Granularity::Pixel => keep_rng.random(),
                };
                let (alpha, beta) = match cfg.blend_granularity {
                    Granularity::Image => (image.alpha, image.beta),
                    Granularity::Pixel => (blend_rng.random(), blend_rng.random()),
                };
                EnsembleDraw { keep_u, alpha, beta }
            })
            .collect(),
    )
}

struct Teachers<'a> {
    frozen: &'a MatcherParams,
    ema: &'a MatcherParams,
}

struct LabelContext<'a> {
    cfg: &'a TrainConfig,
    counters: &'a Cell<PathCounters>,
}

impl LabelContext<'_> {
    fn bump(&self, f: impl FnOnce(&mut PathCounters)) {
        let mut c = self.counters.take();
        f(&mut c);
        self.counters.set(c);
    }

    /// Builds the supervision of one step.
    #[allow(clippy::too_many_arguments)]
    fn assemble(
        &self,
        strategy: Strategy,
        step: usize,
        sample_idx: usize,
        sample: &Sample,
        cv: &CostVolume,
        teachers: &Teachers<'_>,
        pl_cache: &mut Option<DisparityMap>,
    ) -> Result<ImprovedLabels> {
        let cfg = self.cfg;
        let gt = &sample.gt;
        let mut frozen_pl = || -> Result<DisparityMap> {
            if pl_cache.is_none() {
                self.bump(|c| c.frozen_pl_predictions += 1);
                *pl_cache = Some(predict(teachers.frozen, cv)?);
            }
            Ok(pl_cache.clone().expect("filled above"))
        };
        let select = |map: &DisparityMap, pl: &DisparityMap, tau: f64, sel: RegionSelector| {
            apply_region_selector(map, &decompose_regions(gt, pl, tau)?, sel)
        };

        let pl_region = |region: PlRegion, pl: &DisparityMap| -> Result<DisparityMap> {
            match region {
                PlRegion::All => Ok(pl.clone()),
                PlRegion::Valid => select(pl, pl, cfg.tau, RegionSelector::Valid),
                PlRegion::Consistent(t) => select(pl, pl, t, RegionSelector::ConsistentOnly),
                PlRegion::Inconsistent(t) => select(pl, pl, t, RegionSelector::InconsistentOnly),
            }
        };

        if strategy.is_gt_only() {
            self.bump(|c| c.gt_labels_used += 1);
            let gt_bar = match strategy {
                Strategy::GtValid => gt.clone(),
                Strategy::GtConsistent(t) => select(gt, &frozen_pl()?, t, RegionSelector::ConsistentOnly)?,
                Strategy::GtInconsistent(t) => select(gt, &frozen_pl()?, t, RegionSelector::InconsistentOnly)?,
                _ => unreachable!("ground-truth-only strategies are listed above"),
            };
            return Ok(ImprovedLabels::gt_only(gt_bar));
        }

        if strategy.is_pl_only() {
            self.bump(|c| c.pl_labels_used += 1);
            let pl = frozen_pl()?;
            let region = match strategy {
                Strategy::PlAll => PlRegion::All,
                Strategy::PlValid => PlRegion::Valid,
                Strategy::PlConsistent(t) => PlRegion::Consistent(t),
                Strategy::PlInconsistent(t) => PlRegion::Inconsistent(t),
                _ => unreachable!("pseudo-label-only strategies are listed above"),
            };
            return Ok(ImprovedLabels::pl_only(pl_region(region, &pl)?));
        }

        self.bump(|c| {
            c.gt_labels_used += 1;
            c.pl_labels_used += 1;
        });
        if let Strategy::GtPlusPl(region) = strategy {
            let pl = frozen_pl()?;
            return Ok(ImprovedLabels { gt_bar: gt.clone(), pl_bar: pl_region(region, &pl)? });
        }

        // filter-and-ensemble strategies
        self.bump(|c| c.ema_predictions += 1);
        let ema_pred = predict(teachers.ema, cv)?;
        let draws = image_draws(cfg, step, sample_idx, gt.len());
        let ema_partition = decompose_regions(gt, &ema_pred, cfg.tau)?;
        let fe_gt = |partner: &DisparityMap| -> Result<DisparityMap> {
            self.bump(|c| c.fe_gt_calls += 1);
            fe_gt_with(gt, partner, &ema_partition, &draws, cfg.clamp_radius)
        };
        let fe_pl = |pl: &DisparityMap| -> Result<DisparityMap> {
            self.bump(|c| c.fe_pl_calls += 1);
            fe_pl_with(pl, &ema_pred, cfg.tau, &draws)
        };

        let labels = match strategy {
            Strategy::DktFull => ImprovedLabels { gt_bar: fe_gt(&ema_pred)?, pl_bar: fe_pl(&frozen_pl()?)? },
            Strategy::DktNoFrozenTeacher => ImprovedLabels { gt_bar: fe_gt(&ema_pred)?, pl_bar: fe_pl(&ema_pred)? },
            Strategy::DktFeGtOnly => ImprovedLabels { gt_bar: fe_gt(&ema_pred)?, pl_bar: frozen_pl()? },
            Strategy::DktFePlOnly => ImprovedLabels { gt_bar: gt.clone(), pl_bar: fe_pl(&frozen_pl()?)? },
            Strategy::FeGtPermutation(variant) => {
                let frozen = frozen_pl()?;
                let noise = match variant {
                    Permutation::RandomNoise => uniform_noise(
                        &mut stream(cfg.seed, step as u64, sample_idx as u64, Stream::PixelNoise),
                        gt.len(),
                    ),
                    _ => Vec::new(),
                };
                let partner = match variant {
                    Permutation::FrozenTeacher => &frozen,
                    _ => &ema_pred,
                };
                self.bump(|c| c.fe_gt_calls += 1);
                let gt_bar =
                    fe_gt_permutation_variant(gt, &ema_partition, &draws, variant, partner, &noise, cfg.clamp_radius)?;
                ImprovedLabels { gt_bar, pl_bar: fe_pl(&frozen)? }
            }
            _ => unreachable!("remaining strategies use filter-and-ensemble"),
        };
        Ok(labels)
    }
}

fn eval_rows(
    params: &MatcherParams,
    step: usize,
    eval_sets: &[EvalSet<'_>],
    threshold: f64,
    rows: &mut Vec<EvalRow>,
) -> Result<()> {
    for set in eval_sets {
        let r = evaluate(params, set.samples, threshold)?;
        rows.push(EvalRow {
            step,
            domain: set.name.to_string(),
            bad_pixel_rate: r.bad_pixel_rate,
            mean_abs_error: r.mean_abs_error,
        });
    }
    Ok(())
}

/// Fine-tunes pre-trained weights on `dataset` under `strategy`.
///
/// Evaluation rows are recorded at step 0 (the pre-trained weights), every
/// [`TrainConfig::eval_every`] steps, and after the final step.
pub fn finetune(
    strategy: Strategy,
    cfg: &TrainConfig,
    pretrained: &MatcherParams,
    dataset: &[Sample],
    eval_sets: &[EvalSet<'_>],
) -> Result<RunReport> {
    cfg.validate()?;
    check_d_max(cfg, pretrained)?;
    if !pretrained.is_finite() {
        return Err(Error::Incompatible("pre-trained weights are not finite".into()));
    }
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("fine-tuning needs at least one sample".into()));
    }
    let frozen = pretrained.clone();
    let mut student = pretrained.clone();
    let mut ema = pretrained.clone();
    let ema_cfg = cfg.ema();
    let counters = Cell::new(PathCounters::default());
    let ctx = LabelContext { cfg, counters: &counters };
    let loss_cfg = LossConfig { lambda: strategy.effective_lambda(cfg.lambda) };
    let mut pl_cache: Vec<Option<DisparityMap>> = vec![None; dataset.len()];
    let mut volumes = VolumeCache::new(dataset, cfg.d_max, false);
    let mut rows = Vec::new();
    let every = cfg.eval_every();

    if strategy.uses_ema() && ema_cfg.reinit_due(0) {
        ema = reinit(&ema.to_param_vector(), &student.to_param_vector())
            .and_then(|p| MatcherParams::from_param_vector(&p))?;
    }
    eval_rows(&student, 0, eval_sets, cfg.eval_threshold, &mut rows)?;

    for step in 0..cfg.steps {
        let i = sample_index(cfg.seed, step, dataset.len());
        let teachers = Teachers { frozen: &frozen, ema: &ema };
        let lg = volumes.with(i, |cv| {
            let labels = ctx.assemble(strategy, step, i, &dataset[i], cv, &teachers, &mut pl_cache[i])?;
            loss_and_gradient(&student, cv, &labels, loss_cfg)
        })?;
        check_finite_loss(step, lg.loss)?;
        student = sgd_step(&student, &lg.gradient, cfg.lr)?;
        if !student.is_finite() {
            return Err(Error::Divergence { step, loss: lg.loss });
        }

        if strategy.uses_ema() {
            let completed = step + 1;
            let s = student.to_param_vector();
            let next = if ema_cfg.reinit_due(completed) {
                ctx.bump(|c| c.ema_reinits += 1);
                reinit(&ema.to_param_vector(), &s)?
            } else {
                ema_update(&ema.to_param_vector(), &s, ema_cfg.momentum)?
            };
            ema = MatcherParams::from_param_vector(&next)?;
        }

        let completed = step + 1;
        if completed % every == 0 || completed == cfg.steps {
            eval_rows(&student, completed, eval_sets, cfg.eval_threshold, &mut rows)?;
        }
    }

    Ok(RunReport {
        strategy: strategy.to_string(),
        rows,
        student,
        frozen_teacher: frozen,
        ema_teacher: ema,
        counters: counters.take(),
        checkpoint: None,
    })
}

/// One line of the ablation table.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub strategy: String,
    pub domain: String,
    pub bad_pixel_rate: f64,
    pub mean_abs_error: f64,
    /// `ok`, or the error that aborted this strategy.
    pub status: String,
}

/// Fine-tunes every strategy from the same pre-trained weights and reports
/// the final metrics per domain. The first rows hold the pre-trained
/// baseline under the name `pretrained`. A failing strategy yields rows
/// with NaN metrics and the error text as status.
pub fn ablation_suite(
    strategies: &[Strategy],
    cfg: &TrainConfig,
    pretrained: &MatcherParams,
    dataset: &[Sample],
    eval_sets: &[EvalSet<'_>],
) -> Result<Vec<AblationRow>> {
    let mut out = Vec::new();
    for set in eval_sets {
        let r = evaluate(pretrained, set.samples, cfg.eval_threshold)?;
        out.push(AblationRow {
            strategy: "pretrained".into(),
            domain: set.name.into(),
            bad_pixel_rate: r.bad_pixel_rate,
            mean_abs_error: r.mean_abs_error,
            status: "ok".into(),
        });
    }
    // only the final evaluation matters here
    let run_cfg = TrainConfig { eval_interval: Some(cfg.steps.max(1)), ..cfg.clone() };
    for &strategy in strategies {
        match finetune(strategy, &run_cfg, pretrained, dataset, eval_sets) {
            Ok(report) => {
                for set in eval_sets {
                    let row = report.final_row(set.name).expect("every run evaluates each set");
                    out.push(AblationRow {
                        strategy: report.strategy.clone(),
                        domain: set.name.into(),
                        bad_pixel_rate: row.bad_pixel_rate,
                        mean_abs_error: row.mean_abs_error,
                        status: "ok".into(),
                    });
                }
            }
            Err(e) => {
                for set in eval_sets {
                    out.push(AblationRow {
                        strategy: strategy.to_string(),
                        domain: set.name.into(),
                        bad_pixel_rate: f64::NAN,
                        mean_abs_error: f64::NAN,
                        status: format!("error: {e}"),
                    });
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strategy_names_round_trip() {
        for s in Strategy::presets() {
            let parsed: Strategy = s.to_string().parse().unwrap();
            assert_eq!(parsed, s);
        }
        assert_eq!("gt-consistent-1.5".parse::<Strategy>().unwrap(), Strategy::GtConsistent(1.5));
        let err = "gt-everything".parse::<Strategy>().unwrap_err().to_string();
        assert!(err.contains("dkt-full"));
        assert!("gt-consistent-0".parse::<Strategy>().is_err());
        assert!("gt-consistent-x".parse::<Strategy>().is_err());
    }

    #[test]
    fn lambda_per_strategy() {
        assert_eq!(Strategy::GtValid.effective_lambda(0.7), 0.0);
        assert_eq!(Strategy::PlAll.effective_lambda(0.7), 1.0);
        assert_eq!(Strategy::DktFull.effective_lambda(0.7), 0.7);
    }

    #[test]
    fn defaults() {
        let cfg = TrainConfig { steps: 1000, ..Default::default() };
        assert_eq!(cfg.ema().reinit_step, 100);
        assert_eq!(cfg.eval_every(), 20);
        assert_eq!(TrainConfig { steps: 10, ..cfg }.eval_every(), 1);
    }

    #[test]
    fn config_validation() {
        let base = TrainConfig::default();
        assert!(base.validate().is_ok());
        assert!(TrainConfig { lr: 0.0, ..base.clone() }.validate().is_err());
        assert!(TrainConfig { momentum: 1.5, ..base.clone() }.validate().is_err());
        assert!(TrainConfig { tau: -1.0, ..base.clone() }.validate().is_err());
        assert!(TrainConfig { eval_interval: Some(0), ..base }.validate().is_err());
    }
}
