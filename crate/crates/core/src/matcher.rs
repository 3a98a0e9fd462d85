//! A deliberately tiny differentiable stereo matcher.
//!
//! Each (pixel, candidate disparity) pair gets five fixed matching features.
//! The model scores them linearly, adds a per-disparity bias, scales by a
//! learned temperature and reads out disparity with a soft-argmin over the
//! resulting probability volume:
//!
//! ```text
//! logit(x, d) = exp(log_t) * (w . phi(x, d) + b[d])
//! p(x, .)     = softmax_d logit(x, .)
//! pred(x)     = sum_d d * p(x, d)
//! ```
//!
//! Gradients are written out by hand; [`finite_diff_gradient`] is the
//! independent check.

use rayon::prelude::*;

use crate::disparity::DisparityMap;
use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::labels::ImprovedLabels;
use crate::params::{ParamVector, Segment};

/// Number of matching features per (pixel, disparity).
pub const FEATURES: usize = 5;

/// Names of the feature channels, in storage order.
pub const FEATURE_NAMES: [&str; FEATURES] = ["sad1", "sad3", "sad5", "census5", "grad_sad3"];

/// Matching features for every pixel and candidate disparity.
///
/// Layout: `features[((y * width + x) * d_max + d) * FEATURES + k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostVolume {
    width: usize,
    height: usize,
    d_max: usize,
    features: Vec<f64>,
}

impl CostVolume {
    pub fn from_features(width: usize, height: usize, d_max: usize, features: Vec<f64>) -> Result<Self> {
        let n = width * height * d_max * FEATURES;
        if features.len() != n {
            return Err(Error::shape(n, features.len()));
        }
        if features.iter().any(|f| !f.is_finite()) {
            return Err(Error::InvalidArgument("cost volume features must be finite".into()));
        }
        Ok(Self { width, height, d_max, features })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn d_max(&self) -> usize {
        self.d_max
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    /// Feature vector of pixel `i` (row-major) at disparity `d`.
    pub fn phi(&self, i: usize, d: usize) -> &[f64] {
        let base = (i * self.d_max + d) * FEATURES;
        &self.features[base..base + FEATURES]
    }

    fn pixel_block(&self, i: usize) -> &[f64] {
        let stride = self.d_max * FEATURES;
        &self.features[i * stride..(i + 1) * stride]
    }
}

fn box_mean(src: &[f64], width: usize, height: usize, radius: usize) -> Vec<f64> {
    let r = radius as isize;
    let clamp_x = |x: isize| x.clamp(0, width as isize - 1) as usize;
    let clamp_y = |y: isize| y.clamp(0, height as isize - 1) as usize;
    let mut horiz = vec![0.0; src.len()];
    for y in 0..height {
        for x in 0..width {
            horiz[y * width + x] = (-r..=r).map(|dx| src[y * width + clamp_x(x as isize + dx)]).sum();
        }
    }
    let area = ((2 * radius + 1) * (2 * radius + 1)) as f64;
    let mut out = vec![0.0; src.len()];
    for y in 0..height {
        for x in 0..width {
            let s: f64 = (-r..=r).map(|dy| horiz[clamp_y(y as isize + dy) * width + x]).sum();
            out[y * width + x] = s / area;
        }
    }
    out
}

fn census5(img: &GrayImage) -> Vec<u32> {
    let (w, h) = (img.width(), img.height());
    let mut out = vec![0u32; w * h];
    for y in 0..h {
        for x in 0..w {
            let c = img.unit_clamped(x as isize, y as isize);
            let mut code = 0u32;
            for dy in -2isize..=2 {
                for dx in -2isize..=2 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    code <<= 1;
                    if img.unit_clamped(x as isize + dx, y as isize + dy) < c {
                        code |= 1;
                    }
                }
            }
            out[y * w + x] = code;
        }
    }
    out
}

fn horizontal_gradient(img: &GrayImage) -> Vec<f64> {
    let (w, h) = (img.width(), img.height());
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let (xi, yi) = (x as isize, y as isize);
            out[y * w + x] = 0.5 * (img.unit_clamped(xi + 1, yi) - img.unit_clamped(xi - 1, yi));
        }
    }
    out
}

/// Builds the five-channel matching volume.
///
/// For candidate `d`, pixel `(x, y)` of the left image is compared with
/// `(x - d, y)` of the right image (clamped at the border). Channels, all
/// negated costs so that larger is a better match:
///
/// 0. absolute difference of intensities
/// 1. mean absolute difference over a 3x3 window
/// 2. mean absolute difference over a 5x5 window
/// 3. census (5x5) Hamming distance divided by 24
/// 4. mean absolute difference of horizontal gradients over a 3x3 window
///
/// Intensities are in `[0, 1]`. Window samples outside the image are clamped
/// to the edge.
pub fn build_cost_volume(left: &GrayImage, right: &GrayImage, d_max: usize) -> Result<CostVolume> {
    if d_max < 2 {
        return Err(Error::InvalidArgument(format!("d_max must be at least 2, got {d_max}")));
    }
    if left.width() != right.width() || left.height() != right.height() {
        return Err(Error::shape(
            format!("{}x{}", left.width(), left.height()),
            format!("{}x{}", right.width(), right.height()),
        ));
    }
    let (w, h) = (left.width(), left.height());
    let n = w * h;
    let (census_l, census_r) = (census5(left), census5(right));
    let (grad_l, grad_r) = (horizontal_gradient(left), horizontal_gradient(right));
    let shifted = |x: usize, d: usize| x.saturating_sub(d);

    let mut features = vec![0.0; n * d_max * FEATURES];
    let mut ad = vec![0.0; n];
    let mut gad = vec![0.0; n];
    for d in 0..d_max {
        for y in 0..h {
            for x in 0..w {
                let xr = shifted(x, d);
                let i = y * w + x;
                ad[i] = (f64::from(left.at(x, y)) - f64::from(right.at(xr, y))).abs() / 255.0;
                gad[i] = (grad_l[i] - grad_r[y * w + xr]).abs();
            }
        }
        let sad3 = box_mean(&ad, w, h, 1);
        let sad5 = box_mean(&ad, w, h, 2);
        let gsad3 = box_mean(&gad, w, h, 1);
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let hamming = (census_l[i] ^ census_r[y * w + shifted(x, d)]).count_ones();
                let base = (i * d_max + d) * FEATURES;
                features[base] = -ad[i];
                features[base + 1] = -sad3[i];
                features[base + 2] = -sad5[i];
                features[base + 3] = -f64::from(hamming) / 24.0;
                features[base + 4] = -gsad3[i];
            }
        }
    }
    Ok(CostVolume { width: w, height: h, d_max, features })
}

/// Learnable matcher weights.
#[derive(Debug, Clone, PartialEq)]
pub struct MatcherParams {
    /// Feature weights, one per channel.
    pub w: Vec<f64>,
    /// Per-disparity bias.
    pub b: Vec<f64>,
    /// Log of the softmax temperature multiplier.
    pub log_t: f64,
}

impl MatcherParams {
    /// Deterministic initialization: uniform unit-norm weights, zero bias,
    /// unit temperature.
    pub fn init(d_max: usize) -> Self {
        Self { w: vec![1.0 / (FEATURES as f64).sqrt(); FEATURES], b: vec![0.0; d_max], log_t: 0.0 }
    }

    pub fn zeros(d_max: usize) -> Self {
        Self { w: vec![0.0; FEATURES], b: vec![0.0; d_max], log_t: 0.0 }
    }

    pub fn d_max(&self) -> usize {
        self.b.len()
    }

    pub fn temperature(&self) -> f64 {
        self.log_t.exp()
    }

    pub fn is_finite(&self) -> bool {
        self.w.iter().chain(&self.b).all(|v| v.is_finite()) && self.log_t.is_finite()
    }

    /// Number of scalar parameters.
    pub fn len(&self) -> usize {
        self.w.len() + self.b.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Flat view in the order `w`, `b`, `log_t`.
    pub fn get(&self, j: usize) -> f64 {
        let (nw, nb) = (self.w.len(), self.b.len());
        if j < nw {
            self.w[j]
        } else if j < nw + nb {
            self.b[j - nw]
        } else {
            self.log_t
        }
    }

    pub fn set(&mut self, j: usize, v: f64) {
        let (nw, nb) = (self.w.len(), self.b.len());
        if j < nw {
            self.w[j] = v;
        } else if j < nw + nb {
            self.b[j - nw] = v;
        } else {
            self.log_t = v;
        }
    }

    pub fn to_param_vector(&self) -> ParamVector {
        ParamVector::new(vec![
            Segment { name: "w".into(), values: self.w.clone() },
            Segment { name: "b".into(), values: self.b.clone() },
            Segment { name: "log_t".into(), values: vec![self.log_t] },
        ])
        .expect("fixed segment names are unique")
    }

    pub fn from_param_vector(p: &ParamVector) -> Result<Self> {
        let seg = |name: &str| p.segment(name).ok_or_else(|| Error::Incompatible(format!("missing segment `{name}`")));
        let (w, b, log_t) = (seg("w")?, seg("b")?, seg("log_t")?);
        if w.len() != FEATURES {
            return Err(Error::Incompatible(format!("`w` has {} entries, expected {FEATURES}", w.len())));
        }
        if b.len() < 2 {
            return Err(Error::Incompatible("`b` needs at least 2 disparities".into()));
        }
        if log_t.len() != 1 {
            return Err(Error::Incompatible("`log_t` must be a scalar".into()));
        }
        if p.segments().len() != 3 {
            return Err(Error::Incompatible("unexpected extra segments".into()));
        }
        Ok(Self { w: w.to_vec(), b: b.to_vec(), log_t: log_t[0] })
    }

    fn check(&self, cv: &CostVolume) -> Result<()> {
        if !self.is_finite() {
            return Err(Error::InvalidArgument("non-finite matcher parameters".into()));
        }
        if self.w.len() != FEATURES || self.b.len() != cv.d_max {
            return Err(Error::shape(
                format!("{FEATURES} weights and {} biases", cv.d_max),
                format!("{} weights and {} biases", self.w.len(), self.b.len()),
            ));
        }
        Ok(())
    }
}

/// Soft-argmin readout of one pixel. Fills `probs` and returns the
/// expected disparity. `logits` is overwritten with the scaled logits.
fn soft_argmin(logits: &mut [f64], probs: &mut [f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for (p, &l) in probs.iter_mut().zip(logits.iter()) {
        *p = (l - max).exp();
        z += *p;
    }
    let mut pred = 0.0;
    for (d, p) in probs.iter_mut().enumerate() {
        *p /= z;
        pred += d as f64 * *p;
    }
    pred
}

fn pixel_logits(params: &MatcherParams, t: f64, block: &[f64], logits: &mut [f64]) {
    for (d, l) in logits.iter_mut().enumerate() {
        let phi = &block[d * FEATURES..(d + 1) * FEATURES];
        let score: f64 = params.w.iter().zip(phi).map(|(w, f)| w * f).sum::<f64>() + params.b[d];
        *l = t * score;
    }
}

/// Dense prediction and the probability volume behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub disparity: DisparityMap,
    /// `probs[i * d_max + d]`.
    pub probs: Vec<f64>,
}

/// Full forward pass, keeping the probability volume.
pub fn forward(params: &MatcherParams, cv: &CostVolume) -> Result<Prediction> {
    params.check(cv)?;
    let (n, dm) = (cv.width * cv.height, cv.d_max);
    let t = params.temperature();
    let mut probs = vec![0.0; n * dm];
    let mut preds = vec![0.0; n];
    let mut logits = vec![0.0; dm];
    for i in 0..n {
        pixel_logits(params, t, cv.pixel_block(i), &mut logits);
        preds[i] = soft_argmin(&mut logits, &mut probs[i * dm..(i + 1) * dm]);
        if !preds[i].is_finite() {
            return Err(Error::Numeric { what: "prediction", x: i % cv.width, y: i / cv.width });
        }
    }
    Ok(Prediction { disparity: DisparityMap::dense(cv.width, cv.height, preds)?, probs })
}

/// Forward pass returning only the disparity map. Rows run in parallel.
pub fn predict(params: &MatcherParams, cv: &CostVolume) -> Result<DisparityMap> {
    params.check(cv)?;
    let (w, dm) = (cv.width, cv.d_max);
    let t = params.temperature();
    let mut preds = vec![0.0; w * cv.height];
    preds.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        let mut logits = vec![0.0; dm];
        let mut probs = vec![0.0; dm];
        for (x, p) in row.iter_mut().enumerate() {
            pixel_logits(params, t, cv.pixel_block(y * w + x), &mut logits);
            *p = soft_argmin(&mut logits, &mut probs);
        }
    });
    if let Some(i) = preds.iter().position(|p| !p.is_finite()) {
        return Err(Error::Numeric { what: "prediction", x: i % w, y: i / w });
    }
    DisparityMap::dense(w, cv.height, preds)
}

/// Weight of the pseudo-label term in the loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub lambda: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { lambda: 1.0 }
    }
}

fn masked_mean_l1(pred: &[f64], label: &DisparityMap) -> f64 {
    let (sum, n) = label
        .values()
        .iter()
        .zip(label.mask())
        .zip(pred)
        .filter(|((_, &m), _)| m)
        .fold((0.0, 0usize), |(s, n), ((&l, _), &p)| (s + (p - l).abs(), n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Masked L1 against the improved ground truth plus `lambda` times masked L1
/// against the improved pseudo label. Empty masks contribute zero.
pub fn loss(pred: &DisparityMap, labels: &ImprovedLabels, cfg: LossConfig) -> Result<f64> {
    pred.check_shape(&labels.gt_bar)?;
    pred.check_shape(&labels.pl_bar)?;
    Ok(masked_mean_l1(pred.values(), &labels.gt_bar) + cfg.lambda * masked_mean_l1(pred.values(), &labels.pl_bar))
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Loss value and its gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct LossAndGradient {
    pub loss: f64,
    pub gradient: MatcherParams,
}

/// Analytic gradient of [`loss`] with respect to the matcher parameters.
pub fn backward(
    params: &MatcherParams,
    cv: &CostVolume,
    labels: &ImprovedLabels,
    cfg: LossConfig,
) -> Result<MatcherParams> {
    loss_and_gradient(params, cv, labels, cfg).map(|r| r.gradient)
}

/// Forward pass, loss and analytic gradient in one sweep.
///
/// Rows are processed in parallel; per-row partial gradients are summed in
/// row order, so the result does not depend on the thread count.
pub fn loss_and_gradient(
    params: &MatcherParams,
    cv: &CostVolume,
    labels: &ImprovedLabels,
    cfg: LossConfig,
) -> Result<LossAndGradient> {
    params.check(cv)?;
    let (w, h, dm) = (cv.width, cv.height, cv.d_max);
    let shape = DisparityMap::all_invalid(w, h);
    shape.check_shape(&labels.gt_bar)?;
    shape.check_shape(&labels.pl_bar)?;

    let gt = &labels.gt_bar;
    let pl = &labels.pl_bar;
    let n_gt = gt.valid_count();
    let n_pl = pl.valid_count();
    let gt_scale = if n_gt > 0 { 1.0 / n_gt as f64 } else { 0.0 };
    let pl_scale = if n_pl > 0 && cfg.lambda != 0.0 { cfg.lambda / n_pl as f64 } else { 0.0 };
    let t = params.temperature();

    struct RowAcc {
        loss: f64,
        grad: MatcherParams,
        bad: Option<usize>,
    }

    let rows: Vec<RowAcc> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut acc = RowAcc { loss: 0.0, grad: MatcherParams::zeros(dm), bad: None };
            acc.grad.log_t = 0.0;
            let mut logits = vec![0.0; dm];
            let mut probs = vec![0.0; dm];
            for x in 0..w {
                let i = y * w + x;
                let block = cv.pixel_block(i);
                pixel_logits(params, t, block, &mut logits);
                let pred = soft_argmin(&mut logits, &mut probs);
                if !pred.is_finite() {
                    acc.bad.get_or_insert(i);
                    continue;
                }
                let mut g_pred = 0.0;
                if let Some(g) = gt.value(i) {
                    acc.loss += gt_scale * (pred - g).abs();
                    g_pred += gt_scale * sign(pred - g);
                }
                if pl_scale != 0.0 {
                    if let Some(p) = pl.value(i) {
                        acc.loss += pl_scale * (pred - p).abs();
                        g_pred += pl_scale * sign(pred - p);
                    }
                }
                if g_pred == 0.0 {
                    continue;
                }
                for d in 0..dm {
                    let g_logit = g_pred * probs[d] * (d as f64 - pred);
                    let g_score = g_logit * t;
                    let phi = &block[d * FEATURES..(d + 1) * FEATURES];
                    for (gw, f) in acc.grad.w.iter_mut().zip(phi) {
                        *gw += g_score * f;
                    }
                    acc.grad.b[d] += g_score;
                    acc.grad.log_t += g_logit * logits[d];
                }
            }
            acc
        })
        .collect();

    let mut total = RowAcc { loss: 0.0, grad: MatcherParams::zeros(dm), bad: None };
    for row in rows {
        if let Some(i) = row.bad {
            return Err(Error::Numeric { what: "prediction", x: i % w, y: i / w });
        }
        total.loss += row.loss;
        for (a, b) in total.grad.w.iter_mut().zip(&row.grad.w) {
            *a += b;
        }
        for (a, b) in total.grad.b.iter_mut().zip(&row.grad.b) {
            *a += b;
        }
        total.grad.log_t += row.grad.log_t;
    }
    if !total.grad.is_finite() || !total.loss.is_finite() {
        return Err(Error::Numeric { what: "gradient", x: 0, y: 0 });
    }
    Ok(LossAndGradient { loss: total.loss, gradient: total.grad })
}

/// One plain gradient-descent step.
pub fn sgd_step(params: &MatcherParams, gradient: &MatcherParams, lr: f64) -> Result<MatcherParams> {
    if !(lr > 0.0) {
        return Err(Error::InvalidArgument(format!("learning rate must be positive, got {lr}")));
    }
    if params.w.len() != gradient.w.len() || params.b.len() != gradient.b.len() {
        return Err(Error::shape(params.len(), gradient.len()));
    }
    let mut out = params.clone();
    for j in 0..out.len() {
        out.set(j, params.get(j) - lr * gradient.get(j));
    }
    Ok(out)
}

/// Central-difference gradient of [`loss`], evaluated through [`forward`].
pub fn finite_diff_gradient(
    params: &MatcherParams,
    cv: &CostVolume,
    labels: &ImprovedLabels,
    cfg: LossConfig,
    h: f64,
) -> Result<MatcherParams> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("step must be positive, got {h}")));
    }
    let eval = |p: &MatcherParams| -> Result<f64> { loss(&forward(p, cv)?.disparity, labels, cfg) };
    let mut grad = MatcherParams::zeros(params.d_max());
    for j in 0..params.len() {
        let mut plus = params.clone();
        plus.set(j, params.get(j) + h);
        let mut minus = params.clone();
        minus.set(j, params.get(j) - h);
        grad.set(j, (eval(&plus)? - eval(&minus)?) / (2.0 * h));
    }
    Ok(grad)
}
