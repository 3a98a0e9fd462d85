//! Procedural stereo pairs with exact ground truth.
//!
//! A scene is a stack of fronto-parallel layers (rectangles and ellipses)
//! over a textured background. Every layer sits at one integer disparity,
//! and its texture is a function of left-image coordinates, so the right
//! view is an exact warp: a surface point seen at left column `x` appears at
//! right column `x - d`. Pixels whose correspondence is hidden by a nearer
//! layer in the right view, or falls outside it, have no ground truth.
//!
//! Three presets stand in for the synthetic pre-training set (`A`), the real
//! fine-tuning target (`B`, sparse ground truth and view-inconsistent glare
//! patches) and an unseen evaluation domain (`C`).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::disparity::DisparityMap;
use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::rng::{derive_seed, splitmix64};

/// The three data domains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Domain {
    /// Clean synthetic pre-training data.
    APretrain,
    /// Fine-tuning target.
    BTarget,
    /// Held-out domain, evaluation only.
    CUnseen,
}

impl Domain {
    pub const ALL: [Domain; 3] = [Domain::APretrain, Domain::BTarget, Domain::CUnseen];

    pub fn short_name(self) -> &'static str {
        match self {
            Domain::APretrain => "A",
            Domain::BTarget => "B",
            Domain::CUnseen => "C",
        }
    }
}

impl std::str::FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(Domain::APretrain),
            "B" | "b" => Ok(Domain::BTarget),
            "C" | "c" => Ok(Domain::CUnseen),
            other => Err(Error::InvalidArgument(format!("unknown domain `{other}` (expected A, B or C)"))),
        }
    }
}

impl std::fmt::Display for Domain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.short_name())
    }
}

/// Texture family used for layers and background.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TextureRecipe {
    /// Checkerboards with per-pixel value noise.
    Checker,
    /// Smooth low-contrast blobs with weak fine detail.
    LowTextureBlobs,
    /// Dense high-contrast per-pixel noise.
    FineNoise,
}

/// Generation parameters of one domain.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainSpec {
    pub domain: Domain,
    pub width: usize,
    pub height: usize,
    pub texture: TextureRecipe,
    /// Standard deviation of additive Gaussian noise, unit intensities.
    pub noise_sigma: f64,
    pub brightness_gain: f64,
    /// Fraction of each layer's area covered by a right-view-only glare patch.
    pub specular_fraction: f64,
    /// Inclusive integer disparity range.
    pub disparity_range: (u32, u32),
    /// Expected fraction of ground-truth pixels retained.
    pub gt_density: f64,
}

impl DomainSpec {
    /// Default preset of a domain at the given resolution.
    pub fn preset(domain: Domain, width: usize, height: usize) -> Self {
        match domain {
            Domain::APretrain => Self {
                domain,
                width,
                height,
                texture: TextureRecipe::Checker,
                noise_sigma: 0.01,
                brightness_gain: 1.0,
                specular_fraction: 0.0,
                disparity_range: (1, 14),
                gt_density: 1.0,
            },
            Domain::BTarget => Self {
                domain,
                width,
                height,
                texture: TextureRecipe::LowTextureBlobs,
                noise_sigma: 0.01,
                brightness_gain: 1.2,
                specular_fraction: 0.15,
                disparity_range: (2, 10),
                gt_density: 0.3,
            },
            Domain::CUnseen => Self {
                domain,
                width,
                height,
                texture: TextureRecipe::FineNoise,
                noise_sigma: 0.03,
                brightness_gain: 1.0,
                specular_fraction: 0.0,
                disparity_range: (2, 14),
                gt_density: 1.0,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        let (lo, hi) = self.disparity_range;
        if self.width < 8 || self.height < 8 {
            return bad(format!("image {}x{} too small", self.width, self.height));
        }
        if lo > hi || hi as usize >= self.width {
            return bad(format!("bad disparity range {lo}..={hi}"));
        }
        if !(self.gt_density > 0.0 && self.gt_density <= 1.0) {
            return bad(format!("gt density {} outside (0, 1]", self.gt_density));
        }
        if !(0.0..=1.0).contains(&self.specular_fraction) {
            return bad(format!("specular fraction {} outside [0, 1]", self.specular_fraction));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise sigma {} invalid", self.noise_sigma));
        }
        if !(self.brightness_gain > 0.0 && self.brightness_gain.is_finite()) {
            return bad(format!("gain {} invalid", self.brightness_gain));
        }
        Ok(())
    }

    /// Checks that every disparity fits the matcher's candidate set.
    pub fn check_d_max(&self, d_max: usize) -> Result<()> {
        if self.disparity_range.1 as usize >= d_max {
            return Err(Error::InvalidArgument(format!(
                "domain {} reaches disparity {}, matcher only covers 0..{d_max}",
                self.domain, self.disparity_range.1
            )));
        }
        Ok(())
    }
}

/// One generated stereo pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub left: GrayImage,
    pub right: GrayImage,
    /// Training ground truth, sparsified to the domain's density.
    pub gt: DisparityMap,
    /// Complete ground truth of non-occluded pixels, for evaluation.
    pub dense_gt: DisparityMap,
}

#[derive(Debug, Clone, Copy)]
enum Shape {
    Rect,
    Ellipse,
}

#[derive(Debug, Clone)]
struct Texture {
    recipe: TextureRecipe,
    seed: u64,
    base: f64,
    contrast: f64,
    period: f64,
    phase: (f64, f64),
    freq: (f64, f64),
}

impl Texture {
    fn random(recipe: TextureRecipe, rng: &mut ChaCha8Rng) -> Self {
        Self {
            recipe,
            seed: rng.random(),
            base: rng.random_range(0.25..0.75),
            contrast: rng.random_range(0.3..0.6),
            period: f64::from(rng.random_range(3u32..=8)),
            phase: (rng.random_range(0.0..6.3), rng.random_range(0.0..6.3)),
            freq: (rng.random_range(0.08..0.25), rng.random_range(0.08..0.25)),
        }
    }

    fn hash01(&self, u: i64, v: i64) -> f64 {
        let h = splitmix64(self.seed ^ splitmix64((u as u64) ^ ((v as u64) << 32)));
        (h >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Intensity in [0, 1] at integer surface coordinates.
    fn at(&self, u: i64, v: i64) -> f64 {
        let (uf, vf) = (u as f64, v as f64);
        let value = match self.recipe {
            TextureRecipe::Checker => {
                let cell = ((uf / self.period).floor() + (vf / self.period).floor()) as i64;
                let sq = if cell.rem_euclid(2) == 0 { 0.5 } else { -0.5 };
                self.base + self.contrast * sq + 0.3 * (self.hash01(u, v) - 0.5)
            }
            TextureRecipe::LowTextureBlobs => {
                let wave =
                    (self.freq.0 * 0.3 * uf + self.phase.0).sin() * (self.freq.1 * 0.3 * vf + self.phase.1).cos();
                self.base + 0.15 * self.contrast * wave + 0.03 * (self.hash01(u, v) - 0.5)
            }
            TextureRecipe::FineNoise => {
                let coarse = self.hash01(u.div_euclid(2), v.div_euclid(2)) - 0.5;
                self.base + 0.6 * coarse + 0.3 * (self.hash01(u, v) - 0.5)
            }
        };
        value.clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone)]
struct Layer {
    shape: Shape,
    center: (f64, f64),
    half: (f64, f64),
    disparity: u32,
    texture: Texture,
    /// Glare patch in surface coordinates: (u0, v0, u1, v1), half-open.
    glare: Option<(f64, f64, f64, f64)>,
}

impl Layer {
    fn covers(&self, u: i64, v: i64) -> bool {
        let dx = (u as f64 + 0.5 - self.center.0) / self.half.0;
        let dy = (v as f64 + 0.5 - self.center.1) / self.half.1;
        match self.shape {
            Shape::Rect => dx.abs() <= 1.0 && dy.abs() <= 1.0,
            Shape::Ellipse => dx * dx + dy * dy <= 1.0,
        }
    }

    fn in_glare(&self, u: i64, v: i64) -> bool {
        self.glare.is_some_and(|(u0, v0, u1, v1)| {
            let (uf, vf) = (u as f64, v as f64);
            uf >= u0 && uf < u1 && vf >= v0 && vf < v1
        })
    }
}

struct Scene {
    background: Texture,
    bg_disparity: u32,
    /// Sorted back to front; a later layer occludes an earlier one.
    layers: Vec<Layer>,
}

impl Scene {
    fn random(spec: &DomainSpec, rng: &mut ChaCha8Rng) -> Self {
        let (lo, hi) = spec.disparity_range;
        let (w, h) = (spec.width as f64, spec.height as f64);
        let background = Texture::random(spec.texture, rng);
        let n_layers = rng.random_range(3..=6);
        let mut layers: Vec<Layer> = (0..n_layers)
            .map(|_| {
                let shape = if rng.random_bool(0.5) { Shape::Rect } else { Shape::Ellipse };
                let half = (rng.random_range(w / 10.0..w / 4.0), rng.random_range(h / 10.0..h / 4.0));
                let center = (rng.random_range(0.0..w), rng.random_range(0.0..h));
                let disparity = rng.random_range(lo..=hi);
                let texture = Texture::random(spec.texture, rng);
                let glare = (spec.specular_fraction > 0.0).then(|| {
                    // patch area = fraction of the bounding box area
                    let aspect: f64 = rng.random_range(0.5..2.0);
                    let area = spec.specular_fraction * 4.0 * half.0 * half.1;
                    let gw = (area * aspect).sqrt().min(2.0 * half.0);
                    let gh = (area / gw).min(2.0 * half.1);
                    let u0 = center.0 - half.0 + rng.random_range(0.0..=(2.0 * half.0 - gw).max(0.0));
                    let v0 = center.1 - half.1 + rng.random_range(0.0..=(2.0 * half.1 - gh).max(0.0));
                    (u0, v0, u0 + gw, v0 + gh)
                });
                Layer { shape, center, half, disparity, texture, glare }
            })
            .collect();
        layers.sort_by_key(|l| l.disparity);
        Self { background, bg_disparity: lo, layers }
    }

    /// Index of the front-most layer covering surface point `(x + d_l, y)`
    /// for each layer's own disparity, i.e. what the right camera sees at
    /// column `x`. `None` means the background.
    fn visible_right(&self, x: i64, y: i64) -> Option<usize> {
        (0..self.layers.len()).rev().find(|&l| self.layers[l].covers(x + i64::from(self.layers[l].disparity), y))
    }

    fn visible_left(&self, x: i64, y: i64) -> Option<usize> {
        (0..self.layers.len()).rev().find(|&l| self.layers[l].covers(x, y))
    }

    fn disparity_of(&self, layer: Option<usize>) -> u32 {
        layer.map_or(self.bg_disparity, |l| self.layers[l].disparity)
    }
}

/// Raw rendering before photometric post-processing.
struct Rendering {
    left: Vec<f64>,
    right: Vec<f64>,
    dense_gt: DisparityMap,
}

fn render(spec: &DomainSpec, scene: &Scene) -> Result<Rendering> {
    let (w, h) = (spec.width, spec.height);
    let mut left = vec![0.0; w * h];
    let mut right = vec![0.0; w * h];
    let mut gt = vec![None; w * h];
    for y in 0..h {
        let yi = y as i64;
        for x in 0..w {
            let xi = x as i64;
            let i = y * w + x;

            let lv = scene.visible_left(xi, yi);
            left[i] = match lv {
                Some(l) => scene.layers[l].texture.at(xi, yi),
                None => scene.background.at(xi, yi),
            };

            let rv = scene.visible_right(xi, yi);
            right[i] = match rv {
                Some(l) => {
                    let layer = &scene.layers[l];
                    let u = xi + i64::from(layer.disparity);
                    if layer.in_glare(u, yi) {
                        0.97 - 0.002 * (u as f64 - layer.center.0).abs()
                    } else {
                        layer.texture.at(u, yi)
                    }
                }
                None => scene.background.at(xi + i64::from(scene.bg_disparity), yi),
            };

            let d = scene.disparity_of(lv);
            let xr = xi - i64::from(d);
            if xr >= 0 && scene.visible_right(xr, yi) == lv {
                gt[i] = Some(f64::from(d));
            }
        }
    }
    Ok(Rendering { left, right, dense_gt: DisparityMap::from_options(w, h, &gt)? })
}

fn post_process(spec: &DomainSpec, raw: &[f64], rng: &mut ChaCha8Rng) -> Result<GrayImage> {
    let noise =
        Normal::new(0.0, spec.noise_sigma.max(f64::MIN_POSITIVE)).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let values: Vec<f64> = raw
        .iter()
        .map(|&v| {
            let n = if spec.noise_sigma > 0.0 { noise.sample(rng) } else { 0.0 };
            spec.brightness_gain * v + n
        })
        .collect();
    GrayImage::from_unit(spec.width, spec.height, &values)
}

/// Stream seed of a sample, mixing in the domain so that equal seeds in
/// different domains give different scenes.
fn sample_rng(spec: &DomainSpec, seed: u64, purpose: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, &[spec.domain as u64, purpose]))
}

/// Generates one stereo pair. Deterministic in `(spec, seed)`.
pub fn synth_sample(spec: &DomainSpec, seed: u64) -> Result<Sample> {
    spec.validate()?;
    let scene = Scene::random(spec, &mut sample_rng(spec, seed, 0));
    let raw = render(spec, &scene)?;
    let mut noise_rng = sample_rng(spec, seed, 1);
    let left = post_process(spec, &raw.left, &mut noise_rng)?;
    let right = post_process(spec, &raw.right, &mut noise_rng)?;
    let gt = sparsify_gt(&raw.dense_gt, spec.gt_density, derive_seed(seed, &[spec.domain as u64, 2]))?;
    Ok(Sample { left, right, gt, dense_gt: raw.dense_gt })
}

/// Raw (pre-noise, pre-gain) views quantized to 8 bits, plus dense ground
/// truth. Exposed for warp-consistency checks.
pub fn render_clean(spec: &DomainSpec, seed: u64) -> Result<(GrayImage, GrayImage, DisparityMap)> {
    spec.validate()?;
    let scene = Scene::random(spec, &mut sample_rng(spec, seed, 0));
    let raw = render(spec, &scene)?;
    Ok((
        GrayImage::from_unit(spec.width, spec.height, &raw.left)?,
        GrayImage::from_unit(spec.width, spec.height, &raw.right)?,
        raw.dense_gt,
    ))
}

/// Keeps each valid pixel independently with probability `density`.
pub fn sparsify_gt(dense: &DisparityMap, density: f64, seed: u64) -> Result<DisparityMap> {
    if !(density > 0.0 && density <= 1.0) {
        return Err(Error::InvalidArgument(format!("density {density} outside (0, 1]")));
    }
    if density == 1.0 {
        return Ok(dense.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keep: Vec<bool> = (0..dense.len()).map(|i| dense.is_valid(i) && rng.random_bool(density)).collect();
    dense.restricted(&keep)
}

/// `n` samples with seeds `base_seed + index`.
pub fn make_dataset(spec: &DomainSpec, n: usize, base_seed: u64) -> Result<Vec<Sample>> {
    spec.validate()?;
    (0..n).into_par_iter().map(|i| synth_sample(spec, base_seed.wrapping_add(i as u64))).collect()
}
