//! Training-data synthesis.
//!
//! Changes are created by alpha-compositing background-free object cutouts
//! onto one image of an unchanged pair; the change mask is OR-ed with the
//! cutout's thresholded alpha support. Shadow augmentation darkens an image
//! photometrically and never touches the mask.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::types::{Branch, ChangeMask, Image, ImagePair, LabeledSample, Provenance, CHANNELS};

/// Smallest side accepted by [`generate_scene`].
pub const MIN_SCENE_SIDE: usize = 32;

/// Jitter applied independently to the two renders of a generated scene.
pub const SCENE_JITTER_SEVERITY: f64 = 0.1;

/// A foreground sprite with per-pixel opacity.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectCutout {
    rgb: Image,
    alpha: Vec<f32>,
}

impl ObjectCutout {
    pub fn new(rgb: Image, alpha: Vec<f32>) -> Result<Self> {
        if alpha.len() != rgb.height() * rgb.width() {
            return Err(Error::Shape(format!(
                "alpha has {} values for a {}x{} cutout",
                alpha.len(),
                rgb.height(),
                rgb.width()
            )));
        }
        if alpha.iter().any(|a| !a.is_finite() || *a < 0.0 || *a > 1.0) {
            return Err(Error::Value("alpha outside [0, 1]".into()));
        }
        Ok(Self { rgb, alpha })
    }

    pub fn height(&self) -> usize {
        self.rgb.height()
    }

    pub fn width(&self) -> usize {
        self.rgb.width()
    }

    pub fn rgb(&self) -> &Image {
        &self.rgb
    }

    pub fn alpha(&self) -> &[f32] {
        &self.alpha
    }

    /// Number of pixels whose alpha exceeds `threshold`.
    pub fn support_area(&self, threshold: f64) -> usize {
        self.alpha.iter().filter(|&&a| a as f64 > threshold).count()
    }
}

/// Soft occlusion pattern; 1 means full shadow.
#[derive(Debug, Clone, PartialEq)]
pub struct ShadowPattern {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ShadowPattern {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "shadow pattern {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return Err(Error::Value("shadow pattern outside [0, 1]".into()));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PastePolicy {
    T0Only,
    T1Only,
    #[default]
    Either,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// Mean of the Poisson-distributed number of pasted cutouts per sample.
    pub paste_rate: f64,
    pub paste_branch_policy: PastePolicy,
    /// Probability of shadowing each branch, drawn independently.
    pub shadow_probability: f64,
    pub shadow_weight_range: [f64; 2],
    pub photometric_severity: f64,
    pub median_kernel: usize,
    pub alpha_threshold: f64,
    pub rng_seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            paste_rate: 2.0,
            paste_branch_policy: PastePolicy::Either,
            shadow_probability: 0.5,
            shadow_weight_range: [0.3, 0.7],
            photometric_severity: 0.3,
            median_kernel: 3,
            alpha_threshold: 0.5,
            rng_seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !(self.paste_rate >= 0.0 && self.paste_rate.is_finite()) {
            return Err(Error::Config(format!(
                "paste_rate {} must be >= 0",
                self.paste_rate
            )));
        }
        if !unit(self.shadow_probability) {
            return Err(Error::Config(format!(
                "shadow_probability {} outside [0, 1]",
                self.shadow_probability
            )));
        }
        let [lo, hi] = self.shadow_weight_range;
        if !(unit(lo) && unit(hi) && lo <= hi) {
            return Err(Error::Config(format!(
                "shadow_weight_range [{lo}, {hi}] is not a subrange of [0, 1]"
            )));
        }
        if !unit(self.photometric_severity) {
            return Err(Error::Config(format!(
                "photometric_severity {} outside [0, 1]",
                self.photometric_severity
            )));
        }
        check_kernel(self.median_kernel)?;
        if !(self.alpha_threshold > 0.0 && self.alpha_threshold < 1.0) {
            return Err(Error::Config(format!(
                "alpha_threshold {} outside (0, 1)",
                self.alpha_threshold
            )));
        }
        Ok(())
    }
}

fn check_kernel(kernel: usize) -> Result<()> {
    if kernel == 0 || kernel % 2 == 0 {
        return Err(Error::Config(format!(
            "median kernel {kernel} must be odd and >= 1"
        )));
    }
    Ok(())
}

/// Composites `cutout` onto one branch of `sample` with its top-left corner at
/// `position` (row, col), and ORs the thresholded alpha support into the mask.
pub fn paste_object(
    sample: &LabeledSample,
    cutout: &ObjectCutout,
    position: (usize, usize),
    branch: Branch,
    alpha_threshold: f64,
) -> Result<LabeledSample> {
    let (h, w) = sample.dims();
    let (row, col) = position;
    if row + cutout.height() > h || col + cutout.width() > w {
        return Err(Error::Placement(format!(
            "{}x{} cutout at ({row}, {col}) exceeds {h}x{w} image",
            cutout.height(),
            cutout.width()
        )));
    }

    let target = sample.pair().get(branch);
    let mut pixels = target.data().to_vec();
    let mut mask = sample.mask().data().to_vec();
    let src = cutout.rgb().data();
    for r in 0..cutout.height() {
        for c in 0..cutout.width() {
            let k = r * cutout.width() + c;
            let a = cutout.alpha[k];
            if a == 0.0 {
                continue;
            }
            let dst = ((row + r) * w + col + c) * CHANNELS;
            for ch in 0..CHANNELS {
                pixels[dst + ch] = a * src[k * CHANNELS + ch] + (1.0 - a) * pixels[dst + ch];
            }
            if a as f64 > alpha_threshold {
                mask[(row + r) * w + col + c] = 1;
            }
        }
    }

    let pair = sample
        .pair()
        .clone()
        .with_branch(branch, Image::from_clipped(h, w, pixels)?)?;
    Ok(
        LabeledSample::new(pair, ChangeMask::new(h, w, mask)?, sample.provenance())?
            .with_split(sample.split()),
    )
}

/// Multiplicative darkening: `out = image * (1 - weight * pattern)`.
pub fn apply_shadow(image: &Image, pattern: &ShadowPattern, weight: f64) -> Result<Image> {
    if image.dims() != pattern.dims() {
        return Err(Error::Shape(format!(
            "shadow pattern {:?} does not match image {:?}",
            pattern.dims(),
            image.dims()
        )));
    }
    if !(0.0..=1.0).contains(&weight) {
        return Err(Error::Value(format!(
            "shadow weight {weight} outside [0, 1]"
        )));
    }
    let w = weight as f32;
    let data = image
        .data()
        .chunks_exact(CHANNELS)
        .zip(&pattern.data)
        .flat_map(|(px, &s)| {
            let f = 1.0 - w * s;
            px.iter().map(move |v| v * f)
        })
        .collect();
    Image::from_clipped(image.height(), image.width(), data)
}

/// Shadows one branch of a sample. The mask is carried over unchanged.
pub fn shadow_sample(
    sample: &LabeledSample,
    pattern: &ShadowPattern,
    weight: f64,
    branch: Branch,
) -> Result<LabeledSample> {
    let shadowed = apply_shadow(sample.pair().get(branch), pattern, weight)?;
    let pair = sample.pair().clone().with_branch(branch, shadowed)?;
    Ok(
        LabeledSample::new(pair, sample.mask().clone(), sample.provenance())?
            .with_split(sample.split()),
    )
}

/// Contrast, then brightness, then a median filter; clipped to [0, 1].
///
/// Contrast scales about the image mean by a factor drawn from
/// `[1 - severity, 1 + severity]`; brightness adds an offset drawn from
/// `[-severity, severity]`.
pub fn photometric_augment<R: Rng + ?Sized>(
    image: &Image,
    severity: f64,
    kernel: usize,
    rng: &mut R,
) -> Result<Image> {
    if !(0.0..=1.0).contains(&severity) {
        return Err(Error::Config(format!("severity {severity} outside [0, 1]")));
    }
    check_kernel(kernel)?;
    // Always consume two draws so the stream position does not depend on severity.
    let contrast = (1.0 + severity * (2.0 * rng.gen::<f64>() - 1.0)) as f32;
    let brightness = (severity * (2.0 * rng.gen::<f64>() - 1.0)) as f32;

    let mean =
        (image.data().iter().map(|&v| v as f64).sum::<f64>() / image.data().len() as f64) as f32;
    let shift = (1.0 - contrast) * mean + brightness;
    let data = image.data().iter().map(|&v| v * contrast + shift).collect();
    let jittered = Image::from_clipped(image.height(), image.width(), data)?;
    median_filter(&jittered, kernel)
}

/// Per-channel median filter with edge replication.
pub fn median_filter(image: &Image, kernel: usize) -> Result<Image> {
    check_kernel(kernel)?;
    if kernel == 1 {
        return Ok(image.clone());
    }
    if kernel == 3 {
        return median3(image);
    }
    let (h, w) = image.dims();
    let r = (kernel / 2) as isize;
    let src = image.data();
    let mut out = vec![0.0f32; src.len()];
    let mut window = Vec::with_capacity(kernel * kernel);
    let mid = kernel * kernel / 2;
    for y in 0..h {
        for x in 0..w {
            for ch in 0..CHANNELS {
                window.clear();
                for dy in -r..=r {
                    let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                    for dx in -r..=r {
                        let xx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                        window.push(src[(yy * w + xx) * CHANNELS + ch]);
                    }
                }
                let (_, m, _) = window.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
                out[(y * w + x) * CHANNELS + ch] = *m;
            }
        }
    }
    Image::from_clipped(h, w, out)
}

fn median3(image: &Image) -> Result<Image> {
    let (h, w) = image.dims();
    let src = image.data();
    let mut out = vec![0.0f32; src.len()];
    let at = |y: usize, x: usize, ch: usize| src[(y * w + x) * CHANNELS + ch];
    for y in 0..h {
        let rows = [y.saturating_sub(1), y, (y + 1).min(h - 1)];
        for x in 0..w {
            let cols = [x.saturating_sub(1), x, (x + 1).min(w - 1)];
            for ch in 0..CHANNELS {
                let mut p = [0.0f32; 9];
                for (i, &yy) in rows.iter().enumerate() {
                    for (j, &xx) in cols.iter().enumerate() {
                        p[i * 3 + j] = at(yy, xx, ch);
                    }
                }
                out[(y * w + x) * CHANNELS + ch] = median9(p);
            }
        }
    }
    Image::from_clipped(h, w, out)
}

/// Median of nine values with a fixed 19-exchange network.
fn median9(mut p: [f32; 9]) -> f32 {
    let mut s = |a: usize, b: usize| {
        let (x, y) = (p[a], p[b]);
        p[a] = x.min(y);
        p[b] = x.max(y);
    };
    for (a, b) in [
        (1, 2),
        (4, 5),
        (7, 8),
        (0, 1),
        (3, 4),
        (6, 7),
        (1, 2),
        (4, 5),
        (7, 8),
        (0, 3),
        (5, 8),
        (4, 7),
        (3, 6),
        (1, 4),
        (2, 5),
        (4, 7),
        (4, 2),
        (6, 4),
        (4, 2),
    ] {
        s(a, b);
    }
    p[4]
}

/// Elementwise OR of "added" and "removed" labels.
pub fn label_or(added: &ChangeMask, removed: &ChangeMask) -> Result<ChangeMask> {
    if added.dims() != removed.dims() {
        return Err(Error::Shape(format!(
            "cannot OR masks {:?} and {:?}",
            added.dims(),
            removed.dims()
        )));
    }
    let data = added
        .data()
        .iter()
        .zip(removed.data())
        .map(|(a, b)| a | b)
        .collect();
    ChangeMask::new(added.height(), added.width(), data)
}

fn random_color<R: Rng + ?Sized>(rng: &mut R) -> [f32; 3] {
    [
        rng.gen_range(0.05..0.95),
        rng.gen_range(0.05..0.95),
        rng.gen_range(0.05..0.95),
    ]
}

fn smoothstep(edge0: f32, edge1: f32, x: f32) -> f32 {
    let t = ((x - edge0) / (edge1 - edge0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Approximate signed distance (positive inside) to an axis-aligned ellipse.
fn ellipse_sd(y: f32, x: f32, cy: f32, cx: f32, ry: f32, rx: f32) -> f32 {
    let r = (((y - cy) / ry).powi(2) + ((x - cx) / rx).powi(2)).sqrt();
    (1.0 - r) * ry.min(rx)
}

/// Signed distance (positive inside) to an axis-aligned rounded rectangle.
fn rounded_rect_sd(y: f32, x: f32, cy: f32, cx: f32, hy: f32, hx: f32, radius: f32) -> f32 {
    let qy = (y - cy).abs() - (hy - radius);
    let qx = (x - cx).abs() - (hx - radius);
    let outside = (qy.max(0.0).powi(2) + qx.max(0.0).powi(2)).sqrt();
    let inside = qy.max(qx).min(0.0);
    -(outside + inside - radius)
}

/// Renders a procedurally textured, cluttered background twice with
/// independent mild photometric jitter. The pair is semantically unchanged.
pub fn generate_scene<R: Rng + ?Sized>(rng: &mut R, size: (usize, usize)) -> Result<ImagePair> {
    let (h, w) = size;
    if h < MIN_SCENE_SIDE || w < MIN_SCENE_SIDE {
        return Err(Error::Config(format!(
            "scene size {h}x{w} below minimum {MIN_SCENE_SIDE}"
        )));
    }
    let scene_id = format!("scene_{:016x}", rng.gen::<u64>());
    let c0 = random_color(rng);
    let c1 = random_color(rng);
    let angle: f32 = rng.gen_range(0.0..std::f32::consts::TAU);
    let (sa, ca) = angle.sin_cos();
    let span = (h as f32 * sa.abs() + w as f32 * ca.abs()).max(1.0);
    let mut data = vec![0.0f32; h * w * CHANNELS];
    for y in 0..h {
        for x in 0..w {
            let t =
                ((x as f32 - w as f32 / 2.0) * ca + (y as f32 - h as f32 / 2.0) * sa) / span + 0.5;
            let i = (y * w + x) * CHANNELS;
            for ch in 0..CHANNELS {
                data[i + ch] = c0[ch] + (c1[ch] - c0[ch]) * t.clamp(0.0, 1.0);
            }
        }
    }

    let clutter = rng.gen_range(6..=14);
    for _ in 0..clutter {
        let cy = rng.gen_range(0.0..h as f32);
        let cx = rng.gen_range(0.0..w as f32);
        let ry = rng.gen_range(0.05..0.25) * h as f32;
        let rx = rng.gen_range(0.05..0.25) * w as f32;
        let color = random_color(rng);
        let ellipse = rng.gen_bool(0.5);
        let y0 = (cy - ry).floor().max(0.0) as usize;
        let y1 = ((cy + ry).ceil() as usize).min(h);
        let x0 = (cx - rx).floor().max(0.0) as usize;
        let x1 = ((cx + rx).ceil() as usize).min(w);
        for y in y0..y1 {
            for x in x0..x1 {
                let (yf, xf) = (y as f32 + 0.5, x as f32 + 0.5);
                let sd = if ellipse {
                    ellipse_sd(yf, xf, cy, cx, ry, rx)
                } else {
                    rounded_rect_sd(yf, xf, cy, cx, ry, rx, 0.0)
                };
                let a = (sd + 0.5).clamp(0.0, 1.0);
                if a > 0.0 {
                    let i = (y * w + x) * CHANNELS;
                    for ch in 0..CHANNELS {
                        data[i + ch] = a * color[ch] + (1.0 - a) * data[i + ch];
                    }
                }
            }
        }
    }

    for v in &mut data {
        *v += rng.gen_range(-0.03..0.03);
    }
    let background = Image::from_clipped(h, w, data)?;
    let t0 = photometric_augment(&background, SCENE_JITTER_SEVERITY, 1, rng)?;
    let t1 = photometric_augment(&background, SCENE_JITTER_SEVERITY, 1, rng)?;
    ImagePair::new(t0, t1, scene_id)
}

/// A random textured object (ellipse, rounded box or multi-lobe blob) with
/// anti-aliased alpha. Sides are drawn from `[min_side, max_side]`.
pub fn generate_cutout<R: Rng + ?Sized>(
    rng: &mut R,
    min_side: usize,
    max_side: usize,
) -> Result<ObjectCutout> {
    if min_side < 3 || min_side > max_side {
        return Err(Error::Config(format!(
            "cutout side range [{min_side}, {max_side}] is invalid"
        )));
    }
    let h = rng.gen_range(min_side..=max_side);
    let w = rng.gen_range(min_side..=max_side);
    let (hf, wf) = (h as f32, w as f32);
    let base = random_color(rng);
    let accent = random_color(rng);
    let stripe_period = rng.gen_range(3.0..9.0f32);
    let stripes = rng.gen_bool(0.5);
    let kind = rng.gen_range(0..3);
    let lobes: Vec<(f32, f32, f32, f32)> = (0..rng.gen_range(2..=3))
        .map(|_| {
            let ry = rng.gen_range(0.25..0.5) * hf;
            let rx = rng.gen_range(0.25..0.5) * wf;
            let cy = rng.gen_range(ry..=(hf - ry).max(ry));
            let cx = rng.gen_range(rx..=(wf - rx).max(rx));
            (cy, cx, ry, rx)
        })
        .collect();
    let radius = rng.gen_range(0.0..0.3) * hf.min(wf);

    let mut rgb = Vec::with_capacity(h * w * CHANNELS);
    let mut alpha = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let (yf, xf) = (y as f32 + 0.5, x as f32 + 0.5);
            let sd = match kind {
                0 => ellipse_sd(yf, xf, hf / 2.0, wf / 2.0, hf / 2.0 - 0.5, wf / 2.0 - 0.5),
                1 => rounded_rect_sd(
                    yf,
                    xf,
                    hf / 2.0,
                    wf / 2.0,
                    hf / 2.0 - 0.5,
                    wf / 2.0 - 0.5,
                    radius,
                ),
                _ => lobes
                    .iter()
                    .map(|&(cy, cx, ry, rx)| ellipse_sd(yf, xf, cy, cx, ry, rx))
                    .fold(f32::NEG_INFINITY, f32::max),
            };
            alpha.push((sd + 0.5).clamp(0.0, 1.0));
            let t = if stripes {
                (((xf + yf) / stripe_period).floor() as i64 % 2) as f32
            } else {
                yf / hf
            };
            let shade = 1.0 - 0.25 * (1.0 - (sd / 4.0).clamp(0.0, 1.0));
            for ch in 0..CHANNELS {
                rgb.push(((base[ch] + (accent[ch] - base[ch]) * 0.5 * t) * shade).clamp(0.0, 1.0));
            }
        }
    }
    ObjectCutout::new(Image::new(h, w, rgb)?, alpha)
}

/// A soft shadow: a cast band, a large soft blob, or a cluster of blobs.
pub fn generate_shadow<R: Rng + ?Sized>(
    rng: &mut R,
    size: (usize, usize),
) -> Result<ShadowPattern> {
    let (h, w) = size;
    if h == 0 || w == 0 {
        return Err(Error::Config(
            "shadow pattern needs a non-empty size".into(),
        ));
    }
    let (hf, wf) = (h as f32, w as f32);
    let diag = (hf * hf + wf * wf).sqrt();
    let softness = rng.gen_range(0.02..0.1) * diag;
    let kind = rng.gen_range(0..3);
    // Band parameters.
    let angle: f32 = rng.gen_range(0.0..std::f32::consts::PI);
    let (sa, ca) = angle.sin_cos();
    let offset = rng.gen_range(-0.3..0.3) * diag;
    let half_width = rng.gen_range(0.08..0.3) * diag;
    // Blob parameters.
    let blobs: Vec<(f32, f32, f32, f32)> = (0..if kind == 1 { 1 } else { rng.gen_range(3..=6) })
        .map(|_| {
            let scale = if kind == 1 {
                rng.gen_range(0.3..0.6)
            } else {
                rng.gen_range(0.1..0.3)
            };
            (
                rng.gen_range(0.0..hf),
                rng.gen_range(0.0..wf),
                scale * hf,
                scale * wf,
            )
        })
        .collect();

    let mut data = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let (yf, xf) = (y as f32 + 0.5, x as f32 + 0.5);
            let sd = match kind {
                0 => {
                    let d = (xf - wf / 2.0) * ca + (yf - hf / 2.0) * sa - offset;
                    half_width - d.abs()
                }
                _ => blobs
                    .iter()
                    .map(|&(cy, cx, ry, rx)| ellipse_sd(yf, xf, cy, cx, ry, rx))
                    .fold(f32::NEG_INFINITY, f32::max),
            };
            data.push(smoothstep(-softness, softness, sd));
        }
    }
    ShadowPattern::new(h, w, data)
}

/// Generates `count` labeled samples from unchanged backgrounds.
///
/// Sample `i` is a pure function of `(inputs, config.rng_seed, i)`, so the
/// result does not depend on how the work is scheduled.
pub fn synth_dataset(
    backgrounds: &[ImagePair],
    cutouts: &[ObjectCutout],
    shadows: &[ShadowPattern],
    config: &SynthConfig,
    count: usize,
) -> Result<Vec<LabeledSample>> {
    if backgrounds.is_empty() {
        return Err(Error::Config(
            "synthesis needs at least one background pair".into(),
        ));
    }
    let augmenter = Augmenter::new(cutouts, shadows, config)?;

    (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = seed::derived_rng(config.rng_seed, i as u64);
            let background = backgrounds.choose(&mut rng).expect("non-empty");
            let sample = LabeledSample::unchanged(background.clone(), Provenance::Synthetic)
                .with_id(format!("synth_{i:06}"));
            augmenter.apply(&sample, &mut rng)
        })
        .collect()
}

/// The per-sample synthesis pipeline: Poisson-many pastes, independent
/// per-branch shadows, then photometric jitter on both images.
#[derive(Debug, Clone)]
pub struct Augmenter<'a> {
    cutouts: &'a [ObjectCutout],
    shadows: &'a [ShadowPattern],
    config: SynthConfig,
    poisson: Option<Poisson<f64>>,
}

impl<'a> Augmenter<'a> {
    pub fn new(
        cutouts: &'a [ObjectCutout],
        shadows: &'a [ShadowPattern],
        config: &SynthConfig,
    ) -> Result<Self> {
        config.validate()?;
        if config.paste_rate > 0.0 && cutouts.is_empty() {
            return Err(Error::Config(
                "paste_rate > 0 but no cutouts were supplied".into(),
            ));
        }
        if config.shadow_probability > 0.0 && shadows.is_empty() {
            return Err(Error::Config(
                "shadow_probability > 0 but no shadow patterns were supplied".into(),
            ));
        }
        let poisson = if config.paste_rate > 0.0 {
            Some(Poisson::new(config.paste_rate).map_err(|e| Error::Config(e.to_string()))?)
        } else {
            None
        };
        Ok(Self {
            cutouts,
            shadows,
            config: config.clone(),
            poisson,
        })
    }

    pub fn config(&self) -> &SynthConfig {
        &self.config
    }

    /// Augments `sample`, keeping its id, split and provenance. Existing
    /// mask pixels stay set.
    pub fn apply<R: Rng + ?Sized>(
        &self,
        sample: &LabeledSample,
        rng: &mut R,
    ) -> Result<LabeledSample> {
        let config = &self.config;
        let (h, w) = sample.dims();
        let mut out = sample.clone();

        let pastes = self.poisson.as_ref().map_or(0, |p| p.sample(rng) as usize);
        if pastes > 0 {
            let fitting: Vec<&ObjectCutout> = self
                .cutouts
                .iter()
                .filter(|c| c.height() <= h && c.width() <= w)
                .collect();
            if fitting.is_empty() {
                return Err(Error::Config(format!(
                    "no cutout fits a {h}x{w} background"
                )));
            }
            for _ in 0..pastes {
                let cutout = fitting.choose(rng).expect("non-empty");
                let row = rng.gen_range(0..=h - cutout.height());
                let col = rng.gen_range(0..=w - cutout.width());
                let branch = match config.paste_branch_policy {
                    PastePolicy::T0Only => Branch::T0,
                    PastePolicy::T1Only => Branch::T1,
                    PastePolicy::Either => {
                        if rng.gen_bool(0.5) {
                            Branch::T0
                        } else {
                            Branch::T1
                        }
                    }
                };
                out = paste_object(&out, cutout, (row, col), branch, config.alpha_threshold)?;
            }
        }

        for branch in [Branch::T0, Branch::T1] {
            if rng.gen::<f64>() < config.shadow_probability {
                let pattern = self.shadows.choose(rng).expect("non-empty");
                let [lo, hi] = config.shadow_weight_range;
                let weight = lo + (hi - lo) * rng.gen::<f64>();
                out = shadow_sample(&out, pattern, weight, branch)?;
            }
        }

        let t0 = photometric_augment(
            out.pair().t0(),
            config.photometric_severity,
            config.median_kernel,
            rng,
        )?;
        let t1 = photometric_augment(
            out.pair().t1(),
            config.photometric_severity,
            config.median_kernel,
            rng,
        )?;
        let pair = out
            .pair()
            .clone()
            .with_branch(Branch::T0, t0)?
            .with_branch(Branch::T1, t1)?;
        let (_, mask) = out.into_parts();
        Ok(LabeledSample::new(pair, mask, sample.provenance())?.with_split(sample.split()))
    }
}

/// Procedural assets for synthesis when no real cutouts or shadow masks are on hand.
#[derive(Debug, Clone)]
pub struct ProceduralAssets {
    pub backgrounds: Vec<ImagePair>,
    pub cutouts: Vec<ObjectCutout>,
    pub shadows: Vec<ShadowPattern>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssetCounts {
    pub backgrounds: usize,
    pub cutouts: usize,
    pub shadows: usize,
    pub cutout_min_side: usize,
    pub cutout_max_side: usize,
}

impl Default for AssetCounts {
    fn default() -> Self {
        Self {
            backgrounds: 32,
            cutouts: 48,
            shadows: 24,
            cutout_min_side: 14,
            cutout_max_side: 40,
        }
    }
}

impl ProceduralAssets {
    pub fn generate(seed_value: u64, size: (usize, usize), counts: &AssetCounts) -> Result<Self> {
        let backgrounds = (0..counts.backgrounds)
            .map(|i| {
                generate_scene(
                    &mut seed::derived_rng(seed::derive(seed_value, 1), i as u64),
                    size,
                )
            })
            .collect::<Result<_>>()?;
        let cutouts = (0..counts.cutouts)
            .map(|i| {
                generate_cutout(
                    &mut seed::derived_rng(seed::derive(seed_value, 2), i as u64),
                    counts.cutout_min_side,
                    counts.cutout_max_side,
                )
            })
            .collect::<Result<_>>()?;
        let shadows = (0..counts.shadows)
            .map(|i| {
                generate_shadow(
                    &mut seed::derived_rng(seed::derive(seed_value, 3), i as u64),
                    size,
                )
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            backgrounds,
            cutouts,
            shadows,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng;

    fn flat_sample(h: usize, w: usize, v: f32) -> LabeledSample {
        let pair = ImagePair::new(
            Image::filled(h, w, v).unwrap(),
            Image::filled(h, w, v).unwrap(),
            "s",
        )
        .unwrap();
        LabeledSample::unchanged(pair, Provenance::Real)
    }

    fn opaque(h: usize, w: usize) -> ObjectCutout {
        ObjectCutout::new(Image::filled(h, w, 0.9).unwrap(), vec![1.0; h * w]).unwrap()
    }

    #[test]
    fn opaque_paste_marks_exactly_its_window() {
        let s = flat_sample(32, 32, 0.2);
        let out = paste_object(&s, &opaque(4, 4), (10, 10), Branch::T1, 0.5).unwrap();
        assert_eq!(out.mask().count_ones(), 16);
        for r in 0..32 {
            for c in 0..32 {
                let inside = (10..14).contains(&r) && (10..14).contains(&c);
                assert_eq!(out.mask().get(r, c), inside as u8);
            }
        }
        assert_eq!(out.pair().t0(), s.pair().t0());
        assert_eq!(out.pair().t1().pixel(11, 11), [0.9; 3]);
    }

    #[test]
    fn transparent_paste_is_identity() {
        let s = flat_sample(16, 16, 0.4);
        let ghost = ObjectCutout::new(Image::filled(5, 5, 1.0).unwrap(), vec![0.0; 25]).unwrap();
        let out = paste_object(&s, &ghost, (3, 3), Branch::T0, 0.5).unwrap();
        assert_eq!(out, s);
    }

    #[test]
    fn paste_out_of_bounds_rejected() {
        let s = flat_sample(16, 16, 0.4);
        let r = paste_object(&s, &opaque(4, 4), (13, 0), Branch::T0, 0.5);
        assert!(matches!(r, Err(Error::Placement(_))));
    }

    #[test]
    fn paste_ors_with_existing_mask() {
        let s = flat_sample(16, 16, 0.4);
        let first = paste_object(&s, &opaque(4, 4), (2, 2), Branch::T0, 0.5).unwrap();
        let second = paste_object(&first, &opaque(4, 4), (4, 4), Branch::T1, 0.5).unwrap();
        // Two overlapping 4x4 windows share a 2x2 corner.
        assert_eq!(second.mask().count_ones(), 16 + 16 - 4);
    }

    #[test]
    fn shadow_identities() {
        let img = generate_scene(&mut rng(3), (32, 48)).unwrap().t0().clone();
        let pattern = ShadowPattern::new(32, 48, vec![1.0; 32 * 48]).unwrap();
        assert_eq!(apply_shadow(&img, &pattern, 0.0).unwrap(), img);
        let dark = apply_shadow(&img, &pattern, 0.25).unwrap();
        for (a, b) in dark.data().iter().zip(img.data()) {
            assert!((a - b * 0.75).abs() < 1e-6);
        }
        let wrong = ShadowPattern::new(2, 2, vec![0.0; 4]).unwrap();
        assert!(matches!(
            apply_shadow(&img, &wrong, 0.5),
            Err(Error::Shape(_))
        ));
        assert!(apply_shadow(&img, &pattern, 1.5).is_err());
    }

    #[test]
    fn photometric_neutral_parameters_are_identity() {
        let img = generate_scene(&mut rng(4), (32, 32)).unwrap().t1().clone();
        assert_eq!(photometric_augment(&img, 0.0, 1, &mut rng(0)).unwrap(), img);
        assert!(matches!(
            photometric_augment(&img, 0.3, 2, &mut rng(0)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn median_of_constant_is_constant() {
        let img = Image::filled(9, 7, 0.37).unwrap();
        for k in [1, 3, 5, 7] {
            assert_eq!(median_filter(&img, k).unwrap(), img);
        }
    }

    #[test]
    fn median_network_matches_sorting() {
        let mut r = rng(5);
        for _ in 0..2000 {
            let mut p = [0.0f32; 9];
            for v in &mut p {
                *v = (r.gen_range(0..6) as f32) / 5.0;
            }
            let mut sorted = p;
            sorted.sort_by(f32::total_cmp);
            assert_eq!(median9(p), sorted[4], "{p:?}");
        }
    }

    #[test]
    fn median_removes_isolated_pixel() {
        let mut data = vec![0.0; 5 * 5 * 3];
        let centre = (2 * 5 + 2) * 3;
        data[centre..centre + 3].copy_from_slice(&[1.0, 1.0, 1.0]);
        let out = median_filter(&Image::new(5, 5, data).unwrap(), 3).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn or_truth_table_and_identities() {
        let a = ChangeMask::new(1, 4, vec![0, 1, 0, 1]).unwrap();
        let b = ChangeMask::new(1, 4, vec![0, 0, 1, 1]).unwrap();
        assert_eq!(label_or(&a, &b).unwrap().data(), &[0, 1, 1, 1]);
        assert_eq!(label_or(&a, &ChangeMask::zeros(1, 4)).unwrap(), a);
        assert_eq!(label_or(&a, &a).unwrap(), a);
        assert!(label_or(&a, &ChangeMask::zeros(2, 2)).is_err());
    }

    #[test]
    fn scene_generation_is_deterministic_and_bounded() {
        let a = generate_scene(&mut rng(11), (40, 64)).unwrap();
        let b = generate_scene(&mut rng(11), (40, 64)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.t0(), a.t1());
        // Both renders come from one background; jitter bounds the difference.
        let max_diff = a
            .t0()
            .data()
            .iter()
            .zip(a.t1().data())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f32::max);
        assert!(
            max_diff <= (4.0 * SCENE_JITTER_SEVERITY) as f32 + 1e-6,
            "{max_diff}"
        );
        assert!(matches!(
            generate_scene(&mut rng(0), (31, 64)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn neutral_synthesis_copies_backgrounds() {
        let bg = generate_scene(&mut rng(5), (32, 32)).unwrap();
        let cfg = SynthConfig {
            paste_rate: 0.0,
            shadow_probability: 0.0,
            photometric_severity: 0.0,
            median_kernel: 1,
            ..SynthConfig::default()
        };
        let out = synth_dataset(std::slice::from_ref(&bg), &[], &[], &cfg, 3).unwrap();
        assert_eq!(out.len(), 3);
        for s in &out {
            assert_eq!(s.pair().t0(), bg.t0());
            assert_eq!(s.pair().t1(), bg.t1());
            assert_eq!(s.mask().count_ones(), 0);
        }
    }

    #[test]
    fn synthesis_preconditions() {
        let bg = generate_scene(&mut rng(5), (32, 32)).unwrap();
        let cfg = SynthConfig {
            shadow_probability: 0.0,
            ..SynthConfig::default()
        };
        assert!(synth_dataset(&[], &[], &[], &cfg, 1).is_err());
        assert!(synth_dataset(&[bg.clone()], &[], &[], &cfg, 1).is_err());
        let bad = SynthConfig {
            paste_rate: -1.0,
            ..SynthConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = SynthConfig {
            median_kernel: 4,
            ..SynthConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn generated_cutouts_have_support() {
        for s in 0..20 {
            let c = generate_cutout(&mut rng(s), 10, 30).unwrap();
            assert!(c.support_area(0.5) > 0);
            let sh = generate_shadow(&mut rng(s), (32, 64)).unwrap();
            assert!(sh.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
