//! Domain types shared by every stage of the pipeline.
//!
//! All rasters are row-major. Color images interleave their three channels
//! (HWC); masks are single channel.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CHANNELS: usize = 3;

/// Default probability clamp; keeps `log p` and `log (1 - p)` finite.
pub const DEFAULT_CLAMP_EPS: f64 = 1e-7;

/// An H x W x 3 color image with intensities in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Shape(format!("empty image {height}x{width}")));
        }
        if data.len() != height * width * CHANNELS {
            return Err(Error::Shape(format!(
                "image {height}x{width}x{CHANNELS} needs {} values, got {}",
                height * width * CHANNELS,
                data.len()
            )));
        }
        if let Some(v) = data
            .iter()
            .find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0)
        {
            return Err(Error::Value(format!("intensity {v} outside [0, 1]")));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// Builds an image from arbitrary values, clipping into [0, 1]. NaN maps to 0.
    pub fn from_clipped(height: usize, width: usize, mut data: Vec<f32>) -> Result<Self> {
        for v in &mut data {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        Self::new(height, width, data)
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Result<Self> {
        Self::new(height, width, vec![value; height * width * CHANNELS])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn pixel(&self, row: usize, col: usize) -> [f32; 3] {
        let i = (row * self.width + col) * CHANNELS;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Planar (CHW) copy, the layout the network consumes.
    pub fn to_planar(&self) -> Vec<f32> {
        let plane = self.height * self.width;
        let mut out = vec![0.0; plane * CHANNELS];
        for (p, px) in self.data.chunks_exact(CHANNELS).enumerate() {
            for c in 0..CHANNELS {
                out[c * plane + p] = px[c];
            }
        }
        out
    }
}

/// Two co-registered images of one scene, taken at T0 and T1.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePair {
    t0: Image,
    t1: Image,
    scene_id: String,
}

impl ImagePair {
    pub fn new(t0: Image, t1: Image, scene_id: impl Into<String>) -> Result<Self> {
        if t0.dims() != t1.dims() {
            return Err(Error::Shape(format!(
                "pair images differ: {:?} vs {:?}",
                t0.dims(),
                t1.dims()
            )));
        }
        Ok(Self {
            t0,
            t1,
            scene_id: scene_id.into(),
        })
    }

    pub fn t0(&self) -> &Image {
        &self.t0
    }

    pub fn t1(&self) -> &Image {
        &self.t1
    }

    pub fn get(&self, branch: Branch) -> &Image {
        match branch {
            Branch::T0 => &self.t0,
            Branch::T1 => &self.t1,
        }
    }

    pub fn scene_id(&self) -> &str {
        &self.scene_id
    }

    pub fn dims(&self) -> (usize, usize) {
        self.t0.dims()
    }

    pub fn with_scene_id(mut self, scene_id: impl Into<String>) -> Self {
        self.scene_id = scene_id.into();
        self
    }

    /// Replaces one side of the pair. Dimensions must match.
    pub fn with_branch(self, branch: Branch, image: Image) -> Result<Self> {
        let Self { t0, t1, scene_id } = self;
        match branch {
            Branch::T0 => Self::new(image, t1, scene_id),
            Branch::T1 => Self::new(t0, image, scene_id),
        }
    }
}

/// Which image of a pair an operation targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    T0,
    T1,
}

/// Strictly binary per-pixel change label.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ChangeMask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl ChangeMask {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "mask {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| **v > 1) {
            return Err(Error::Value(format!("mask value {v} is not binary")));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0; height * width],
        }
    }

    pub fn ones(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![1; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.data[row * self.width + col]
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|v| **v == 1).count()
    }
}

/// Per-pixel change probability, clamped into `[clamp_eps, 1 - clamp_eps]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMask {
    height: usize,
    width: usize,
    clamp_eps: f64,
    data: Vec<f64>,
}

impl ProbabilityMask {
    /// Clamps `data` into the open unit interval. NaN is rejected.
    pub fn new(height: usize, width: usize, mut data: Vec<f64>, clamp_eps: f64) -> Result<Self> {
        if !(clamp_eps > 0.0 && clamp_eps < 0.5) {
            return Err(Error::Config(format!(
                "clamp_eps {clamp_eps} outside (0, 0.5)"
            )));
        }
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "probability mask {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        for v in &mut data {
            if v.is_nan() {
                return Err(Error::Value("NaN probability".into()));
            }
            *v = v.clamp(clamp_eps, 1.0 - clamp_eps);
        }
        Ok(Self {
            height,
            width,
            clamp_eps,
            data,
        })
    }

    /// Applies the logistic function to raw scores.
    pub fn from_logits(
        height: usize,
        width: usize,
        logits: &[f32],
        clamp_eps: f64,
    ) -> Result<Self> {
        let probs = logits.iter().map(|&z| sigmoid(z as f64)).collect();
        Self::new(height, width, probs, clamp_eps)
    }

    /// A hard mask viewed as (clamped) probabilities.
    pub fn from_mask(mask: &ChangeMask, clamp_eps: f64) -> Result<Self> {
        let probs = mask.data().iter().map(|&v| v as f64).collect();
        Self::new(mask.height(), mask.width(), probs, clamp_eps)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn clamp_eps(&self) -> f64 {
        self.clamp_eps
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    #[default]
    Real,
    Synthetic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Test,
}

/// An image pair with its OR-ed change mask.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pair: ImagePair,
    mask: ChangeMask,
    provenance: Provenance,
    split: Split,
}

impl LabeledSample {
    pub fn new(pair: ImagePair, mask: ChangeMask, provenance: Provenance) -> Result<Self> {
        if pair.dims() != mask.dims() {
            return Err(Error::Shape(format!(
                "mask {:?} does not match pair {:?}",
                mask.dims(),
                pair.dims()
            )));
        }
        Ok(Self {
            pair,
            mask,
            provenance,
            split: Split::Train,
        })
    }

    /// An unchanged pair labeled with an all-zero mask.
    pub fn unchanged(pair: ImagePair, provenance: Provenance) -> Self {
        let (h, w) = pair.dims();
        Self {
            pair,
            mask: ChangeMask::zeros(h, w),
            provenance,
            split: Split::Train,
        }
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.pair = self.pair.with_scene_id(id);
        self
    }

    pub fn pair(&self) -> &ImagePair {
        &self.pair
    }

    pub fn mask(&self) -> &ChangeMask {
        &self.mask
    }

    pub fn id(&self) -> &str {
        self.pair.scene_id()
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn dims(&self) -> (usize, usize) {
        self.pair.dims()
    }

    pub fn into_parts(self) -> (ImagePair, ChangeMask) {
        (self.pair, self.mask)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_rejects_out_of_range() {
        assert!(Image::new(1, 1, vec![0.0, 0.5, 1.5]).is_err());
        assert!(Image::new(1, 1, vec![0.0, f32::NAN, 1.0]).is_err());
        assert!(Image::new(1, 2, vec![0.0; 3]).is_err());
        assert!(Image::from_clipped(1, 1, vec![-1.0, 0.5, 2.0]).is_ok());
    }

    #[test]
    fn pair_requires_equal_dims() {
        let a = Image::filled(2, 2, 0.1).unwrap();
        let b = Image::filled(2, 3, 0.1).unwrap();
        assert!(matches!(ImagePair::new(a, b, "x"), Err(Error::Shape(_))));
    }

    #[test]
    fn mask_is_strictly_binary() {
        assert!(ChangeMask::new(1, 3, vec![0, 1, 2]).is_err());
        assert_eq!(
            ChangeMask::new(1, 3, vec![0, 1, 1]).unwrap().count_ones(),
            2
        );
    }

    #[test]
    fn probabilities_are_clamped() {
        let p = ProbabilityMask::new(1, 3, vec![0.0, 0.5, 1.0], 1e-7).unwrap();
        assert_eq!(p.data(), &[1e-7, 0.5, 1.0 - 1e-7]);
        assert!(ProbabilityMask::new(1, 1, vec![f64::NAN], 1e-7).is_err());
        let q = ProbabilityMask::from_logits(1, 2, &[100.0, -100.0], 1e-7).unwrap();
        assert!(q.data().iter().all(|v| *v > 0.0 && *v < 1.0));
    }

    #[test]
    fn planar_layout() {
        let img = Image::new(1, 2, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        assert_eq!(img.to_planar(), vec![0.1, 0.4, 0.2, 0.5, 0.3, 0.6]);
    }
}
