//! Segmentation losses and the poly learning-rate schedule.
//!
//! The Dice term keeps its constant offset:
//!
//! ```text
//! L_dice = 2 - 2 * sum(t * p) / (sum(t^2) + sum(p^2) + eps)
//! ```
//!
//! so a perfect prediction scores about 1 (not 0), and two empty masks score
//! exactly 2. The offset has no effect on gradients. Anyone reading logged
//! loss values should keep this in mind.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{sigmoid, ChangeMask, ProbabilityMask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum LossMode {
    #[serde(rename = "bce")]
    Bce,
    #[serde(rename = "dice")]
    Dice,
    #[default]
    #[serde(rename = "bce+dice")]
    BcePlusDice,
}

impl LossMode {
    pub const ALL: [LossMode; 3] = [LossMode::Bce, LossMode::Dice, LossMode::BcePlusDice];

    pub fn as_str(self) -> &'static str {
        match self {
            LossMode::Bce => "bce",
            LossMode::Dice => "dice",
            LossMode::BcePlusDice => "bce+dice",
        }
    }
}

impl std::str::FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bce" => Ok(LossMode::Bce),
            "dice" => Ok(LossMode::Dice),
            "bce+dice" | "bce_plus_dice" => Ok(LossMode::BcePlusDice),
            other => Err(Error::Config(format!(
                "unknown loss mode {other:?} (expected bce, dice or bce+dice)"
            ))),
        }
    }
}

/// How the Dice term is reduced over a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiceReduction {
    /// Dice per image, then the mean over images.
    #[default]
    PerImage,
    /// One Dice ratio over every pixel of the batch.
    Batch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub epsilon: f64,
    pub clamp_eps: f64,
    pub mode: LossMode,
    pub dice_reduction: DiceReduction,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-6,
            clamp_eps: 1e-7,
            mode: LossMode::BcePlusDice,
            dice_reduction: DiceReduction::PerImage,
        }
    }
}

impl LossConfig {
    pub fn with_mode(mut self, mode: LossMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!(
                "loss epsilon {} must be > 0",
                self.epsilon
            )));
        }
        if !(self.clamp_eps > 0.0 && self.clamp_eps < 0.5) {
            return Err(Error::Config(format!(
                "clamp_eps {} outside (0, 0.5)",
                self.clamp_eps
            )));
        }
        Ok(())
    }
}

/// Both loss terms plus the configured total.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub bce: f64,
    pub dice: f64,
}

fn check_dims(t: (usize, usize), p: (usize, usize)) -> Result<()> {
    if t != p {
        return Err(Error::Shape(format!("target {t:?} vs prediction {p:?}")));
    }
    Ok(())
}

/// Mean binary cross-entropy over all pixels.
pub fn bce_loss(p_true: &ChangeMask, p_pred: &ProbabilityMask) -> Result<f64> {
    check_dims(p_true.dims(), p_pred.dims())?;
    Ok(bce(p_true.data(), p_pred.data()))
}

/// Offset Dice loss with denominator stabilizer `epsilon`.
pub fn dice_loss(p_true: &ChangeMask, p_pred: &ProbabilityMask, epsilon: f64) -> Result<f64> {
    check_dims(p_true.dims(), p_pred.dims())?;
    Ok(dice(p_true.data(), p_pred.data(), epsilon))
}

pub fn seg_loss(p_true: &ChangeMask, p_pred: &ProbabilityMask, config: &LossConfig) -> Result<f64> {
    Ok(seg_loss_parts(p_true, p_pred, config)?.total)
}

pub fn seg_loss_parts(
    p_true: &ChangeMask,
    p_pred: &ProbabilityMask,
    config: &LossConfig,
) -> Result<LossBreakdown> {
    check_dims(p_true.dims(), p_pred.dims())?;
    let b = bce(p_true.data(), p_pred.data());
    let d = dice(p_true.data(), p_pred.data(), config.epsilon);
    Ok(LossBreakdown {
        total: combine(config.mode, b, d),
        bce: b,
        dice: d,
    })
}

fn combine(mode: LossMode, bce: f64, dice: f64) -> f64 {
    match mode {
        LossMode::Bce => bce,
        LossMode::Dice => dice,
        LossMode::BcePlusDice => bce + dice,
    }
}

fn bce(t: &[u8], p: &[f64]) -> f64 {
    let sum: f64 = t
        .iter()
        .zip(p)
        .map(|(&t, &p)| if t == 1 { -p.ln() } else { -(1.0 - p).ln() })
        .sum();
    sum / t.len() as f64
}

fn dice_sums(t: &[u8], p: &[f64]) -> (f64, f64) {
    let mut inter = 0.0;
    let mut union = 0.0;
    for (&t, &p) in t.iter().zip(p) {
        let t = t as f64;
        inter += t * p;
        union += t * t + p * p;
    }
    (inter, union)
}

fn dice(t: &[u8], p: &[f64], eps: f64) -> f64 {
    let (inter, union) = dice_sums(t, p);
    2.0 - 2.0 * inter / (union + eps)
}

/// Clamped logistic and its derivative. The clamp has zero slope where it binds.
fn squash(z: f64, clamp_eps: f64) -> (f64, f64) {
    let s = sigmoid(z);
    if s <= clamp_eps {
        (clamp_eps, 0.0)
    } else if s >= 1.0 - clamp_eps {
        (1.0 - clamp_eps, 0.0)
    } else {
        (s, s * (1.0 - s))
    }
}

/// Gradient of the configured loss with respect to the pre-squash logits.
pub fn seg_loss_grad(p_true: &ChangeMask, logits: &[f64], config: &LossConfig) -> Result<Vec<f64>> {
    Ok(seg_loss_with_grad(p_true, logits, config)?.1)
}

/// Loss terms and `dL/dlogit` for one image.
pub fn seg_loss_with_grad(
    p_true: &ChangeMask,
    logits: &[f64],
    config: &LossConfig,
) -> Result<(LossBreakdown, Vec<f64>)> {
    let (parts, mut grads) = batch_loss_with_grad(&[p_true], &[logits], config)?;
    Ok((parts, grads.pop().expect("one image")))
}

/// Mean loss over a batch and per-image gradients of that mean.
pub fn batch_loss_with_grad(
    targets: &[&ChangeMask],
    logits: &[&[f64]],
    config: &LossConfig,
) -> Result<(LossBreakdown, Vec<Vec<f64>>)> {
    config.validate()?;
    if targets.len() != logits.len() || targets.is_empty() {
        return Err(Error::Shape(format!(
            "{} targets for {} logit maps",
            targets.len(),
            logits.len()
        )));
    }
    for (t, z) in targets.iter().zip(logits) {
        if t.data().len() != z.len() {
            return Err(Error::Shape(format!(
                "target has {} pixels, logits {}",
                t.data().len(),
                z.len()
            )));
        }
    }
    let batch = targets.len() as f64;
    let probs: Vec<Vec<(f64, f64)>> = logits
        .iter()
        .map(|z| z.iter().map(|&z| squash(z, config.clamp_eps)).collect())
        .collect();

    let mut bce_mean = 0.0;
    for (t, pd) in targets.iter().zip(&probs) {
        let p: Vec<f64> = pd.iter().map(|v| v.0).collect();
        bce_mean += bce(t.data(), &p) / batch;
    }

    // Per-image dL_dice/dp_i = -2 (t_i U - 2 I p_i) / U^2, with U including eps.
    let mut dice_value = 0.0;
    let mut dice_scale: Vec<(f64, f64, f64)> = Vec::with_capacity(targets.len());
    match config.dice_reduction {
        DiceReduction::PerImage => {
            for (t, pd) in targets.iter().zip(&probs) {
                let p: Vec<f64> = pd.iter().map(|v| v.0).collect();
                let (inter, union) = dice_sums(t.data(), &p);
                let u = union + config.epsilon;
                dice_value += (2.0 - 2.0 * inter / u) / batch;
                dice_scale.push((inter, u, 1.0 / batch));
            }
        }
        DiceReduction::Batch => {
            let (mut inter, mut union) = (0.0, 0.0);
            for (t, pd) in targets.iter().zip(&probs) {
                let p: Vec<f64> = pd.iter().map(|v| v.0).collect();
                let (i, u) = dice_sums(t.data(), &p);
                inter += i;
                union += u;
            }
            let u = union + config.epsilon;
            dice_value = 2.0 - 2.0 * inter / u;
            dice_scale.resize(targets.len(), (inter, u, 1.0));
        }
    }

    let use_bce = matches!(config.mode, LossMode::Bce | LossMode::BcePlusDice);
    let use_dice = matches!(config.mode, LossMode::Dice | LossMode::BcePlusDice);
    let grads = targets
        .iter()
        .zip(&probs)
        .zip(&dice_scale)
        .map(|((t, pd), &(inter, u, weight))| {
            let n = t.data().len() as f64;
            t.data()
                .iter()
                .zip(pd)
                .map(|(&t, &(p, dp))| {
                    let t = t as f64;
                    let mut g = 0.0;
                    if use_bce {
                        // d/dp of -(t ln p + (1-t) ln(1-p)), divided by N and batch size.
                        g += (-t / p + (1.0 - t) / (1.0 - p)) / (n * batch);
                    }
                    if use_dice {
                        g += weight * (-2.0 * (t * u - 2.0 * inter * p) / (u * u));
                    }
                    g * dp
                })
                .collect()
        })
        .collect();

    let parts = LossBreakdown {
        total: combine(config.mode, bce_mean, dice_value),
        bce: bce_mean,
        dice: dice_value,
    };
    Ok((parts, grads))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolySchedule {
    pub base_lr: f64,
    pub power: f64,
    pub max_iter: usize,
}

impl PolySchedule {
    pub fn new(base_lr: f64, power: f64, max_iter: usize) -> Result<Self> {
        let s = Self {
            base_lr,
            power,
            max_iter,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::Config(format!(
                "base_lr {} must be > 0",
                self.base_lr
            )));
        }
        if !(self.power > 0.0 && self.power.is_finite()) {
            return Err(Error::Config(format!(
                "poly power {} must be > 0",
                self.power
            )));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("max_iter must be >= 1".into()));
        }
        Ok(())
    }
}

/// `base_lr * (1 - iter / max_iter) ^ power`.
pub fn poly_lr(schedule: &PolySchedule, iter: usize) -> Result<f64> {
    schedule.validate()?;
    if iter > schedule.max_iter {
        return Err(Error::Config(format!(
            "iteration {iter} beyond max_iter {}",
            schedule.max_iter
        )));
    }
    let frac = 1.0 - iter as f64 / schedule.max_iter as f64;
    Ok(schedule.base_lr * frac.powf(schedule.power))
}
