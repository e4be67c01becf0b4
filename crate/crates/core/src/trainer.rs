//! Training loop and ablation driver.
//!
//! Each iteration draws a batch with replacement from the training set,
//! optionally augments it on the fly, runs the two-branch model forward and
//! backward and takes one Adam step on the trainable parameters at the poly
//! learning rate. All randomness is derived from `(rng_seed, iter)`, so the
//! loss sequence is reproducible on one platform regardless of thread count.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalkit::{evaluate, EvalConfig};
use crate::net::{BackboneSpec, ChangeModel, ModelGrads, WeightTying};
use crate::objective::{batch_loss_with_grad, poly_lr, LossConfig, LossMode, PolySchedule};
use crate::seed;
use crate::synthlab::{Augmenter, ObjectCutout, ShadowPattern, SynthConfig};
use crate::types::LabeledSample;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("adam {name} {b} outside [0, 1)")));
            }
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::Config(format!("adam eps {} must be > 0", self.eps)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// `(height, width)` every training image must have.
    pub image_size: (usize, usize),
    pub max_iter: usize,
    pub base_lr: f64,
    pub lr_power: f64,
    pub adam: AdamConfig,
    pub loss: LossConfig,
    pub synth: SynthConfig,
    /// Apply the synthesis pipeline to every drawn sample.
    pub augment_on_the_fly: bool,
    /// Encoder layers (counted back from the tap) that receive updates.
    /// `None` trains the whole encoder.
    pub trainable_tail_k: Option<usize>,
    pub weight_tying: WeightTying,
    pub tap_layer: usize,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 8,
            image_size: (128, 256),
            max_iter: 2000,
            base_lr: 0.001,
            lr_power: 0.9,
            adam: AdamConfig::default(),
            loss: LossConfig::default(),
            synth: SynthConfig::default(),
            augment_on_the_fly: false,
            trainable_tail_k: None,
            weight_tying: WeightTying::Untied,
            tap_layer: BackboneSpec::tiny().tap_layer,
            rng_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn backbone(&self) -> Result<BackboneSpec> {
        BackboneSpec::tiny().with_tap(self.tap_layer)
    }

    /// The schedule, or `None` when `max_iter` is 0.
    pub fn schedule(&self) -> Result<Option<PolySchedule>> {
        if self.max_iter == 0 {
            return Ok(None);
        }
        PolySchedule::new(self.base_lr, self.lr_power, self.max_iter).map(Some)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        let spec = self.backbone()?;
        let (h, w) = self.image_size;
        let s = spec.tap_stride();
        if h == 0 || w == 0 || h % s != 0 || w % s != 0 {
            return Err(Error::Config(format!(
                "image size {h}x{w} not divisible by tap stride {s}"
            )));
        }
        if let Some(k) = self.trainable_tail_k {
            if k > self.tap_layer {
                return Err(Error::Config(format!(
                    "trainable tail {k} exceeds tap layer {}",
                    self.tap_layer
                )));
            }
        }
        PolySchedule::new(self.base_lr, self.lr_power, self.max_iter.max(1))?;
        self.adam.validate()?;
        self.loss.validate()?;
        self.synth.validate()
    }

    /// A freshly initialized model matching this configuration.
    pub fn build_model(&self) -> Result<ChangeModel> {
        self.validate()?;
        let model = ChangeModel::new(
            self.backbone()?,
            self.weight_tying,
            seed::derive(self.rng_seed, 0x6d6f64656c),
        )?;
        match self.trainable_tail_k {
            Some(k) => model.set_trainable_tail(k),
            None => Ok(model),
        }
    }
}

/// One optimization step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub iter: usize,
    pub lr: f64,
    pub loss_total: f64,
    pub loss_bce: f64,
    pub loss_dice: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<TrainRecord>,
    pub checkpoint: Option<PathBuf>,
}

impl TrainLog {
    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss_total).collect()
    }

    /// One JSON object per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_jsonl().as_bytes())
            .map_err(|e| Error::io(path, e))
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(|e| Error::format(path, e.to_string())))
            .collect::<Result<_>>()?;
        Ok(Self {
            records,
            checkpoint: None,
        })
    }
}

/// Cutouts and shadow patterns for on-the-fly augmentation.
#[derive(Debug, Clone, Copy)]
pub struct AugmentAssets<'a> {
    pub cutouts: &'a [ObjectCutout],
    pub shadows: &'a [ShadowPattern],
}

/// Optional inputs to [`train_with`].
#[derive(Default)]
pub struct TrainOptions<'a> {
    pub assets: Option<AugmentAssets<'a>>,
    pub progress: Option<&'a mut dyn FnMut(&TrainRecord)>,
}

struct Adam {
    m: Vec<(Vec<f32>, Vec<f32>)>,
    v: Vec<(Vec<f32>, Vec<f32>)>,
    step: i32,
    config: AdamConfig,
}

impl Adam {
    fn new(model: &ChangeModel, config: AdamConfig) -> Self {
        let zeros: Vec<_> = model
            .conv_slots()
            .iter()
            .map(|c| (vec![0.0; c.weight.len()], vec![0.0; c.bias.len()]))
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
            config,
        }
    }

    fn update(&mut self, model: &mut ChangeModel, grads: &ModelGrads, lr: f64) {
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.step);
        let c2 = 1.0 - beta2.powi(self.step);
        let slots = model.conv_slots_mut();
        for (i, conv) in slots.into_iter().enumerate() {
            let Some(g) = grads.slots[i].as_ref() else {
                continue;
            };
            let (mw, mb) = &mut self.m[i];
            let (vw, vb) = &mut self.v[i];
            for (p, g, m, v) in [
                (&mut conv.weight, &g.weight, mw, vw),
                (&mut conv.bias, &g.bias, mb, vb),
            ] {
                for j in 0..p.len() {
                    let gj = g[j] as f64;
                    let mj = beta1 * m[j] as f64 + (1.0 - beta1) * gj;
                    let vj = beta2 * v[j] as f64 + (1.0 - beta2) * gj * gj;
                    m[j] = mj as f32;
                    v[j] = vj as f32;
                    let step = lr * (mj / c1) / ((vj / c2).sqrt() + eps);
                    p[j] = (p[j] as f64 - step) as f32;
                }
            }
        }
    }
}

/// Trains without on-the-fly augmentation assets.
pub fn train(
    model: ChangeModel,
    dataset: &[LabeledSample],
    config: &TrainConfig,
) -> Result<(ChangeModel, TrainLog)> {
    train_with(model, dataset, config, TrainOptions::default())
}

pub fn train_with(
    mut model: ChangeModel,
    dataset: &[LabeledSample],
    config: &TrainConfig,
    mut options: TrainOptions<'_>,
) -> Result<(ChangeModel, TrainLog)> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    if model.backbone().tap_layer != config.tap_layer {
        return Err(Error::Config(format!(
            "model taps layer {} but config says {}",
            model.backbone().tap_layer,
            config.tap_layer
        )));
    }
    if let Some(k) = config.trainable_tail_k {
        model = model.set_trainable_tail(k)?;
    }
    for s in dataset {
        if s.dims() != config.image_size {
            return Err(Error::Shape(format!(
                "sample {} is {:?}, expected {:?}",
                s.id(),
                s.dims(),
                config.image_size
            )));
        }
    }
    let augmenter = if config.augment_on_the_fly {
        let assets = options.assets.ok_or_else(|| {
            Error::Config("on-the-fly augmentation needs cutouts and shadow patterns".into())
        })?;
        Some(Augmenter::new(
            assets.cutouts,
            assets.shadows,
            &config.synth,
        )?)
    } else {
        None
    };
    let Some(schedule) = config.schedule()? else {
        return Ok((model, TrainLog::default()));
    };

    let mut adam = Adam::new(&model, config.adam);
    let mut log = TrainLog::default();
    for iter in 0..config.max_iter {
        let started = Instant::now();
        let lr = poly_lr(&schedule, iter)?;
        let batch = assemble_batch(dataset, config, augmenter.as_ref(), iter)?;

        let traces = batch
            .par_iter()
            .map(|s| model.forward_trace(s.pair()))
            .collect::<Result<Vec<_>>>()?;
        let logits: Vec<Vec<f64>> = traces
            .iter()
            .map(|t| t.logits().iter().map(|&z| z as f64).collect())
            .collect();
        let targets: Vec<_> = batch.iter().map(|s| s.mask()).collect();
        let logit_refs: Vec<&[f64]> = logits.iter().map(|z| z.as_slice()).collect();
        let (loss, dlogits) = batch_loss_with_grad(&targets, &logit_refs, &config.loss)?;
        let ids = || batch.iter().map(|s| s.id().to_string()).collect::<Vec<_>>();
        if !loss.total.is_finite() {
            return Err(Error::NonFinite { iter, batch: ids() });
        }

        let per_sample: Vec<ModelGrads> = traces
            .par_iter()
            .zip(&dlogits)
            .map(|(t, d)| {
                let d32: Vec<f32> = d.iter().map(|&v| v as f32).collect();
                model.backward(t, &d32)
            })
            .collect();
        let mut grads = per_sample[0].clone();
        for g in &per_sample[1..] {
            grads.add_assign(g);
        }
        if !grads.is_finite() {
            return Err(Error::NonFinite { iter, batch: ids() });
        }
        adam.update(&mut model, &grads, lr);

        let record = TrainRecord {
            iter,
            lr,
            loss_total: loss.total,
            loss_bce: loss.bce,
            loss_dice: loss.dice,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        };
        if let Some(cb) = options.progress.as_mut() {
            cb(&record);
        }
        log.records.push(record);
    }
    Ok((model, log))
}

/// Batch `iter`: indices drawn with replacement, each sample augmented
/// with its own derived generator.
fn assemble_batch(
    dataset: &[LabeledSample],
    config: &TrainConfig,
    augmenter: Option<&Augmenter<'_>>,
    iter: usize,
) -> Result<Vec<LabeledSample>> {
    let iter_seed = seed::derive(config.rng_seed, iter as u64);
    let mut rng = seed::rng(iter_seed);
    let picks: Vec<usize> = (0..config.batch_size)
        .map(|_| rng.gen_range(0..dataset.len()))
        .collect();
    picks
        .par_iter()
        .enumerate()
        .map(|(b, &i)| match augmenter {
            Some(aug) => aug.apply(&dataset[i], &mut seed::derived_rng(iter_seed, b as u64 + 1)),
            None => Ok(dataset[i].clone()),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationAxis {
    TapLayer,
    TrainableTail,
    LossMode,
    ShadowAug,
}

impl AblationAxis {
    pub const ALL: [AblationAxis; 4] = [
        AblationAxis::TapLayer,
        AblationAxis::TrainableTail,
        AblationAxis::LossMode,
        AblationAxis::ShadowAug,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AblationAxis::TapLayer => "tap_layer",
            AblationAxis::TrainableTail => "trainable_tail",
            AblationAxis::LossMode => "loss_mode",
            AblationAxis::ShadowAug => "shadow_aug",
        }
    }

    /// Applies one axis value to a copy of `base`.
    pub fn apply(self, base: &TrainConfig, value: &str) -> Result<TrainConfig> {
        let mut cfg = base.clone();
        let int = |v: &str| {
            v.parse::<usize>()
                .map_err(|_| Error::Config(format!("{}: {v:?} is not an integer", self.as_str())))
        };
        match self {
            AblationAxis::TapLayer => cfg.tap_layer = int(value)?,
            AblationAxis::TrainableTail => cfg.trainable_tail_k = Some(int(value)?),
            AblationAxis::LossMode => cfg.loss.mode = value.parse::<LossMode>()?,
            AblationAxis::ShadowAug => match value {
                "off" => cfg.synth.shadow_probability = 0.0,
                "on" => {
                    if cfg.synth.shadow_probability == 0.0 {
                        cfg.synth.shadow_probability = SynthConfig::default().shadow_probability;
                    }
                }
                other => {
                    return Err(Error::Config(format!(
                        "shadow_aug takes off or on, got {other:?}"
                    )))
                }
            },
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl std::str::FromStr for AblationAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| {
                let valid: Vec<_> = Self::ALL.iter().map(|a| a.as_str()).collect();
                Error::Config(format!(
                    "unknown ablation axis {s:?}; valid axes: {}",
                    valid.join(", ")
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub value: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Data shared by every run of an ablation.
#[derive(Clone, Copy)]
pub struct AblationData<'a> {
    pub train: &'a [LabeledSample],
    pub test: &'a [LabeledSample],
    pub assets: Option<AugmentAssets<'a>>,
    pub eval: &'a EvalConfig,
}

/// Trains one model per value under the same seeds and evaluates each on
/// the same held-out set.
pub fn run_ablation(
    axis: AblationAxis,
    values: &[String],
    base: &TrainConfig,
    data: AblationData<'_>,
) -> Result<Vec<AblationRow>> {
    if values.is_empty() {
        return Err(Error::Config("ablation needs at least one value".into()));
    }
    if axis == AblationAxis::ShadowAug && !base.augment_on_the_fly {
        return Err(Error::Config(
            "the shadow_aug axis needs augment_on_the_fly = true".into(),
        ));
    }
    if data.test.is_empty() {
        return Err(Error::Config("held-out set is empty".into()));
    }
    data.eval.validate()?;
    let configs = values
        .iter()
        .map(|v| axis.apply(base, v))
        .collect::<Result<Vec<_>>>()?;
    values
        .iter()
        .zip(configs)
        .map(|(value, cfg)| {
            let model = cfg.build_model()?;
            let options = TrainOptions {
                assets: data.assets,
                progress: None,
            };
            let (model, _) = train_with(model, data.train, &cfg, options)?;
            let report = evaluate(&model, data.test, data.eval)?;
            Ok(AblationRow {
                value: value.clone(),
                precision: report.metrics.precision,
                recall: report.metrics.recall,
                f1: report.metrics.f1,
            })
        })
        .collect()
}

/// `value,precision,recall,f1` with a header row.
pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("value,precision,recall,f1\n");
    for r in rows {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6}\n",
            r.value, r.precision, r.recall, r.f1
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthlab::{synth_dataset, AssetCounts, ProceduralAssets};

    fn small_config() -> TrainConfig {
        TrainConfig {
            batch_size: 2,
            image_size: (32, 64),
            max_iter: 3,
            tap_layer: 4,
            rng_seed: 5,
            ..Default::default()
        }
    }

    fn small_data(n: usize) -> (ProceduralAssets, Vec<LabeledSample>) {
        let counts = AssetCounts {
            backgrounds: 4,
            cutouts: 6,
            shadows: 4,
            cutout_min_side: 6,
            cutout_max_side: 14,
        };
        let assets = ProceduralAssets::generate(1, (32, 64), &counts).unwrap();
        let data = synth_dataset(
            &assets.backgrounds,
            &assets.cutouts,
            &assets.shadows,
            &SynthConfig::default(),
            n,
        )
        .unwrap();
        (assets, data)
    }

    #[test]
    fn zero_iterations_is_a_no_op() {
        let cfg = TrainConfig {
            max_iter: 0,
            ..small_config()
        };
        let model = cfg.build_model().unwrap();
        let (_, data) = small_data(2);
        let (out, log) = train(model.clone(), &data, &cfg).unwrap();
        assert_eq!(out.parameter_digest(), model.parameter_digest());
        assert!(log.records.is_empty());
    }

    #[test]
    fn logged_lr_is_the_schedule() {
        let cfg = small_config();
        let (_, data) = small_data(3);
        let (_, log) = train(cfg.build_model().unwrap(), &data, &cfg).unwrap();
        let schedule = cfg.schedule().unwrap().unwrap();
        for r in &log.records {
            assert_eq!(
                r.lr.to_bits(),
                poly_lr(&schedule, r.iter).unwrap().to_bits()
            );
        }
        assert_eq!(log.records.len(), 3);
    }

    #[test]
    fn frozen_encoder_is_untouched() {
        let cfg = TrainConfig {
            trainable_tail_k: Some(0),
            ..small_config()
        };
        let (_, data) = small_data(3);
        let model = cfg.build_model().unwrap();
        let before = model.encoder_digest();
        let (out, _) = train(model.clone(), &data, &cfg).unwrap();
        assert_eq!(out.encoder_digest(), before);
        assert_ne!(out.parameter_digest(), model.parameter_digest());
    }

    #[test]
    fn runs_are_reproducible() {
        let cfg = TrainConfig {
            augment_on_the_fly: true,
            ..small_config()
        };
        let (assets, data) = small_data(3);
        let run = || {
            let opts = TrainOptions {
                assets: Some(AugmentAssets {
                    cutouts: &assets.cutouts,
                    shadows: &assets.shadows,
                }),
                progress: None,
            };
            train_with(cfg.build_model().unwrap(), &data, &cfg, opts).unwrap()
        };
        let (m1, l1) = run();
        let (m2, l2) = run();
        assert_eq!(l1.losses(), l2.losses());
        assert_eq!(m1.parameter_digest(), m2.parameter_digest());
    }

    #[test]
    fn rejects_bad_inputs() {
        let cfg = small_config();
        let model = cfg.build_model().unwrap();
        assert!(matches!(
            train(model.clone(), &[], &cfg),
            Err(Error::Config(_))
        ));
        let (_, data) = small_data(1);
        let otf = TrainConfig {
            augment_on_the_fly: true,
            ..cfg.clone()
        };
        assert!(matches!(
            train(model.clone(), &data, &otf),
            Err(Error::Config(_))
        ));
        let wrong = TrainConfig {
            image_size: (64, 64),
            ..cfg.clone()
        };
        assert!(matches!(train(model, &data, &wrong), Err(Error::Shape(_))));
        assert!(TrainConfig {
            batch_size: 0,
            ..cfg.clone()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            image_size: (30, 64),
            ..cfg
        }
        .validate()
        .is_err());
    }

    #[test]
    fn jsonl_round_trip() {
        let log = TrainLog {
            records: vec![TrainRecord {
                iter: 0,
                lr: 0.001,
                loss_total: 1.5,
                loss_bce: 0.7,
                loss_dice: 0.8,
                wall_ms: 3.0,
            }],
            checkpoint: None,
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("log.jsonl");
        log.write_jsonl(&p).unwrap();
        assert_eq!(TrainLog::read_jsonl(&p).unwrap(), log);
    }

    #[test]
    fn axis_values() {
        let base = small_config();
        assert_eq!(
            AblationAxis::TapLayer.apply(&base, "2").unwrap().tap_layer,
            2
        );
        assert_eq!(
            AblationAxis::TrainableTail
                .apply(&base, "3")
                .unwrap()
                .trainable_tail_k,
            Some(3)
        );
        assert!(AblationAxis::TrainableTail.apply(&base, "9").is_err());
        assert_eq!(
            AblationAxis::LossMode
                .apply(&base, "dice")
                .unwrap()
                .loss
                .mode,
            LossMode::Dice
        );
        assert_eq!(
            AblationAxis::ShadowAug
                .apply(&base, "off")
                .unwrap()
                .synth
                .shadow_probability,
            0.0
        );
        assert!(AblationAxis::ShadowAug.apply(&base, "maybe").is_err());
        let err = "depth".parse::<AblationAxis>().unwrap_err().to_string();
        assert!(err.contains("tap_layer") && err.contains("shadow_aug"));
    }

    #[test]
    fn single_value_ablation_equals_plain_run() {
        let cfg = small_config();
        let (_, data) = small_data(4);
        let eval = EvalConfig::default();
        let rows = run_ablation(
            AblationAxis::LossMode,
            &["bce+dice".to_string()],
            &cfg,
            AblationData {
                train: &data[..2],
                test: &data[2..],
                assets: None,
                eval: &eval,
            },
        )
        .unwrap();
        let (model, _) = train(cfg.build_model().unwrap(), &data[..2], &cfg).unwrap();
        let report = evaluate(&model, &data[2..], &eval).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].f1, report.metrics.f1);
        assert_eq!(rows[0].precision, report.metrics.precision);
        assert!(ablation_csv(&rows).starts_with("value,precision,recall,f1\nbce+dice,"));
    }
}
