//! The `scenediff` command-line front end.
//!
//! Settings are layered: built-in defaults, then an optional TOML file
//! (`--config`), then command-line flags. Everything is validated before the
//! first file is written.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::dataset::{
    dataset_hash, load_dataset, manifest_path, read_image, save_dataset, write_mask,
};
use crate::error::{Error, Result};
use crate::evalkit::{
    binarize, connected_components, default_thresholds, evaluate_predictions, filter_min_area,
    parse_pr_csv, pr_auc, pr_csv, pr_curve_from_predictions, predict_all, production_min_area,
    BoundingBox, ChangePredictor, Connectivity, EvalConfig, MatchMode, PrPoint,
};
use crate::net::{load_checkpoint, save_checkpoint};
use crate::objective::LossMode;
use crate::seed;
use crate::synthlab::{synth_dataset, AssetCounts, ProceduralAssets};
use crate::trainer::{
    ablation_csv, run_ablation, train_with, AblationAxis, AblationData, AugmentAssets, TrainConfig,
    TrainOptions,
};
use crate::types::{ChangeMask, ImagePair, LabeledSample};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

/// Exit status for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Value(_) | Error::Shape(_) | Error::Placement(_) => EXIT_CONFIG,
        Error::Io { .. } | Error::Missing(_) | Error::Format { .. } | Error::Version { .. } => {
            EXIT_IO
        }
        Error::NonFinite { .. } => EXIT_NUMERIC,
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "scenediff",
    version,
    about = "Scene change detection: synthesis, training, evaluation"
)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every random stream.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize a labeled dataset.
    Synth(SynthArgs),
    /// Train a model on a dataset.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a labeled dataset.
    Eval(EvalArgs),
    /// Predict the change mask for one image pair.
    Infer(InferArgs),
    /// Train and evaluate one model per value of an ablation axis.
    Ablate(AblateArgs),
    /// Plot precision-recall curves from `pr.csv` files.
    PrPlot(PrPlotArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub count: usize,
    /// Dataset whose pairs serve as unchanged backgrounds (procedural scenes otherwise).
    #[arg(long)]
    pub backgrounds: Option<PathBuf>,
    #[arg(long)]
    pub paste_rate: Option<f64>,
    #[arg(long)]
    pub shadow_probability: Option<f64>,
}

#[derive(Debug, Args, Default)]
pub struct TrainFlags {
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub loss: Option<LossMode>,
    /// Number of trailing encoder layers to train.
    #[arg(long)]
    pub tail: Option<usize>,
    /// Share one encoder between both images.
    #[arg(long, action = clap::ArgAction::Set)]
    pub tied: Option<bool>,
    /// Encoder layer whose output feeds the decoder.
    #[arg(long)]
    pub tap: Option<usize>,
    /// Synthesize changes on the fly for every drawn sample.
    #[arg(long, action = clap::ArgAction::Set)]
    pub augment: Option<bool>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory or manifest.
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub flags: TrainFlags,
}

#[derive(Debug, Args, Default)]
pub struct EvalFlags {
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub min_area: Option<usize>,
    #[arg(long)]
    pub match_mode: Option<MatchMode>,
    #[arg(long)]
    pub connectivity: Option<Connectivity>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub flags: EvalFlags,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub t0: PathBuf,
    #[arg(long)]
    pub t1: PathBuf,
    #[command(flatten)]
    pub flags: EvalFlags,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// One of tap_layer, trainable_tail, loss_mode, shadow_aug.
    #[arg(long)]
    pub axis: String,
    /// Comma-separated values.
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<String>,
    /// Training dataset; procedural backgrounds with on-the-fly synthesis otherwise.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Held-out dataset; a shadowed synthetic set otherwise.
    #[arg(long)]
    pub test_data: Option<PathBuf>,
    /// Size of the generated held-out set.
    #[arg(long, default_value_t = 50)]
    pub test_count: usize,
    #[command(flatten)]
    pub train: TrainFlags,
    #[command(flatten)]
    pub eval: EvalFlags,
}

#[derive(Debug, Args)]
pub struct PrPlotArgs {
    /// PR point files written by `eval`.
    #[arg(required = true)]
    pub files: Vec<PathBuf>,
}

/// Evaluation settings as written in a config file; `min_area` defaults to
/// 0.05% of the image area.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub binarize_threshold: f64,
    pub connectivity: Connectivity,
    pub min_area: Option<usize>,
    pub match_mode: MatchMode,
    pub iou_tau: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        let d = EvalConfig::default();
        Self {
            binarize_threshold: d.binarize_threshold,
            connectivity: d.connectivity,
            min_area: None,
            match_mode: d.match_mode,
            iou_tau: d.iou_tau,
        }
    }
}

impl EvalSection {
    pub fn resolve(&self, height: usize, width: usize) -> EvalConfig {
        EvalConfig {
            binarize_threshold: self.binarize_threshold,
            connectivity: self.connectivity,
            min_area: self
                .min_area
                .unwrap_or_else(|| production_min_area(height, width)),
            match_mode: self.match_mode,
            iou_tau: self.iou_tau,
        }
    }

    fn apply(&mut self, f: &EvalFlags) {
        if let Some(v) = f.threshold {
            self.binarize_threshold = v;
        }
        if let Some(v) = f.tau {
            self.iou_tau = v;
        }
        if let Some(v) = f.min_area {
            self.min_area = Some(v);
        }
        if let Some(v) = f.match_mode {
            self.match_mode = v;
        }
        if let Some(v) = f.connectivity {
            self.connectivity = v;
        }
    }

    fn validate(&self) -> Result<()> {
        self.resolve(1, 1).validate()
    }
}

/// Merged settings for every command.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    /// Overrides `train.rng_seed`, `train.synth.rng_seed` and the asset seed.
    pub seed: Option<u64>,
    pub assets: AssetCounts,
    pub train: TrainConfig,
    pub eval: EvalSection,
}

impl CliConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::Missing(path.to_path_buf()),
            _ => Error::io(path, e),
        })?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    fn apply_seed(&mut self, seed: Option<u64>) {
        if let Some(s) = seed.or(self.seed) {
            self.seed = Some(s);
            self.train.rng_seed = s;
            self.train.synth.rng_seed = s;
        }
    }

    fn asset_seed(&self) -> u64 {
        seed::derive(self.seed.unwrap_or(0), 0x6173736574)
    }

    fn apply_train(&mut self, f: &TrainFlags) {
        let t = &mut self.train;
        if let Some(v) = f.iters {
            t.max_iter = v;
        }
        if let Some(v) = f.batch {
            t.batch_size = v;
        }
        if let Some(v) = f.lr {
            t.base_lr = v;
        }
        if let Some(v) = f.loss {
            t.loss.mode = v;
        }
        if let Some(v) = f.tail {
            t.trainable_tail_k = Some(v);
        }
        if let Some(v) = f.tied {
            t.weight_tying = if v {
                crate::net::WeightTying::Tied
            } else {
                crate::net::WeightTying::Untied
            };
        }
        if let Some(v) = f.tap {
            t.tap_layer = v;
        }
        if let Some(v) = f.augment {
            t.augment_on_the_fly = v;
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.eval.validate()?;
        if self.assets.cutout_min_side == 0
            || self.assets.cutout_min_side > self.assets.cutout_max_side
        {
            return Err(Error::Config(
                "assets: need 1 <= cutout_min_side <= cutout_max_side".into(),
            ));
        }
        Ok(())
    }

    fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit status.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let mut config = match &cli.common.config {
        Some(p) => CliConfig::load(p)?,
        None => CliConfig::default(),
    };
    config.apply_seed(cli.common.seed);
    let out = cli
        .common
        .out
        .clone()
        .ok_or_else(|| Error::Config("--out is required".into()))?;
    match cli.command {
        Command::Synth(a) => cmd_synth(config, &a, &out),
        Command::Train(a) => cmd_train(config, &a, &out),
        Command::Eval(a) => cmd_eval(config, &a, &out),
        Command::Infer(a) => cmd_infer(config, &a, &out),
        Command::Ablate(a) => cmd_ablate(config, &a, &out),
        Command::PrPlot(a) => cmd_pr_plot(&a, &out),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn require_file(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Missing(path.to_path_buf()))
    }
}

fn load_backgrounds(path: &Path) -> Result<Vec<ImagePair>> {
    Ok(load_dataset(&manifest_path(path))?
        .into_iter()
        .map(|s| s.into_parts().0)
        .collect())
}

pub fn cmd_synth(mut config: CliConfig, args: &SynthArgs, out: &Path) -> Result<()> {
    if let Some(v) = args.paste_rate {
        config.train.synth.paste_rate = v;
    }
    if let Some(v) = args.shadow_probability {
        config.train.synth.shadow_probability = v;
    }
    config.validate()?;
    if let Some(b) = &args.backgrounds {
        require_file(&manifest_path(b))?;
    }

    let counts = AssetCounts {
        backgrounds: if args.backgrounds.is_some() {
            0
        } else {
            config.assets.backgrounds
        },
        ..config.assets
    };
    let mut assets =
        ProceduralAssets::generate(config.asset_seed(), config.train.image_size, &counts)?;
    if let Some(b) = &args.backgrounds {
        assets.backgrounds = load_backgrounds(b)?;
    }
    let samples = if args.count == 0 {
        Vec::new()
    } else {
        synth_dataset(
            &assets.backgrounds,
            &assets.cutouts,
            &assets.shadows,
            &config.train.synth,
            args.count,
        )?
    };
    create_dir(out)?;
    save_dataset(&samples, out)?;
    let hash = dataset_hash(out)?;
    println!("samples={} hash={hash}", samples.len());
    Ok(())
}

pub fn cmd_train(mut config: CliConfig, args: &TrainArgs, out: &Path) -> Result<()> {
    config.apply_train(&args.flags);
    config.validate()?;
    require_file(&manifest_path(&args.data))?;
    let data = load_dataset(&manifest_path(&args.data))?;
    let model = config.train.build_model()?;

    let assets = if config.train.augment_on_the_fly {
        let counts = AssetCounts {
            backgrounds: 0,
            ..config.assets
        };
        Some(ProceduralAssets::generate(
            config.asset_seed(),
            config.train.image_size,
            &counts,
        )?)
    } else {
        None
    };
    let every = (config.train.max_iter / 20).max(1);
    let mut progress = |r: &crate::trainer::TrainRecord| {
        if (r.iter + 1) % every == 0 {
            eprintln!(
                "iter {:>6}  lr {:.3e}  loss {:.5}",
                r.iter + 1,
                r.lr,
                r.loss_total
            );
        }
    };
    let options = TrainOptions {
        assets: assets.as_ref().map(|a| AugmentAssets {
            cutouts: &a.cutouts,
            shadows: &a.shadows,
        }),
        progress: Some(&mut progress),
    };
    let (model, mut log) = train_with(model, &data, &config.train, options)?;

    create_dir(out)?;
    let ckpt = out.join("model.scd");
    save_checkpoint(&model, &ckpt)?;
    log.checkpoint = Some(ckpt.clone());
    log.write_jsonl(&out.join("train_log.jsonl"))?;
    write_file(&out.join("config.toml"), config.to_toml())?;
    match (log.records.first(), log.records.last()) {
        (Some(a), Some(b)) => println!(
            "iters={} first_loss={:.6} final_loss={:.6}",
            log.records.len(),
            a.loss_total,
            b.loss_total
        ),
        _ => println!("iters=0"),
    }
    println!("checkpoint={}", ckpt.display());
    Ok(())
}

#[derive(Debug, Serialize)]
struct EvalReportFile<'a> {
    checkpoint: String,
    dataset: String,
    config: &'a EvalConfig,
    metrics: crate::evalkit::Metrics,
    totals: crate::evalkit::Totals,
    pr_auc: f64,
    per_image: &'a [crate::evalkit::ImageResult],
}

/// Evaluation of a predictor on a dataset; returns the report JSON and the PR CSV.
pub fn eval_outputs(
    predictor: &dyn ChangePredictor,
    data: &[LabeledSample],
    section: &EvalSection,
    checkpoint: &str,
    dataset: &str,
) -> Result<(EvalConfig, crate::evalkit::EvalReport, String, String)> {
    let (h, w) = data.first().map(|s| s.dims()).unwrap_or((0, 0));
    let cfg = section.resolve(h, w);
    cfg.validate()?;
    let probs = predict_all(predictor, data)?;
    let report = evaluate_predictions(data, &probs, &cfg)?;
    let curve = pr_curve_from_predictions(data, &probs, &default_thresholds(), &cfg)?;
    let file = EvalReportFile {
        checkpoint: checkpoint.to_string(),
        dataset: dataset.to_string(),
        config: &cfg,
        metrics: report.metrics,
        totals: report.totals,
        pr_auc: curve.auc,
        per_image: &report.per_image,
    };
    let json = serde_json::to_string_pretty(&file).expect("report serializes") + "\n";
    Ok((cfg, report, json, pr_csv(&curve)))
}

pub fn summary_line(m: &crate::evalkit::Metrics) -> String {
    format!("P={:.3} R={:.3} F1={:.3}", m.precision, m.recall, m.f1)
}

pub fn cmd_eval(mut config: CliConfig, args: &EvalArgs, out: &Path) -> Result<()> {
    config.eval.apply(&args.flags);
    config.eval.validate()?;
    require_file(&args.checkpoint)?;
    require_file(&manifest_path(&args.data))?;
    let model = load_checkpoint(&args.checkpoint)?;
    let data = load_dataset(&manifest_path(&args.data))?;
    let (_, report, json, csv) = eval_outputs(
        &model,
        &data,
        &config.eval,
        &args.checkpoint.display().to_string(),
        &args.data.display().to_string(),
    )?;
    create_dir(out)?;
    write_file(&out.join("report.json"), json)?;
    write_file(&out.join("pr.csv"), csv)?;
    println!("{}", summary_line(&report.metrics));
    Ok(())
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct RegionRecord {
    pub area: usize,
    pub bbox: BoundingBox,
}

/// Binarized, area-filtered mask and its regions.
pub fn postprocess(
    prob: &crate::types::ProbabilityMask,
    cfg: &EvalConfig,
) -> (ChangeMask, Vec<RegionRecord>) {
    let (h, w) = prob.dims();
    let regions = filter_min_area(
        connected_components(&binarize(prob, cfg.binarize_threshold), cfg.connectivity),
        cfg.min_area,
    );
    let mut data = vec![0u8; h * w];
    for r in &regions {
        for &(y, x) in r.pixels() {
            data[y * w + x] = 1;
        }
    }
    let records = regions
        .iter()
        .map(|r| RegionRecord {
            area: r.area(),
            bbox: r.bbox(),
        })
        .collect();
    (ChangeMask::new(h, w, data).expect("dims match"), records)
}

pub fn cmd_infer(mut config: CliConfig, args: &InferArgs, out: &Path) -> Result<()> {
    config.eval.apply(&args.flags);
    config.eval.validate()?;
    for p in [&args.checkpoint, &args.t0, &args.t1] {
        require_file(p)?;
    }
    let model = load_checkpoint(&args.checkpoint)?;
    let t0 = read_image(&args.t0)?;
    let t1 = read_image(&args.t1)?;
    let pair = ImagePair::new(t0, t1, "infer")?;
    let (h, w) = pair.dims();
    model.check_input(h, w)?;
    let cfg = config.eval.resolve(h, w);
    let prob = model.forward(&pair)?;
    let (mask, regions) = postprocess(&prob, &cfg);

    create_dir(out)?;
    write_mask(&mask, &out.join("mask.png"))?;
    let json = serde_json::json!({ "config": cfg, "regions": regions });
    write_file(
        &out.join("regions.json"),
        serde_json::to_string_pretty(&json).expect("serializes") + "\n",
    )?;
    println!(
        "regions={} changed_pixels={}",
        regions.len(),
        mask.count_ones()
    );
    Ok(())
}

pub fn cmd_ablate(mut config: CliConfig, args: &AblateArgs, out: &Path) -> Result<()> {
    let axis: AblationAxis = args.axis.parse()?;
    config.apply_train(&args.train);
    config.eval.apply(&args.eval);
    if args.data.is_none() {
        config.train.augment_on_the_fly = true;
    }
    config.validate()?;
    for v in &args.values {
        axis.apply(&config.train, v)?;
    }
    for p in args.data.iter().chain(&args.test_data) {
        require_file(&manifest_path(p))?;
    }

    let size = config.train.image_size;
    let assets = ProceduralAssets::generate(config.asset_seed(), size, &config.assets)?;
    let train_set = match &args.data {
        Some(p) => load_dataset(&manifest_path(p))?,
        None => assets
            .backgrounds
            .iter()
            .enumerate()
            .map(|(i, b)| {
                LabeledSample::unchanged(
                    b.clone().with_scene_id(format!("bg_{i:04}")),
                    crate::Provenance::Synthetic,
                )
            })
            .collect(),
    };
    let test_set = match &args.test_data {
        Some(p) => load_dataset(&manifest_path(p))?,
        None => {
            let test_assets = ProceduralAssets::generate(
                seed::derive(config.asset_seed(), 1),
                size,
                &config.assets,
            )?;
            let mut synth = config.train.synth.clone();
            synth.rng_seed = seed::derive(synth.rng_seed, 1);
            if synth.shadow_probability == 0.0 {
                synth.shadow_probability =
                    crate::synthlab::SynthConfig::default().shadow_probability;
            }
            synth_dataset(
                &test_assets.backgrounds,
                &test_assets.cutouts,
                &test_assets.shadows,
                &synth,
                args.test_count,
            )?
        }
    };
    let eval = config.eval.resolve(size.0, size.1);
    let data = AblationData {
        train: &train_set,
        test: &test_set,
        assets: Some(AugmentAssets {
            cutouts: &assets.cutouts,
            shadows: &assets.shadows,
        }),
        eval: &eval,
    };
    let rows = run_ablation(axis, &args.values, &config.train, data)?;
    create_dir(out)?;
    let csv = ablation_csv(&rows);
    write_file(&out.join(format!("ablation_{}.csv", axis.as_str())), &csv)?;
    write_file(&out.join("config.toml"), config.to_toml())?;
    print!("{csv}");
    Ok(())
}

/// A labelled curve for plotting.
pub struct Curve {
    pub label: String,
    pub points: Vec<PrPoint>,
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

/// Static SVG of precision against recall, one polyline (or marker set) per curve.
pub fn pr_svg(curves: &[Curve]) -> String {
    let (w, h, m) = (640.0, 480.0, 60.0);
    let x = |r: f64| m + r * (w - 2.0 * m);
    let y = |p: f64| h - m - p * (h - 2.0 * m);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    for i in 0..=10 {
        let t = i as f64 / 10.0;
        let _ = writeln!(
            s,
            r##"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="#e0e0e0"/><line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="#e0e0e0"/>"##,
            x(t),
            y(0.0),
            x(t),
            y(1.0),
            x(0.0),
            y(t),
            x(1.0),
            y(t)
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="middle">{t:.1}</text>"#,
            x(t),
            y(0.0) + 16.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="end">{t:.1}</text>"#,
            x(0.0) - 6.0,
            y(t) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<rect x="{m}" y="{m}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        w - 2.0 * m,
        h - 2.0 * m
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" font-size="13" text-anchor="middle">Recall</text>"#,
        w / 2.0,
        h - 16.0
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{:.1}" font-size="13" text-anchor="middle" transform="rotate(-90 18 {:.1})">Precision</text>"#,
        h / 2.0,
        h / 2.0
    );
    for (i, c) in curves.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        let mut pts: Vec<(f64, f64)> = c.points.iter().map(|p| (p.recall, p.precision)).collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)));
        if pts.len() > 1 {
            let path: Vec<String> = pts
                .iter()
                .map(|&(r, p)| format!("{:.1},{:.1}", x(r), y(p)))
                .collect();
            let _ = writeln!(
                s,
                r#"<polyline fill="none" stroke="{colour}" stroke-width="2" points="{}"/>"#,
                path.join(" ")
            );
        }
        for &(r, p) in &pts {
            let _ = writeln!(
                s,
                r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{colour}"/>"#,
                x(r),
                y(p)
            );
        }
        let ly = m + 18.0 + 18.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{colour}" stroke-width="2"/><text x="{:.1}" y="{:.1}" font-size="12">{} (AUC {:.3})</text>"#,
            x(0.05),
            x(0.05) + 20.0,
            x(0.05) + 26.0,
            ly + 4.0,
            xml_escape(&c.label),
            pr_auc(&c.points)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Curve label for a points file: its stem, or the parent directory name for `pr.csv`.
fn curve_label(path: &Path) -> String {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    if stem == "pr" {
        if let Some(parent) = path.parent().and_then(|p| p.file_name()) {
            return parent.to_string_lossy().into_owned();
        }
    }
    stem
}

pub fn cmd_pr_plot(args: &PrPlotArgs, out: &Path) -> Result<()> {
    let mut curves = Vec::new();
    for path in &args.files {
        require_file(path)?;
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let points = parse_pr_csv(&text).map_err(|msg| Error::format(path, msg))?;
        curves.push(Curve {
            label: curve_label(path),
            points,
        });
    }
    create_dir(out)?;
    write_file(&out.join("pr.svg"), pr_svg(&curves))?;
    for c in &curves {
        println!("{}: AUC={:.4}", c.label, pr_auc(&c.points));
    }
    Ok(())
}
