//! Object-level evaluation.
//!
//! Predictions are binarized, split into connected components, filtered by a
//! minimum area and matched one-to-one against ground-truth regions. Counts
//! are summed over the dataset (micro-averaging) before computing precision,
//! recall and F1.
//!
//! Zero denominators follow a "nothing to do counts as success" convention:
//! precision is 1 when nothing was predicted, recall is 1 when there was
//! nothing to find.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::ChangeModel;
use crate::types::{ChangeMask, ImagePair, LabeledSample, ProbabilityMask};

/// Fraction of the image area used as the production minimum region size.
pub const PRODUCTION_MIN_AREA_FRACTION: f64 = 0.0005;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Connectivity {
    #[serde(rename = "4")]
    Four,
    #[default]
    #[serde(rename = "8")]
    Eight,
}

impl std::str::FromStr for Connectivity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "4" => Ok(Connectivity::Four),
            "8" => Ok(Connectivity::Eight),
            other => Err(Error::Config(format!(
                "connectivity must be 4 or 8, got {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMode {
    /// Accept a pair when IoU >= tau.
    #[default]
    IouThreshold,
    /// Accept any pair sharing at least one pixel.
    AnyOverlap,
}

impl std::str::FromStr for MatchMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iou_threshold" | "iou" => Ok(MatchMode::IouThreshold),
            "any_overlap" | "any" => Ok(MatchMode::AnyOverlap),
            other => Err(Error::Config(format!(
                "match mode must be iou_threshold or any_overlap, got {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub binarize_threshold: f64,
    pub connectivity: Connectivity,
    pub min_area: usize,
    pub match_mode: MatchMode,
    pub iou_tau: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            binarize_threshold: 0.5,
            connectivity: Connectivity::Eight,
            min_area: 0,
            match_mode: MatchMode::IouThreshold,
            iou_tau: 0.5,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.binarize_threshold > 0.0 && self.binarize_threshold < 1.0) {
            return Err(Error::Config(format!(
                "binarize_threshold {} outside (0, 1)",
                self.binarize_threshold
            )));
        }
        if !(self.iou_tau > 0.0 && self.iou_tau <= 1.0) {
            return Err(Error::Config(format!(
                "iou_tau {} outside (0, 1]",
                self.iou_tau
            )));
        }
        Ok(())
    }
}

/// 0.05% of the image area, rounded up.
pub fn production_min_area(height: usize, width: usize) -> usize {
    (PRODUCTION_MIN_AREA_FRACTION * (height * width) as f64).ceil() as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub min_row: usize,
    pub min_col: usize,
    pub max_row: usize,
    pub max_col: usize,
}

/// A connected set of foreground pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Region {
    pixels: Vec<(usize, usize)>,
    bbox: BoundingBox,
}

impl Region {
    /// Builds a region from a non-empty pixel list. Connectivity is the caller's responsibility.
    pub fn from_pixels(mut pixels: Vec<(usize, usize)>) -> Result<Self> {
        pixels.sort_unstable();
        pixels.dedup();
        let first = *pixels
            .first()
            .ok_or_else(|| Error::Value("region needs at least one pixel".into()))?;
        let mut bbox = BoundingBox {
            min_row: first.0,
            min_col: first.1,
            max_row: first.0,
            max_col: first.1,
        };
        for &(r, c) in &pixels {
            bbox.min_row = bbox.min_row.min(r);
            bbox.max_row = bbox.max_row.max(r);
            bbox.min_col = bbox.min_col.min(c);
            bbox.max_col = bbox.max_col.max(c);
        }
        Ok(Self { pixels, bbox })
    }

    pub fn area(&self) -> usize {
        self.pixels.len()
    }

    /// Pixels in row-major order.
    pub fn pixels(&self) -> &[(usize, usize)] {
        &self.pixels
    }

    pub fn bbox(&self) -> BoundingBox {
        self.bbox
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionMatch {
    pub pred: usize,
    pub gt: usize,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RegionMatchResult {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub matches: Vec<RegionMatch>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// `prob >= threshold` becomes foreground.
pub fn binarize(prob: &ProbabilityMask, threshold: f64) -> ChangeMask {
    let data = prob
        .data()
        .iter()
        .map(|&p| (p >= threshold) as u8)
        .collect();
    ChangeMask::new(prob.height(), prob.width(), data).expect("dims come from a valid mask")
}

/// Maximal connected foreground regions, ordered by their first pixel in a row-major scan.
pub fn connected_components(mask: &ChangeMask, connectivity: Connectivity) -> Vec<Region> {
    let (h, w) = mask.dims();
    let data = mask.data();
    let mut label = vec![u32::MAX; h * w];
    let mut regions = Vec::new();
    let mut stack = Vec::new();
    let neighbours: &[(isize, isize)] = match connectivity {
        Connectivity::Four => &[(-1, 0), (1, 0), (0, -1), (0, 1)],
        Connectivity::Eight => &[
            (-1, -1),
            (-1, 0),
            (-1, 1),
            (0, -1),
            (0, 1),
            (1, -1),
            (1, 0),
            (1, 1),
        ],
    };
    for start in 0..h * w {
        if data[start] == 0 || label[start] != u32::MAX {
            continue;
        }
        let id = regions.len() as u32;
        label[start] = id;
        stack.push(start);
        let mut pixels = Vec::new();
        while let Some(p) = stack.pop() {
            let (r, c) = (p / w, p % w);
            pixels.push((r, c));
            for &(dr, dc) in neighbours {
                let (nr, nc) = (r as isize + dr, c as isize + dc);
                if nr < 0 || nc < 0 || nr >= h as isize || nc >= w as isize {
                    continue;
                }
                let q = nr as usize * w + nc as usize;
                if data[q] == 1 && label[q] == u32::MAX {
                    label[q] = id;
                    stack.push(q);
                }
            }
        }
        regions.push(Region::from_pixels(pixels).expect("seed pixel present"));
    }
    regions
}

/// Keeps regions with `area >= min_area`, preserving order.
pub fn filter_min_area(regions: Vec<Region>, min_area: usize) -> Vec<Region> {
    regions
        .into_iter()
        .filter(|r| r.area() >= min_area)
        .collect()
}

/// Intersection sizes for every overlapping (pred, gt) pair.
fn intersections(pred: &[Region], gt: &[Region]) -> HashMap<(usize, usize), usize> {
    let mut owner = HashMap::new();
    for (j, g) in gt.iter().enumerate() {
        for &px in g.pixels() {
            owner.insert(px, j);
        }
    }
    let mut counts = HashMap::new();
    for (i, p) in pred.iter().enumerate() {
        for px in p.pixels() {
            if let Some(&j) = owner.get(px) {
                *counts.entry((i, j)).or_insert(0usize) += 1;
            }
        }
    }
    counts
}

/// Candidate (pred, gt, iou) pairs that pass the acceptance rule.
pub fn acceptable_pairs(pred: &[Region], gt: &[Region], config: &EvalConfig) -> Vec<RegionMatch> {
    let mut out: Vec<RegionMatch> = intersections(pred, gt)
        .into_iter()
        .filter_map(|((i, j), inter)| {
            let union = pred[i].area() + gt[j].area() - inter;
            let iou = inter as f64 / union as f64;
            let ok = match config.match_mode {
                MatchMode::IouThreshold => iou >= config.iou_tau,
                MatchMode::AnyOverlap => inter >= 1,
            };
            ok.then_some(RegionMatch {
                pred: i,
                gt: j,
                iou,
            })
        })
        .collect();
    out.sort_by(|a, b| {
        b.iou
            .total_cmp(&a.iou)
            .then(a.pred.cmp(&b.pred))
            .then(a.gt.cmp(&b.gt))
    });
    out
}

/// Greedy one-to-one matching in descending IoU order.
pub fn match_regions(pred: &[Region], gt: &[Region], config: &EvalConfig) -> RegionMatchResult {
    let mut pred_used = vec![false; pred.len()];
    let mut gt_used = vec![false; gt.len()];
    let mut matches = Vec::new();
    for m in acceptable_pairs(pred, gt, config) {
        if !pred_used[m.pred] && !gt_used[m.gt] {
            pred_used[m.pred] = true;
            gt_used[m.gt] = true;
            matches.push(m);
        }
    }
    let tp = matches.len();
    RegionMatchResult {
        tp,
        fp: pred.len() - tp,
        fn_: gt.len() - tp,
        matches,
    }
}

pub fn prf1(tp: usize, fp: usize, fn_: usize) -> Metrics {
    let precision = if tp + fp == 0 {
        1.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let recall = if tp + fn_ == 0 {
        1.0
    } else {
        tp as f64 / (tp + fn_) as f64
    };
    Metrics {
        precision,
        recall,
        f1: f1_score(precision, recall),
    }
}

/// Harmonic mean; 0 when both inputs are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Anything that turns an image pair into a change probability map.
pub trait ChangePredictor: Sync {
    fn predict(&self, pair: &ImagePair) -> Result<ProbabilityMask>;
}

impl ChangePredictor for ChangeModel {
    fn predict(&self, pair: &ImagePair) -> Result<ProbabilityMask> {
        self.forward(pair)
    }
}

/// Regions of a predicted map after binarization and area filtering.
pub fn predicted_regions(prob: &ProbabilityMask, config: &EvalConfig) -> Vec<Region> {
    let mask = binarize(prob, config.binarize_threshold);
    filter_min_area(
        connected_components(&mask, config.connectivity),
        config.min_area,
    )
}

/// Region mask of a ground truth (area filter is not applied to GT).
pub fn gt_regions(mask: &ChangeMask, config: &EvalConfig) -> Vec<Region> {
    connected_components(mask, config.connectivity)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageResult {
    pub id: String,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub matches: Vec<RegionMatch>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Totals {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: EvalConfig,
    pub metrics: Metrics,
    pub totals: Totals,
    pub per_image: Vec<ImageResult>,
}

fn score_image(
    id: &str,
    prob: &ProbabilityMask,
    gt: &ChangeMask,
    config: &EvalConfig,
) -> Result<ImageResult> {
    if prob.dims() != gt.dims() {
        return Err(Error::Shape(format!(
            "prediction {:?} vs ground truth {:?} for {id}",
            prob.dims(),
            gt.dims()
        )));
    }
    let r = match_regions(
        &predicted_regions(prob, config),
        &gt_regions(gt, config),
        config,
    );
    Ok(ImageResult {
        id: id.to_string(),
        tp: r.tp,
        fp: r.fp,
        fn_: r.fn_,
        matches: r.matches,
    })
}

fn aggregate(config: &EvalConfig, per_image: Vec<ImageResult>) -> EvalReport {
    let totals = per_image.iter().fold(Totals::default(), |t, r| Totals {
        tp: t.tp + r.tp,
        fp: t.fp + r.fp,
        fn_: t.fn_ + r.fn_,
    });
    EvalReport {
        config: *config,
        metrics: prf1(totals.tp, totals.fp, totals.fn_),
        totals,
        per_image,
    }
}

/// Micro-averaged object-level metrics over a labeled dataset.
pub fn evaluate(
    predictor: &dyn ChangePredictor,
    dataset: &[LabeledSample],
    config: &EvalConfig,
) -> Result<EvalReport> {
    config.validate()?;
    evaluate_predictions(dataset, &predict_all(predictor, dataset)?, config)
}

/// Runs the predictor on every pair, in dataset order.
pub fn predict_all(
    predictor: &dyn ChangePredictor,
    dataset: &[LabeledSample],
) -> Result<Vec<ProbabilityMask>> {
    dataset
        .par_iter()
        .map(|s| predictor.predict(s.pair()))
        .collect()
}

/// [`evaluate`] on precomputed probability maps (`probs[i]` belongs to `dataset[i]`).
pub fn evaluate_predictions(
    dataset: &[LabeledSample],
    probs: &[ProbabilityMask],
    config: &EvalConfig,
) -> Result<EvalReport> {
    config.validate()?;
    if dataset.len() != probs.len() {
        return Err(Error::Shape(format!(
            "{} samples but {} predictions",
            dataset.len(),
            probs.len()
        )));
    }
    let per_image = dataset
        .par_iter()
        .zip(probs)
        .map(|(s, p)| score_image(s.id(), p, s.mask(), config))
        .collect::<Result<Vec<_>>>()?;
    Ok(aggregate(config, per_image))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
    pub auc: f64,
}

/// Default threshold sweep: 0.05, 0.10, ..., 0.95.
pub fn default_thresholds() -> Vec<f64> {
    (1..20).map(|i| i as f64 * 0.05).collect()
}

/// Precision/recall at each binarization threshold. Every image is predicted once.
pub fn pr_curve(
    predictor: &dyn ChangePredictor,
    dataset: &[LabeledSample],
    thresholds: &[f64],
    config: &EvalConfig,
) -> Result<PrCurve> {
    check_thresholds(thresholds)?;
    config.validate()?;
    pr_curve_from_predictions(
        dataset,
        &predict_all(predictor, dataset)?,
        thresholds,
        config,
    )
}

fn check_thresholds(thresholds: &[f64]) -> Result<()> {
    if thresholds.is_empty() {
        return Err(Error::Config("at least one threshold is required".into()));
    }
    if thresholds.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(
            "thresholds must be strictly increasing".into(),
        ));
    }
    if let Some(t) = thresholds.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
        return Err(Error::Config(format!("threshold {t} outside (0, 1)")));
    }
    Ok(())
}

/// [`pr_curve`] on precomputed probability maps.
pub fn pr_curve_from_predictions(
    dataset: &[LabeledSample],
    probs: &[ProbabilityMask],
    thresholds: &[f64],
    config: &EvalConfig,
) -> Result<PrCurve> {
    check_thresholds(thresholds)?;
    let points = thresholds
        .iter()
        .map(|&threshold| {
            let cfg = EvalConfig {
                binarize_threshold: threshold,
                ..*config
            };
            let m = evaluate_predictions(dataset, probs, &cfg)?.metrics;
            Ok(PrPoint {
                threshold,
                precision: m.precision,
                recall: m.recall,
                f1: m.f1,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let auc = pr_auc(&points);
    Ok(PrCurve { points, auc })
}

/// `threshold,precision,recall,f1` with a header row.
pub fn pr_csv(curve: &PrCurve) -> String {
    let mut out = String::from("threshold,precision,recall,f1\n");
    for p in &curve.points {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6}\n",
            p.threshold, p.precision, p.recall, p.f1
        ));
    }
    out
}

/// Parses the output of [`pr_csv`].
pub fn parse_pr_csv(text: &str) -> std::result::Result<Vec<PrPoint>, String> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    match lines.next() {
        Some(h) if h.trim() == "threshold,precision,recall,f1" => {}
        Some(h) => return Err(format!("unexpected header {h:?}")),
        None => return Err("file is empty".into()),
    }
    let points = lines
        .enumerate()
        .map(|(i, line)| {
            let v: Vec<f64> = line
                .split(',')
                .map(|f| {
                    f.trim()
                        .parse::<f64>()
                        .map_err(|e| format!("line {}: {e}", i + 2))
                })
                .collect::<std::result::Result<_, _>>()?;
            match v[..] {
                [threshold, precision, recall, f1] => Ok(PrPoint {
                    threshold,
                    precision,
                    recall,
                    f1,
                }),
                _ => Err(format!(
                    "line {}: expected 4 fields, got {}",
                    i + 2,
                    v.len()
                )),
            }
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    if points.is_empty() {
        return Err("no points".into());
    }
    Ok(points)
}

/// Trapezoidal area under precision-vs-recall. Points are sorted by recall and
/// the curve is extended flat from its lowest-recall point down to recall 0.
pub fn pr_auc(points: &[PrPoint]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let mut pts: Vec<(f64, f64)> = points.iter().map(|p| (p.recall, p.precision)).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)));
    let mut area = pts[0].0 * pts[0].1;
    for w in pts.windows(2) {
        area += (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0;
    }
    area
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask_from(rows: &[&str]) -> ChangeMask {
        let h = rows.len();
        let w = rows[0].len();
        let data = rows
            .iter()
            .flat_map(|r| r.bytes().map(|b| (b == b'#') as u8))
            .collect();
        ChangeMask::new(h, w, data).unwrap()
    }

    #[test]
    fn binarize_uses_greater_or_equal() {
        let p = ProbabilityMask::new(1, 3, vec![0.5, 0.49, 0.9], 1e-7).unwrap();
        assert_eq!(binarize(&p, 0.5).data(), &[1, 0, 1]);
        assert_eq!(binarize(&p, 0.95).count_ones(), 0);
        let lo = binarize(&p, 0.3);
        let hi = binarize(&p, 0.6);
        assert!(hi.data().iter().zip(lo.data()).all(|(h, l)| h <= l));
    }

    #[test]
    fn components_examples() {
        let block = mask_from(&["....", ".###", ".###", ".###"]);
        let r = connected_components(&block, Connectivity::Eight);
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].area(), 9);
        assert_eq!(
            r[0].bbox(),
            BoundingBox {
                min_row: 1,
                min_col: 1,
                max_row: 3,
                max_col: 3
            }
        );

        let diag = mask_from(&["#.", ".#"]);
        assert_eq!(connected_components(&diag, Connectivity::Eight).len(), 1);
        assert_eq!(connected_components(&diag, Connectivity::Four).len(), 2);
        assert!(connected_components(&ChangeMask::zeros(3, 3), Connectivity::Eight).is_empty());
    }

    #[test]
    fn components_ordered_by_first_pixel() {
        let m = mask_from(&["...#", "#...", "#..#"]);
        let r = connected_components(&m, Connectivity::Four);
        let firsts: Vec<_> = r.iter().map(|g| g.pixels()[0]).collect();
        assert_eq!(firsts, [(0, 3), (1, 0), (2, 3)]);
    }

    #[test]
    fn min_area_filter() {
        let m = mask_from(&["###.#####", "........#", "#####.###"]);
        let regions = connected_components(&m, Connectivity::Four);
        let areas: Vec<_> = regions.iter().map(|r| r.area()).collect();
        assert_eq!(areas, [3, 9, 5]);
        assert_eq!(filter_min_area(regions.clone(), 0), regions);
        let kept: Vec<_> = filter_min_area(regions.clone(), 9)
            .iter()
            .map(|r| r.area())
            .collect();
        assert_eq!(kept, [9]);
        assert!(filter_min_area(regions.clone(), 6)
            .iter()
            .all(|r| r.area() != 5));
    }

    #[test]
    fn match_examples() {
        let cfg = EvalConfig::default();
        let gt = connected_components(&mask_from(&["##..##", "##..##"]), Connectivity::Eight);
        let r = match_regions(&gt, &gt, &cfg);
        assert_eq!((r.tp, r.fp, r.fn_), (2, 0, 0));

        let three = connected_components(&mask_from(&["#.#.#"]), Connectivity::Eight);
        let r = match_regions(&[], &three, &cfg);
        assert_eq!((r.tp, r.fp, r.fn_), (0, 0, 3));
    }

    #[test]
    fn iou_point_four_depends_on_mode() {
        // Two 2x7 bands offset by three columns: |inter| = 8, |union| = 20.
        let mut gt = vec![0u8; 100];
        let mut pred = vec![0u8; 100];
        for c in 0..7 {
            gt[2 * 10 + c] = 1;
            gt[3 * 10 + c] = 1;
        }
        for c in 3..10 {
            pred[2 * 10 + c] = 1;
            pred[3 * 10 + c] = 1;
        }
        let gt = ChangeMask::new(10, 10, gt).unwrap();
        let pred = ChangeMask::new(10, 10, pred).unwrap();
        // Brute-force IoU by pixel counting.
        let inter = gt
            .data()
            .iter()
            .zip(pred.data())
            .filter(|(a, b)| **a == 1 && **b == 1)
            .count();
        let union = gt
            .data()
            .iter()
            .zip(pred.data())
            .filter(|(a, b)| **a == 1 || **b == 1)
            .count();
        assert_eq!((inter, union), (8, 20));

        let g = connected_components(&gt, Connectivity::Eight);
        let p = connected_components(&pred, Connectivity::Eight);
        let r = match_regions(&p, &g, &EvalConfig::default());
        assert_eq!((r.tp, r.fp, r.fn_), (0, 1, 1));
        let any = EvalConfig {
            match_mode: MatchMode::AnyOverlap,
            ..Default::default()
        };
        let r = match_regions(&p, &g, &any);
        assert_eq!((r.tp, r.fp, r.fn_), (1, 0, 0));
        assert!((r.matches[0].iou - 0.4).abs() < 1e-12);
    }

    #[test]
    fn prf1_examples() {
        let m = prf1(2, 1, 1);
        assert!((m.precision - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.recall - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.f1 - 2.0 / 3.0).abs() < 1e-15);
        let f = f1_score(0.72, 0.69);
        assert!((f - 0.7047).abs() < 1e-4);
        assert_eq!(format!("{f:.2}"), "0.70");
        assert_eq!(
            prf1(0, 0, 0),
            Metrics {
                precision: 1.0,
                recall: 1.0,
                f1: 1.0
            }
        );
        let none = prf1(0, 0, 4);
        assert_eq!((none.precision, none.recall, none.f1), (1.0, 0.0, 0.0));
    }

    #[test]
    fn auc_of_perfect_curve_is_one() {
        let pts = [PrPoint {
            threshold: 0.5,
            precision: 1.0,
            recall: 1.0,
            f1: 1.0,
        }];
        assert_eq!(pr_auc(&pts), 1.0);
        let pts = [
            PrPoint {
                threshold: 0.2,
                precision: 0.5,
                recall: 1.0,
                f1: 0.0,
            },
            PrPoint {
                threshold: 0.8,
                precision: 1.0,
                recall: 0.5,
                f1: 0.0,
            },
        ];
        assert!((pr_auc(&pts) - (0.5 + 0.375)).abs() < 1e-12);
    }

    #[test]
    fn production_min_area_value() {
        assert_eq!(production_min_area(128, 256), 17);
        assert_eq!(production_min_area(256, 512), 66);
    }
}
