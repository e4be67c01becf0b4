use scenediff::dataset::{dataset_hash, load_dataset, save_dataset};
use scenediff::evalkit::{
    connected_components, default_thresholds, evaluate, filter_min_area, pr_curve, ChangePredictor,
    Connectivity, EvalConfig, Region,
};
use scenediff::objective::{LossConfig, LossMode};
use scenediff::synthlab::{synth_dataset, AssetCounts, ProceduralAssets, SynthConfig};
use scenediff::trainer::{train, TrainConfig};
use scenediff::{ChangeMask, ImagePair, LabeledSample, ProbabilityMask, Result};

const SIZE: (usize, usize) = (32, 64);

fn small_assets(seed: u64) -> ProceduralAssets {
    let counts = AssetCounts {
        backgrounds: 3,
        cutouts: 5,
        shadows: 3,
        cutout_min_side: 6,
        cutout_max_side: 12,
    };
    ProceduralAssets::generate(seed, SIZE, &counts).unwrap()
}

fn small_set(seed: u64, count: usize) -> Vec<LabeledSample> {
    let assets = small_assets(seed);
    let cfg = SynthConfig {
        rng_seed: seed,
        ..Default::default()
    };
    synth_dataset(
        &assets.backgrounds,
        &assets.cutouts,
        &assets.shadows,
        &cfg,
        count,
    )
    .unwrap()
}

struct Oracle(Vec<LabeledSample>);

impl ChangePredictor for Oracle {
    fn predict(&self, pair: &ImagePair) -> Result<ProbabilityMask> {
        let s = self
            .0
            .iter()
            .find(|s| s.pair() == pair)
            .expect("known pair");
        ProbabilityMask::from_mask(s.mask(), 1e-7)
    }
}

struct Constant(f64);

impl ChangePredictor for Constant {
    fn predict(&self, pair: &ImagePair) -> Result<ProbabilityMask> {
        let (h, w) = pair.dims();
        ProbabilityMask::new(h, w, vec![self.0; h * w], 1e-7)
    }
}

#[test]
fn dataset_round_trips_through_disk() {
    let samples = small_set(4, 5);
    let dir = tempfile::tempdir().unwrap();
    let manifest = save_dataset(&samples, dir.path()).unwrap();
    assert_eq!(manifest.records.len(), 5);
    let loaded = load_dataset(&dir.path().join("manifest.json")).unwrap();
    assert_eq!(loaded.len(), samples.len());
    for (a, b) in samples.iter().zip(&loaded) {
        assert_eq!(a.id(), b.id());
        assert_eq!(a.mask(), b.mask());
        // PNG stores 8-bit channels.
        for (x, y) in a.pair().t1().data().iter().zip(b.pair().t1().data()) {
            assert!((x - y).abs() <= 0.5 / 255.0 + 1e-6);
        }
    }

    let other = tempfile::tempdir().unwrap();
    save_dataset(&small_set(4, 5), other.path()).unwrap();
    assert_eq!(
        dataset_hash(dir.path()).unwrap(),
        dataset_hash(other.path()).unwrap()
    );
}

#[test]
fn synthetic_labels_are_nontrivial() {
    let samples = small_set(6, 20);
    let changed = samples.iter().filter(|s| s.mask().count_ones() > 0).count();
    assert!(changed >= 10, "only {changed} of 20 samples carry a change");
    assert!(samples.iter().all(|s| s.dims() == SIZE));
}

#[test]
fn min_area_example() {
    // Components of area 3, 10 and 25 on a 12x12 grid.
    let (h, w) = (12, 12);
    let mut data = vec![0u8; h * w];
    for c in 0..3 {
        data[c] = 1;
    }
    for c in 0..10 {
        data[3 * w + c] = 1;
    }
    for r in 6..11 {
        for c in 5..10 {
            data[r * w + c] = 1;
        }
    }
    let regions = connected_components(&ChangeMask::new(h, w, data).unwrap(), Connectivity::Four);
    let areas: Vec<usize> = regions.iter().map(Region::area).collect();
    assert_eq!(areas, [3, 10, 25]);
    let kept: Vec<usize> = filter_min_area(regions, 10)
        .iter()
        .map(Region::area)
        .collect();
    assert_eq!(kept, [10, 25]);
}

#[test]
fn perfect_and_null_predictors() {
    let samples = small_set(8, 8);
    let gt_regions: usize = samples
        .iter()
        .map(|s| connected_components(s.mask(), Connectivity::Eight).len())
        .sum();
    assert!(gt_regions > 0);
    let cfg = EvalConfig::default();

    let perfect = evaluate(&Oracle(samples.clone()), &samples, &cfg).unwrap();
    assert_eq!(
        (perfect.totals.tp, perfect.totals.fp, perfect.totals.fn_),
        (gt_regions, 0, 0)
    );
    assert_eq!(
        (
            perfect.metrics.precision,
            perfect.metrics.recall,
            perfect.metrics.f1
        ),
        (1.0, 1.0, 1.0)
    );

    let null = evaluate(&Constant(0.01), &samples, &cfg).unwrap();
    assert_eq!(
        (null.totals.tp, null.totals.fp, null.totals.fn_),
        (0, 0, gt_regions)
    );
    assert_eq!(null.metrics.precision, 1.0);
    assert_eq!(null.metrics.recall, 0.0);
    assert_eq!(null.metrics.f1, 0.0);

    let curve = pr_curve(
        &Oracle(samples.clone()),
        &samples,
        &default_thresholds(),
        &cfg,
    )
    .unwrap();
    assert!(curve.points.iter().all(|p| p.f1 == 1.0));
    assert!((curve.auc - 1.0).abs() < 1e-12);
}

#[test]
fn pr_point_matches_single_evaluation() {
    let samples = small_set(9, 6);
    let model = TrainConfig {
        image_size: SIZE,
        tap_layer: 4,
        ..Default::default()
    }
    .build_model()
    .unwrap();
    let cfg = EvalConfig::default();
    let curve = pr_curve(&model, &samples, &[0.25, 0.5, 0.75], &cfg).unwrap();
    let single = evaluate(&model, &samples, &cfg).unwrap();
    assert_eq!(curve.points[1].precision, single.metrics.precision);
    assert_eq!(curve.points[1].recall, single.metrics.recall);
}

#[test]
fn single_sample_overfits() {
    let sample = small_set(12, 12)
        .into_iter()
        .max_by_key(|s| s.mask().count_ones())
        .unwrap();
    assert!(sample.mask().count_ones() > 20);
    let cfg = TrainConfig {
        image_size: SIZE,
        tap_layer: 4,
        batch_size: 1,
        max_iter: 300,
        base_lr: 2e-3,
        loss: LossConfig::default().with_mode(LossMode::Bce),
        rng_seed: 1,
        ..Default::default()
    };
    let (model, log) = train(
        cfg.build_model().unwrap(),
        std::slice::from_ref(&sample),
        &cfg,
    )
    .unwrap();
    let losses = log.losses();
    assert_eq!(losses.len(), 300);
    let first = losses[0];
    let last = losses[290..].iter().sum::<f64>() / 10.0;
    assert!(last < 0.25 * first, "loss {first} -> {last}");

    let prob = model.forward(sample.pair()).unwrap();
    let gt = sample.mask().data();
    let correct = prob
        .data()
        .iter()
        .zip(gt)
        .filter(|(p, &t)| (**p >= 0.5) == (t == 1))
        .count();
    assert!(
        correct as f64 / gt.len() as f64 > 0.97,
        "pixel accuracy {}",
        correct as f64 / gt.len() as f64
    );
}
