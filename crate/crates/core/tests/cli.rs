use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use scenediff::cli::{eval_outputs, summary_line, EvalSection};
use scenediff::dataset::load_dataset;
use scenediff::evalkit::ChangePredictor;
use scenediff::{ImagePair, LabeledSample, ProbabilityMask, Result};

fn scenediff(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scenediff"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn small_config(dir: &Path) -> PathBuf {
    let path = dir.join("small.toml");
    std::fs::write(
        &path,
        r#"
[assets]
backgrounds = 3
cutouts = 4
shadows = 3
cutout_min_side = 6
cutout_max_side = 12

[train]
image_size = [32, 64]
batch_size = 2
max_iter = 2
tap_layer = 4
"#,
    )
    .unwrap();
    path
}

fn synth(dir: &Path, name: &str, count: usize, seed: u64) -> (PathBuf, Output) {
    let out = dir.join(name);
    let cfg = small_config(dir);
    let o = scenediff(&[
        "synth",
        "--count",
        &count.to_string(),
        "--seed",
        &seed.to_string(),
        "--config",
        p(&cfg),
        "--out",
        p(&out),
    ]);
    (out, o)
}

#[test]
fn synth_is_deterministic_and_counts() {
    let dir = tempfile::tempdir().unwrap();
    let (a, oa) = synth(dir.path(), "a", 4, 11);
    let (_, ob) = synth(dir.path(), "b", 4, 11);
    assert!(
        oa.status.success(),
        "{}",
        String::from_utf8_lossy(&oa.stderr)
    );
    assert!(stdout(&oa).starts_with("samples=4 hash="));
    assert_eq!(stdout(&oa), stdout(&ob));
    assert_eq!(load_dataset(&a.join("manifest.json")).unwrap().len(), 4);
    let (_, oc) = synth(dir.path(), "c", 4, 12);
    assert_ne!(stdout(&oa), stdout(&oc));
}

#[test]
fn synth_zero_writes_empty_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let (out, o) = synth(dir.path(), "empty", 0, 1);
    assert_eq!(o.status.code(), Some(0));
    assert!(load_dataset(&out).unwrap().is_empty());
}

#[test]
fn invalid_config_exits_before_writing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[train.synth]\npaste_rate = -1.0\n").unwrap();
    let out = dir.path().join("never");
    let o = scenediff(&[
        "synth",
        "--count",
        "3",
        "--config",
        p(&cfg),
        "--out",
        p(&out),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!out.exists());

    let o = scenediff(&[
        "synth",
        "--count",
        "3",
        "--paste-rate",
        "-2",
        "--out",
        p(&out),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!out.exists());

    let o = scenediff(&["synth", "--count", "1"]);
    assert_eq!(o.status.code(), Some(1), "--out is required");
    let o = scenediff(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn train_eval_infer_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let (data, _) = synth(dir.path(), "data", 3, 5);
    let run = dir.path().join("run");
    let o = scenediff(&[
        "train",
        "--data",
        p(&data),
        "--config",
        p(&cfg),
        "--seed",
        "3",
        "--out",
        p(&run),
        "--loss",
        "bce+dice",
        "--tail",
        "3",
        "--tied",
        "false",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(run.join("model.scd").exists());
    let log = std::fs::read_to_string(run.join("train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);
    let echoed = std::fs::read_to_string(run.join("config.toml")).unwrap();
    assert!(
        echoed.contains("trainable_tail_k = 3") && echoed.contains("weight_tying = \"untied\"")
    );
    assert!(echoed.contains("mode = \"bce+dice\""));

    let ckpt = run.join("model.scd");
    let e1 = dir.path().join("e1");
    let e2 = dir.path().join("e2");
    for e in [&e1, &e2] {
        let o = scenediff(&[
            "eval",
            "--checkpoint",
            p(&ckpt),
            "--data",
            p(&data),
            "--min-area",
            "0",
            "--out",
            p(e),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let line = stdout(&o);
        assert!(
            line.starts_with("P=") && line.contains(" R=") && line.contains(" F1="),
            "{line}"
        );
    }
    let r1 = std::fs::read(e1.join("report.json")).unwrap();
    assert_eq!(r1, std::fs::read(e2.join("report.json")).unwrap());
    let report: serde_json::Value = serde_json::from_slice(&r1).unwrap();
    for key in ["binarize_threshold", "iou_tau", "min_area", "match_mode"] {
        assert!(
            report["config"].get(key).is_some(),
            "{key} missing from report"
        );
    }
    let pr = std::fs::read_to_string(e1.join("pr.csv")).unwrap();
    assert!(pr.starts_with("threshold,precision,recall,f1\n"));

    let t0 = data.join("t0/synth_000000.png");
    let t1 = data.join("t1/synth_000000.png");
    let inf = dir.path().join("inf");
    let o = scenediff(&[
        "infer",
        "--checkpoint",
        p(&ckpt),
        "--t0",
        p(&t0),
        "--t1",
        p(&t1),
        "--out",
        p(&inf),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mask = image::open(inf.join("mask.png")).unwrap().to_luma8();
    assert_eq!(mask.dimensions(), (64, 32));
    assert!(mask.pixels().all(|v| v.0[0] == 0 || v.0[0] == 255));

    let big = dir.path().join("big");
    let o = scenediff(&[
        "infer",
        "--checkpoint",
        p(&ckpt),
        "--t0",
        p(&t0),
        "--t1",
        p(&t1),
        "--min-area",
        "100000",
        "--out",
        p(&big),
    ]);
    assert!(o.status.success());
    let mask = image::open(big.join("mask.png")).unwrap().to_luma8();
    assert!(mask.pixels().all(|v| v.0[0] == 0));
    let regions: serde_json::Value =
        serde_json::from_slice(&std::fs::read(big.join("regions.json")).unwrap()).unwrap();
    assert_eq!(regions["regions"].as_array().unwrap().len(), 0);

    let o = scenediff(&[
        "eval",
        "--checkpoint",
        p(&dir.path().join("nope.scd")),
        "--data",
        p(&data),
        "--out",
        p(&e1),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn train_zero_iterations_checkpoints_initial_model() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let (data, _) = synth(dir.path(), "data", 2, 5);
    let run = dir.path().join("run");
    let o = scenediff(&[
        "train",
        "--data",
        p(&data),
        "--config",
        p(&cfg),
        "--iters",
        "0",
        "--seed",
        "8",
        "--out",
        p(&run),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let model = scenediff::net::load_checkpoint(&run.join("model.scd")).unwrap();
    let mut c: scenediff::cli::CliConfig =
        toml::from_str(&std::fs::read_to_string(run.join("config.toml")).unwrap()).unwrap();
    c.train.max_iter = 0;
    assert_eq!(
        model.parameter_digest(),
        c.train.build_model().unwrap().parameter_digest()
    );
}

#[test]
fn infer_rejects_size_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let model = scenediff::net::ChangeModel::tiny(scenediff::net::WeightTying::Untied, 1).unwrap();
    let ckpt = dir.path().join("m.scd");
    scenediff::net::save_checkpoint(&model, &ckpt).unwrap();
    let a = dir.path().join("a.png");
    let b = dir.path().join("b.png");
    image::RgbImage::new(32, 32).save(&a).unwrap();
    image::RgbImage::new(48, 32).save(&b).unwrap();
    let o = scenediff(&[
        "infer",
        "--checkpoint",
        p(&ckpt),
        "--t0",
        p(&a),
        "--t1",
        p(&b),
        "--out",
        p(&dir.path().join("o")),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("shape"));
}

#[test]
fn pr_plot_overlays_curves() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("bce.csv");
    let b = dir.path().join("dice.csv");
    std::fs::write(
        &a,
        "threshold,precision,recall,f1\n0.3,0.5,0.9,0.64\n0.7,0.9,0.5,0.64\n",
    )
    .unwrap();
    std::fs::write(&b, "threshold,precision,recall,f1\n0.5,1.0,1.0,1.0\n").unwrap();
    let out = dir.path().join("plot");
    let o = scenediff(&["pr-plot", p(&a), p(&b), "--out", p(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(
        text.contains("bce: AUC=") && text.contains("dice: AUC=1.0000"),
        "{text}"
    );
    let svg = std::fs::read_to_string(out.join("pr.svg")).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 1);
    assert!(svg.contains(">bce (AUC") && svg.contains(">dice (AUC 1.000)"));

    let empty = dir.path().join("empty.csv");
    std::fs::write(&empty, "").unwrap();
    let o = scenediff(&["pr-plot", p(&empty), "--out", p(&out)]);
    assert_ne!(o.status.code(), Some(0));
    let o = scenediff(&["pr-plot", "--out", p(&out)]);
    assert_ne!(o.status.code(), Some(0));
}

#[test]
fn ablate_rejects_unknown_axis() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("abl");
    let o = scenediff(&[
        "ablate",
        "--axis",
        "depth",
        "--values",
        "1,2",
        "--out",
        p(&out),
    ]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    for axis in ["tap_layer", "trainable_tail", "loss_mode", "shadow_aug"] {
        assert!(err.contains(axis), "{err}");
    }
    assert!(!out.exists());
}

#[test]
fn ablate_shadow_axis_writes_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("abl");
    let o = scenediff(&[
        "ablate",
        "--axis",
        "shadow_aug",
        "--values",
        "off,on",
        "--config",
        p(&cfg),
        "--test-count",
        "3",
        "--out",
        p(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = std::fs::read_to_string(out.join("ablation_shadow_aug.csv")).unwrap();
    let lines: Vec<_> = table.lines().collect();
    assert_eq!(lines[0], "value,precision,recall,f1");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("off,") && lines[2].starts_with("on,"));
}

/// Returns the ground truth of whichever stored sample has the same images.
struct Oracle(Vec<LabeledSample>);

impl ChangePredictor for Oracle {
    fn predict(&self, pair: &ImagePair) -> Result<ProbabilityMask> {
        let sample = self
            .0
            .iter()
            .find(|s| {
                s.pair().t0().data() == pair.t0().data() && s.pair().t1().data() == pair.t1().data()
            })
            .expect("pair comes from the dataset");
        ProbabilityMask::from_mask(sample.mask(), 1e-7)
    }
}

#[test]
fn perfect_predictor_summary() {
    let dir = tempfile::tempdir().unwrap();
    let (data, _) = synth(dir.path(), "data", 3, 2);
    let samples = load_dataset(&data).unwrap();
    let oracle = Oracle(samples.clone());
    let section = EvalSection {
        min_area: Some(0),
        ..Default::default()
    };
    let (cfg, report, json, _) =
        eval_outputs(&oracle, &samples, &section, "oracle", "data").unwrap();
    assert_eq!(cfg.min_area, 0);
    assert_eq!(summary_line(&report.metrics), "P=1.000 R=1.000 F1=1.000");
    assert!(json.contains("\"pr_auc\": 1.0"));
}
