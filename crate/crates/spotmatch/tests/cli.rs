use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use spotmatch::dataset::{load_manifest, LabelFile};
use spotmatch::report::{RunManifest, ReportFile};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_spotmatch"));
    c.env_remove("SPOTMATCH_OUT");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn spotmatch")
}

fn ok(args: &[&str]) {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn small_data(dir: &Path, sigma: &str, seed: &str) {
    ok(&[
        "generate", "--out", p(dir), "--sigma", sigma, "--seed", seed, "--train-clips", "6", "--val-clips", "2",
        "--test-clips", "3", "--frames", "64",
    ]);
}

const TINY: &[&str] = &[
    "--window", "32", "--model-dim", "16", "--ffn-dim", "16", "--encoder-layers", "1", "--decoder-layers", "1",
    "--nq", "8", "--steps", "2", "--batch", "2", "--warmup", "1", "--lr-transformer", "1e-3",
];

fn tiny_train(data: &Path, out: &Path, extra: &[&str]) {
    let mut args = vec!["train", "--data", p(data), "--out", p(out)];
    args.extend_from_slice(TINY);
    args.extend_from_slice(extra);
    ok(&args);
}

fn manifest(dir: &Path, command: &str) -> RunManifest {
    RunManifest::load(&RunManifest::path(dir, command)).unwrap()
}

fn files(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| !p.to_string_lossy().ends_with(".manifest.json"))
        .map(|p| (PathBuf::from(p.file_name().unwrap()), fs::read(&p).unwrap()))
        .collect();
    out.sort();
    out
}

#[test]
fn generate_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    small_data(&a, "2.0", "7");
    small_data(&b, "2.0", "7");
    assert_eq!(files(&a), files(&b));
    assert_eq!(files(&a).len(), 6);
}

#[test]
fn zero_sigma_keeps_precise_labels() {
    let tmp = tempfile::tempdir().unwrap();
    small_data(tmp.path(), "0", "3");
    let m = load_manifest(tmp.path(), "train").unwrap();
    for c in &m.clips {
        assert_eq!(Some(&c.labels), c.precise_labels.as_ref());
    }
    small_data(&tmp.path().join("noisy"), "2.0", "3");
    let noisy = load_manifest(&tmp.path().join("noisy"), "train").unwrap();
    assert!(noisy.clips.iter().any(|c| Some(&c.labels) != c.precise_labels.as_ref()));
}

#[test]
fn default_manifest_echoes_defaults() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&["generate", "--out", p(tmp.path()), "--train-clips", "1", "--val-clips", "1", "--test-clips", "1"]);
    let m = manifest(tmp.path(), "generate");
    let c = &m.config;
    let expect = [
        ("seed", Value::from(0)),
        ("sigma", Value::from(0.0)),
        ("frames", Value::from(128)),
        ("classes", Value::from(4)),
        ("feature_dim", Value::from(8)),
        ("min_events", Value::from(2)),
        ("max_events", Value::from(6)),
        ("signature_width", Value::from(3)),
        ("signature_gain", Value::from(3.0)),
        ("noise_std", Value::from(1.0)),
        ("min_separation", Value::from(8)),
    ];
    for (k, v) in expect {
        assert_eq!(c[k], v, "{k}");
    }
    assert_eq!(m.seeds, vec![0]);
    assert_eq!(m.outputs.len(), 6);
    assert!(m.wall_clock_seconds >= 0.0);
}

#[test]
fn zero_epochs_writes_initial_checkpoint_only() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, out) = (tmp.path().join("data"), tmp.path().join("run"));
    small_data(&data, "1.0", "1");
    tiny_train(&data, &out, &["--epochs", "0"]);
    let names: Vec<_> = files(&out).into_iter().map(|(n, _)| n).collect();
    assert_eq!(names, [PathBuf::from("checkpoint.bin"), PathBuf::from("checkpoint.bin.json")]);
    assert!(RunManifest::path(&out, "train").exists());
}

#[test]
fn train_records_lambda_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    small_data(&data, "2.0", "5");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let extra = ["--epochs", "2", "--matching", "dynamic", "--lambda-time", "10"];
    tiny_train(&data, &a, &extra);
    tiny_train(&data, &b, &extra);
    assert_eq!(files(&a), files(&b));
    let m = manifest(&a, "train");
    assert_eq!(m.config["lambda_time"], Value::from(10.0));
    assert_eq!(m.config["matching"], Value::from("dynamic"));
    let log = fs::read_to_string(a.join("train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);

    let analysis = tmp.path().join("analysis");
    ok(&["analyze", "offsets", "--log", p(&a.join("train_log.jsonl")), "--out", p(&analysis)]);
    let offsets = fs::read_to_string(analysis.join("offsets.csv")).unwrap();
    assert_eq!(offsets.lines().count(), 1 + 2);
    assert!(offsets.starts_with("epoch,offset_noisy,offset_precise,total_loss\n"));

    let ckpt = a.join("checkpoint.bin");
    ok(&["analyze", "score-gap", "--checkpoint", p(&ckpt), "--data", p(&data), "--out", p(&analysis)]);
    let gaps = fs::read_to_string(analysis.join("score_gap.csv")).unwrap();
    assert_eq!(gaps.lines().count(), 1 + 4);

    ok(&[
        "analyze", "map-curve", "--checkpoint", p(&ckpt), "--checkpoint", p(&b.join("checkpoint.bin")), "--data",
        p(&data), "--max-delta", "6", "--out", p(&analysis),
    ]);
    let mut reader = csv::Reader::from_path(analysis.join("map_curve.csv")).unwrap();
    let rows: Vec<(String, usize, f64)> = reader.deserialize().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 14);
    for w in rows.windows(2).filter(|w| w[0].0 == w[1].0) {
        assert!(w[1].2 >= w[0].2, "{w:?}");
    }
}

#[test]
fn eval_of_perfect_detections_is_one() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    small_data(&data, "0", "2");
    let labels = LabelFile::from_dataset(&spotmatch::dataset::load_split(&data, "test").unwrap());
    let label_path = tmp.path().join("labels.json");
    labels.save(&label_path).unwrap();
    let mut csv = String::from("video_id,frame,class,score\n");
    for v in &labels.videos {
        for e in &v.events {
            csv.push_str(&format!("{},{},{},0.9\n", v.video_id, e.frame, e.class));
        }
    }
    let det_path = tmp.path().join("dets.csv");
    fs::write(&det_path, csv).unwrap();
    let out = tmp.path().join("eval");
    ok(&[
        "eval", "--detections", p(&det_path), "--labels", p(&label_path), "--delta", "0", "--delta", "1",
        "--delta", "2", "--out", p(&out),
    ]);
    let r = ReportFile::load(&out.join("report.json")).unwrap();
    assert_eq!(r.deltas.len(), 3);
    assert!(r.deltas.iter().all(|d| d.map == 1.0));
    assert_eq!(r.num_ground_truth, r.num_detections);
}

#[test]
fn eval_from_checkpoint_with_and_without_nms() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, run_dir) = (tmp.path().join("data"), tmp.path().join("run"));
    small_data(&data, "1.0", "4");
    tiny_train(&data, &run_dir, &["--epochs", "2"]);
    let ckpt = run_dir.join("checkpoint.bin");
    let (with, without) = (tmp.path().join("nms"), tmp.path().join("raw"));
    ok(&["eval", "--checkpoint", p(&ckpt), "--data", p(&data), "--out", p(&with)]);
    ok(&["eval", "--checkpoint", p(&ckpt), "--data", p(&data), "--out", p(&without), "--no-nms"]);
    let a = ReportFile::load(&with.join("report.json")).unwrap();
    let b = ReportFile::load(&without.join("report.json")).unwrap();
    assert!(a.inference.unwrap().nms.is_some());
    assert!(b.inference.unwrap().nms.is_none());
    assert_eq!(a.num_ground_truth, b.num_ground_truth);
    for r in [&a, &b] {
        assert!(r.map_at(2).unwrap() >= r.map_at(1).unwrap());
    }

    let infer_dir = tmp.path().join("infer");
    ok(&["infer", "--checkpoint", p(&ckpt), "--data", p(&data), "--out", p(&infer_dir)]);
    let dets = spotmatch::detections::read(&infer_dir.join("detections.csv")).unwrap();
    assert_eq!(dets.len(), a.num_detections);
}

#[test]
fn rerun_reproduces_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, run_dir) = (tmp.path().join("data"), tmp.path().join("run"));
    small_data(&data, "2.0", "9");
    tiny_train(&data, &run_dir, &["--epochs", "2", "--matching", "time-only"]);
    let eval_dir = tmp.path().join("eval");
    ok(&["eval", "--checkpoint", p(&run_dir.join("checkpoint.bin")), "--data", p(&data), "--out", p(&eval_dir)]);
    for (dir, command) in [(&data, "generate"), (&run_dir, "train"), (&eval_dir, "eval")] {
        let again = tmp.path().join(format!("again-{command}"));
        ok(&["rerun", "--manifest", p(&RunManifest::path(dir, command)), "--out", p(&again)]);
        assert_eq!(files(dir), files(&again), "{command}");
        assert_eq!(manifest(&again, command).config["out"], Value::from(p(&again)));
    }
}

#[test]
fn output_root_comes_from_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let out = bin()
        .env("SPOTMATCH_OUT", tmp.path())
        .args(["generate", "--train-clips", "1", "--val-clips", "1", "--test-clips", "1"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(RunManifest::path(tmp.path(), "generate").exists());
}

fn error_line(out: &Output) -> String {
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr.clone()).unwrap();
    assert_eq!(err.lines().count(), 1, "{err}");
    err.trim_end().to_owned()
}

#[test]
fn failures_are_single_classified_lines() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope");
    let line = error_line(&run(&["train", "--data", p(&missing), "--out", p(tmp.path())]));
    assert!(line.starts_with("error[missing-input]: "), "{line}");

    let line = error_line(&run(&["eval", "--out", p(tmp.path())]));
    assert!(line.starts_with("error[missing-input]: "), "{line}");

    let line = error_line(&run(&["generate", "--out", p(tmp.path()), "--sigma=-1"]));
    assert!(line.starts_with("error[config]: "), "{line}");

    let line = error_line(&run(&["generate", "--out", p(tmp.path()), "--max-events", "40"]));
    assert!(line.starts_with("error[invalid]: "), "{line}");

    let line = error_line(&run(&["train", "--matching", "sometimes"]));
    assert!(line.starts_with("error[usage]: "), "{line}");

    let line = error_line(&run(&["analyze", "offsets", "--log", p(&missing), "--out", p(tmp.path())]));
    assert!(line.starts_with("error[missing-input]: "), "{line}");
}

#[test]
fn inputs_are_not_modified() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    small_data(&data, "1.0", "6");
    let before = files(&data);
    tiny_train(&data, &tmp.path().join("run"), &["--epochs", "2"]);
    assert_eq!(files(&data), before);
}
