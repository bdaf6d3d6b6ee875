//! Command-line workflows. Every command writes `<out>/<name>.manifest.json`
//! from which `rerun` reproduces its outputs.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use spotmatch_core::eval::{
    detect_dataset, evaluate, ground_truth_events, infer_video, map_at, score_gaps, InferenceConfig,
};
use spotmatch_core::synth::{generate, perturb_dataset, Split, SynthConfig};
use spotmatch_core::train::{train_from, TrainConfig};
use spotmatch_core::{Dataset, MatchingMode, ModelConfig, ModelParams};

use crate::dataset::{load_split, save_split, LabelFile};
use crate::report::{read_log, LogWriter, ReportFile, RunManifest, ARTIFACT_VERSION};
use crate::{checkpoint, detections, Error, Result};

#[derive(Debug, Parser)]
#[command(name = "spotmatch", version, about = "Event spotting with dynamic label assignment")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic train/val/test splits.
    Generate(GenerateArgs),
    /// Train a model on a generated dataset.
    Train(TrainArgs),
    /// Write detections for a dataset split.
    Infer(InferArgs),
    /// Score detections against ground truth.
    Eval(EvalArgs),
    /// Emit CSV series for plotting.
    #[command(subcommand)]
    Analyze(Analyze),
    /// Re-run a command from its manifest.
    Rerun(RerunArgs),
}

#[derive(Debug, Subcommand)]
pub enum Analyze {
    /// Mean label offsets per epoch from a training log.
    Offsets(OffsetsArgs),
    /// mAP at each tolerance from 0 to `--max-delta`, per checkpoint.
    MapCurve(MapCurveArgs),
    /// Top-two score gap around isolated events, per class.
    ScoreGap(ScoreGapArgs),
}

fn parse_matching(s: &str) -> std::result::Result<MatchingMode, String> {
    s.parse().map_err(|_| format!("expected static, time-only or dynamic, got {s:?}"))
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct GenerateArgs {
    /// Output directory.
    #[arg(long, env = "SPOTMATCH_OUT", default_value = "runs")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Standard deviation, in frames, of the noise added to training labels.
    #[arg(long, default_value_t = 0.0)]
    pub sigma: f64,
    #[arg(long, default_value_t = 200)]
    pub train_clips: usize,
    #[arg(long, default_value_t = 20)]
    pub val_clips: usize,
    #[arg(long, default_value_t = 50)]
    pub test_clips: usize,
    #[arg(long, default_value_t = 128)]
    pub frames: usize,
    #[arg(long, default_value_t = 4)]
    pub classes: usize,
    #[arg(long, default_value_t = 8)]
    pub feature_dim: usize,
    #[arg(long, default_value_t = 2)]
    pub min_events: usize,
    #[arg(long, default_value_t = 6)]
    pub max_events: usize,
    #[arg(long, default_value_t = 3)]
    pub signature_width: usize,
    #[arg(long, default_value_t = 3.0)]
    pub signature_gain: f64,
    #[arg(long, default_value_t = 1.0)]
    pub noise_std: f64,
    #[arg(long, default_value_t = 8)]
    pub min_separation: usize,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    /// Dataset directory written by `generate`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, env = "SPOTMATCH_OUT", default_value = "runs")]
    pub out: PathBuf,
    #[arg(long, default_value = "train")]
    pub split: String,
    /// Split scored after every epoch; `none` disables it.
    #[arg(long, default_value = "val")]
    pub val_split: String,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 100)]
    pub steps: usize,
    #[arg(long, default_value_t = 8)]
    pub batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr_embedder: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub lr_transformer: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 3)]
    pub warmup: usize,
    #[arg(long, default_value_t = 10.0)]
    pub lambda_time: f64,
    /// static, time-only or dynamic.
    #[arg(long, default_value = "dynamic", value_parser = parse_matching)]
    pub matching: MatchingMode,
    #[arg(long)]
    pub mixup_alpha: Option<f64>,
    #[arg(long)]
    pub dilation: bool,
    /// Train only the last decoder layer.
    #[arg(long)]
    pub no_aux: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of queries.
    #[arg(long, default_value_t = 16)]
    pub nq: usize,
    /// Model window length in frames.
    #[arg(long, default_value_t = 64)]
    pub window: usize,
    #[arg(long, default_value_t = 32)]
    pub model_dim: usize,
    #[arg(long, default_value_t = 2)]
    pub heads: usize,
    #[arg(long, default_value_t = 2)]
    pub encoder_layers: usize,
    #[arg(long, default_value_t = 2)]
    pub decoder_layers: usize,
    #[arg(long, default_value_t = 64)]
    pub ffn_dim: usize,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct PostArgs {
    /// Skip soft NMS.
    #[arg(long)]
    pub no_nms: bool,
    #[arg(long, default_value_t = 0.01)]
    pub threshold: f64,
}

impl PostArgs {
    fn config(&self) -> InferenceConfig {
        let nms = (!self.no_nms).then_some(InferenceConfig::default().nms).flatten();
        InferenceConfig { threshold: self.threshold, nms }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long, env = "SPOTMATCH_OUT", default_value = "runs")]
    pub out: PathBuf,
    #[command(flatten)]
    pub post: PostArgs,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct EvalArgs {
    /// Model to run; needs `--data`.
    #[arg(long, requires = "data", conflicts_with = "detections")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// External detections CSV; needs `--labels`.
    #[arg(long, requires = "labels")]
    pub detections: Option<PathBuf>,
    /// Label file JSON for external detections.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Tolerance in frames; repeatable.
    #[arg(long = "delta", default_values_t = [1, 2])]
    pub deltas: Vec<usize>,
    #[arg(long, env = "SPOTMATCH_OUT", default_value = "runs")]
    pub out: PathBuf,
    #[command(flatten)]
    pub post: PostArgs,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct OffsetsArgs {
    /// `train_log.jsonl` written by `train`.
    #[arg(long)]
    pub log: PathBuf,
    #[arg(long, env = "SPOTMATCH_OUT", default_value = "runs")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct MapCurveArgs {
    /// Repeatable; one curve per checkpoint.
    #[arg(long = "checkpoint", required = true)]
    pub checkpoints: Vec<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long, default_value_t = 8)]
    pub max_delta: usize,
    #[arg(long, env = "SPOTMATCH_OUT", default_value = "runs")]
    pub out: PathBuf,
    #[command(flatten)]
    pub post: PostArgs,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ScoreGapArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long, default_value_t = 1)]
    pub delta: usize,
    #[arg(long, env = "SPOTMATCH_OUT", default_value = "runs")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct RerunArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Write outputs here instead of the recorded directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Inputs, outputs and seeds of one finished command.
struct Run {
    seeds: Vec<u64>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(a) => with_manifest("generate", &a, &a.out, || cmd_generate(&a)),
        Command::Train(a) => with_manifest("train", &a, &a.out, || cmd_train(&a)),
        Command::Infer(a) => with_manifest("infer", &a, &a.out, || cmd_infer(&a)),
        Command::Eval(a) => with_manifest("eval", &a, &a.out, || cmd_eval(&a)),
        Command::Analyze(Analyze::Offsets(a)) => with_manifest("analyze-offsets", &a, &a.out, || cmd_offsets(&a)),
        Command::Analyze(Analyze::MapCurve(a)) => {
            with_manifest("analyze-map-curve", &a, &a.out, || cmd_map_curve(&a))
        }
        Command::Analyze(Analyze::ScoreGap(a)) => {
            with_manifest("analyze-score-gap", &a, &a.out, || cmd_score_gap(&a))
        }
        Command::Rerun(a) => rerun(&a),
    }
}

fn with_manifest<A: Serialize>(name: &str, args: &A, out: &Path, body: impl FnOnce() -> Result<Run>) -> Result<()> {
    let config = serde_json::to_value(args).map_err(|e| Error::Config(e.to_string()))?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let start = Instant::now();
    let run = body()?;
    RunManifest {
        artifact_version: ARTIFACT_VERSION,
        command: name.to_owned(),
        config,
        seeds: run.seeds,
        inputs: run.inputs,
        outputs: run.outputs,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    }
    .save(out)?;
    Ok(())
}

fn rerun(a: &RerunArgs) -> Result<()> {
    let m = RunManifest::load(&a.manifest)?;
    fn args<T: DeserializeOwned>(m: &RunManifest, out: &Option<PathBuf>) -> Result<T> {
        let mut config = m.config.clone();
        if let (Some(out), Some(obj)) = (out, config.as_object_mut()) {
            obj.insert("out".into(), serde_json::json!(out));
        }
        serde_json::from_value(config).map_err(|e| Error::Config(format!("manifest {}: {e}", m.command)))
    }
    let command = match m.command.as_str() {
        "generate" => Command::Generate(args(&m, &a.out)?),
        "train" => Command::Train(args(&m, &a.out)?),
        "infer" => Command::Infer(args(&m, &a.out)?),
        "eval" => Command::Eval(args(&m, &a.out)?),
        "analyze-offsets" => Command::Analyze(Analyze::Offsets(args(&m, &a.out)?)),
        "analyze-map-curve" => Command::Analyze(Analyze::MapCurve(args(&m, &a.out)?)),
        "analyze-score-gap" => Command::Analyze(Analyze::ScoreGap(args(&m, &a.out)?)),
        other => return Err(Error::Config(format!("unknown command {other:?} in manifest"))),
    };
    run(Cli { command })
}

impl GenerateArgs {
    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            frames: self.frames,
            num_classes: self.classes,
            feature_dim: self.feature_dim,
            min_events: self.min_events,
            max_events: self.max_events,
            signature_width: self.signature_width,
            signature_gain: self.signature_gain,
            background_noise_std: self.noise_std,
            min_event_separation: self.min_separation,
            seed: self.seed,
        }
    }
}

fn cmd_generate(a: &GenerateArgs) -> Result<Run> {
    if !(a.sigma >= 0.0 && a.sigma.is_finite()) {
        return Err(Error::Config(format!("sigma must be a nonnegative number, got {}", a.sigma)));
    }
    let synth = a.synth_config();
    synth.validate()?;
    let mut outputs = Vec::new();
    for (split, count) in [(Split::Train, a.train_clips), (Split::Val, a.val_clips), (Split::Test, a.test_clips)] {
        let mut data = generate(&synth, count, split)?;
        if split == Split::Train {
            data = perturb_dataset(&data, a.sigma, a.seed)?;
        }
        let sigma = if split == Split::Train { a.sigma } else { 0.0 };
        save_split(&a.out, split.name(), &data, Some(&synth), sigma)?;
        outputs.push(crate::dataset::manifest_path(&a.out, split.name()));
        outputs.push(crate::dataset::blob_path(&a.out, split.name()));
    }
    Ok(Run { seeds: vec![a.seed], inputs: Vec::new(), outputs })
}

impl TrainArgs {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            steps_per_epoch: self.steps,
            batch_size: self.batch,
            lr_embedder: self.lr_embedder,
            lr_transformer: self.lr_transformer,
            weight_decay: self.weight_decay,
            warmup_epochs: self.warmup,
            lambda_time: self.lambda_time,
            matching: self.matching,
            mixup_alpha: self.mixup_alpha,
            dilation: self.dilation,
            aux_losses: !self.no_aux,
            seed: self.seed,
        }
    }

    pub fn model_config(&self, data: &Dataset) -> ModelConfig {
        ModelConfig {
            feature_dim: data.feature_dim().unwrap_or(0),
            model_dim: self.model_dim,
            heads: self.heads,
            encoder_layers: self.encoder_layers,
            decoder_layers: self.decoder_layers,
            queries: self.nq,
            frames: self.window,
            ffn_dim: self.ffn_dim,
            num_classes: data.num_classes,
        }
    }
}

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const LOG_FILE: &str = "train_log.jsonl";

fn cmd_train(a: &TrainArgs) -> Result<Run> {
    let cfg = a.train_config();
    cfg.validate()?;
    let data = load_split(&a.data, &a.split)?;
    let val = match a.val_split.as_str() {
        "none" => None,
        split => Some(load_split(&a.data, split)?),
    };
    let params = ModelParams::init(a.model_config(&data), a.seed)?;
    let ckpt = a.out.join(CHECKPOINT_FILE);
    checkpoint::save(&ckpt, &params)?;
    let mut outputs = vec![ckpt.clone(), checkpoint::sidecar_path(&ckpt)];
    if a.epochs > 0 {
        let log_path = a.out.join(LOG_FILE);
        let mut log = LogWriter::create(&log_path)?;
        let mut failure = None;
        train_from(params, &data, val.as_ref(), &cfg, |p, record| {
            if failure.is_none() {
                failure = checkpoint::save(&ckpt, p).and_then(|()| log.append(record)).err();
            }
        })?;
        if let Some(e) = failure {
            return Err(e);
        }
        outputs.push(log_path);
    }
    Ok(Run { seeds: vec![a.seed], inputs: vec![a.data.clone()], outputs })
}

fn cmd_infer(a: &InferArgs) -> Result<Run> {
    let params = checkpoint::load(&a.checkpoint)?;
    let data = load_split(&a.data, &a.split)?;
    let dets = detect_dataset(&params, &data, &a.post.config())?;
    let path = a.out.join("detections.csv");
    detections::write(&path, &dets)?;
    Ok(Run { seeds: Vec::new(), inputs: vec![a.checkpoint.clone(), a.data.clone()], outputs: vec![path] })
}

fn cmd_eval(a: &EvalArgs) -> Result<Run> {
    let (dets, gts, num_classes, inference, inputs) = match (&a.checkpoint, &a.data, &a.detections, &a.labels) {
        (Some(ckpt), Some(dir), None, _) => {
            let params = checkpoint::load(ckpt)?;
            let data = load_split(dir, &a.split)?;
            let cfg = a.post.config();
            let dets = detect_dataset(&params, &data, &cfg)?;
            (dets, ground_truth_events(&data), data.num_classes, Some(cfg), vec![ckpt.clone(), dir.clone()])
        }
        (None, _, Some(csv), Some(labels)) => {
            let file = LabelFile::load(labels)?;
            let mut dets = detections::read(csv)?;
            dets.retain(|d| d.score > a.post.threshold);
            (dets, file.events(), file.num_classes, None, vec![csv.clone(), labels.clone()])
        }
        _ => {
            return Err(Error::Missing(
                "eval needs --checkpoint with --data, or --detections with --labels".into(),
            ))
        }
    };
    if a.deltas.is_empty() {
        return Err(Error::Config("at least one --delta is required".into()));
    }
    let report = evaluate(&dets, &gts, &a.deltas, num_classes)?;
    let file = ReportFile::new(report, num_classes, dets.len(), gts.len(), inference);
    let path = a.out.join("report.json");
    file.save(&path)?;
    Ok(Run { seeds: Vec::new(), inputs, outputs: vec![path] })
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let csv_err = |source| Error::Csv { path: path.into(), source };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(&r).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn cmd_offsets(a: &OffsetsArgs) -> Result<Run> {
    let log = read_log(&a.log)?;
    if log.records.is_empty() {
        return Err(Error::Missing(format!("{}: no epochs logged", a.log.display())));
    }
    let path = a.out.join("offsets.csv");
    let rows = log.records.iter().map(|r| {
        vec![r.epoch.to_string(), cell(r.offset_noisy), cell(r.offset_precise), r.total_loss.to_string()]
    });
    write_csv(&path, &["epoch", "offset_noisy", "offset_precise", "total_loss"], rows)?;
    Ok(Run { seeds: Vec::new(), inputs: vec![a.log.clone()], outputs: vec![path] })
}

fn cmd_map_curve(a: &MapCurveArgs) -> Result<Run> {
    let data = load_split(&a.data, &a.split)?;
    let gts = ground_truth_events(&data);
    let mut rows = Vec::new();
    for ckpt in &a.checkpoints {
        let params = checkpoint::load(ckpt)?;
        let dets = detect_dataset(&params, &data, &a.post.config())?;
        for delta in 0..=a.max_delta {
            let r = map_at(&dets, &gts, delta, data.num_classes)?;
            rows.push(vec![ckpt.display().to_string(), delta.to_string(), r.map.to_string()]);
        }
    }
    let path = a.out.join("map_curve.csv");
    write_csv(&path, &["model", "delta", "map"], rows)?;
    let mut inputs = a.checkpoints.clone();
    inputs.push(a.data.clone());
    Ok(Run { seeds: Vec::new(), inputs, outputs: vec![path] })
}

fn cmd_score_gap(a: &ScoreGapArgs) -> Result<Run> {
    let params = checkpoint::load(&a.checkpoint)?;
    let data = load_split(&a.data, &a.split)?;
    let scores = data
        .clips
        .iter()
        .map(|c| infer_video(&params, &c.features))
        .collect::<spotmatch_core::Result<Vec<_>>>()?;
    let gts = ground_truth_events(&data);
    let gaps = score_gaps(&scores, &gts, a.delta, data.num_classes)?;
    let path = a.out.join("score_gap.csv");
    let rows = gaps.iter().enumerate().map(|(c, g)| vec![c.to_string(), cell(*g)]);
    write_csv(&path, &["class", "gap"], rows)?;
    Ok(Run { seeds: Vec::new(), inputs: vec![a.checkpoint.clone(), a.data.clone()], outputs: vec![path] })
}
