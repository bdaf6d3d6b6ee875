//! Optimisation loop: windowed sampling, per-layer label assignment, AdamW
//! with a warmup + cosine schedule, and per-epoch diagnostics.

mod optim;

pub use optim::AdamW;

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Clip, Dataset, Label};
use crate::error::{invalid, Error, Result};
use crate::eval::{evaluate_dataset, frame_time, InferenceConfig};
use crate::loss::{layer_loss, loss_on_tape, LayerLoss, LossBreakdown};
use crate::matcher::{assign, GroundTruthLabel, MatchingMode, PaddedGroundTruthSet};
use crate::model::{forward_on_tape, ModelConfig, ModelParams, ParamGroup, TapeOutputs};
use crate::synth::{dilate_labels, mixup, stream_rng};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub batch_size: usize,
    /// Learning rate of the frame embedder.
    pub lr_embedder: f64,
    /// Learning rate of everything else.
    pub lr_transformer: f64,
    pub weight_decay: f64,
    pub warmup_epochs: usize,
    pub lambda_time: f64,
    pub matching: MatchingMode,
    /// Mixup with `Beta(α, α)` weights when set.
    pub mixup_alpha: Option<f64>,
    pub dilation: bool,
    /// Train every decoder layer, not only the last.
    pub aux_losses: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            steps_per_epoch: 100,
            batch_size: 8,
            lr_embedder: 1e-3,
            lr_transformer: 1e-4,
            weight_decay: 1e-4,
            warmup_epochs: 3,
            lambda_time: 10.0,
            matching: MatchingMode::Dynamic,
            mixup_alpha: None,
            dilation: false,
            aux_losses: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs > 0 && self.warmup_epochs >= self.epochs {
            return Err(invalid(format!(
                "warmup of {} epochs must be shorter than {} epochs",
                self.warmup_epochs, self.epochs
            )));
        }
        if self.steps_per_epoch == 0 || self.batch_size == 0 {
            return Err(invalid("steps per epoch and batch size must be positive"));
        }
        if !(self.lr_embedder > 0.0 && self.lr_transformer > 0.0) {
            return Err(invalid("learning rates must be positive"));
        }
        if !(self.weight_decay >= 0.0) || !(self.lambda_time >= 0.0) {
            return Err(invalid("weight decay and lambda_time must be nonnegative"));
        }
        if let Some(a) = self.mixup_alpha {
            if !(a > 0.0) {
                return Err(invalid(format!("mixup alpha must be positive, got {a}")));
            }
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize, base: f64) -> f64 {
        lr_at(epoch, base, self.warmup_epochs, self.epochs)
    }
}

/// Linear warmup to `base` over `warmup` epochs, then cosine decay.
pub fn lr_at(epoch: usize, base: f64, warmup: usize, epochs: usize) -> f64 {
    if epoch < warmup {
        return base * (epoch + 1) as f64 / warmup as f64;
    }
    let progress = (epoch - warmup) as f64 / (epochs - warmup) as f64;
    base * 0.5 * (1.0 + libm::cos(core::f64::consts::PI * progress))
}

/// Time-cost weight for a label-noise level on distinct-signature data:
/// 8, 4, 2 and 1 for σ = 0.5, 1, 1.5 and 2. Ambiguous data uses 8 throughout.
pub fn lambda_for_sigma(sigma: f64, distinct: bool) -> Option<f64> {
    const TABLE: [(f64, f64); 4] = [(0.5, 8.0), (1.0, 4.0), (1.5, 2.0), (2.0, 1.0)];
    let (_, lambda) = TABLE.iter().find(|(s, _)| (s - sigma).abs() < 1e-9)?;
    Some(if distinct { *lambda } else { 8.0 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaMap {
    pub delta: usize,
    pub map: f64,
}

/// Diagnostics of one epoch; losses are means over its steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr_embedder: f64,
    pub lr_transformer: f64,
    pub class_loss: f64,
    pub time_loss: f64,
    pub total_loss: f64,
    /// Mean `|predicted frame - training label frame|` of final-layer matches.
    pub offset_noisy: Option<f64>,
    /// Same against the precise labels, when the training set carries them.
    pub offset_precise: Option<f64>,
    pub val_map: Vec<DeltaMap>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub params: ModelParams,
    pub log: TrainLog,
}

/// A training window with its labels; `precise[i]` is the clean frame of
/// `labels[i]` relative to the window start.
#[derive(Debug, Clone)]
struct Sample {
    features: Tensor,
    labels: Vec<Label>,
    precise: Option<Vec<i64>>,
}

fn sample_window(clip: &Clip, frames: usize, rng: &mut ChaCha8Rng) -> Result<Sample> {
    if clip.frames() < frames {
        return Err(invalid(format!(
            "clip of {} frames is shorter than the model window of {frames}",
            clip.frames()
        )));
    }
    let start = rng.random_range(0..=clip.frames() - frames);
    let width = clip.feature_dim();
    let features = Tensor::new(
        vec![frames, width],
        clip.features.data()[start * width..(start + frames) * width].to_vec(),
    )?;
    let paired = clip.precise.as_ref().filter(|p| p.len() == clip.labels.len());
    let mut labels = Vec::new();
    let mut precise = Vec::new();
    for (i, l) in clip.labels.iter().enumerate() {
        if l.frame > start && l.frame <= start + frames {
            labels.push(Label::new(l.frame - start, l.classes.clone()));
            if let Some(p) = paired {
                precise.push(p[i].frame as i64 - start as i64);
            }
        }
    }
    Ok(Sample { features, labels, precise: paired.map(|_| precise) })
}

struct Sampler<'a> {
    data: &'a Dataset,
    frames: usize,
    cfg: &'a TrainConfig,
    rng: ChaCha8Rng,
}

impl Sampler<'_> {
    fn labelled(&mut self) -> Result<Sample> {
        for _ in 0..256 {
            let i = self.rng.random_range(0..self.data.len());
            let s = sample_window(&self.data.clips[i], self.frames, &mut self.rng)?;
            if !s.labels.is_empty() {
                return Ok(s);
            }
        }
        Err(Error::NoLabels)
    }

    fn next(&mut self) -> Result<Sample> {
        let mut s = self.labelled()?;
        if self.cfg.dilation {
            s.labels = dilate_labels(&s.labels, self.frames);
            s.precise = None;
        }
        if let Some(alpha) = self.cfg.mixup_alpha {
            let other = self.labelled()?;
            let a = Clip { features: s.features, labels: s.labels, precise: None };
            let b = Clip { features: other.features, labels: other.labels, precise: None };
            let (mut mixed, _) = mixup(&a, &b, alpha, &mut self.rng)?;
            if self.cfg.dilation {
                mixed.labels = dilate_labels(&mixed.labels, self.frames);
            }
            s = Sample { features: mixed.features, labels: mixed.labels, precise: None };
        }
        Ok(s)
    }
}

#[derive(Default)]
struct EpochStats {
    losses: Vec<LossBreakdown>,
    noisy: Vec<f64>,
    precise: Vec<f64>,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn diverged(e: Error, epoch: usize, step: usize) -> Error {
    match e {
        Error::NonFinite { .. } => Error::Diverged { epoch, step },
        other => other,
    }
}

/// Trains a freshly initialised model (seeded by `cfg.seed`).
pub fn train(
    model: ModelConfig,
    data: &Dataset,
    val: Option<&Dataset>,
    cfg: &TrainConfig,
    on_epoch: impl FnMut(&ModelParams, &EpochRecord),
) -> Result<Trained> {
    let params = ModelParams::init(model, cfg.seed)?;
    train_from(params, data, val, cfg, on_epoch)
}

/// Trains `params` in place of a fresh initialisation.
pub fn train_from(
    mut params: ModelParams,
    data: &Dataset,
    val: Option<&Dataset>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&ModelParams, &EpochRecord),
) -> Result<Trained> {
    cfg.validate()?;
    params.config.validate()?;
    let mut log = TrainLog::default();
    if cfg.epochs == 0 {
        return Ok(Trained { params, log });
    }
    if data.is_empty() {
        return Err(invalid("training set is empty"));
    }
    if data.num_classes != params.config.num_classes || data.feature_dim() != Some(params.config.feature_dim) {
        return Err(invalid(format!(
            "dataset of {} classes x {:?} features for a model of {} classes x {} features",
            data.num_classes,
            data.feature_dim(),
            params.config.num_classes,
            params.config.feature_dim
        )));
    }
    let mut sampler = Sampler {
        data,
        frames: params.config.frames,
        cfg,
        rng: stream_rng(cfg.seed, 0x7241, 0),
    };
    let mut opt = AdamW::new(&params);
    let names: Vec<alloc::string::String> = params.params.iter().map(|p| p.name.clone()).collect();
    let name_refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
    for epoch in 0..cfg.epochs {
        let lr_e = cfg.lr_at(epoch, cfg.lr_embedder);
        let lr_t = cfg.lr_at(epoch, cfg.lr_transformer);
        let lrs: Vec<f64> = params
            .params
            .iter()
            .map(|p| match p.group {
                ParamGroup::Embedder => lr_e,
                ParamGroup::Transformer => lr_t,
            })
            .collect();
        let mut stats = EpochStats::default();
        for step in 0..cfg.steps_per_epoch {
            let batch = (0..cfg.batch_size).map(|_| sampler.next()).collect::<Result<Vec<_>>>()?;
            let grads = train_step(&params, &batch, cfg, &mut stats).map_err(|e| diverged(e, epoch, step))?;
            let mut values: Vec<&mut Tensor> = params.params.iter_mut().map(|p| &mut p.value).collect();
            opt.step(&mut values, &grads, &lrs, cfg.weight_decay, &name_refs)?;
        }
        let n = stats.losses.len() as f64;
        let val_map = match val {
            Some(v) => evaluate_dataset(&params, v, &InferenceConfig::default(), &[1, 2])?
                .deltas
                .iter()
                .map(|d| DeltaMap { delta: d.delta, map: d.map })
                .collect(),
            None => Vec::new(),
        };
        let record = EpochRecord {
            epoch,
            lr_embedder: lr_e,
            lr_transformer: lr_t,
            class_loss: stats.losses.iter().map(|l| l.class_loss).sum::<f64>() / n,
            time_loss: stats.losses.iter().map(|l| l.time_loss).sum::<f64>() / n,
            total_loss: stats.losses.iter().map(|l| l.total).sum::<f64>() / n,
            offset_noisy: mean(&stats.noisy),
            offset_precise: mean(&stats.precise),
            val_map,
        };
        on_epoch(&params, &record);
        log.records.push(record);
    }
    Ok(Trained { params, log })
}

/// Forward, assignment, loss and backward over one batch; returns the
/// gradient of the batch-mean loss for every parameter.
fn train_step(params: &ModelParams, batch: &[Sample], cfg: &TrainConfig, stats: &mut EpochStats) -> Result<Vec<Tensor>> {
    let model = &params.config;
    let mut tape = Tape::new();
    let vars = params.record(&mut tape, true);
    let mut batch_loss: Option<Var> = None;
    let mut step_layers: Vec<LayerLoss> = Vec::new();
    for sample in batch {
        let x = tape.constant(sample.features.clone());
        let mut out = forward_on_tape(&mut tape, model, &vars, x)?;
        if !cfg.aux_losses {
            out = TapeOutputs {
                class_logits: vec![*out.class_logits.last().expect("decoder layer")],
                time_logits: vec![*out.time_logits.last().expect("decoder layer")],
                references: out.references,
            };
        }
        let layers = out.predictions(&tape);
        let gts = sample
            .labels
            .iter()
            .map(|l| GroundTruthLabel::from_label(l, model.frames))
            .collect::<Result<Vec<_>>>()?;
        let padded = PaddedGroundTruthSet::new(&gts, model.queries, model.frames)?;
        let mut assignments = Vec::with_capacity(layers.len());
        let mut parts = Vec::with_capacity(layers.len());
        for preds in &layers {
            let a = assign(cfg.matching, &padded, preds, cfg.lambda_time)?;
            parts.push(layer_loss(&a, &padded, preds, cfg.lambda_time)?);
            assignments.push(a);
        }
        let last = assignments.last().expect("decoder layer");
        let preds = layers.last().expect("decoder layer");
        for pair in &last.pairs {
            stats.noisy.push(pair.frame_offset.unsigned_abs() as f64);
            if let Some(precise) = &sample.precise {
                let predicted = frame_time(preds[pair.prediction].time, model.frames) as i64;
                stats.precise.push((predicted - precise[pair.gt]).unsigned_abs() as f64);
            }
        }
        let loss = loss_on_tape(&mut tape, &out, &padded, &assignments, cfg.lambda_time)?;
        batch_loss = Some(match batch_loss {
            Some(b) => tape.add(b, loss)?,
            None => loss,
        });
        let summed = LossBreakdown::from_layers(parts);
        step_layers.push(LayerLoss {
            class_loss: summed.class_loss,
            time_loss: summed.time_loss,
            total: summed.total,
        });
    }
    let total = tape.scale(batch_loss.expect("nonempty batch"), 1.0 / batch.len() as f64)?;
    let grads = tape.backward(total)?;
    let b = step_layers.len() as f64;
    stats.losses.push(LossBreakdown {
        class_loss: step_layers.iter().map(|l| l.class_loss).sum::<f64>() / b,
        time_loss: step_layers.iter().map(|l| l.time_loss).sum::<f64>() / b,
        total: step_layers.iter().map(|l| l.total).sum::<f64>() / b,
        layers: Vec::new(),
    });
    Ok(vars.iter().map(|&v| grads.wrt(&tape, v)).collect())
}
