//! Query-based spotting transformer at desk scale.
//!
//! Frame features are embedded, passed through a pre-norm self-attention
//! encoder, then attended by `queries` learned embeddings in a decoder whose
//! attention queries carry the sinusoidal encoding of each query's reference
//! time. Every decoder layer feeds shared class and time heads.

mod forward;
mod layout;

pub use forward::{forward_on_tape, TapeOutputs};
pub use layout::ParamGroup;

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::matcher::Prediction;
use crate::math;
use crate::tensor::{Tape, Tensor, Var};
use layout::{Init, Layout};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub feature_dim: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub queries: usize,
    pub frames: usize,
    pub ffn_dim: usize,
    pub num_classes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            feature_dim: 8,
            model_dim: 32,
            heads: 2,
            encoder_layers: 2,
            decoder_layers: 2,
            queries: 16,
            frames: 64,
            ffn_dim: 64,
            num_classes: 4,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("feature_dim", self.feature_dim),
            ("model_dim", self.model_dim),
            ("heads", self.heads),
            ("decoder_layers", self.decoder_layers),
            ("queries", self.queries),
            ("ffn_dim", self.ffn_dim),
            ("num_classes", self.num_classes),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(invalid(format!("{name} must be positive")));
        }
        if self.model_dim % 2 != 0 {
            return Err(invalid(format!("model_dim must be even, got {}", self.model_dim)));
        }
        if self.model_dim % self.heads != 0 {
            return Err(invalid(format!(
                "model_dim {} is not divisible by {} heads",
                self.model_dim, self.heads
            )));
        }
        if self.frames < 2 {
            return Err(invalid("frames must be at least 2"));
        }
        Ok(())
    }
}

/// A named parameter tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub group: ParamGroup,
    pub value: Tensor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub params: Vec<Param>,
}

impl ModelParams {
    /// Uniform `±1/√fan_in` initialisation; norm gains start at one and
    /// norm shifts at zero.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (_, specs) = Layout::build(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = specs
            .into_iter()
            .map(|s| {
                let n: usize = s.shape.iter().product();
                let data = match s.init {
                    Init::Uniform(b) => (0..n).map(|_| rng.random_range(-b..=b)).collect(),
                    Init::Constant(c) => alloc::vec![c; n],
                };
                Param { name: s.name, group: s.group, value: Tensor::from_parts(s.shape, data) }
            })
            .collect();
        Ok(Self { config, params })
    }

    /// Rebuilds from named tensors, checking names and shapes against the
    /// configuration.
    pub fn from_named(config: ModelConfig, tensors: Vec<(String, Tensor)>) -> Result<Self> {
        config.validate()?;
        let (_, specs) = Layout::build(&config);
        if specs.len() != tensors.len() {
            return Err(invalid(format!(
                "expected {} parameter tensors, got {}",
                specs.len(),
                tensors.len()
            )));
        }
        let params = specs
            .into_iter()
            .zip(tensors)
            .map(|(s, (name, value))| {
                if s.name != name || s.shape != value.shape() {
                    return Err(invalid(format!(
                        "parameter {name} {:?} does not match {} {:?}",
                        value.shape(),
                        s.name,
                        s.shape
                    )));
                }
                Ok(Param { name, group: s.group, value })
            })
            .collect::<Result<_>>()?;
        Ok(Self { config, params })
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.iter_mut().find(|p| p.name == name).map(|p| &mut p.value)
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.is_finite())
    }

    /// Records every parameter on `tape`, as differentiable leaves or as
    /// constants.
    pub fn record(&self, tape: &mut Tape, differentiable: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| {
                if differentiable {
                    tape.leaf(p.value.clone())
                } else {
                    tape.constant(p.value.clone())
                }
            })
            .collect()
    }
}

/// `frames × dim` table whose row `t` holds `sin(t·ω_k)` and `cos(t·ω_k)`
/// in columns `2k` and `2k+1`, with `ω_k = 1/10000^(2k/dim)`.
pub fn sinusoidal_encoding(frames: usize, dim: usize) -> Result<Tensor> {
    positional_rows(0, frames, dim)
}

/// Encoding rows for positions `first .. first + count`.
pub(crate) fn positional_rows(first: usize, count: usize, dim: usize) -> Result<Tensor> {
    if dim == 0 || dim % 2 != 0 {
        return Err(invalid(format!("encoding width must be even and positive, got {dim}")));
    }
    if count == 0 {
        return Err(invalid("encoding needs at least one row"));
    }
    let freqs = math::sinusoid_frequencies(dim);
    let mut data = Vec::with_capacity(count * dim);
    for t in first..first + count {
        for w in &freqs {
            data.push(math::sin(t as f64 * w));
            data.push(math::cos(t as f64 * w));
        }
    }
    Tensor::new(alloc::vec![count, dim], data)
}

/// Positional rows of frames `1..=frames`.
pub fn frame_positions(frames: usize, dim: usize) -> Result<Tensor> {
    positional_rows(1, frames, dim)
}

fn check_features(params: &ModelParams, features: &Tensor) -> Result<()> {
    let cfg = &params.config;
    match features.dims2() {
        Some((t, d)) if t == cfg.frames && d == cfg.feature_dim => Ok(()),
        _ => Err(crate::error::Error::Shape {
            op: "model",
            detail: format!(
                "features {:?} for a model of {} frames x {} features",
                features.shape(),
                cfg.frames,
                cfg.feature_dim
            ),
        }),
    }
}

/// Encoder output (`frames × model_dim`) for one clip.
pub fn encode(features: &Tensor, params: &ModelParams) -> Result<Tensor> {
    check_features(params, features)?;
    let positions = frame_positions(params.config.frames, params.config.model_dim)?;
    encode_with_positions(features, &positions, params)
}

/// Encoder output with an explicit positional table (one row per frame).
pub fn encode_with_positions(features: &Tensor, positions: &Tensor, params: &ModelParams) -> Result<Tensor> {
    let mut tape = Tape::new();
    let vars = params.record(&mut tape, false);
    let ctx = forward::Ctx::new(&params.config, &vars);
    let x = tape.constant(features.clone());
    let pos = tape.constant(positions.clone());
    let out = ctx.encode(&mut tape, x, pos)?;
    Ok(tape.value(out).clone())
}

/// Reference logits `r_i = f_ref(q_i)`, one per query.
pub fn reference_times(params: &ModelParams) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let vars = params.record(&mut tape, false);
    let ctx = forward::Ctx::new(&params.config, &vars);
    let r = ctx.references(&mut tape)?;
    Ok(tape.value(r).data().to_vec())
}

/// Decoder embeddings (`queries × model_dim`), one set per decoder layer.
pub fn decode(encoded: &Tensor, params: &ModelParams) -> Result<Vec<Tensor>> {
    let cfg = &params.config;
    if encoded.dims2() != Some((cfg.frames, cfg.model_dim)) {
        return Err(crate::error::Error::Shape {
            op: "decode",
            detail: format!("encoded {:?}, expected [{}, {}]", encoded.shape(), cfg.frames, cfg.model_dim),
        });
    }
    let mut tape = Tape::new();
    let vars = params.record(&mut tape, false);
    let ctx = forward::Ctx::new(cfg, &vars);
    let enc = tape.constant(encoded.clone());
    let pos = tape.constant(frame_positions(cfg.frames, cfg.model_dim)?);
    let refs = ctx.references(&mut tape)?;
    let layers = ctx.decode(&mut tape, enc, pos, refs)?;
    Ok(layers.into_iter().map(|v| tape.value(v).clone()).collect())
}

/// Class scores `σ(f_class(h))` and times `σ(f_time(h) + r)` per query.
pub fn predict_heads(embeddings: &Tensor, refs: &[f64], params: &ModelParams) -> Result<Vec<Prediction>> {
    let cfg = &params.config;
    if embeddings.dims2() != Some((refs.len(), cfg.model_dim)) {
        return Err(crate::error::Error::Shape {
            op: "predict_heads",
            detail: format!("embeddings {:?} with {} references", embeddings.shape(), refs.len()),
        });
    }
    let mut tape = Tape::new();
    let vars = params.record(&mut tape, false);
    let ctx = forward::Ctx::new(cfg, &vars);
    let h = tape.constant(embeddings.clone());
    let r = tape.constant(Tensor::new(alloc::vec![refs.len(), 1], refs.to_vec())?);
    let (class_logits, time_logits) = ctx.heads(&mut tape, h, r)?;
    Ok(predictions_from_logits(tape.value(class_logits), tape.value(time_logits)))
}

pub(crate) fn predictions_from_logits(class_logits: &Tensor, time_logits: &Tensor) -> Vec<Prediction> {
    (0..class_logits.rows())
        .map(|i| Prediction {
            scores: class_logits.row(i).iter().map(|&z| math::sigmoid(z)).collect(),
            time: math::sigmoid(time_logits.data()[i]),
        })
        .collect()
}

/// Predictions of every decoder layer, last layer last.
pub fn forward(features: &Tensor, params: &ModelParams) -> Result<Vec<Vec<Prediction>>> {
    check_features(params, features)?;
    let mut tape = Tape::new();
    let vars = params.record(&mut tape, false);
    let x = tape.constant(features.clone());
    let out = forward_on_tape(&mut tape, &params.config, &vars, x)?;
    Ok(out.predictions(&tape))
}
