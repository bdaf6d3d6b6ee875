use alloc::vec::Vec;

use super::layout::{Attention, Layout, Linear, Norm};
use super::{predictions_from_logits, ModelConfig};
use crate::error::Result;
use crate::matcher::Prediction;
use crate::tensor::{Tape, Var};

/// Head outputs recorded on a tape, one entry per decoder layer.
#[derive(Debug, Clone)]
pub struct TapeOutputs {
    /// `queries × num_classes` pre-sigmoid class scores.
    pub class_logits: Vec<Var>,
    /// `queries × 1` pre-sigmoid times (reference logits included).
    pub time_logits: Vec<Var>,
    /// `queries × 1` reference logits.
    pub references: Var,
}

impl TapeOutputs {
    pub fn predictions(&self, tape: &Tape) -> Vec<Vec<Prediction>> {
        self.class_logits
            .iter()
            .zip(&self.time_logits)
            .map(|(&c, &t)| predictions_from_logits(tape.value(c), tape.value(t)))
            .collect()
    }
}

/// Full forward pass for one clip. `params` are the recorded parameters in
/// layout order and `features` is a `frames × feature_dim` value.
pub fn forward_on_tape(tape: &mut Tape, cfg: &ModelConfig, params: &[Var], features: Var) -> Result<TapeOutputs> {
    let ctx = Ctx::new(cfg, params);
    let positions = tape.constant(super::frame_positions(cfg.frames, cfg.model_dim)?);
    ctx.run(tape, features, positions)
}

pub(crate) struct Ctx<'a> {
    cfg: &'a ModelConfig,
    layout: Layout,
    params: &'a [Var],
}

impl<'a> Ctx<'a> {
    pub fn new(cfg: &'a ModelConfig, params: &'a [Var]) -> Self {
        Self { cfg, layout: Layout::build(cfg).0, params }
    }

    pub fn run(&self, tape: &mut Tape, features: Var, positions: Var) -> Result<TapeOutputs> {
        let enc = self.encode(tape, features, positions)?;
        let references = self.references(tape)?;
        let layers = self.decode(tape, enc, positions, references)?;
        let mut class_logits = Vec::with_capacity(layers.len());
        let mut time_logits = Vec::with_capacity(layers.len());
        for h in layers {
            let (c, t) = self.heads(tape, h, references)?;
            class_logits.push(c);
            time_logits.push(t);
        }
        Ok(TapeOutputs { class_logits, time_logits, references })
    }

    fn linear(&self, tape: &mut Tape, x: Var, l: Linear) -> Result<Var> {
        let y = tape.matmul(x, self.params[l.w])?;
        tape.add_row(y, self.params[l.b])
    }

    fn norm(&self, tape: &mut Tape, x: Var, n: Norm) -> Result<Var> {
        let y = tape.layer_norm(x)?;
        let y = tape.mul_row(y, self.params[n.gain])?;
        tape.add_row(y, self.params[n.shift])
    }

    fn ffn(&self, tape: &mut Tape, x: Var, l1: Linear, l2: Linear) -> Result<Var> {
        let h = self.linear(tape, x, l1)?;
        let h = tape.relu(h)?;
        self.linear(tape, h, l2)
    }

    fn attention(&self, tape: &mut Tape, q_in: Var, k_in: Var, v_in: Var, a: Attention) -> Result<Var> {
        let q = self.linear(tape, q_in, a.q)?;
        let k = self.linear(tape, k_in, a.k)?;
        let v = self.linear(tape, v_in, a.v)?;
        let heads = self.cfg.heads;
        let width = self.cfg.model_dim / heads;
        let scale = 1.0 / libm::sqrt(width as f64);
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let (qh, kh, vh) = if heads == 1 {
                (q, k, v)
            } else {
                (
                    tape.slice_cols(q, h * width, width)?,
                    tape.slice_cols(k, h * width, width)?,
                    tape.slice_cols(v, h * width, width)?,
                )
            };
            let s = tape.matmul_nt(qh, kh)?;
            let s = tape.scale(s, scale)?;
            let w = tape.softmax_rows(s)?;
            outs.push(tape.matmul(w, vh)?);
        }
        let joined = if heads == 1 { outs[0] } else { tape.concat_cols(&outs)? };
        self.linear(tape, joined, a.o)
    }

    /// Embeds frames and applies the encoder. `positions` is added to the
    /// attention queries and keys only.
    pub fn encode(&self, tape: &mut Tape, features: Var, positions: Var) -> Result<Var> {
        let mut h = self.linear(tape, features, self.layout.embed)?;
        for layer in &self.layout.encoder {
            let n = self.norm(tape, h, layer.norm1)?;
            let qk = tape.add(n, positions)?;
            let a = self.attention(tape, qk, qk, n, layer.attn)?;
            h = tape.add(h, a)?;
            let n = self.norm(tape, h, layer.norm2)?;
            let f = self.ffn(tape, n, layer.ffn1, layer.ffn2)?;
            h = tape.add(h, f)?;
        }
        Ok(h)
    }

    pub fn references(&self, tape: &mut Tape) -> Result<Var> {
        let q = self.params[self.layout.queries];
        let h = self.linear(tape, q, self.layout.ref1)?;
        let h = tape.relu(h)?;
        self.linear(tape, h, self.layout.ref2)
    }

    /// Decoder embeddings after each layer (output-normalised).
    pub fn decode(&self, tape: &mut Tape, encoded: Var, positions: Var, references: Var) -> Result<Vec<Var>> {
        let memory = self.norm(tape, encoded, self.layout.memory_norm)?;
        let keys = tape.add(memory, positions)?;
        let anchors = tape.sigmoid(references)?;
        let query_pos = tape.sinusoid(anchors, self.cfg.frames as f64, self.cfg.model_dim)?;
        let mut tgt = self.params[self.layout.queries];
        let mut outputs = Vec::with_capacity(self.layout.decoder.len());
        for layer in &self.layout.decoder {
            let n = self.norm(tape, tgt, layer.norm1)?;
            let qk = tape.add(n, query_pos)?;
            let a = self.attention(tape, qk, qk, n, layer.self_attn)?;
            tgt = tape.add(tgt, a)?;
            let n = self.norm(tape, tgt, layer.norm2)?;
            let q = tape.add(n, query_pos)?;
            let a = self.attention(tape, q, keys, memory, layer.cross_attn)?;
            tgt = tape.add(tgt, a)?;
            let n = self.norm(tape, tgt, layer.norm3)?;
            let f = self.ffn(tape, n, layer.ffn1, layer.ffn2)?;
            tgt = tape.add(tgt, f)?;
            outputs.push(self.norm(tape, tgt, self.layout.output_norm)?);
        }
        Ok(outputs)
    }

    /// Class logits and time logits (`f_time(h) + r`).
    pub fn heads(&self, tape: &mut Tape, h: Var, references: Var) -> Result<(Var, Var)> {
        let class = self.linear(tape, h, self.layout.class)?;
        let t = self.linear(tape, h, self.layout.time1)?;
        let t = tape.relu(t)?;
        let t = self.linear(tape, t, self.layout.time2)?;
        let t = tape.relu(t)?;
        let t = self.linear(tape, t, self.layout.time3)?;
        let time = tape.add(t, references)?;
        Ok((class, time))
    }
}
