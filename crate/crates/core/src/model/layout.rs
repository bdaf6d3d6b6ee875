use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::ModelConfig;

/// Optimizer group: the frame embedder trains at its own learning rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Embedder,
    Transformer,
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum Init {
    Uniform(f64),
    Constant(f64),
}

pub(crate) struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub group: ParamGroup,
    pub init: Init,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Linear {
    pub w: usize,
    pub b: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Norm {
    pub gain: usize,
    pub shift: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct EncoderLayer {
    pub norm1: Norm,
    pub attn: Attention,
    pub norm2: Norm,
    pub ffn1: Linear,
    pub ffn2: Linear,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct DecoderLayer {
    pub norm1: Norm,
    pub self_attn: Attention,
    pub norm2: Norm,
    pub cross_attn: Attention,
    pub norm3: Norm,
    pub ffn1: Linear,
    pub ffn2: Linear,
}

/// Positions of every parameter in the flat parameter list.
#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub embed: Linear,
    pub encoder: Vec<EncoderLayer>,
    pub memory_norm: Norm,
    pub queries: usize,
    pub ref1: Linear,
    pub ref2: Linear,
    pub decoder: Vec<DecoderLayer>,
    pub output_norm: Norm,
    pub class: Linear,
    pub time1: Linear,
    pub time2: Linear,
    pub time3: Linear,
}

struct Builder {
    specs: Vec<ParamSpec>,
}

impl Builder {
    fn push(&mut self, name: String, shape: Vec<usize>, group: ParamGroup, init: Init) -> usize {
        self.specs.push(ParamSpec { name, shape, group, init });
        self.specs.len() - 1
    }

    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize, group: ParamGroup) -> Linear {
        let bound = 1.0 / libm::sqrt(fan_in as f64);
        Linear {
            w: self.push(format!("{name}.weight"), vec![fan_in, fan_out], group, Init::Uniform(bound)),
            b: self.push(format!("{name}.bias"), vec![1, fan_out], group, Init::Uniform(bound)),
        }
    }

    fn norm(&mut self, name: &str, dim: usize) -> Norm {
        let g = ParamGroup::Transformer;
        Norm {
            gain: self.push(format!("{name}.gain"), vec![1, dim], g, Init::Constant(1.0)),
            shift: self.push(format!("{name}.shift"), vec![1, dim], g, Init::Constant(0.0)),
        }
    }

    fn attention(&mut self, name: &str, dim: usize) -> Attention {
        let g = ParamGroup::Transformer;
        Attention {
            q: self.linear(&format!("{name}.query"), dim, dim, g),
            k: self.linear(&format!("{name}.key"), dim, dim, g),
            v: self.linear(&format!("{name}.value"), dim, dim, g),
            o: self.linear(&format!("{name}.out"), dim, dim, g),
        }
    }
}

impl Layout {
    pub fn build(cfg: &ModelConfig) -> (Self, Vec<ParamSpec>) {
        let (d, t) = (cfg.model_dim, ParamGroup::Transformer);
        let mut b = Builder { specs: Vec::new() };
        let embed = b.linear("embed", cfg.feature_dim, d, ParamGroup::Embedder);
        let encoder = (0..cfg.encoder_layers)
            .map(|l| EncoderLayer {
                norm1: b.norm(&format!("encoder.{l}.norm1"), d),
                attn: b.attention(&format!("encoder.{l}.attn"), d),
                norm2: b.norm(&format!("encoder.{l}.norm2"), d),
                ffn1: b.linear(&format!("encoder.{l}.ffn1"), d, cfg.ffn_dim, t),
                ffn2: b.linear(&format!("encoder.{l}.ffn2"), cfg.ffn_dim, d, t),
            })
            .collect();
        let memory_norm = b.norm("memory_norm", d);
        // Each query row is a table lookup, so its fan-in is one.
        let queries = b.push("queries".into(), vec![cfg.queries, d], t, Init::Uniform(1.0));
        let ref1 = b.linear("ref.0", d, d, t);
        let ref2 = b.linear("ref.1", d, 1, t);
        let decoder = (0..cfg.decoder_layers)
            .map(|l| DecoderLayer {
                norm1: b.norm(&format!("decoder.{l}.norm1"), d),
                self_attn: b.attention(&format!("decoder.{l}.self_attn"), d),
                norm2: b.norm(&format!("decoder.{l}.norm2"), d),
                cross_attn: b.attention(&format!("decoder.{l}.cross_attn"), d),
                norm3: b.norm(&format!("decoder.{l}.norm3"), d),
                ffn1: b.linear(&format!("decoder.{l}.ffn1"), d, cfg.ffn_dim, t),
                ffn2: b.linear(&format!("decoder.{l}.ffn2"), cfg.ffn_dim, d, t),
            })
            .collect();
        let output_norm = b.norm("output_norm", d);
        let class = b.linear("class", d, cfg.num_classes, t);
        let time1 = b.linear("time.0", d, d, t);
        let time2 = b.linear("time.1", d, d, t);
        let time3 = b.linear("time.2", d, 1, t);
        let layout = Self {
            embed,
            encoder,
            memory_norm,
            queries,
            ref1,
            ref2,
            decoder,
            output_norm,
            class,
            time1,
            time2,
            time3,
        };
        (layout, b.specs)
    }
}
