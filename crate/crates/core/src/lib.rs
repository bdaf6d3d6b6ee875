//! Dynamic temporal label assignment for precise event spotting.
//!
//! The crate is `no_std` (with `alloc`) and holds every algorithmic piece:
//! a small reverse-mode tensor engine, a query-based spotting transformer,
//! Hungarian label assignment over class/time costs, the set-prediction
//! losses, inference post-processing with mAP@δ evaluation, a synthetic
//! clip generator with label-noise protocols, and the training loop.
//!
//! File formats, the command-line tool and anything touching the OS live in
//! the `spotmatch` companion crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod data;
pub mod error;
pub mod eval;
pub mod loss;
pub mod matcher;
pub mod math;
pub mod model;
pub mod synth;
pub mod tensor;
pub mod train;

pub use data::{Clip, Dataset, Label};
pub use error::{Error, Result};
pub use matcher::{Assignment, GroundTruthLabel, MatchingMode, Prediction};
pub use model::{ModelConfig, ModelParams};
pub use tensor::{Tape, Tensor, Var};
