use alloc::vec::Vec;

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Outcome of comparing reverse-mode gradients with central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    /// Largest `|analytic - numeric| / max(1, |analytic|)`.
    pub max_error: f64,
    pub worst_index: usize,
}

impl GradCheck {
    pub fn from_pairs(analytic: Vec<f64>, numeric: Vec<f64>) -> Self {
        let mut max_error = 0.0;
        let mut worst_index = 0;
        for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
            let err = (a - n).abs() / a.abs().max(1.0);
            if err > max_error {
                max_error = err;
                worst_index = i;
            }
        }
        Self { analytic, numeric, max_error, worst_index }
    }
}

fn eval_scalar<F>(program: &F, point: Tensor) -> Result<(Tape, Var, Var, f64)>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let x = tape.leaf(point);
    let y = program(&mut tape, x)?;
    let value = tape
        .value(y)
        .item()
        .ok_or_else(|| Error::Invalid("grad_check program must return a scalar".into()))?;
    Ok((tape, x, y, value))
}

/// Checks the gradient of a scalar `program` at `point` for every entry.
pub fn grad_check<F>(program: F, point: &Tensor, step: f64) -> Result<GradCheck>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    if !(step > 0.0) {
        return Err(Error::Invalid("finite-difference step must be positive".into()));
    }
    let (tape, x, out, _) = eval_scalar(&program, point.clone())?;
    let grads = tape.backward(out)?;
    let analytic = grads.wrt(&tape, x).into_data();
    let mut numeric = Vec::with_capacity(point.len());
    for i in 0..point.len() {
        let v = point.data()[i];
        let (_, _, _, up) = eval_scalar(&program, point.with_value(i, v + step))?;
        let (_, _, _, down) = eval_scalar(&program, point.with_value(i, v - step))?;
        numeric.push((up - down) / (2.0 * step));
    }
    Ok(GradCheck::from_pairs(analytic, numeric))
}
