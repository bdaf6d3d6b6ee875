use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::tensor::Tensor;

/// Adam moments with decoupled weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(params: &ModelParams) -> Self {
        Self::for_sizes(params.params.iter().map(|p| p.value.len()))
    }

    pub fn for_sizes(sizes: impl IntoIterator<Item = usize>) -> Self {
        let zeros: Vec<Vec<f64>> = sizes.into_iter().map(|n| vec![0.0; n]).collect();
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: zeros.clone(), v: zeros }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update of every tensor in `values`. `lrs[i]` is the learning rate
    /// of tensor `i`; `names` label errors.
    pub fn step(
        &mut self,
        values: &mut [&mut Tensor],
        grads: &[Tensor],
        lrs: &[f64],
        weight_decay: f64,
        names: &[&str],
    ) -> Result<()> {
        if values.len() != self.m.len() || grads.len() != values.len() || lrs.len() != values.len() {
            return Err(Error::Invalid(format!(
                "optimizer holds {} tensors, got {} values and {} gradients",
                self.m.len(),
                values.len(),
                grads.len()
            )));
        }
        for (i, g) in grads.iter().enumerate() {
            if g.len() != self.m[i].len() {
                return Err(Error::Invalid(format!("gradient {} has the wrong size", names.get(i).unwrap_or(&"?"))));
            }
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient(names.get(i).unwrap_or(&"?").to_string()));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - libm::pow(self.beta1, t as f64);
        let c2 = 1.0 - libm::pow(self.beta2, t as f64);
        for (i, value) in values.iter_mut().enumerate() {
            let lr = lrs[i];
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (((p, &g), mi), vi) in value.data_mut().iter_mut().zip(grads[i].data()).zip(m).zip(v) {
                *p *= 1.0 - lr * weight_decay;
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * g;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * g * g;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *p -= lr * m_hat / (libm::sqrt(v_hat) + self.eps);
            }
        }
        Ok(())
    }
}
