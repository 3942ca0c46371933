use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

/// AdamW hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 5e-3,
        }
    }
}

/// First and second moments, one entry per unique parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<F: Float = f32> {
    pub m: Vec<Vec<F>>,
    pub v: Vec<Vec<F>>,
    pub step: u64,
}

impl<F: Float> OptimizerState<F> {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor<F>>) -> Self {
        let sizes: Vec<usize> = params.into_iter().map(Tensor::numel).collect();
        Self {
            m: sizes.iter().map(|&n| vec![F::zero(); n]).collect(),
            v: sizes.iter().map(|&n| vec![F::zero(); n]).collect(),
            step: 0,
        }
    }

    pub fn num_entries(&self) -> usize {
        self.m.len()
    }
}

/// Global L2 norm of all gradients (missing buffers count as zero).
pub fn grad_norm<F: Float>(params: &[&mut Tensor<F>]) -> f64 {
    params
        .iter()
        .filter_map(|p| p.grad())
        .flat_map(|g| g.iter())
        .map(|&g| g.as_f64() * g.as_f64())
        .sum::<f64>()
        .sqrt()
}

/// Scales every gradient so the global norm is at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_grad_norm<F: Float>(params: &mut [&mut Tensor<F>], max_norm: f64) -> f64 {
    let norm = grad_norm(params);
    if norm > max_norm && norm > 0.0 {
        let s = F::from_f64_lossy(max_norm / norm);
        for p in params.iter_mut() {
            if p.grad().is_some() {
                p.grad_mut().iter_mut().for_each(|g| *g *= s);
            }
        }
    }
    norm
}

impl AdamW {
    /// One update of every parameter using its accumulated gradient.
    ///
    /// Weight decay is decoupled: `w ← w·(1 − lr·wd)` first, then the
    /// bias-corrected Adam step. Nothing is modified when any gradient is
    /// non-finite.
    pub fn step<F: Float>(
        &self,
        params: &mut [&mut Tensor<F>],
        state: &mut OptimizerState<F>,
        lr: f64,
    ) -> Result<()> {
        if params.len() != state.num_entries() {
            return Err(Error::Shape(format!(
                "{} parameters but optimizer state holds {}",
                params.len(),
                state.num_entries()
            )));
        }
        for (i, p) in params.iter().enumerate() {
            if p.numel() != state.m[i].len() {
                return Err(Error::Shape(format!("parameter {i} changed size")));
            }
            if let Some(g) = p.grad() {
                if let Some(bad) = g.iter().position(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(format!(
                        "gradient of parameter {i} at element {bad}"
                    )));
                }
            }
        }
        state.step += 1;
        let t = state.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let decay = F::from_f64_lossy(1.0 - lr * self.weight_decay);
        let (b1, b2) = (F::from_f64_lossy(self.beta1), F::from_f64_lossy(self.beta2));
        let (one_b1, one_b2) = (
            F::from_f64_lossy(1.0 - self.beta1),
            F::from_f64_lossy(1.0 - self.beta2),
        );
        let (step_size, bc2_sqrt) = (F::from_f64_lossy(lr / bc1), F::from_f64_lossy(bc2.sqrt()));
        let eps = F::from_f64_lossy(self.eps);
        for (i, p) in params.iter_mut().enumerate() {
            let (m, v) = (&mut state.m[i], &mut state.v[i]);
            if p.grad().is_none() {
                p.grad_mut();
            }
            let (w, g) = p.data_and_grad_mut();
            for j in 0..w.len() {
                w[j] *= decay;
                m[j] = b1 * m[j] + one_b1 * g[j];
                v[j] = b2 * v[j] + one_b2 * g[j] * g[j];
                w[j] -= step_size * m[j] / (v[j].sqrt() / bc2_sqrt + eps);
            }
        }
        Ok(())
    }
}
