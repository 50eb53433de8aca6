//! AdamW with decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::encoder::TensorKind;
use crate::error::{Error, Result};
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        let in_unit = |b: f64| (0.0..1.0).contains(&b);
        if !in_unit(self.beta1) || !in_unit(self.beta2) {
            return Err(Error::InvalidArgument("betas must lie in [0, 1)".into()));
        }
        if !(self.eps > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidArgument("eps must be positive and weight_decay non-negative".into()));
        }
        Ok(())
    }
}

/// First and second moments for each tensor, in the order the tensors are
/// passed to [`adamw_step`]. Buffers are created on the first step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
}

impl OptimizerState {
    pub fn new() -> Self {
        Self::default()
    }
}

/// One AdamW update at learning rate `lr`.
///
/// Decay `p ← p·(1 − lr·λ)` touches only [`TensorKind::Weight`] tensors and
/// is applied before the moment update. A non-finite gradient aborts the
/// step with nothing modified.
pub fn adamw_step(
    params: &mut [(TensorKind, &mut Matrix)],
    grads: &[&Matrix],
    state: &mut OptimizerState,
    config: &AdamWConfig,
    lr: f64,
) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} parameter tensors but {} gradients",
            params.len(),
            grads.len()
        )));
    }
    for (i, ((_, p), g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() {
            return Err(Error::DimensionMismatch(format!(
                "tensor {i}: parameter {:?} vs gradient {:?}",
                p.shape(),
                g.shape()
            )));
        }
        if !g.is_finite() {
            return Err(Error::NonFinite(format!("gradient of tensor {i}")));
        }
    }
    if state.m.is_empty() {
        state.m = params.iter().map(|(_, p)| Matrix::zeros(p.rows, p.cols)).collect();
        state.v = state.m.clone();
    } else if state.m.len() != params.len()
        || state.m.iter().zip(params.iter()).any(|(m, (_, p))| m.shape() != p.shape())
    {
        return Err(Error::DimensionMismatch("optimizer state does not match the parameters".into()));
    }

    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - config.beta1.powi(t);
    let c2 = 1.0 - config.beta2.powi(t);
    for (((kind, p), g), (m, v)) in params.iter_mut().zip(grads).zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        let decay = if *kind == TensorKind::Weight { 1.0 - lr * config.weight_decay } else { 1.0 };
        for k in 0..p.data.len() {
            let gk = g.data[k];
            m.data[k] = config.beta1 * m.data[k] + (1.0 - config.beta1) * gk;
            v.data[k] = config.beta2 * v.data[k] + (1.0 - config.beta2) * gk * gk;
            let m_hat = m.data[k] / c1;
            let v_hat = v.data[k] / c2;
            p.data[k] = p.data[k] * decay - lr * m_hat / (v_hat.sqrt() + config.eps);
        }
    }
    Ok(())
}
