use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::layers::ParamTensor;
use crate::error::{config, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global L2 norm the full gradient is clipped to before the update.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, clip_norm: None }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub first_moment: Vec<Array2<f64>>,
    pub second_moment: Vec<Array2<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub grad_norm: f64,
    /// Factor applied to the gradient by clipping (1 when not clipped).
    pub clip_scale: f64,
}

impl AdamState {
    pub fn new(params: &[&mut ParamTensor]) -> Self {
        Self {
            step: 0,
            first_moment: params.iter().map(|p| Array2::zeros(p.value.raw_dim())).collect(),
            second_moment: params.iter().map(|p| Array2::zeros(p.value.raw_dim())).collect(),
        }
    }
}

/// One bias-corrected Adam update with optional global-norm clipping.
pub fn adam_step(params: &mut [&mut ParamTensor], state: &mut AdamState, cfg: &AdamConfig) -> Result<StepInfo> {
    if !(cfg.lr > 0.0) || !(0.0..1.0).contains(&cfg.beta1) || !(0.0..1.0).contains(&cfg.beta2) {
        return Err(config(format!("invalid Adam settings {cfg:?}")));
    }
    if state.first_moment.len() != params.len() {
        return Err(config("optimizer state does not match the parameter list"));
    }
    let mut sq = 0.0;
    for p in params.iter() {
        if let Some(bad) = p.grad.iter().find(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!("non-finite gradient {bad} in {}", p.name)));
        }
        sq += p.grad.iter().map(|g| g * g).sum::<f64>();
    }
    let grad_norm = sq.sqrt();
    let clip_scale = match cfg.clip_norm {
        Some(c) if grad_norm > c => c / grad_norm,
        _ => 1.0,
    };

    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for ((p, m), v) in params.iter_mut().zip(&mut state.first_moment).zip(&mut state.second_moment) {
        let p = &mut **p;
        ndarray::Zip::from(&mut p.value).and(&p.grad).and(m).and(v).for_each(|w, &g, m, v| {
            let g = g * clip_scale;
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            *w -= cfg.lr * (*m / bc1) / ((*v / bc2).sqrt() + cfg.eps);
        });
    }
    Ok(StepInfo { grad_norm, clip_scale })
}
