use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::rng::StreamRng;

/// A trainable parameter and its gradient buffer. Vectors are stored as
/// `1 x n` matrices.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamTensor {
    pub name: String,
    pub value: Array2<f64>,
    #[serde(skip)]
    pub grad: Array2<f64>,
}

// Gradients are scratch space and never part of a snapshot.
impl PartialEq for ParamTensor {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name && self.value == other.value
    }
}

impl ParamTensor {
    pub fn new(name: impl Into<String>, value: Array2<f64>) -> Self {
        let grad = Array2::zeros(value.raw_dim());
        Self { name: name.into(), value, grad }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value.dim()
    }

    pub(crate) fn ensure_grad(&mut self) {
        if self.grad.dim() != self.value.dim() {
            self.grad = Array2::zeros(self.value.raw_dim());
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Linear {
    pub weight: ParamTensor,
    pub bias: Option<ParamTensor>,
}

impl Linear {
    pub fn new(prefix: &str, input: usize, output: usize, bias: bool, std: f64, rng: &mut StreamRng) -> Self {
        let normal = Normal::new(0.0, std).expect("std > 0");
        let weight = Array2::from_shape_fn((input, output), |_| normal.sample(rng));
        Self {
            weight: ParamTensor::new(format!("{prefix}.weight"), weight),
            bias: bias.then(|| ParamTensor::new(format!("{prefix}.bias"), Array2::zeros((1, output)))),
        }
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut y = x.dot(&self.weight.value);
        if let Some(b) = &self.bias {
            y += &b.value;
        }
        y
    }

    /// Writes parameter gradients and returns the input gradient.
    pub fn backward(&mut self, x: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
        self.weight.grad = x.t().dot(dy);
        if let Some(b) = &mut self.bias {
            b.grad = dy.sum_axis(Axis(0)).insert_axis(Axis(0));
        }
        dy.dot(&self.weight.value.t())
    }
}

#[derive(Debug, Clone)]
pub(crate) struct BatchNorm {
    pub gamma: ParamTensor,
    pub beta: ParamTensor,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    pub momentum: f64,
    pub eps: f64,
}

pub(crate) struct BatchNormCache {
    x_hat: Array2<f64>,
    inv_std: Array1<f64>,
}

impl BatchNorm {
    pub fn new(prefix: &str, width: usize, momentum: f64, eps: f64) -> Self {
        Self {
            gamma: ParamTensor::new(format!("{prefix}.gamma"), Array2::ones((1, width))),
            beta: ParamTensor::new(format!("{prefix}.beta"), Array2::zeros((1, width))),
            running_mean: Array1::zeros(width),
            running_var: Array1::ones(width),
            momentum,
            eps,
        }
    }

    pub fn forward_train(&mut self, z: &Array2<f64>) -> (Array2<f64>, BatchNormCache) {
        let n = z.nrows() as f64;
        let mean = z.mean_axis(Axis(0)).expect("non-empty batch");
        let centered = z - &mean;
        let var = centered.mapv(|v| v * v).sum_axis(Axis(0)) / n;
        let inv_std = var.mapv(|v| 1.0 / (v + self.eps).sqrt());
        let x_hat = &centered * &inv_std;
        let y = &x_hat * &self.gamma.value.row(0) + self.beta.value.row(0);

        let m = self.momentum;
        let unbiased = &var * (n / (n - 1.0));
        self.running_mean = &self.running_mean * (1.0 - m) + &mean * m;
        self.running_var = &self.running_var * (1.0 - m) + &unbiased * m;
        (y, BatchNormCache { x_hat, inv_std })
    }

    /// Replace the running statistics with the exact (unbiased) statistics
    /// of `z`.
    pub fn set_statistics(&mut self, z: &Array2<f64>) {
        let n = z.nrows() as f64;
        let mean = z.mean_axis(Axis(0)).expect("non-empty batch");
        let var = (z - &mean).mapv(|v| v * v).sum_axis(Axis(0)) / (n - 1.0);
        self.running_mean = mean;
        self.running_var = var;
    }

    pub fn forward_eval(&self, z: &Array2<f64>) -> Array2<f64> {
        let inv_std = self.running_var.mapv(|v| 1.0 / (v + self.eps).sqrt());
        let scale = &inv_std * &self.gamma.value.row(0);
        let shift = &self.beta.value.row(0) - &(&self.running_mean * &scale);
        z * &scale + &shift
    }

    pub fn backward(&mut self, cache: &BatchNormCache, dy: &Array2<f64>) -> Array2<f64> {
        let n = dy.nrows() as f64;
        self.gamma.grad = (dy * &cache.x_hat).sum_axis(Axis(0)).insert_axis(Axis(0));
        self.beta.grad = dy.sum_axis(Axis(0)).insert_axis(Axis(0));
        let dx_hat = dy * &self.gamma.value.row(0);
        let sum_dx_hat = dx_hat.sum_axis(Axis(0));
        let sum_dx_hat_xhat = (&dx_hat * &cache.x_hat).sum_axis(Axis(0));
        let mut dz = dx_hat * n - &sum_dx_hat - &(&cache.x_hat * &sum_dx_hat_xhat);
        dz *= &(&cache.inv_std / n);
        dz
    }
}

/// Inverted dropout mask: kept units are scaled by `1 / (1 - rate)`.
pub(crate) fn dropout_mask(shape: (usize, usize), rate: f64, rng: &mut StreamRng) -> Array2<f64> {
    let keep = 1.0 - rate;
    let scale = 1.0 / keep;
    Array2::from_shape_simple_fn(shape, || if rng.random::<f64>() < keep { scale } else { 0.0 })
}
