//! Central finite-difference check of analytic network gradients.
//!
//! Relative error per element is `|a - n| / max(|a|, |n|, floor)`: below
//! `floor` the comparison is effectively absolute, since truncation and
//! rounding noise of the difference quotient dominate tiny gradients.

use ndarray::Array2;

use super::Network;
use crate::error::Result;
use crate::rng;

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_FLOOR: f64 = 1e-6;
pub const TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

impl GradCheckReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

pub struct GradCheck {
    pub step: f64,
    pub floor: f64,
    /// Check at most this many evenly spaced elements per tensor.
    pub max_per_tensor: Option<usize>,
    pub dropout_seed: u64,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self { step: DEFAULT_STEP, floor: DEFAULT_FLOOR, max_per_tensor: None, dropout_seed: 0 }
    }
}

impl GradCheck {
    /// Compare backprop gradients of `loss(net(x))` with central differences.
    /// `loss` returns the scalar and its gradient with respect to the network
    /// output. Dropout masks are re-drawn from the same seed on every
    /// evaluation so the function being differentiated is fixed.
    pub fn run<F>(&self, net: &mut Network, x: &Array2<f64>, loss: F) -> Result<GradCheckReport>
    where
        F: Fn(&Array2<f64>) -> (f64, Array2<f64>),
    {
        let eval = |net: &mut Network| -> Result<f64> {
            let mut rng = rng::substream(self.dropout_seed, rng::DROPOUT, 0);
            let out = net.forward_train(x, &mut rng)?;
            Ok(loss(&out).0)
        };

        let mut rng = rng::substream(self.dropout_seed, rng::DROPOUT, 0);
        let out = net.forward_train(x, &mut rng)?;
        let (_, upstream) = loss(&out);
        net.backward(&upstream)?;
        let analytic: Vec<(String, Vec<f64>)> =
            net.params().iter().map(|p| (p.name.clone(), p.grad.iter().copied().collect())).collect();

        let mut report = GradCheckReport {
            checked: 0,
            max_rel_error: 0.0,
            worst_param: String::new(),
            worst_index: 0,
            worst_analytic: 0.0,
            worst_numeric: 0.0,
        };
        for (t, (name, grads)) in analytic.iter().enumerate() {
            let n = grads.len();
            let stride = match self.max_per_tensor {
                Some(m) if m > 0 && n > m => n.div_ceil(m),
                _ => 1,
            };
            for i in (0..n).step_by(stride) {
                let original = net.params()[t].value.as_slice().expect("contiguous")[i];
                set(net, t, i, original + self.step);
                let plus = eval(net)?;
                set(net, t, i, original - self.step);
                let minus = eval(net)?;
                set(net, t, i, original);
                let numeric = (plus - minus) / (2.0 * self.step);
                let err = relative_error(grads[i], numeric, self.floor);
                report.checked += 1;
                if err > report.max_rel_error || !err.is_finite() {
                    report.max_rel_error = err;
                    report.worst_param = name.clone();
                    report.worst_index = i;
                    report.worst_analytic = grads[i];
                    report.worst_numeric = numeric;
                }
            }
        }
        Ok(report)
    }
}

fn set(net: &mut Network, tensor: usize, index: usize, value: f64) {
    let mut params = net.params_mut();
    params[tensor].value.as_slice_mut().expect("contiguous")[index] = value;
}
