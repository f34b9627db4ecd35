//! Output decoding and the training objective.
//!
//! The network emits five raw values per pair:
//! `[distance, log relative spread, azimuth, elevation, match logit]`.

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{data, Result};
use crate::pairs::PairSample;

pub const OUTPUT_DIM: usize = 5;
pub const PROB_CLAMP: f64 = 1e-7;
/// Raw log-spread is clamped to this magnitude before exponentiation.
pub const LOG_SPREAD_LIMIT: f64 = 30.0;
/// Floor for the decoded distance, so it stays strictly positive when
/// softplus underflows.
pub const MIN_DISTANCE_M: f64 = 1e-6;

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodedOutput {
    pub r: f64,
    /// Laplace scale in meters, the half-width of the reported interval.
    pub spread_b: f64,
    pub beta: f64,
    pub psi: f64,
    pub ism_prob: f64,
}

impl DecodedOutput {
    /// Spread relative to the predicted distance.
    pub fn spread_relative(&self) -> f64 {
        self.spread_b / self.r
    }
}

pub fn decode(raw: &[f64; OUTPUT_DIM], distance_scale: f64) -> DecodedOutput {
    let r = (distance_scale * softplus(raw[0])).max(MIN_DISTANCE_M);
    let b_rel = raw[1].clamp(-LOG_SPREAD_LIMIT, LOG_SPREAD_LIMIT).exp();
    DecodedOutput { r, spread_b: b_rel * r, beta: raw[2], psi: raw[3], ism_prob: sigmoid(raw[4]) }
}

pub(crate) fn decode_row(row: ArrayView1<f64>, distance_scale: f64) -> DecodedOutput {
    decode(&[row[0], row[1], row[2], row[3], row[4]], distance_scale)
}

/// Laplace negative log-likelihood of a relative residual:
/// `|1 - r/x| / b + ln(2b)`.
pub fn laplace_loss(x: f64, r: f64, b_rel: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(data(format!("ground-truth distance must be positive, got {x}")));
    }
    if !(b_rel > 0.0) {
        return Err(data(format!("relative spread must be positive, got {b_rel}")));
    }
    Ok((1.0 - r / x).abs() / b_rel + (2.0 * b_rel).ln())
}

/// Partial derivatives of [`laplace_loss`] with respect to `r` and `b_rel`.
pub fn laplace_loss_grad(x: f64, r: f64, b_rel: f64) -> (f64, f64) {
    let rho = (1.0 - r / x).abs();
    let d_r = sign(r - x) / (x * b_rel);
    let d_b = -rho / (b_rel * b_rel) + 1.0 / b_rel;
    (d_r, d_b)
}

pub fn bce_loss(p: f64, label: u8) -> f64 {
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    if label == 1 {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

pub fn angle_loss(beta_pred: f64, psi_pred: f64, beta_gt: f64, psi_gt: f64) -> f64 {
    (beta_pred - beta_gt).abs() + (psi_pred - psi_gt).abs()
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Supervision for one pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Target {
    pub r: f64,
    pub beta: f64,
    pub psi: f64,
    pub ism_label: u8,
}

impl From<&PairSample> for Target {
    fn from(p: &PairSample) -> Self {
        Self { r: p.gt.r, beta: p.gt.beta, psi: p.gt.psi, ism_label: p.ism_label }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub laplace: f64,
    pub ism: f64,
    pub angle: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { laplace: 1.0, ism: 1.0, angle: 1.0 }
    }
}

/// Batch-mean loss components, unweighted.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub laplace: f64,
    pub ism: f64,
    pub angle: f64,
    /// Weighted sum actually optimized.
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    pub weights: LossWeights,
    pub distance_scale: f64,
    /// Supervise distance only on true pairs.
    pub mask_distance_for_false: bool,
}

impl Objective {
    /// Loss over a batch of raw outputs and its gradient with respect to
    /// them. Every component is averaged over the whole batch, so masking
    /// distance for some rows lowers the Laplace mean rather than
    /// renormalizing it.
    pub fn evaluate(&self, raw: &Array2<f64>, targets: &[Target]) -> Result<(LossBreakdown, Array2<f64>)> {
        let (n, k) = raw.dim();
        if k != OUTPUT_DIM || n != targets.len() || n == 0 {
            return Err(data(format!("objective got a {n}x{k} output for {} targets", targets.len())));
        }
        if let Some(bad) = raw.iter().find(|v| !v.is_finite()) {
            return Err(crate::Error::Numeric(format!("non-finite network output {bad}")));
        }
        let w = &self.weights;
        let inv_n = 1.0 / n as f64;
        let mut sums = LossBreakdown::default();
        let mut grad = Array2::zeros((n, k));
        for (i, t) in targets.iter().enumerate() {
            let row = raw.row(i);
            let out = decode_row(row, self.distance_scale);
            let mut g = grad.row_mut(i);

            if !self.mask_distance_for_false || t.ism_label == 1 {
                let b_rel = out.spread_relative();
                sums.laplace += laplace_loss(t.r, out.r, b_rel)?;
                let (d_r, d_b) = laplace_loss_grad(t.r, out.r, b_rel);
                let raw_r = self.distance_scale * softplus(row[0]);
                if raw_r > MIN_DISTANCE_M {
                    g[0] = w.laplace * inv_n * d_r * self.distance_scale * sigmoid(row[0]);
                }
                if row[1].abs() < LOG_SPREAD_LIMIT {
                    g[1] = w.laplace * inv_n * d_b * b_rel;
                }
            }

            sums.ism += bce_loss(out.ism_prob, t.ism_label);
            if out.ism_prob > PROB_CLAMP && out.ism_prob < 1.0 - PROB_CLAMP {
                g[4] = w.ism * inv_n * (out.ism_prob - f64::from(t.ism_label));
            }

            sums.angle += angle_loss(out.beta, out.psi, t.beta, t.psi);
            g[2] = w.angle * inv_n * sign(out.beta - t.beta);
            g[3] = w.angle * inv_n * sign(out.psi - t.psi);
        }
        let mut mean = LossBreakdown {
            laplace: sums.laplace * inv_n,
            ism: sums.ism * inv_n,
            angle: sums.angle * inv_n,
            total: 0.0,
        };
        mean.total = w.laplace * mean.laplace + w.ism * mean.ism + w.angle * mean.angle;
        if !mean.total.is_finite() {
            return Err(crate::Error::Numeric(format!("non-finite loss {mean:?}")));
        }
        Ok((mean, grad))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn decode_examples() {
        let d = decode(&[0.3, 0.0, 0.1, -0.2, 0.0], 20.0);
        assert_eq!(d.ism_prob, 0.5);
        assert_relative_eq!(d.spread_b, d.r);
        assert_relative_eq!(d.r, 20.0 * (1.0 + 0.3f64.exp()).ln(), max_relative = 1e-15);
        assert_eq!((d.beta, d.psi), (0.1, -0.2));
        let mut last = 0.0;
        for logit in [-5.0, 0.0, 3.0, 20.0, 40.0] {
            let p = decode(&[0.0, 0.0, 0.0, 0.0, logit], 20.0).ism_prob;
            assert!(p > last && p <= 1.0);
            last = p;
        }
        assert!(last > 1.0 - 1e-15);
        let extreme = decode(&[-1e4, 1e4, 0.0, 0.0, -1e4], 20.0);
        assert!(extreme.r > 0.0 && extreme.spread_b.is_finite() && extreme.spread_b > 0.0);
        assert_eq!(extreme.ism_prob, 0.0);
    }

    #[test]
    fn laplace_examples() {
        assert_eq!(laplace_loss(10.0, 10.0, 0.5).unwrap(), 0.0);
        assert_relative_eq!(laplace_loss(10.0, 12.0, 0.2).unwrap(), 1.0 + 0.4f64.ln(), max_relative = 1e-12);
        assert!((laplace_loss(10.0, 12.0, 0.2).unwrap() - 0.0837).abs() < 1e-4);
        assert!(laplace_loss(0.0, 1.0, 0.2).is_err());
        assert!(laplace_loss(-3.0, 1.0, 0.2).is_err());
    }

    #[test]
    fn laplace_minimum_over_spread_is_the_residual() {
        // golden-section search, independent of the closed form
        let (x, r) = (17.0f64, 19.3f64);
        let rho = (1.0 - r / x).abs();
        let f = |b: f64| laplace_loss(x, r, b).unwrap();
        let (mut lo, mut hi) = (1e-4, 2.0);
        let g = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..200 {
            let (a, b) = (hi - g * (hi - lo), lo + g * (hi - lo));
            if f(a) < f(b) {
                hi = b
            } else {
                lo = a
            }
        }
        assert_relative_eq!(0.5 * (lo + hi), rho, max_relative = 1e-6);
        assert_eq!(laplace_loss_grad(x, r, rho).1, 0.0);
    }

    #[test]
    #[allow(clippy::approx_constant)] // -ln 0.1 written out as a worked value
    fn bce_examples() {
        assert_relative_eq!(bce_loss(0.5, 0), 2f64.ln());
        assert_relative_eq!(bce_loss(0.5, 1), 2f64.ln());
        assert!(bce_loss(1.0, 1) < 1e-6);
        assert_relative_eq!(bce_loss(0.9, 0), -(0.1f64.ln()), max_relative = 1e-12);
        assert!((bce_loss(0.9, 0) - 2.3026).abs() < 1e-4);
        assert_relative_eq!(bce_loss(0.0, 1), -(PROB_CLAMP.ln()));
    }

    #[test]
    fn angle_examples() {
        assert_eq!(angle_loss(0.2, -0.1, 0.2, -0.1), 0.0);
        assert_relative_eq!(angle_loss(0.3, 0.0, 0.2, 0.0), 0.1, max_relative = 1e-12);
        assert_eq!(angle_loss(0.3, 0.5, 0.1, -0.2), angle_loss(0.1, -0.2, 0.3, 0.5));
    }

    fn raw_batch() -> (Array2<f64>, Vec<Target>) {
        let raw = ndarray::array![
            [0.4, -1.2, 0.11, 0.05, 1.3],
            [-0.7, -2.0, -0.31, 0.12, -0.4],
            [1.9, -0.3, 0.52, 0.01, 2.2],
            [0.05, -1.5, -0.02, 0.21, -3.0],
        ];
        let targets = vec![
            Target { r: 9.0, beta: 0.1, psi: 0.07, ism_label: 1 },
            Target { r: 6.5, beta: -0.3, psi: 0.1, ism_label: 0 },
            Target { r: 48.0, beta: 0.5, psi: 0.02, ism_label: 1 },
            Target { r: 15.0, beta: 0.0, psi: 0.2, ism_label: 0 },
        ];
        (raw, targets)
    }

    fn numeric_grad(obj: &Objective, raw: &Array2<f64>, targets: &[Target]) -> Array2<f64> {
        let h = 1e-6;
        Array2::from_shape_fn(raw.raw_dim(), |(i, j)| {
            let mut p = raw.clone();
            p[[i, j]] += h;
            let mut m = raw.clone();
            m[[i, j]] -= h;
            (obj.evaluate(&p, targets).unwrap().0.total - obj.evaluate(&m, targets).unwrap().0.total) / (2.0 * h)
        })
    }

    #[test]
    fn objective_gradient_matches_finite_differences() {
        let (raw, targets) = raw_batch();
        for mask in [false, true] {
            let obj = Objective {
                weights: LossWeights { laplace: 1.0, ism: 0.7, angle: 1.3 },
                distance_scale: 20.0,
                mask_distance_for_false: mask,
            };
            let (_, g) = obj.evaluate(&raw, &targets).unwrap();
            let n = numeric_grad(&obj, &raw, &targets);
            for (a, b) in g.iter().zip(&n) {
                assert!((a - b).abs() < 1e-7, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn total_gradient_is_sum_of_component_gradients() {
        let (raw, targets) = raw_batch();
        let only = |laplace, ism, angle| Objective {
            weights: LossWeights { laplace, ism, angle },
            distance_scale: 20.0,
            mask_distance_for_false: false,
        };
        let (all_loss, all) = only(1.0, 1.0, 1.0).evaluate(&raw, &targets).unwrap();
        let parts: Vec<_> = [(1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0)]
            .iter()
            .map(|&(a, b, c)| only(a, b, c).evaluate(&raw, &targets).unwrap())
            .collect();
        let sum = &(&parts[0].1 + &parts[1].1) + &parts[2].1;
        assert_eq!(all, sum);
        assert_relative_eq!(all_loss.total, parts.iter().map(|p| p.0.total).sum::<f64>(), max_relative = 1e-14);
        assert_relative_eq!(all_loss.total, all_loss.laplace + all_loss.ism + all_loss.angle, max_relative = 1e-14);
    }

    #[test]
    fn masking_removes_distance_signal_from_false_pairs() {
        let (raw, targets) = raw_batch();
        let obj = Objective { weights: LossWeights::default(), distance_scale: 20.0, mask_distance_for_false: true };
        let (_, g) = obj.evaluate(&raw, &targets).unwrap();
        for (i, t) in targets.iter().enumerate() {
            assert_eq!(t.ism_label == 0, g[[i, 0]] == 0.0 && g[[i, 1]] == 0.0);
        }
    }

    proptest! {
        #[test]
        fn laplace_is_convex_in_log_spread(x in 1.0..60.0f64, r in 0.5..70.0f64, s in -6.0..1.0f64, d in 0.001..1.0f64) {
            // not convex in the spread itself once b > 2|1 - r/x|, but convex
            // in its logarithm, which is what the network outputs
            let f = |s: f64| laplace_loss(x, r, s.exp()).unwrap();
            prop_assert!(f(s + d) <= 0.5 * (f(s) + f(s + 2.0 * d)) + 1e-12);
        }

        #[test]
        fn laplace_is_unimodal_in_spread(x in 1.0..60.0f64, r in 0.5..70.0f64, b in 0.001..3.0f64) {
            let rho = (1.0 - r / x).abs();
            prop_assume!(rho > 1e-6);
            let (_, d_b) = laplace_loss_grad(x, r, b);
            let ok = if b < rho { d_b < 0.0 } else { d_b >= 0.0 };
            prop_assert!(ok);
        }

        #[test]
        fn decode_invariants(raw in proptest::array::uniform5(-50.0..50.0f64)) {
            let d = decode(&raw, 20.0);
            prop_assert!(d.r > 0.0 && d.spread_b > 0.0);
            prop_assert!((0.0..=1.0).contains(&d.ism_prob));
        }
    }
}
