//! Scalar metrics over matched predictions.

use serde::{Deserialize, Serialize};

pub const RALP_THRESHOLD: f64 = 0.05;
pub const AP_RECALL_POINTS: usize = 40;

/// Mean absolute error, `None` for an empty set.
pub fn ale(pred: &[f64], gt: &[f64]) -> Option<f64> {
    assert_eq!(pred.len(), gt.len());
    if pred.is_empty() {
        return None;
    }
    Some(pred.iter().zip(gt).map(|(p, g)| (p - g).abs()).sum::<f64>() / pred.len() as f64)
}

pub fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Population standard deviation.
pub fn std_dev(v: &[f64]) -> Option<f64> {
    let m = mean(v)?;
    Some((v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64).sqrt())
}

/// One ranked prediction for precision scoring. `r_gt` is `None` for a
/// prediction with no ground-truth match.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankedPrediction {
    pub confidence: f64,
    pub r_pred: f64,
    pub r_gt: Option<f64>,
}

/// Relative average localization precision, in percent. A prediction is a
/// true positive when matched and `|r_pred - r_gt| < rel_threshold * r_gt`.
/// Average precision uses interpolated precision at recall `k/40`,
/// `k = 1..=40`. Ties in confidence keep input order.
pub fn ralp(preds: &[RankedPrediction], n_gt: usize, rel_threshold: f64) -> f64 {
    if n_gt == 0 {
        return 0.0;
    }
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].confidence.total_cmp(&preds[a].confidence));
    let mut tp = 0usize;
    let mut curve = Vec::with_capacity(preds.len());
    for (rank, &i) in order.iter().enumerate() {
        let p = &preds[i];
        if let Some(g) = p.r_gt {
            if (p.r_pred - g).abs() < rel_threshold * g {
                tp += 1;
            }
        }
        curve.push((tp as f64 / n_gt as f64, tp as f64 / (rank + 1) as f64));
    }
    // interpolated precision: best precision at any recall >= the level
    let mut best_from = vec![0.0f64; curve.len() + 1];
    for k in (0..curve.len()).rev() {
        best_from[k] = best_from[k + 1].max(curve[k].1);
    }
    let mut sum = 0.0;
    for k in 1..=AP_RECALL_POINTS {
        let level = k as f64 / AP_RECALL_POINTS as f64;
        if let Some(pos) = curve.iter().position(|(r, _)| *r >= level - 1e-12) {
            sum += best_from[pos];
        }
    }
    100.0 * sum / AP_RECALL_POINTS as f64
}

/// Fraction of ground truths inside `[r - b, r + b]` and the mean relative
/// interval size `b / r`.
pub fn coverage_and_size(r_pred: &[f64], r_gt: &[f64], b: &[f64]) -> Option<(f64, f64)> {
    if r_pred.is_empty() {
        return None;
    }
    let n = r_pred.len() as f64;
    let inside = r_pred.iter().zip(r_gt).zip(b).filter(|((p, g), b)| (*p - *g).abs() <= **b).count();
    let size = r_pred.iter().zip(b).map(|(p, b)| b / p).sum::<f64>() / n;
    Some((inside as f64 / n, size))
}

/// Quantile with linear interpolation between order statistics
/// (Hyndman-Fan type 7, the numpy/R default). `sorted` must be ascending.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Box-plot summary. Whiskers reach the most extreme points within
/// 1.5 IQR of the quartiles; anything beyond is an outlier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub outliers: Vec<f64>,
}

impl BoxStats {
    pub fn new(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let (q1, median, q3) = (quantile(&v, 0.25), quantile(&v, 0.5), quantile(&v, 0.75));
        let iqr = q3 - q1;
        let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
        let inside: Vec<f64> = v.iter().copied().filter(|x| *x >= lo_fence && *x <= hi_fence).collect();
        Some(Self {
            n: v.len(),
            min: v[0],
            q1,
            median,
            q3,
            max: v[v.len() - 1],
            whisker_low: inside.first().copied().unwrap_or(q1),
            whisker_high: inside.last().copied().unwrap_or(q3),
            outliers: v.iter().copied().filter(|x| *x < lo_fence || *x > hi_fence).collect(),
        })
    }
}
