//! Model head semantics, checkpoints and the training loop.

mod head;
mod train;

pub use head::{
    angle_loss, bce_loss, decode, laplace_loss, laplace_loss_grad, sigmoid, softplus, DecodedOutput, LossBreakdown,
    LossWeights, Objective, Target, OUTPUT_DIM, PROB_CLAMP,
};
pub use train::{train, write_log_csv, EpochLog, TrainConfig, TrainOutcome};

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{data, Result};
use crate::nn::{AdamState, Network, NetworkState};
use crate::pairs::{PairSample, FEATURE_LEN};

pub const CHECKPOINT_VERSION: u32 = 1;
/// Rows evaluated per forward pass when scoring large pair sets.
const EVAL_CHUNK: usize = 4096;
const INPUT_CLIP: f64 = 6.0;

/// Per-feature standardization fitted on the raw training pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputScaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Standardized values are clamped to +-clip. Deltas of non-matching
    /// pairs land tens of units out and would otherwise swamp the
    /// monocular cues those pairs also carry.
    #[serde(default)]
    pub clip: Option<f64>,
}

impl InputScaler {
    pub fn identity(width: usize) -> Self {
        Self { mean: vec![0.0; width], std: vec![1.0; width], clip: None }
    }

    /// The left-keypoint half is standardized over all pairs. The delta
    /// half uses matching pairs only: across non-matching pairs the deltas
    /// span the whole image and would squeeze the disparity signal into a
    /// sliver of the standardized range.
    pub fn fit(pairs: &[PairSample]) -> Result<Self> {
        if pairs.is_empty() {
            return Err(data("cannot fit input scaling on zero pairs"));
        }
        let half = FEATURE_LEN / 2;
        let (mut mean, mut std) = moments(pairs.iter(), 0..half);
        let trues: Vec<&PairSample> = pairs.iter().filter(|p| p.is_true_pair()).collect();
        let (dm, ds) = if trues.len() >= 2 {
            moments(trues.into_iter(), half..FEATURE_LEN)
        } else {
            moments(pairs.iter(), half..FEATURE_LEN)
        };
        mean.extend(dm);
        std.extend(ds);
        Ok(Self { mean, std, clip: Some(INPUT_CLIP) })
    }

    pub fn width(&self) -> usize {
        self.mean.len()
    }

    pub fn apply<'a>(&self, rows: impl IntoIterator<Item = &'a [f64]>) -> Result<Array2<f64>> {
        let mut out = Vec::new();
        let mut n = 0;
        for row in rows {
            if row.len() != self.width() {
                return Err(data(format!("feature row has {} values, model expects {}", row.len(), self.width())));
            }
            let clip = self.clip.unwrap_or(f64::INFINITY);
            out.extend(row.iter().zip(&self.mean).zip(&self.std).map(|((v, m), s)| ((v - m) / s).clamp(-clip, clip)));
            n += 1;
        }
        Array2::from_shape_vec((n, self.width()), out).map_err(|e| data(e.to_string()))
    }
}

fn moments<'a>(
    pairs: impl Iterator<Item = &'a PairSample> + Clone,
    cols: std::ops::Range<usize>,
) -> (Vec<f64>, Vec<f64>) {
    let n = pairs.clone().count() as f64;
    let mut mean = vec![0.0; cols.len()];
    for p in pairs.clone() {
        for (m, v) in mean.iter_mut().zip(&p.features[cols.clone()]) {
            *m += v / n;
        }
    }
    let mut var = vec![0.0; cols.len()];
    for p in pairs {
        for ((s, v), m) in var.iter_mut().zip(&p.features[cols.clone()]).zip(&mean) {
            *s += (v - m) * (v - m) / n;
        }
    }
    // constant features (never-visible joints) pass through centered
    let std = var.into_iter().map(|v| if v.sqrt() > 1e-9 { v.sqrt() } else { 1.0 }).collect();
    (mean, std)
}

/// A trained network plus everything needed to turn pair features into
/// decoded outputs.
#[derive(Debug, Clone)]
pub struct Model {
    pub network: Network,
    pub scaler: InputScaler,
    pub distance_scale: f64,
}

impl Model {
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let network = Network::from_state(ckpt.network.clone())?;
        if network.input_dim() != ckpt.scaler.width() || network.output_dim() != OUTPUT_DIM {
            return Err(data(format!(
                "checkpoint network is {}->{}, expected {}->{OUTPUT_DIM}",
                network.input_dim(),
                network.output_dim(),
                ckpt.scaler.width()
            )));
        }
        Ok(Self { network, scaler: ckpt.scaler.clone(), distance_scale: ckpt.distance_scale })
    }

    pub fn input_dim(&self) -> usize {
        self.network.input_dim()
    }

    /// Eval-mode raw outputs for a set of feature rows.
    pub fn forward_raw<'a>(&self, rows: impl IntoIterator<Item = &'a [f64]>) -> Result<Array2<f64>> {
        let x = self.scaler.apply(rows)?;
        if x.nrows() <= EVAL_CHUNK {
            return self.network.forward_eval(&x);
        }
        let mut parts = Vec::new();
        for chunk in x.axis_chunks_iter(ndarray::Axis(0), EVAL_CHUNK) {
            parts.push(self.network.forward_eval(&chunk.to_owned())?);
        }
        let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
        ndarray::concatenate(ndarray::Axis(0), &views).map_err(|e| data(e.to_string()))
    }

    pub fn predict<'a>(&self, rows: impl IntoIterator<Item = &'a [f64]>) -> Result<Vec<DecodedOutput>> {
        let raw = self.forward_raw(rows)?;
        Ok(raw.rows().into_iter().map(|r| head::decode_row(r, self.distance_scale)).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    /// Number of completed epochs.
    pub epoch: usize,
    pub config: TrainConfig,
    pub config_hash: String,
    pub distance_scale: f64,
    pub scaler: InputScaler,
    pub network: NetworkState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<AdamState>,
}

impl Checkpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut s = serde_json::to_string(self)?;
        s.push('\n');
        std::fs::write(path, s)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let ckpt: Checkpoint =
            serde_json::from_str(&text).map_err(|e| data(format!("{}: not a checkpoint: {e}", path.display())))?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(data(format!("{}: checkpoint version {} unsupported", path.display(), ckpt.version)));
        }
        Ok(ckpt)
    }
}

/// SHA-256 of the canonical JSON form of a training config.
pub fn config_hash(cfg: &TrainConfig) -> String {
    let json = serde_json::to_string(cfg).expect("config serializes");
    Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

/// Fraction of pairs whose thresholded match probability equals the label.
pub fn ism_accuracy(outputs: &[DecodedOutput], pairs: &[PairSample]) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    let hits = outputs.iter().zip(pairs).filter(|(o, p)| (o.ism_prob >= 0.5) == p.is_true_pair()).count();
    hits as f64 / pairs.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::StereoRig;
    use crate::pairs::frame_pairs;
    use crate::synth::{generate_frames, SceneConfig};

    #[test]
    fn scaler_uses_matching_pairs_for_the_delta_half() {
        let rig = StereoRig::default();
        let frames = generate_frames(&SceneConfig::default(), &rig, 3, 40).unwrap();
        let pairs: Vec<PairSample> = frames.iter().flat_map(|f| frame_pairs(f, 0.1, 3)).collect();
        let s = InputScaler::fit(&pairs).unwrap();
        assert_eq!(s.width(), FEATURE_LEN);
        let trues: Vec<&PairSample> = pairs.iter().filter(|p| p.is_true_pair()).collect();
        let half = FEATURE_LEN / 2;
        // first delta column is the nose x disparity
        let col: Vec<f64> = trues.iter().map(|p| p.features[half]).collect();
        let m = col.iter().sum::<f64>() / col.len() as f64;
        assert!((s.mean[half] - m).abs() < 1e-12);
        let all_m = pairs.iter().map(|p| p.features[0]).sum::<f64>() / pairs.len() as f64;
        assert!((s.mean[0] - all_m).abs() < 1e-12);

        let x = s.apply(pairs.iter().map(|p| p.features.as_slice())).unwrap();
        assert!(x.iter().all(|v| v.abs() <= INPUT_CLIP));
        assert!(x.iter().any(|v| v.abs() == INPUT_CLIP), "non-matching deltas should saturate");
        assert!(InputScaler::fit(&[]).is_err());
        assert!(s.apply([&[0.0; 3][..]]).is_err());
    }

    #[test]
    fn identity_scaler_does_not_clip() {
        let s = InputScaler::identity(2);
        assert_eq!(s.apply([&[100.0, -3.0][..]]).unwrap(), ndarray::array![[100.0, -3.0]]);
    }
}
