//! Network inputs built from left/right keypoint sets.
//!
//! Every left instance is paired with every right instance. A pair's
//! feature vector is the left skeleton followed by the left-minus-right
//! difference, both in normalized coordinates with joints interleaved as
//! `[x0, y0, x1, y1, ...]`. Left instances with no right candidate get a
//! single null pair whose difference half is zero.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{data, domain, Result};
use crate::geometry::{self, Eye, SphericalCoord};
use crate::keypoints::{KeypointSet, FLIP_PERMUTATION, NUM_JOINTS};
use crate::rng::{self, StreamRng};
use crate::synth::{FrameAnnotation, MAX_HEIGHT_M, MIN_HEIGHT_M};

pub const FEATURE_LEN: usize = 4 * NUM_JOINTS;
const HALF: usize = 2 * NUM_JOINTS;

/// Unlabeled pair produced by [`build_pairs`].
#[derive(Debug, Clone, PartialEq)]
pub struct PairFeatures {
    pub left_index: usize,
    pub right_index: Option<usize>,
    pub features: Vec<f64>,
    pub left_visible: [bool; NUM_JOINTS],
    pub right_visible: [bool; NUM_JOINTS],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSample {
    pub frame_id: u64,
    pub features: Vec<f64>,
    pub ism_label: u8,
    /// Ground truth of the left instance.
    pub gt: SphericalCoord,
    pub left_person_id: u32,
    pub right_person_id: Option<u32>,
    pub is_null_pair: bool,
    pub is_augmented: bool,
    /// True height of the left instance, for knowledge injection.
    pub source_height_m: f64,
    pub left_visible: [bool; NUM_JOINTS],
    pub right_visible: [bool; NUM_JOINTS],
}

impl PairSample {
    pub fn is_true_pair(&self) -> bool {
        self.ism_label == 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.features.len() != FEATURE_LEN {
            return Err(data(format!("pair feature length {} != {FEATURE_LEN}", self.features.len())));
        }
        if self.features.iter().any(|v| !v.is_finite()) {
            return Err(data("pair features must be finite"));
        }
        if self.ism_label > 1 {
            return Err(data(format!("ism label must be 0 or 1, got {}", self.ism_label)));
        }
        if self.ism_label == 1 && Some(self.left_person_id) != self.right_person_id {
            return Err(data("true pair must join the same person"));
        }
        if !(self.gt.r > 0.0) {
            return Err(data("ground-truth distance must be positive"));
        }
        Ok(())
    }
}

fn pair_features(left: &KeypointSet, right: Option<&KeypointSet>) -> Vec<f64> {
    let mut f = vec![0.0; FEATURE_LEN];
    for j in 0..NUM_JOINTS {
        if !left.visible[j] {
            continue;
        }
        f[2 * j] = left.joints[j][0];
        f[2 * j + 1] = left.joints[j][1];
        if let Some(r) = right {
            if r.visible[j] {
                f[HALF + 2 * j] = left.joints[j][0] - r.joints[j][0];
                f[HALF + 2 * j + 1] = left.joints[j][1] - r.joints[j][1];
            }
        }
    }
    f
}

/// All-vs-all pairs, left index major. When `right` is empty, one null pair
/// per left instance.
pub fn build_pairs(left: &[KeypointSet], right: &[KeypointSet]) -> Vec<PairFeatures> {
    let mut out = Vec::with_capacity(left.len() * right.len().max(1));
    for (li, l) in left.iter().enumerate() {
        if right.is_empty() {
            out.push(null_pair(li, l));
            continue;
        }
        for (ri, r) in right.iter().enumerate() {
            out.push(PairFeatures {
                left_index: li,
                right_index: Some(ri),
                features: pair_features(l, Some(r)),
                left_visible: l.visible,
                right_visible: r.visible,
            });
        }
    }
    out
}

pub fn null_pair(left_index: usize, left: &KeypointSet) -> PairFeatures {
    PairFeatures {
        left_index,
        right_index: None,
        features: pair_features(left, None),
        left_visible: left.visible,
        right_visible: [false; NUM_JOINTS],
    }
}

/// Attach ISM labels and left-instance ground truth. Pairs whose left
/// detection has no ground-truth instance are dropped.
pub fn label_pairs(pairs: Vec<PairFeatures>, frame: &FrameAnnotation) -> Vec<PairSample> {
    pairs
        .into_iter()
        .filter_map(|p| {
            let left_id = frame.left.get(p.left_index)?.person_id?;
            let inst = frame.instance(left_id)?;
            let gt = inst.spherical().ok()?;
            let right_id = p.right_index.and_then(|ri| frame.right.get(ri)).and_then(|d| d.person_id);
            let ism_label = u8::from(p.right_index.is_some() && right_id == Some(left_id));
            Some(PairSample {
                frame_id: frame.frame_id,
                features: p.features,
                ism_label,
                gt,
                left_person_id: left_id,
                right_person_id: right_id,
                is_null_pair: p.right_index.is_none(),
                is_augmented: false,
                source_height_m: inst.height_m,
                left_visible: p.left_visible,
                right_visible: p.right_visible,
            })
        })
        .collect()
}

pub fn normalized_detections(frame: &FrameAnnotation) -> (Vec<KeypointSet>, Vec<KeypointSet>) {
    let left = frame.left.iter().map(|d| d.keypoints.normalize(&frame.rig, Eye::Left)).collect();
    let right = frame.right.iter().map(|d| d.keypoints.normalize(&frame.rig, Eye::Right)).collect();
    (left, right)
}

/// Labeled pairs for one frame, plus extra null pairs for a random
/// `null_fraction` of left instances that do have right candidates.
pub fn frame_pairs(frame: &FrameAnnotation, null_fraction: f64, seed: u64) -> Vec<PairSample> {
    let (left, right) = normalized_detections(frame);
    let mut pairs = build_pairs(&left, &right);
    if !right.is_empty() && null_fraction > 0.0 {
        let mut rng = rng::substream(seed, rng::PAIRS, frame.frame_id);
        for (li, l) in left.iter().enumerate() {
            if rng.random::<f64>() < null_fraction {
                pairs.push(null_pair(li, l));
            }
        }
    }
    label_pairs(pairs, frame)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BalanceMode {
    /// Drop samples from the larger class.
    #[default]
    Downsample,
    /// Resample the smaller class with replacement.
    Replicate,
}

/// Equalize true and false pair counts. Kept samples retain their input
/// order; replicated samples are appended. Returns the input unchanged if
/// either class is empty.
pub fn balance_pairs(pairs: Vec<PairSample>, mode: BalanceMode, seed: u64) -> Vec<PairSample> {
    let (trues, falses): (Vec<usize>, Vec<usize>) = (0..pairs.len()).partition(|&i| pairs[i].is_true_pair());
    if trues.is_empty() || falses.is_empty() || trues.len() == falses.len() {
        return pairs;
    }
    let mut rng = rng::substream(seed, rng::BALANCE, 0);
    let (small, large) = if trues.len() < falses.len() { (trues, falses) } else { (falses, trues) };
    match mode {
        BalanceMode::Downsample => {
            let mut keep: Vec<usize> = large.choose_multiple(&mut rng, small.len()).copied().collect();
            keep.extend(&small);
            keep.sort_unstable();
            let mut slots: Vec<Option<PairSample>> = pairs.into_iter().map(Some).collect();
            keep.into_iter().map(|i| slots[i].take().expect("unique index")).collect()
        }
        BalanceMode::Replicate => {
            let extra: Vec<usize> =
                (0..large.len() - small.len()).map(|_| small[rng.random_range(0..small.len())]).collect();
            let mut out = pairs.clone();
            out.extend(extra.into_iter().map(|i| pairs[i].clone()));
            out
        }
    }
}

/// Knowledge injection: relabel a pair as if the left person had height
/// `height_m` instead of `source_height_m`. The image evidence of the left
/// instance is kept, so the distance scales with the height ratio at fixed
/// angles. For true pairs the horizontal differences are rescaled so the
/// implied disparity matches the new depth; false and null pairs carry no
/// disparity of the left person and keep their features.
pub fn knowledge_injection(pair: &PairSample, height_m: f64) -> Result<PairSample> {
    if !(height_m > MIN_HEIGHT_M && height_m < MAX_HEIGHT_M) {
        return Err(domain(format!("injected height {height_m} outside ({MIN_HEIGHT_M}, {MAX_HEIGHT_M})")));
    }
    if !(pair.source_height_m > 0.0) {
        return Err(domain("pair has no source height"));
    }
    let scale = height_m / pair.source_height_m;
    let mut out = pair.clone();
    out.gt.r = pair.gt.r * scale;
    if pair.is_true_pair() {
        for j in 0..NUM_JOINTS {
            out.features[HALF + 2 * j] = pair.features[HALF + 2 * j] / scale;
        }
    }
    out.source_height_m = height_m;
    out.is_augmented = true;
    Ok(out)
}

/// Horizontal flip with left/right camera swap. The mirrored right image
/// becomes the new left image; joints are relabeled left<->right; the
/// ground truth becomes the mirrored position seen from the new left
/// camera, `(baseline - x, y, z)`. Null pairs cannot be flipped.
pub fn flip_augment(pair: &PairSample, baseline_m: f64) -> Result<PairSample> {
    if pair.is_null_pair {
        return Err(domain("null pair has no right instance to flip into"));
    }
    let f = &pair.features;
    let mut features = vec![0.0; FEATURE_LEN];
    let mut left_visible = [false; NUM_JOINTS];
    let mut right_visible = [false; NUM_JOINTS];
    for j in 0..NUM_JOINTS {
        let k = FLIP_PERMUTATION[j];
        left_visible[k] = pair.right_visible[j];
        right_visible[k] = pair.left_visible[j];
        let (dx, dy) = (f[HALF + 2 * j], f[HALF + 2 * j + 1]);
        if pair.right_visible[j] {
            // right joint = left joint - delta, only recoverable when both are visible
            let (rx, ry) = if pair.left_visible[j] { (f[2 * j] - dx, f[2 * j + 1] - dy) } else { (0.0, 0.0) };
            features[2 * k] = -rx;
            features[2 * k + 1] = ry;
        }
        if pair.left_visible[j] && pair.right_visible[j] {
            features[HALF + 2 * k] = dx;
            features[HALF + 2 * k + 1] = -dy;
        }
    }
    let [x, y, z] = pair.gt.to_cartesian();
    let gt = geometry::cartesian_to_spherical([baseline_m - x, y, z])?;
    Ok(PairSample {
        features,
        gt,
        left_person_id: pair.right_person_id.unwrap_or(pair.left_person_id),
        right_person_id: Some(pair.left_person_id),
        left_visible,
        right_visible,
        ..pair.clone()
    })
}

/// Per-epoch training view: balance, inject `ki_multiplier` augmented copies
/// per pair, flip true pairs with probability one half, shuffle.
pub struct EpochAugmenter {
    pub balance: BalanceMode,
    pub ki_multiplier: usize,
    pub ki_range: (f64, f64),
    pub flip: bool,
    pub baseline_m: f64,
}

impl EpochAugmenter {
    pub fn epoch(&self, pairs: &[PairSample], seed: u64, epoch: u64) -> Result<Vec<PairSample>> {
        let balanced = balance_pairs(pairs.to_vec(), self.balance, rng::derive_seed(seed, rng::BALANCE, epoch));
        let mut rng: StreamRng = rng::substream(seed, rng::AUGMENT, epoch);
        let mut out = Vec::with_capacity(balanced.len() * (1 + self.ki_multiplier));
        for p in &balanced {
            out.push(p.clone());
            for _ in 0..self.ki_multiplier {
                let h = loop {
                    let h = rng.random_range(self.ki_range.0..=self.ki_range.1);
                    if h > MIN_HEIGHT_M && h < MAX_HEIGHT_M {
                        break h;
                    }
                };
                out.push(knowledge_injection(p, h)?);
            }
        }
        if self.flip {
            for p in out.iter_mut() {
                if p.is_true_pair() && rng.random::<bool>() {
                    *p = flip_augment(p, self.baseline_m)?;
                }
            }
        }
        out.shuffle(&mut rng::substream(seed, rng::SHUFFLE, epoch));
        Ok(out)
    }
}
