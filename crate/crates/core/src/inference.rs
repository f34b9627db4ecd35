//! Per-frame prediction: score every left/right pair in one batch, keep the
//! best-matching pair for each left instance, decode it to a 3D position.

use serde::{Deserialize, Serialize};

use crate::error::{data, Result};
use crate::geometry::{self, Eye, SphericalCoord, StereoRig};
use crate::model::{DecodedOutput, Model};
use crate::pairs::{build_pairs, PairFeatures, FEATURE_LEN};
use crate::synth::{Detection, FrameAnnotation};

/// Match probability at or above which a localization counts as stereo.
pub const STEREO_THRESHOLD: f64 = 0.5;
pub const DEFAULT_IOU: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Stereo,
    Mono,
}

/// One output line of `predict`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Localization {
    pub frame_id: u64,
    /// Id of the left-image detection.
    pub instance_id: u32,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub r: f64,
    pub beta: f64,
    pub psi: f64,
    /// Interval half-width in meters.
    pub b: f64,
    pub ism: f64,
    pub mode: Mode,
    /// Right detection of the selected pair; absent for the null pair.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub right_instance_id: Option<u32>,
}

impl Localization {
    fn new(frame_id: u64, instance_id: u32, right_instance_id: Option<u32>, out: &DecodedOutput) -> Self {
        let spherical = SphericalCoord { r: out.r, beta: out.beta, psi: out.psi };
        let [x, y, z] = geometry::spherical_to_cartesian(&spherical);
        Self {
            frame_id,
            instance_id,
            x,
            y,
            z,
            r: out.r,
            beta: out.beta,
            psi: out.psi,
            b: out.spread_b,
            ism: out.ism_prob,
            mode: if out.ism_prob >= STEREO_THRESHOLD { Mode::Stereo } else { Mode::Mono },
            right_instance_id,
        }
    }

    pub fn position_xyz(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn spherical(&self) -> SphericalCoord {
        SphericalCoord { r: self.r, beta: self.beta, psi: self.psi }
    }
}

/// Index of the best right candidate per left instance: highest match
/// probability, lowest right index on ties. `None` marks the null pair.
pub fn select_pairs(pairs: &[PairFeatures], outputs: &[DecodedOutput], n_left: usize) -> Vec<usize> {
    let mut best: Vec<Option<usize>> = vec![None; n_left];
    for (k, p) in pairs.iter().enumerate() {
        let slot = &mut best[p.left_index];
        match *slot {
            Some(b) if outputs[k].ism_prob <= outputs[b].ism_prob => {}
            _ => *slot = Some(k),
        }
    }
    best.into_iter().map(|b| b.expect("every left instance has a pair")).collect()
}

pub fn predict_frame(
    model: &Model,
    rig: &StereoRig,
    frame_id: u64,
    left: &[Detection],
    right: &[Detection],
) -> Result<Vec<Localization>> {
    if model.input_dim() != FEATURE_LEN {
        return Err(data(format!("model expects {} inputs, pairs have {FEATURE_LEN}", model.input_dim())));
    }
    if left.is_empty() {
        return Ok(Vec::new());
    }
    let kl: Vec<_> = left.iter().map(|d| d.keypoints.normalize(rig, Eye::Left)).collect();
    let kr: Vec<_> = right.iter().map(|d| d.keypoints.normalize(rig, Eye::Right)).collect();
    let pairs = build_pairs(&kl, &kr);
    let outputs = model.predict(pairs.iter().map(|p| p.features.as_slice()))?;
    let chosen = select_pairs(&pairs, &outputs, left.len());
    Ok(chosen
        .into_iter()
        .map(|k| {
            let p = &pairs[k];
            Localization::new(frame_id, left[p.left_index].id, p.right_index.map(|r| right[r].id), &outputs[k])
        })
        .collect())
}

pub fn predict_annotation(model: &Model, frame: &FrameAnnotation) -> Result<Vec<Localization>> {
    predict_frame(model, &frame.rig, frame.frame_id, &frame.left, &frame.right)
}

pub fn iou(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    let w = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let h = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = w * h;
    let area = |r: &[f64; 4]| (r[2] - r[0]).max(0.0) * (r[3] - r[1]).max(0.0);
    let union = area(a) + area(b) - inter;
    if union > 0.0 {
        inter / union
    } else if a == b {
        // degenerate identical boxes
        1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GtMatch {
    /// Index into the localization list.
    pub prediction: usize,
    pub person_id: u32,
    pub iou: f64,
}

/// Greedy one-to-one assignment by descending IoU. Returns
/// `(prediction index, gt index, iou)` sorted by prediction index. Equal
/// IoUs resolve to the lower prediction, then the lower gt index.
pub fn greedy_box_match(
    pred: &[Option<[f64; 4]>],
    gt: &[Option<[f64; 4]>],
    iou_threshold: f64,
) -> Vec<(usize, usize, f64)> {
    let mut candidates = Vec::new();
    for (pi, pb) in pred.iter().enumerate() {
        let Some(pb) = pb else { continue };
        for (gi, gb) in gt.iter().enumerate() {
            let Some(gb) = gb else { continue };
            let v = iou(pb, gb);
            if v >= iou_threshold {
                candidates.push((v, pi, gi));
            }
        }
    }
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_p = vec![false; pred.len()];
    let mut used_g = vec![false; gt.len()];
    let mut out = Vec::new();
    for (v, pi, gi) in candidates {
        if used_p[pi] || used_g[gi] {
            continue;
        }
        used_p[pi] = true;
        used_g[gi] = true;
        out.push((pi, gi, v));
    }
    out.sort_by_key(|m| m.0);
    out
}

/// Left-image boxes of the ground-truth instances visible in the left image.
pub fn gt_boxes(frame: &FrameAnnotation) -> Vec<Option<[f64; 4]>> {
    frame.instances.iter().map(|i| i.visible_left.then_some(i.bbox_left)).collect()
}

/// Greedy one-to-one matching of predictions to ground-truth instances by
/// descending IoU of left-image keypoint boxes. Predictions whose left
/// detection is missing from the frame are left unmatched.
pub fn match_to_ground_truth(locs: &[Localization], frame: &FrameAnnotation, iou_threshold: f64) -> Vec<GtMatch> {
    let boxes: Vec<Option<[f64; 4]>> = locs
        .iter()
        .map(|l| frame.left.iter().find(|d| d.id == l.instance_id).and_then(|d| d.keypoints.bbox()))
        .collect();
    greedy_box_match(&boxes, &gt_boxes(frame), iou_threshold)
        .into_iter()
        .map(|(pi, gi, v)| GtMatch { prediction: pi, person_id: frame.instances[gi].person_id, iou: v })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keypoints::{PixelKeypoints, NUM_JOINTS};
    use crate::model::{train, TrainConfig};
    use crate::pairs::frame_pairs;
    use crate::synth::{generate_frames, generate_scene, SceneConfig, SceneInstance};
    use approx::assert_relative_eq;

    fn tiny_model() -> Model {
        let rig = StereoRig::default();
        let frames = generate_frames(&SceneConfig::default(), &rig, 11, 10).unwrap();
        let pairs: Vec<_> = frames.iter().flat_map(|f| frame_pairs(f, 0.1, 11)).collect();
        let cfg = TrainConfig { epochs: 1, batch_size: 32, hidden: 16, residual_blocks: 1, ..Default::default() };
        let out = train(&pairs, &pairs, &rig, &cfg, |_| {}).unwrap();
        Model::from_checkpoint(&out.checkpoint).unwrap()
    }

    fn frame(seed: u64) -> FrameAnnotation {
        let cfg = SceneConfig { people: [3, 5], mono_only_fraction: 0.2, ..Default::default() };
        generate_scene(&cfg, &StereoRig::default(), seed, 0).unwrap()
    }

    fn out(ism: f64) -> DecodedOutput {
        DecodedOutput { r: 10.0, spread_b: 1.0, beta: 0.0, psi: 0.0, ism_prob: ism }
    }

    fn pf(left: usize, right: Option<usize>) -> PairFeatures {
        PairFeatures {
            left_index: left,
            right_index: right,
            features: vec![],
            left_visible: [true; NUM_JOINTS],
            right_visible: [true; NUM_JOINTS],
        }
    }

    #[test]
    fn selection_and_tie_break() {
        let pairs =
            vec![pf(0, Some(0)), pf(0, Some(1)), pf(0, Some(2)), pf(1, Some(0)), pf(1, Some(1)), pf(1, Some(2))];
        let outs = vec![out(0.2), out(0.7), out(0.7), out(0.9), out(0.1), out(0.95)];
        assert_eq!(select_pairs(&pairs, &outs, 2), vec![1, 5]);
    }

    #[test]
    fn argmax_stability_when_adding_a_candidate() {
        let pairs = vec![pf(0, Some(0)), pf(0, Some(1))];
        let base = select_pairs(&pairs, &[out(0.3), out(0.6)], 1);
        let mut more = pairs.clone();
        more.push(pf(0, Some(2)));
        assert_eq!(select_pairs(&more, &[out(0.3), out(0.6), out(0.6)], 1), base);
        assert_eq!(select_pairs(&more, &[out(0.3), out(0.6), out(0.61)], 1), vec![2]);
    }

    #[test]
    fn one_output_per_left_instance() {
        let model = tiny_model();
        for seed in 0..5 {
            let f = frame(seed);
            let locs = predict_annotation(&model, &f).unwrap();
            assert_eq!(locs.len(), f.left.len());
            for (l, d) in locs.iter().zip(&f.left) {
                assert_eq!(l.instance_id, d.id);
                assert!(l.b > 0.0 && l.r > 0.0);
                let back = geometry::cartesian_to_spherical(l.position_xyz()).unwrap();
                assert_relative_eq!(back.r, l.r, max_relative = 1e-9);
                assert_relative_eq!(back.beta, l.beta, epsilon = 1e-9);
                assert_relative_eq!(back.psi, l.psi, epsilon = 1e-9);
                assert_eq!(l.mode == Mode::Stereo, l.ism >= STEREO_THRESHOLD);
            }
        }
    }

    #[test]
    fn no_right_detections_gives_null_pairs() {
        let model = tiny_model();
        let f = frame(3);
        let locs = predict_frame(&model, &f.rig, 0, &f.left, &[]).unwrap();
        assert_eq!(locs.len(), f.left.len());
        assert!(locs.iter().all(|l| l.right_instance_id.is_none()));
        assert!(predict_frame(&model, &f.rig, 0, &[], &f.right).unwrap().is_empty());
    }

    #[test]
    fn batch_order_does_not_change_outputs() {
        let model = tiny_model();
        let f = frame(4);
        let a = predict_annotation(&model, &f).unwrap();
        let mut left = f.left.clone();
        left.reverse();
        let mut b = predict_frame(&model, &f.rig, f.frame_id, &left, &f.right).unwrap();
        b.reverse();
        assert_eq!(a, b);
    }

    #[test]
    fn localization_json_shape() {
        let l = Localization::new(3, 7, None, &out(0.2));
        let v: serde_json::Value = serde_json::to_value(&l).unwrap();
        for key in ["frame_id", "instance_id", "x", "y", "z", "r", "beta", "psi", "b", "ism", "mode"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(v["mode"], "mono");
        assert!(v.get("right_instance_id").is_none());
    }

    fn gt_frame(boxes: &[[f64; 4]]) -> FrameAnnotation {
        let instances = boxes
            .iter()
            .enumerate()
            .map(|(i, b)| SceneInstance {
                person_id: i as u32,
                center3d: [0.0, 0.0, 10.0],
                height_m: 1.7,
                visible_left: true,
                visible_right: true,
                occlusion_level: 0.0,
                bbox_left: *b,
            })
            .collect();
        FrameAnnotation { frame_id: 0, rig: StereoRig::default(), instances, left: vec![], right: vec![] }
    }

    fn det(id: u32, b: [f64; 4]) -> Detection {
        let mut joints = [[0.0; 2]; NUM_JOINTS];
        joints[0] = [b[0], b[1]];
        joints[1] = [b[2], b[3]];
        let mut visible = [false; NUM_JOINTS];
        visible[0] = true;
        visible[1] = true;
        Detection { id, person_id: None, keypoints: PixelKeypoints::new(joints, visible) }
    }

    #[test]
    fn gt_matching() {
        assert_eq!(iou(&[0.0, 0.0, 2.0, 2.0], &[0.0, 0.0, 2.0, 2.0]), 1.0);
        assert_eq!(iou(&[0.0, 0.0, 1.0, 1.0], &[2.0, 2.0, 3.0, 3.0]), 0.0);
        assert_relative_eq!(iou(&[0.0, 0.0, 2.0, 2.0], &[1.0, 0.0, 3.0, 2.0]), 1.0 / 3.0);

        let mut f = gt_frame(&[[100.0, 100.0, 120.0, 160.0], [300.0, 100.0, 320.0, 160.0]]);
        f.left = vec![
            det(5, [100.0, 100.0, 120.0, 160.0]),
            det(6, [101.0, 100.0, 121.0, 160.0]),
            det(7, [500.0, 0.0, 510.0, 10.0]),
        ];
        let locs: Vec<_> = [5, 6, 7].iter().map(|&id| Localization::new(0, id, None, &out(0.9))).collect();
        let m = match_to_ground_truth(&locs, &f, DEFAULT_IOU);
        assert_eq!(m.len(), 1, "one gt, two overlapping predictions: best wins, other unmatched");
        assert_eq!((m[0].prediction, m[0].person_id, m[0].iou), (0, 0, 1.0));
    }
}
