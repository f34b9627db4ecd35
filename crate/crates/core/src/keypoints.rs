//! COCO-style 17-joint skeletons in pixel and normalized image coordinates.

use serde::{Deserialize, Serialize};

use crate::geometry::{self, Eye, StereoRig};

pub const NUM_JOINTS: usize = 17;

pub const JOINT_NAMES: [&str; NUM_JOINTS] = [
    "nose",
    "left_eye",
    "right_eye",
    "left_ear",
    "right_ear",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hip",
    "right_hip",
    "left_knee",
    "right_knee",
    "left_ankle",
    "right_ankle",
];

/// Index permutation mapping each joint to its mirror-image counterpart.
pub const FLIP_PERMUTATION: [usize; NUM_JOINTS] = [0, 2, 1, 4, 3, 6, 5, 8, 7, 10, 9, 12, 11, 14, 13, 16, 15];

/// Topmost joints of the canonical skeleton (eyes and ears).
pub const HEAD_TOP_JOINTS: [usize; 4] = [1, 2, 3, 4];
pub const ANKLE_JOINTS: [usize; 2] = [15, 16];
pub const HIP_JOINTS: [usize; 2] = [11, 12];

/// One person's joints in one image, pixel coordinates. Invisible joints
/// carry `(0, 0)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PixelKeypoints {
    pub joints: [[f64; 2]; NUM_JOINTS],
    pub visible: [bool; NUM_JOINTS],
}

/// One person's joints in one image, normalized coordinates
/// `((u - u0)/f, (v - v0)/f)`. Invisible joints carry `(0, 0)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeypointSet {
    pub eye: Eye,
    pub joints: [[f64; 2]; NUM_JOINTS],
    pub visible: [bool; NUM_JOINTS],
}

impl PixelKeypoints {
    pub fn new(joints: [[f64; 2]; NUM_JOINTS], visible: [bool; NUM_JOINTS]) -> Self {
        let mut kp = Self { joints, visible };
        kp.zero_invisible();
        kp
    }

    fn zero_invisible(&mut self) {
        for (j, v) in self.joints.iter_mut().zip(self.visible) {
            if !v {
                *j = [0.0, 0.0];
            }
        }
    }

    pub fn visible_count(&self) -> usize {
        self.visible.iter().filter(|v| **v).count()
    }

    /// Axis-aligned box `[u_min, v_min, u_max, v_max]` of the visible joints.
    pub fn bbox(&self) -> Option<[f64; 4]> {
        bbox_of(&self.joints, &self.visible)
    }

    pub fn normalize(&self, rig: &StereoRig, eye: Eye) -> KeypointSet {
        let mut joints = [[0.0; 2]; NUM_JOINTS];
        for ((out, &p), &vis) in joints.iter_mut().zip(&self.joints).zip(&self.visible) {
            if vis {
                *out = geometry::normalize(p, rig);
            }
        }
        KeypointSet { eye, joints, visible: self.visible }
    }

    pub fn is_finite(&self) -> bool {
        self.joints.iter().flatten().all(|v| v.is_finite())
    }
}

impl KeypointSet {
    pub fn visible_count(&self) -> usize {
        self.visible.iter().filter(|v| **v).count()
    }

    /// Mean normalized position of the visible hips, falling back to the
    /// centroid of all visible joints.
    pub fn center(&self) -> Option<[f64; 2]> {
        mean_of(&self.joints, &self.visible, &HIP_JOINTS)
            .or_else(|| mean_of(&self.joints, &self.visible, &(0..NUM_JOINTS).collect::<Vec<_>>()))
    }
}

pub(crate) fn mean_of(
    joints: &[[f64; 2]; NUM_JOINTS],
    visible: &[bool; NUM_JOINTS],
    idx: &[usize],
) -> Option<[f64; 2]> {
    let mut sum = [0.0, 0.0];
    let mut n = 0usize;
    for &j in idx {
        if visible[j] {
            sum[0] += joints[j][0];
            sum[1] += joints[j][1];
            n += 1;
        }
    }
    (n > 0).then(|| [sum[0] / n as f64, sum[1] / n as f64])
}

pub(crate) fn bbox_of(joints: &[[f64; 2]; NUM_JOINTS], visible: &[bool; NUM_JOINTS]) -> Option<[f64; 4]> {
    let mut b = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
    let mut any = false;
    for (p, v) in joints.iter().zip(visible) {
        if *v {
            any = true;
            b[0] = b[0].min(p[0]);
            b[1] = b[1].min(p[1]);
            b[2] = b[2].max(p[0]);
            b[3] = b[3].max(p[1]);
        }
    }
    any.then_some(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flip_permutation_is_involution_matching_names() {
        for j in 0..NUM_JOINTS {
            let k = FLIP_PERMUTATION[j];
            assert_eq!(FLIP_PERMUTATION[k], j);
            let swapped = JOINT_NAMES[j].replace("left", "#").replace("right", "left").replace('#', "right");
            assert_eq!(JOINT_NAMES[k], swapped);
        }
    }

    #[test]
    fn invisible_joints_are_zeroed() {
        let mut joints = [[5.0, 6.0]; NUM_JOINTS];
        joints[3] = [700.0, 100.0];
        let mut visible = [true; NUM_JOINTS];
        visible[3] = false;
        let kp = PixelKeypoints::new(joints, visible);
        assert_eq!(kp.joints[3], [0.0, 0.0]);
        assert_eq!(kp.bbox(), Some([5.0, 6.0, 5.0, 6.0]));
        let n = kp.normalize(&StereoRig::default(), Eye::Left);
        assert_eq!(n.joints[3], [0.0, 0.0]);
        assert!(!n.visible[3]);
    }
}
