//! Non-learned reference methods.

use crate::geometry::{self, HeightPrior, StereoRig};
use crate::keypoints::{KeypointSet, PixelKeypoints, ANKLE_JOINTS, HEAD_TOP_JOINTS, NUM_JOINTS};

/// Radial distance of the point at depth `depth_m` seen at normalized
/// image position `xy`.
fn radial_at(depth_m: f64, xy: [f64; 2]) -> f64 {
    depth_m * (1.0 + xy[0] * xy[0] + xy[1] * xy[1]).sqrt()
}

/// Hip midpoint of a left-image detection in normalized coordinates,
/// falling back to the centroid of visible joints.
fn left_center(left: &PixelKeypoints, rig: &StereoRig) -> Option<[f64; 2]> {
    left.normalize(rig, geometry::Eye::Left).center()
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median disparity over joints visible in both images, in pixels.
pub fn median_disparity(left: &PixelKeypoints, right: &PixelKeypoints) -> Option<f64> {
    let mut d: Vec<f64> = (0..NUM_JOINTS)
        .filter(|&j| left.visible[j] && right.visible[j])
        .map(|j| left.joints[j][0] - right.joints[j][0])
        .collect();
    (!d.is_empty()).then(|| median(&mut d))
}

/// Depth from the median joint disparity, converted to the radial distance
/// of the left detection's hip midpoint. `None` without a usable
/// (positive) disparity.
pub fn b_median(left: &PixelKeypoints, right: &PixelKeypoints, rig: &StereoRig) -> Option<f64> {
    let d = median_disparity(left, right)?;
    let z = geometry::disparity_to_depth(d, rig).ok()?;
    Some(radial_at(z, left_center(left, rig)?))
}

/// Pose distances between a left skeleton and each right candidate after
/// subtracting each pose's visible-joint centroid; invisible joints count
/// as zero. Returns the argmin (lowest index on ties) and all distances.
pub fn b_pose_similarity(left: &KeypointSet, candidates: &[KeypointSet]) -> Option<(usize, Vec<f64>)> {
    let centered = |k: &KeypointSet| -> [f64; 2 * NUM_JOINTS] {
        let mut out = [0.0; 2 * NUM_JOINTS];
        let all: Vec<usize> = (0..NUM_JOINTS).collect();
        let c = crate::keypoints::mean_of(&k.joints, &k.visible, &all).unwrap_or([0.0, 0.0]);
        for j in 0..NUM_JOINTS {
            if k.visible[j] {
                out[2 * j] = k.joints[j][0] - c[0];
                out[2 * j + 1] = k.joints[j][1] - c[1];
            }
        }
        out
    };
    if candidates.is_empty() {
        return None;
    }
    let l = centered(left);
    let scores: Vec<f64> = candidates
        .iter()
        .map(|c| centered(c).iter().zip(&l).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
        .collect();
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s < scores[best] {
            best = i;
        }
    }
    Some((best, scores))
}

/// Pixel height from the head-top joints to the ankles.
pub fn pixel_height(kp: &PixelKeypoints) -> Option<f64> {
    let top = crate::keypoints::mean_of(&kp.joints, &kp.visible, &HEAD_TOP_JOINTS)?;
    let bottom = crate::keypoints::mean_of(&kp.joints, &kp.visible, &ANKLE_JOINTS)?;
    let h = bottom[1] - top[1];
    (h > 0.0).then_some(h)
}

/// Height-prior distance: depth `f * mean_height / pixel_height`, then the
/// radial distance of the hip midpoint. Needs a head-top and an ankle joint.
pub fn mono_geometric(left: &PixelKeypoints, rig: &StereoRig, prior: &HeightPrior) -> Option<f64> {
    let h = pixel_height(left)?;
    let z = rig.focal_px * prior.mean_m() / h;
    Some(radial_at(z, left_center(left, rig)?))
}
