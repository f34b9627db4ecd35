//! Synthetic stereo scenes of standing pedestrians.
//!
//! People are planar skeletons (every joint at the depth of the mid-hip)
//! standing on a flat ground plane, projected into both eyes with additive
//! Gaussian pixel noise. A configurable fraction is hidden from the right
//! eye to model one-sided occlusion.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{config, data, Result};
use crate::geometry::{self, Eye, HeightPrior, SphericalCoord, StereoRig};
use crate::keypoints::{PixelKeypoints, NUM_JOINTS};
use crate::rng::{self, StreamRng};

pub const MIN_HEIGHT_M: f64 = 1.0;
pub const MAX_HEIGHT_M: f64 = 2.2;

/// Canonical upright skeleton. Offsets are `(dx, dy)` from the mid-hip in
/// units of body height, x to the image right, y down. The person faces the
/// camera, so left-side joints have positive `dx`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonTemplate {
    pub offsets: [[f64; 2]; NUM_JOINTS],
}

impl Default for PersonTemplate {
    fn default() -> Self {
        Self {
            offsets: [
                [0.0, -0.48],
                [0.02, -0.52],
                [-0.02, -0.52],
                [0.045, -0.52],
                [-0.045, -0.52],
                [0.11, -0.33],
                [-0.11, -0.33],
                [0.14, -0.17],
                [-0.14, -0.17],
                [0.13, -0.02],
                [-0.13, -0.02],
                [0.055, 0.0],
                [-0.055, 0.0],
                [0.06, 0.25],
                [-0.06, 0.25],
                [0.06, 0.48],
                [-0.06, 0.48],
            ],
        }
    }
}

impl PersonTemplate {
    /// Vertical extent (top joint to ankle) in height units; 1.0 for a valid
    /// template.
    pub fn vertical_extent(&self) -> f64 {
        let (lo, hi) =
            self.offsets.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), o| (lo.min(o[1]), hi.max(o[1])));
        hi - lo
    }

    /// 3D joint positions for a person with mid-hip at `center` (planar).
    pub fn place(&self, center: [f64; 3], height_m: f64) -> [[f64; 3]; NUM_JOINTS] {
        let mut out = [[0.0; 3]; NUM_JOINTS];
        for (p, o) in out.iter_mut().zip(&self.offsets) {
            *p = [center[0] + o[0] * height_m, center[1] + o[1] * height_m, center[2]];
        }
        out
    }
}

/// Fraction of heights drawn uniformly instead of from the prior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeightTail {
    pub low_m: f64,
    pub high_m: f64,
    pub fraction: f64,
}

impl std::str::FromStr for HeightTail {
    type Err = crate::Error;

    /// Parses `uniform:LOW,HIGH` or `uniform:LOW,HIGH@FRACTION`.
    fn from_str(s: &str) -> Result<Self> {
        let body = s
            .strip_prefix("uniform:")
            .ok_or_else(|| config(format!("height tail must look like uniform:LOW,HIGH, got {s:?}")))?;
        let (range, fraction) = match body.split_once('@') {
            Some((r, f)) => (r, f.parse::<f64>().map_err(|e| config(format!("bad tail fraction: {e}")))?),
            None => (body, 1.0),
        };
        let (lo, hi) =
            range.split_once(',').ok_or_else(|| config(format!("height tail range needs LOW,HIGH, got {range:?}")))?;
        let parse = |v: &str| v.trim().parse::<f64>().map_err(|e| config(format!("bad height {v:?}: {e}")));
        let tail = HeightTail { low_m: parse(lo)?, high_m: parse(hi)?, fraction };
        tail.validate()?;
        Ok(tail)
    }
}

impl HeightTail {
    pub fn validate(&self) -> Result<()> {
        if !(MIN_HEIGHT_M..=MAX_HEIGHT_M).contains(&self.low_m)
            || !(MIN_HEIGHT_M..=MAX_HEIGHT_M).contains(&self.high_m)
            || self.low_m >= self.high_m
        {
            return Err(config(format!("height tail {self:?} must lie in [{MIN_HEIGHT_M}, {MAX_HEIGHT_M}]")));
        }
        if !(0.0..=1.0).contains(&self.fraction) {
            return Err(config("height tail fraction must be in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    /// Horizontal ground distance range in meters.
    pub distance_range_m: [f64; 2],
    pub azimuth_range_rad: [f64; 2],
    pub people: [usize; 2],
    pub height_prior: HeightPrior,
    pub height_tail: Option<HeightTail>,
    pub noise_px: f64,
    pub mono_only_fraction: f64,
    /// Elevation of the mid-hip below the optical axis, radians. Drawn
    /// independently of distance, so where a person sits in the image says
    /// nothing about how far away they are; only their pixel size does.
    pub elevation_range_rad: [f64; 2],
    pub min_visible_joints: usize,
    pub max_placement_attempts: usize,
    pub template: PersonTemplate,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            distance_range_m: [5.0, 50.0],
            azimuth_range_rad: [-0.6, 0.6],
            people: [1, 6],
            height_prior: HeightPrior::default(),
            height_tail: None,
            noise_px: 1.0,
            mono_only_fraction: 0.15,
            elevation_range_rad: [-0.02, 0.15],
            min_visible_joints: 6,
            max_placement_attempts: 200,
            template: PersonTemplate::default(),
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let [dmin, dmax] = self.distance_range_m;
        if !(dmin > 4.0 && dmax < 60.0 && dmin < dmax) {
            return Err(config(format!("distance range [{dmin}, {dmax}] must lie within (4, 60) m")));
        }
        let [amin, amax] = self.azimuth_range_rad;
        if !(amin < amax && amin > -std::f64::consts::FRAC_PI_2 && amax < std::f64::consts::FRAC_PI_2) {
            return Err(config("azimuth range must be increasing and inside (-pi/2, pi/2)"));
        }
        let [emin, emax] = self.elevation_range_rad;
        if !(emin <= emax && emin > -std::f64::consts::FRAC_PI_2 && emax < std::f64::consts::FRAC_PI_2) {
            return Err(config("elevation range must be non-decreasing and inside (-pi/2, pi/2)"));
        }
        if self.people[0] == 0 || self.people[0] > self.people[1] {
            return Err(config(format!("people range {:?} must satisfy 1 <= min <= max", self.people)));
        }
        if !(self.noise_px >= 0.0) || !(0.0..=1.0).contains(&self.mono_only_fraction) {
            return Err(config("noise must be >= 0 and mono-only fraction in [0, 1]"));
        }
        if self.min_visible_joints == 0 || self.min_visible_joints > NUM_JOINTS {
            return Err(config("min_visible_joints must be in 1..=17"));
        }
        if (self.template.vertical_extent() - 1.0).abs() > 1e-12 {
            return Err(config("template vertical extent must be exactly 1"));
        }
        self.height_prior.validate()?;
        if let Some(t) = &self.height_tail {
            t.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneInstance {
    pub person_id: u32,
    /// Mid-hip position in the left camera frame, meters.
    pub center3d: [f64; 3],
    pub height_m: f64,
    pub visible_left: bool,
    pub visible_right: bool,
    /// Fraction of joints outside the left image.
    pub occlusion_level: f64,
    /// Noise-free keypoint box in the left image, clipped to the image.
    pub bbox_left: [f64; 4],
}

impl SceneInstance {
    pub fn spherical(&self) -> Result<SphericalCoord> {
        geometry::cartesian_to_spherical(self.center3d)
    }

    /// Full projected body height in pixels.
    pub fn pixel_height(&self, rig: &StereoRig) -> f64 {
        rig.focal_px * self.height_m / self.center3d[2]
    }
}

/// A person detected in one image. `person_id` is the ground-truth identity
/// when known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub id: u32,
    #[serde(default)]
    pub person_id: Option<u32>,
    pub keypoints: PixelKeypoints,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameAnnotation {
    pub frame_id: u64,
    pub rig: StereoRig,
    #[serde(default)]
    pub instances: Vec<SceneInstance>,
    pub left: Vec<Detection>,
    pub right: Vec<Detection>,
}

impl FrameAnnotation {
    pub fn instance(&self, person_id: u32) -> Option<&SceneInstance> {
        self.instances.iter().find(|i| i.person_id == person_id)
    }

    pub fn validate(&self) -> Result<()> {
        self.rig.validate()?;
        for det in self.left.iter().chain(&self.right) {
            if !det.keypoints.is_finite() {
                return Err(data(format!("frame {}: non-finite keypoints in detection {}", self.frame_id, det.id)));
            }
        }
        Ok(())
    }
}

fn sample_height(cfg: &SceneConfig, rng: &mut StreamRng) -> f64 {
    if let Some(tail) = &cfg.height_tail {
        if rng.random::<f64>() < tail.fraction {
            return rng.random_range(tail.low_m..=tail.high_m);
        }
    }
    let comps = &cfg.height_prior.components;
    let mut pick = rng.random::<f64>();
    let mut comp = comps[comps.len() - 1];
    for c in comps {
        if pick < c.weight {
            comp = *c;
            break;
        }
        pick -= c.weight;
    }
    let normal = Normal::new(comp.mean_m, comp.std_m).expect("validated prior");
    loop {
        let h: f64 = normal.sample(rng);
        if (h - comp.mean_m).abs() <= 6.0 * comp.std_m && (MIN_HEIGHT_M..=MAX_HEIGHT_M).contains(&h) {
            return h;
        }
    }
}

fn observe(
    joints3d: &[[f64; 3]; NUM_JOINTS],
    rig: &StereoRig,
    eye: Eye,
    noise: Option<&Normal<f64>>,
    rng: &mut StreamRng,
) -> Result<PixelKeypoints> {
    let mut joints = [[0.0; 2]; NUM_JOINTS];
    let mut visible = [false; NUM_JOINTS];
    for j in 0..NUM_JOINTS {
        let mut uv = geometry::project(joints3d[j], rig, eye)?;
        if let Some(n) = noise {
            uv[0] += n.sample(rng);
            uv[1] += n.sample(rng);
        }
        if rig.contains(uv) {
            joints[j] = uv;
            visible[j] = true;
        }
    }
    Ok(PixelKeypoints::new(joints, visible))
}

/// Generate one frame. Pure in `(config, seed, frame_id)`.
pub fn generate_scene(cfg: &SceneConfig, rig: &StereoRig, seed: u64, frame_id: u64) -> Result<FrameAnnotation> {
    cfg.validate()?;
    rig.validate()?;
    let mut rng = rng::substream(seed, rng::SCENE, frame_id);
    let noise = (cfg.noise_px > 0.0).then(|| Normal::new(0.0, cfg.noise_px).expect("noise >= 0"));
    let count = rng.random_range(cfg.people[0]..=cfg.people[1]);

    let mut instances = Vec::with_capacity(count);
    let mut left = Vec::with_capacity(count);
    let mut right = Vec::with_capacity(count);
    for person in 0..count as u32 {
        let mut placed = None;
        for _ in 0..cfg.max_placement_attempts {
            let height = sample_height(cfg, &mut rng);
            let ground = rng.random_range(cfg.distance_range_m[0]..=cfg.distance_range_m[1]);
            let beta: f64 = rng.random_range(cfg.azimuth_range_rad[0]..=cfg.azimuth_range_rad[1]);
            let psi: f64 = rng.random_range(cfg.elevation_range_rad[0]..=cfg.elevation_range_rad[1]);
            let center = [ground * beta.sin(), ground * psi.tan(), ground * beta.cos()];
            let joints3d = cfg.template.place(center, height);
            let kp_left = observe(&joints3d, rig, Eye::Left, noise.as_ref(), &mut rng)?;
            if kp_left.visible_count() >= cfg.min_visible_joints {
                placed = Some((height, center, joints3d, kp_left));
                break;
            }
        }
        let Some((height, center, joints3d, kp_left)) = placed else {
            return Err(data(format!(
                "frame {frame_id}: no visible placement for person {person} after {} attempts",
                cfg.max_placement_attempts
            )));
        };

        let forced_mono = rng.random::<f64>() < cfg.mono_only_fraction;
        let kp_right = observe(&joints3d, rig, Eye::Right, noise.as_ref(), &mut rng)?;
        let visible_right = !forced_mono && kp_right.visible_count() >= cfg.min_visible_joints;

        let clean = observe(&joints3d, rig, Eye::Left, None, &mut rng)?;
        let bbox_left = clean.bbox().or_else(|| kp_left.bbox()).expect("left detection has visible joints");
        instances.push(SceneInstance {
            person_id: person,
            center3d: center,
            height_m: height,
            visible_left: true,
            visible_right,
            occlusion_level: 1.0 - kp_left.visible_count() as f64 / NUM_JOINTS as f64,
            bbox_left,
        });
        left.push(Detection { id: person, person_id: Some(person), keypoints: kp_left });
        if visible_right {
            right.push(Detection { id: person, person_id: Some(person), keypoints: kp_right });
        }
    }
    right.shuffle(&mut rng);
    Ok(FrameAnnotation { frame_id, rig: *rig, instances, left, right })
}

pub fn generate_frames(cfg: &SceneConfig, rig: &StereoRig, seed: u64, count: usize) -> Result<Vec<FrameAnnotation>> {
    (0..count as u64).map(|i| generate_scene(cfg, rig, seed, i)).collect()
}

/// Partition `n_frames` frame indices into splits with the given ratios.
/// Sizes use largest-remainder rounding; membership is a seeded shuffle.
pub fn dataset_split(n_frames: usize, ratios: &[f64], seed: u64) -> Result<Vec<Vec<usize>>> {
    if ratios.is_empty() || ratios.iter().any(|r| !(*r >= 0.0)) {
        return Err(config("split ratios must be non-negative"));
    }
    let total: f64 = ratios.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(config(format!("split ratios sum to {total}, expected 1")));
    }
    if n_frames < ratios.len() {
        return Err(data(format!("{n_frames} frames cannot fill {} splits", ratios.len())));
    }
    let exact: Vec<f64> = ratios.iter().map(|r| r * n_frames as f64).collect();
    let mut sizes: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..ratios.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    let mut left = n_frames - sizes.iter().sum::<usize>();
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        sizes[i] += 1;
        left -= 1;
    }

    let mut idx: Vec<usize> = (0..n_frames).collect();
    idx.shuffle(&mut rng::substream(seed, rng::SPLIT, 0));
    let mut out = Vec::with_capacity(sizes.len());
    let mut start = 0;
    for s in sizes {
        let mut part = idx[start..start + s].to_vec();
        part.sort_unstable();
        out.push(part);
        start += s;
    }
    Ok(out)
}
