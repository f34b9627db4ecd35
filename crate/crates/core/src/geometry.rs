//! Rectified pinhole stereo rig: projection, normalized coordinates,
//! disparity/depth conversion, spherical coordinates and the two depth
//! error models (height-induced monocular error and pixel-induced stereo
//! error).
//!
//! Camera frame: x right, y down, z forward. The right camera sits at
//! `+baseline_m` along x.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{config, domain, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Eye {
    Left,
    Right,
}

/// Intrinsics and baseline of a rectified stereo pair. Both cameras share
/// the same intrinsics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StereoRig {
    pub baseline_m: f64,
    pub focal_px: f64,
    pub u0: f64,
    pub v0: f64,
    pub width: f64,
    pub height: f64,
}

impl Default for StereoRig {
    fn default() -> Self {
        Self { baseline_m: 0.54, focal_px: 721.0, u0: 620.0, v0: 190.0, width: 1240.0, height: 380.0 }
    }
}

impl StereoRig {
    pub fn new(baseline_m: f64, focal_px: f64, u0: f64, v0: f64, width: f64, height: f64) -> Result<Self> {
        let rig = Self { baseline_m, focal_px, u0, v0, width, height };
        rig.validate()?;
        Ok(rig)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.baseline_m, self.focal_px, self.u0, self.v0, self.width, self.height];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(config("rig values must be finite"));
        }
        if self.baseline_m <= 0.0 {
            return Err(config(format!("baseline_m must be > 0, got {}", self.baseline_m)));
        }
        if self.focal_px <= 0.0 {
            return Err(config(format!("focal_px must be > 0, got {}", self.focal_px)));
        }
        if self.width <= 0.0 || self.height <= 0.0 {
            return Err(config("image size must be positive"));
        }
        if !(0.0..=self.width).contains(&self.u0) || !(0.0..=self.height).contains(&self.v0) {
            return Err(config(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.u0, self.v0, self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn principal_point(&self) -> (f64, f64) {
        (self.u0, self.v0)
    }

    /// Product `baseline_m * focal_px`, in pixel-meters.
    pub fn baseline_focal(&self) -> f64 {
        self.baseline_m * self.focal_px
    }

    pub fn contains(&self, uv: [f64; 2]) -> bool {
        uv[0] >= 0.0 && uv[0] < self.width && uv[1] >= 0.0 && uv[1] < self.height
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let rig: StereoRig = serde_json::from_str(s)?;
        rig.validate()?;
        Ok(rig)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }
}

/// Pinhole projection of a camera-frame point (left camera coordinates)
/// into the requested eye.
pub fn project(point: [f64; 3], rig: &StereoRig, eye: Eye) -> Result<[f64; 2]> {
    let [x, y, z] = point;
    if !(z > 0.0) {
        return Err(domain(format!("cannot project point with depth {z}")));
    }
    let x = match eye {
        Eye::Left => x,
        Eye::Right => x - rig.baseline_m,
    };
    Ok([rig.focal_px * x / z + rig.u0, rig.focal_px * y / z + rig.v0])
}

/// Pixel to normalized image coordinates `((u - u0)/f, (v - v0)/f)`.
pub fn normalize(uv: [f64; 2], rig: &StereoRig) -> [f64; 2] {
    [(uv[0] - rig.u0) / rig.focal_px, (uv[1] - rig.v0) / rig.focal_px]
}

pub fn denormalize(xy: [f64; 2], rig: &StereoRig) -> [f64; 2] {
    [xy[0] * rig.focal_px + rig.u0, xy[1] * rig.focal_px + rig.v0]
}

pub fn disparity_to_depth(disparity_px: f64, rig: &StereoRig) -> Result<f64> {
    if !(disparity_px > 0.0) || !disparity_px.is_finite() {
        return Err(domain(format!("disparity must be positive, got {disparity_px}")));
    }
    Ok(rig.baseline_focal() / disparity_px)
}

pub fn depth_to_disparity(depth_m: f64, rig: &StereoRig) -> Result<f64> {
    if !(depth_m > 0.0) || !depth_m.is_finite() {
        return Err(domain(format!("depth must be positive, got {depth_m}")));
    }
    Ok(rig.baseline_focal() / depth_m)
}

/// First-order depth error caused by a disparity error of `disparity_error_px`
/// at depth `depth_m`: `z^2 / (b f) * e_d`.
pub fn stereo_pixel_error(depth_m: f64, rig: &StereoRig, disparity_error_px: f64) -> f64 {
    depth_m * depth_m * disparity_error_px / rig.baseline_focal()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SphericalCoord {
    pub r: f64,
    pub beta: f64,
    pub psi: f64,
}

impl SphericalCoord {
    pub fn to_cartesian(&self) -> [f64; 3] {
        let horizontal = self.r * self.psi.cos();
        [horizontal * self.beta.sin(), self.r * self.psi.sin(), horizontal * self.beta.cos()]
    }
}

/// `r = |p|`, `beta = atan2(x, z)` (azimuth in the x-z plane) and
/// `psi = atan2(y, sqrt(x^2 + z^2))` (elevation from that plane).
pub fn cartesian_to_spherical(point: [f64; 3]) -> Result<SphericalCoord> {
    let [x, y, z] = point;
    if !(z > 0.0) {
        return Err(domain(format!("point must be in front of the camera, got z = {z}")));
    }
    let horizontal = x.hypot(z);
    Ok(SphericalCoord { r: horizontal.hypot(y), beta: x.atan2(z), psi: y.atan2(horizontal) })
}

pub fn spherical_to_cartesian(coord: &SphericalCoord) -> [f64; 3] {
    coord.to_cartesian()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeightComponent {
    pub weight: f64,
    pub mean_m: f64,
    pub std_m: f64,
}

/// Gaussian (or two-component Gaussian mixture) distribution of human
/// heights.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HeightPrior {
    pub components: Vec<HeightComponent>,
    #[serde(skip)]
    task_constant: OnceLock<f64>,
}

impl PartialEq for HeightPrior {
    fn eq(&self, other: &Self) -> bool {
        self.components == other.components
    }
}

impl Default for HeightPrior {
    fn default() -> Self {
        Self::gaussian(1.71, 0.09).expect("default prior is valid")
    }
}

impl HeightPrior {
    pub fn gaussian(mean_m: f64, std_m: f64) -> Result<Self> {
        Self::mixture(vec![HeightComponent { weight: 1.0, mean_m, std_m }])
    }

    pub fn mixture(components: Vec<HeightComponent>) -> Result<Self> {
        let prior = Self { components, task_constant: OnceLock::new() };
        prior.validate()?;
        Ok(prior)
    }

    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() || self.components.len() > 2 {
            return Err(config("height prior needs one or two components"));
        }
        for c in &self.components {
            if !(c.mean_m > 0.0) || !(c.std_m > 0.0) || !(c.weight >= 0.0) {
                return Err(config(format!("invalid height component {c:?}")));
            }
        }
        let total: f64 = self.components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(config(format!("height prior weights sum to {total}, expected 1")));
        }
        Ok(())
    }

    pub fn mean_m(&self) -> f64 {
        self.components.iter().map(|c| c.weight * c.mean_m).sum()
    }

    pub fn std_m(&self) -> f64 {
        let mean = self.mean_m();
        let second: f64 = self.components.iter().map(|c| c.weight * (c.std_m * c.std_m + c.mean_m * c.mean_m)).sum();
        (second - mean * mean).max(0.0).sqrt()
    }

    pub fn density(&self, h: f64) -> f64 {
        self.components
            .iter()
            .map(|c| {
                let z = (h - c.mean_m) / c.std_m;
                c.weight * (-0.5 * z * z).exp() / (c.std_m * (2.0 * std::f64::consts::PI).sqrt())
            })
            .sum()
    }

    /// Relative depth error `C = E[|h_mean / h - 1|]` made by assuming every
    /// person has the mean height. Computed once per prior by Simpson
    /// quadrature and cached.
    pub fn task_error_constant(&self) -> f64 {
        *self.task_constant.get_or_init(|| self.integrate_task_constant())
    }

    fn integrate_task_constant(&self) -> f64 {
        let mean = self.mean_m();
        let lo = self.components.iter().map(|c| c.mean_m - 10.0 * c.std_m).fold(f64::INFINITY, f64::min).max(1e-3);
        let hi = self.components.iter().map(|c| c.mean_m + 10.0 * c.std_m).fold(0.0, f64::max);
        let integrand = |h: f64| (mean / h - 1.0).abs() * self.density(h);
        // split at the kink of |.|
        simpson(integrand, lo, mean.max(lo), 20_000) + simpson(integrand, mean.min(hi), hi, 20_000)
    }
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, intervals: usize) -> f64 {
    if b <= a {
        return 0.0;
    }
    let n = intervals + intervals % 2;
    let h = (b - a) / n as f64;
    let mut sum = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * f(a + i as f64 * h);
    }
    sum * h / 3.0
}

/// Expected monocular localization error `C * r_gt` due to height variation.
pub fn monocular_task_error(r_gt: f64, prior: &HeightPrior) -> f64 {
    prior.task_error_constant() * r_gt
}

/// Distance in `(lo, hi)` where the stereo pixel error for `disparity_error_px`
/// equals the monocular task error, found by bisection. `None` if the two
/// curves do not cross inside the bracket.
pub fn mono_stereo_crossover(
    rig: &StereoRig,
    prior: &HeightPrior,
    disparity_error_px: f64,
    lo: f64,
    hi: f64,
) -> Option<f64> {
    let gap = |z: f64| stereo_pixel_error(z, rig, disparity_error_px) - monocular_task_error(z, prior);
    let (mut a, mut b) = (lo, hi);
    let (fa, fb) = (gap(a), gap(b));
    if fa.signum() == fb.signum() {
        return None;
    }
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if gap(mid).signum() == fa.signum() {
            a = mid;
        } else {
            b = mid;
        }
    }
    Some(0.5 * (a + b))
}
