//! C ABI for the stereo localization library.
//!
//! Objects cross the boundary as opaque pointers that the caller frees with
//! the matching `*_free` function. Every fallible call returns a
//! [`StereolocStatus`]; on failure `stereoloc_last_error` describes the
//! problem until the next call on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use stereoloc::geometry::{self, StereoRig};
use stereoloc::inference::{self, Mode};
use stereoloc::keypoints::{PixelKeypoints, NUM_JOINTS};
use stereoloc::model::{Checkpoint, Model};
use stereoloc::synth::Detection;
use stereoloc::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StereolocStatus {
    StereolocOk = 0,
    StereolocNullPointer = 1,
    StereolocConfigError = 2,
    StereolocDataError = 3,
    StereolocDomainError = 4,
    StereolocNumericError = 5,
    StereolocIoError = 6,
    StereolocBufferTooSmall = 7,
    StereolocPanic = 8,
}

/// Opaque stereo rig.
pub struct StereolocRig(StereoRig);

/// Opaque trained model.
pub struct StereolocModel(Model);

/// One prediction, for the left detection at `left_index`.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StereolocLocalization {
    pub left_index: u32,
    /// Index of the matched right detection, or -1 for none.
    pub right_index: i32,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub r: f64,
    pub beta: f64,
    pub psi: f64,
    /// Confidence-interval half-width, meters.
    pub b: f64,
    /// Match probability.
    pub ism: f64,
    /// 1 when flagged stereo, 0 when mono.
    pub stereo: i32,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(e: Error) -> StereolocStatus {
    let status = match &e {
        Error::Config(_) => StereolocStatus::StereolocConfigError,
        Error::Data(_) | Error::Json(_) => StereolocStatus::StereolocDataError,
        Error::Domain(_) => StereolocStatus::StereolocDomainError,
        Error::Numeric(_) => StereolocStatus::StereolocNumericError,
        Error::Io(_) => StereolocStatus::StereolocIoError,
    };
    set_error(e.to_string());
    status
}

fn null(what: &str) -> StereolocStatus {
    set_error(format!("{what} is null"));
    StereolocStatus::StereolocNullPointer
}

fn guard(f: impl FnOnce() -> StereolocStatus) -> StereolocStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| {
        set_error("internal panic".into());
        StereolocStatus::StereolocPanic
    })
}

/// Message for the last failed call on this thread, or null. The pointer
/// stays valid until the next library call on the same thread.
#[no_mangle]
pub extern "C" fn stereoloc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

#[no_mangle]
pub extern "C" fn stereoloc_num_joints() -> usize {
    NUM_JOINTS
}

/// Create a rig. Writes the handle to `out`.
///
/// # Safety
/// `out` must be null or a writable slot.
#[no_mangle]
pub unsafe extern "C" fn stereoloc_rig_new(
    baseline_m: f64,
    focal_px: f64,
    u0: f64,
    v0: f64,
    width: f64,
    height: f64,
    out: *mut *mut StereolocRig,
) -> StereolocStatus {
    guard(|| {
        if out.is_null() {
            return null("out");
        }
        match StereoRig::new(baseline_m, focal_px, u0, v0, width, height) {
            Ok(rig) => {
                // SAFETY: checked non-null; the caller provides a writable slot.
                unsafe { *out = Box::into_raw(Box::new(StereolocRig(rig))) };
                StereolocStatus::StereolocOk
            }
            Err(e) => fail(e),
        }
    })
}

/// The default KITTI-class rig: 0.54 m baseline, 721 px focal, 1240x380.
#[no_mangle]
pub extern "C" fn stereoloc_rig_default() -> *mut StereolocRig {
    Box::into_raw(Box::new(StereolocRig(StereoRig::default())))
}

/// # Safety
/// `rig` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn stereoloc_rig_free(rig: *mut StereolocRig) {
    if !rig.is_null() {
        drop(Box::from_raw(rig));
    }
}

/// Depth in meters for a disparity in pixels.
///
/// # Safety
/// `rig` must be a live rig handle and `out` a writable double.
#[no_mangle]
pub unsafe extern "C" fn stereoloc_disparity_to_depth(
    rig: *const StereolocRig,
    disparity_px: f64,
    out: *mut f64,
) -> StereolocStatus {
    guard(|| {
        let (Some(rig), false) = (rig.as_ref(), out.is_null()) else { return null("rig or out") };
        match geometry::disparity_to_depth(disparity_px, &rig.0) {
            Ok(z) => {
                *out = z;
                StereolocStatus::StereolocOk
            }
            Err(e) => fail(e),
        }
    })
}

/// Depth error in meters caused by a disparity error at a given depth.
///
/// # Safety
/// `rig` must be a live rig handle and `out` a writable double.
#[no_mangle]
pub unsafe extern "C" fn stereoloc_stereo_pixel_error(
    rig: *const StereolocRig,
    depth_m: f64,
    disparity_error_px: f64,
    out: *mut f64,
) -> StereolocStatus {
    guard(|| {
        let (Some(rig), false) = (rig.as_ref(), out.is_null()) else { return null("rig or out") };
        *out = geometry::stereo_pixel_error(depth_m, &rig.0, disparity_error_px);
        StereolocStatus::StereolocOk
    })
}

/// Load a checkpoint file.
///
/// # Safety
/// `path` must be a nul-terminated UTF-8 string and `out` a writable slot.
#[no_mangle]
pub unsafe extern "C" fn stereoloc_model_load(path: *const c_char, out: *mut *mut StereolocModel) -> StereolocStatus {
    guard(|| {
        if path.is_null() || out.is_null() {
            return null("path or out");
        }
        let Ok(path) = CStr::from_ptr(path).to_str() else {
            set_error("path is not UTF-8".into());
            return StereolocStatus::StereolocConfigError;
        };
        match Checkpoint::load(path).and_then(|c| Model::from_checkpoint(&c)) {
            Ok(m) => {
                *out = Box::into_raw(Box::new(StereolocModel(m)));
                StereolocStatus::StereolocOk
            }
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `model` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn stereoloc_model_free(model: *mut StereolocModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

unsafe fn detections(joints: *const f64, visible: *const u8, n: usize) -> Vec<Detection> {
    if n == 0 {
        return Vec::new();
    }
    let j = std::slice::from_raw_parts(joints, n * NUM_JOINTS * 2);
    let v = std::slice::from_raw_parts(visible, n * NUM_JOINTS);
    (0..n)
        .map(|i| {
            let mut pts = [[0.0; 2]; NUM_JOINTS];
            let mut vis = [false; NUM_JOINTS];
            for k in 0..NUM_JOINTS {
                pts[k] = [j[(i * NUM_JOINTS + k) * 2], j[(i * NUM_JOINTS + k) * 2 + 1]];
                vis[k] = v[i * NUM_JOINTS + k] != 0;
            }
            Detection { id: i as u32, person_id: None, keypoints: PixelKeypoints::new(pts, vis) }
        })
        .collect()
}

/// Localize every left detection of one stereo frame.
///
/// Keypoints are pixel coordinates laid out `[person][joint][u, v]`, with
/// one visibility byte per `[person][joint]` (nonzero = visible). `out`
/// must hold at least `n_left` entries; exactly `n_left` are written.
///
/// # Safety
/// All pointers must be valid for the sizes implied by `n_left`, `n_right`
/// and `out_capacity`. Arrays for a zero count may be null.
#[no_mangle]
pub unsafe extern "C" fn stereoloc_predict(
    model: *const StereolocModel,
    rig: *const StereolocRig,
    left_joints: *const f64,
    left_visible: *const u8,
    n_left: usize,
    right_joints: *const f64,
    right_visible: *const u8,
    n_right: usize,
    out: *mut StereolocLocalization,
    out_capacity: usize,
) -> StereolocStatus {
    guard(|| {
        let (Some(model), Some(rig)) = (model.as_ref(), rig.as_ref()) else { return null("model or rig") };
        if n_left > 0 && (left_joints.is_null() || left_visible.is_null() || out.is_null()) {
            return null("left keypoints or out");
        }
        if n_right > 0 && (right_joints.is_null() || right_visible.is_null()) {
            return null("right keypoints");
        }
        if out_capacity < n_left {
            set_error(format!("output holds {out_capacity} entries, need {n_left}"));
            return StereolocStatus::StereolocBufferTooSmall;
        }
        let left = detections(left_joints, left_visible, n_left);
        let right = detections(right_joints, right_visible, n_right);
        if left.iter().chain(&right).any(|d| !d.keypoints.is_finite()) {
            set_error("keypoints must be finite".into());
            return StereolocStatus::StereolocDataError;
        }
        match inference::predict_frame(&model.0, &rig.0, 0, &left, &right) {
            Ok(locs) => {
                for (i, l) in locs.iter().enumerate() {
                    *out.add(i) = StereolocLocalization {
                        left_index: l.instance_id,
                        right_index: l.right_instance_id.map_or(-1, |r| r as i32),
                        x: l.x,
                        y: l.y,
                        z: l.z,
                        r: l.r,
                        beta: l.beta,
                        psi: l.psi,
                        b: l.b,
                        ism: l.ism,
                        stereo: i32::from(l.mode == Mode::Stereo),
                    };
                }
                StereolocStatus::StereolocOk
            }
            Err(e) => fail(e),
        }
    })
}
