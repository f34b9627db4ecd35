use std::ffi::{CStr, CString};
use std::ptr;

use stereoloc::geometry::StereoRig;
use stereoloc::model::{train, TrainConfig};
use stereoloc::pairs::frame_pairs;
use stereoloc::synth::{generate_frames, generate_scene, SceneConfig};
use stereoloc_ffi::*;

fn last_error() -> String {
    let p = stereoloc_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn checkpoint(dir: &std::path::Path) -> CString {
    let rig = StereoRig::default();
    let frames = generate_frames(&SceneConfig::default(), &rig, 3, 12).unwrap();
    let pairs: Vec<_> = frames.iter().flat_map(|f| frame_pairs(f, 0.1, 3)).collect();
    let cfg = TrainConfig { epochs: 1, batch_size: 32, hidden: 16, residual_blocks: 1, ..Default::default() };
    let out = train(&pairs, &pairs, &rig, &cfg, |_| {}).unwrap();
    let path = dir.join("model.json");
    out.checkpoint.save(&path).unwrap();
    CString::new(path.to_str().unwrap()).unwrap()
}

#[test]
fn rig_geometry() {
    let mut rig = ptr::null_mut();
    let st = unsafe { stereoloc_rig_new(0.54, 721.0, 620.0, 190.0, 1240.0, 380.0, &mut rig) };
    assert_eq!(st, StereolocStatus::StereolocOk);
    let mut z = 0.0;
    unsafe {
        assert_eq!(stereoloc_disparity_to_depth(rig, 389.34 / 20.0, &mut z), StereolocStatus::StereolocOk);
        assert!((z - 20.0).abs() < 1e-12);
        assert_eq!(stereoloc_disparity_to_depth(rig, 0.0, &mut z), StereolocStatus::StereolocDomainError);
        assert!(last_error().contains("disparity"), "{}", last_error());
        let mut e = 0.0;
        assert_eq!(stereoloc_stereo_pixel_error(rig, 40.0, 1.0, &mut e), StereolocStatus::StereolocOk);
        assert!((e - 1600.0 / 389.34).abs() < 1e-9);
        stereoloc_rig_free(rig);
        stereoloc_rig_free(ptr::null_mut());
    }
    let mut bad = ptr::null_mut();
    assert_eq!(
        unsafe { stereoloc_rig_new(-1.0, 721.0, 620.0, 190.0, 1240.0, 380.0, &mut bad) },
        StereolocStatus::StereolocConfigError
    );
    assert!(bad.is_null());
    assert_eq!(
        unsafe { stereoloc_rig_new(0.5, 721.0, 620.0, 190.0, 1240.0, 380.0, ptr::null_mut()) },
        StereolocStatus::StereolocNullPointer
    );
    assert_eq!(stereoloc_num_joints(), 17);
}

#[test]
fn model_load_and_predict() {
    let dir = tempfile::tempdir().unwrap();
    let path = checkpoint(dir.path());
    let mut model = ptr::null_mut();
    unsafe {
        assert_eq!(stereoloc_model_load(path.as_ptr(), &mut model), StereolocStatus::StereolocOk);
        let rig = stereoloc_rig_default();

        let f = generate_scene(
            &SceneConfig { people: [3, 3], mono_only_fraction: 0.0, ..Default::default() },
            &StereoRig::default(),
            1,
            0,
        )
        .unwrap();
        let flat = |dets: &[stereoloc::synth::Detection]| {
            let mut j = Vec::new();
            let mut v = Vec::new();
            for d in dets {
                for k in 0..17 {
                    j.extend(d.keypoints.joints[k]);
                    v.push(u8::from(d.keypoints.visible[k]));
                }
            }
            (j, v)
        };
        let (lj, lv) = flat(&f.left);
        let (rj, rv) = flat(&f.right);
        let n = f.left.len();
        let mut out = vec![StereolocLocalization::default(); n];
        let st = stereoloc_predict(
            model,
            rig,
            lj.as_ptr(),
            lv.as_ptr(),
            n,
            rj.as_ptr(),
            rv.as_ptr(),
            f.right.len(),
            out.as_mut_ptr(),
            n,
        );
        assert_eq!(st, StereolocStatus::StereolocOk, "{}", last_error());

        // same answers as the library
        let lib = stereoloc::model::Model::from_checkpoint(
            &stereoloc::model::Checkpoint::load(path.to_str().unwrap()).unwrap(),
        )
        .unwrap();
        let expect = stereoloc::inference::predict_frame(&lib, &f.rig, 0, &f.left, &f.right).unwrap();
        for (i, (o, e)) in out.iter().zip(&expect).enumerate() {
            assert_eq!(o.left_index as usize, i);
            assert_eq!(o.r, e.r);
            assert_eq!(o.b, e.b);
            assert!(o.b > 0.0);
            let right_pos = e.right_instance_id.map(|id| f.right.iter().position(|d| d.id == id).unwrap() as i32);
            assert_eq!(o.right_index, right_pos.unwrap_or(-1));
        }

        // no right detections: null arrays allowed, every output unmatched
        let st = stereoloc_predict(
            model,
            rig,
            lj.as_ptr(),
            lv.as_ptr(),
            n,
            ptr::null(),
            ptr::null(),
            0,
            out.as_mut_ptr(),
            n,
        );
        assert_eq!(st, StereolocStatus::StereolocOk);
        assert!(out.iter().all(|o| o.right_index == -1));

        let st = stereoloc_predict(
            model,
            rig,
            lj.as_ptr(),
            lv.as_ptr(),
            n,
            ptr::null(),
            ptr::null(),
            0,
            out.as_mut_ptr(),
            n - 1,
        );
        assert_eq!(st, StereolocStatus::StereolocBufferTooSmall);
        let st = stereoloc_predict(
            ptr::null(),
            rig,
            lj.as_ptr(),
            lv.as_ptr(),
            n,
            ptr::null(),
            ptr::null(),
            0,
            out.as_mut_ptr(),
            n,
        );
        assert_eq!(st, StereolocStatus::StereolocNullPointer);

        let mut nan = lj.clone();
        nan[3] = f64::NAN;
        let st = stereoloc_predict(
            model,
            rig,
            nan.as_ptr(),
            lv.as_ptr(),
            n,
            ptr::null(),
            ptr::null(),
            0,
            out.as_mut_ptr(),
            n,
        );
        assert_eq!(st, StereolocStatus::StereolocDataError);

        stereoloc_model_free(model);
        stereoloc_rig_free(rig);
    }
}

#[test]
fn load_errors() {
    let dir = tempfile::tempdir().unwrap();
    let missing = CString::new(dir.path().join("nope.json").to_str().unwrap()).unwrap();
    let mut model = ptr::null_mut();
    unsafe {
        assert_eq!(stereoloc_model_load(missing.as_ptr(), &mut model), StereolocStatus::StereolocIoError);
        assert!(model.is_null());
        let junk = dir.path().join("junk.json");
        std::fs::write(&junk, "{}").unwrap();
        let junk = CString::new(junk.to_str().unwrap()).unwrap();
        assert_eq!(stereoloc_model_load(junk.as_ptr(), &mut model), StereolocStatus::StereolocDataError);
        assert_eq!(stereoloc_model_load(ptr::null(), &mut model), StereolocStatus::StereolocNullPointer);
    }
    // a successful call clears the previous message
    let rig = stereoloc_rig_default();
    let mut z = 0.0;
    unsafe {
        assert_eq!(stereoloc_disparity_to_depth(rig, 10.0, &mut z), StereolocStatus::StereolocOk);
        stereoloc_rig_free(rig);
    }
    assert!(stereoloc_last_error().is_null());
}

#[test]
fn header_is_valid_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/stereoloc.h");
    let text = std::fs::read_to_string(header).unwrap();
    for sym in
        ["stereoloc_predict", "stereoloc_model_load", "stereoloc_last_error", "StereolocLocalization", "STEREOLOC_OK"]
    {
        assert!(text.contains(sym), "{sym}");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"stereoloc.h\"\nint main(void) { StereolocRig *r = stereoloc_rig_default(); double z; \
         int ok = stereoloc_disparity_to_depth(r, 10.0, &z) == STEREOLOC_OK; stereoloc_rig_free(r); return !ok; }\n",
    )
    .unwrap();
    // syntax check only when a C compiler is around
    match std::process::Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-I", concat!(env!("CARGO_MANIFEST_DIR"), "/include")])
        .arg(&src)
        .status()
    {
        Ok(s) => assert!(s.success(), "header failed to compile"),
        Err(_) => eprintln!("cc not found; skipped C syntax check"),
    }
}
