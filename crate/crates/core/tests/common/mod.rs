//! Shared test helpers: the hand-built 12-instance metrics fixture.
#![allow(dead_code)]

use stereoloc::geometry::StereoRig;
use stereoloc::inference::{Localization, Mode};
use stereoloc::keypoints::{PixelKeypoints, NUM_JOINTS};
use stereoloc::synth::{Detection, FrameAnnotation, SceneInstance};

/// One fixture row. Every person stands on the optical axis, so the true
/// radial distance is exactly `z`, and every error below is a dyadic
/// fraction, so sums and means are exact in f64.
struct Row {
    frame: u64,
    person: u32,
    z: f64,
    box_h: f64,
    occlusion: f64,
    stereo: bool,
    /// `None`: no left detection at all (a miss).
    pred: Option<Pred>,
}

struct Pred {
    r: f64,
    b: f64,
    ism: f64,
    /// Person whose right detection the network picked; `None` is the null pair.
    right_person: Option<u32>,
}

const fn p(r: f64, b: f64, ism: f64, right_person: Option<u32>) -> Option<Pred> {
    Some(Pred { r, b, ism, right_person })
}

//  id  z   h    occ  stereo  r_pred  err   b     in?  ism   ism/b  rel ok (<5%)  difficulty
//  A   8   80   0    yes     8.25    0.25  0.5   yes  0.9   1.8    yes          easy
//  B   12  60   .25  yes     12.5    0.5   0.25  no   0.8   3.2    yes          moderate (occluded)
//  C   16  30   0    yes     15      1     2     yes  0.6   0.3    no           moderate (30 < 40)
//  D   20  50   0    no      22      2     4     yes  0.2   0.05   no           hard (mono)
//  E   24  45   0    yes     24.5    0.5   1     yes  0.95  0.95   yes          easy
//  F   28  20   0    yes     30      2     1     no   0.7   0.7    no           hard (20 < 25), wrong right pick
//  G   32  42   0    yes     31      1     2     yes  0.9   0.45   yes          easy
//  H   36  35   0    no      34      2     4     yes  0.1   0.025  no           hard (mono)
//  I   40  26   .5   yes     41      1     1     yes  0.8   0.8    yes          moderate
//  J   44  24   0    yes     40      4     2.5   no   0.6   0.24   no           hard (24 < 25)
//  K   48  30   0    yes     48.5    0.5   0.5   yes  0.55  1.1    yes          moderate
//  L   6   100  0    yes     (missed)                                           easy
//  plus one false positive in frame 2 with ism 0.5, b 0.5 (ism/b 1.0)
const ROWS: [Row; 12] = [
    Row { frame: 1, person: 1, z: 8.0, box_h: 80.0, occlusion: 0.0, stereo: true, pred: p(8.25, 0.5, 0.9, Some(1)) },
    Row { frame: 1, person: 2, z: 12.0, box_h: 60.0, occlusion: 0.25, stereo: true, pred: p(12.5, 0.25, 0.8, Some(2)) },
    Row { frame: 1, person: 3, z: 16.0, box_h: 30.0, occlusion: 0.0, stereo: true, pred: p(15.0, 2.0, 0.6, Some(3)) },
    Row { frame: 1, person: 4, z: 20.0, box_h: 50.0, occlusion: 0.0, stereo: false, pred: p(22.0, 4.0, 0.2, None) },
    Row { frame: 2, person: 5, z: 24.0, box_h: 45.0, occlusion: 0.0, stereo: true, pred: p(24.5, 1.0, 0.95, Some(5)) },
    Row { frame: 2, person: 6, z: 28.0, box_h: 20.0, occlusion: 0.0, stereo: true, pred: p(30.0, 1.0, 0.7, Some(7)) },
    Row { frame: 2, person: 7, z: 32.0, box_h: 42.0, occlusion: 0.0, stereo: true, pred: p(31.0, 2.0, 0.9, Some(7)) },
    Row { frame: 2, person: 8, z: 36.0, box_h: 35.0, occlusion: 0.0, stereo: false, pred: p(34.0, 4.0, 0.1, None) },
    Row { frame: 3, person: 9, z: 40.0, box_h: 26.0, occlusion: 0.5, stereo: true, pred: p(41.0, 1.0, 0.8, Some(9)) },
    Row { frame: 3, person: 10, z: 44.0, box_h: 24.0, occlusion: 0.0, stereo: true, pred: p(40.0, 2.5, 0.6, Some(10)) },
    Row {
        frame: 3,
        person: 11,
        z: 48.0,
        box_h: 30.0,
        occlusion: 0.0,
        stereo: true,
        pred: p(48.5, 0.5, 0.55, Some(11)),
    },
    Row { frame: 3, person: 12, z: 6.0, box_h: 100.0, occlusion: 0.0, stereo: true, pred: None },
];

const FALSE_POSITIVE_ID: u32 = 99;

/// Two visible joints spanning the box, so the detection box equals it.
fn keypoints(bbox: [f64; 4]) -> PixelKeypoints {
    let mut joints = [[0.0; 2]; NUM_JOINTS];
    let mut visible = [false; NUM_JOINTS];
    joints[0] = [bbox[0], bbox[1]];
    joints[16] = [bbox[2], bbox[3]];
    visible[0] = true;
    visible[16] = true;
    PixelKeypoints::new(joints, visible)
}

fn shifted(kp: &PixelKeypoints, du: f64) -> PixelKeypoints {
    let mut out = kp.clone();
    for (j, v) in out.joints.iter_mut().zip(out.visible) {
        if v {
            j[0] -= du;
        }
    }
    out
}

pub fn metric_fixture() -> (Vec<FrameAnnotation>, Vec<Localization>) {
    let rig = StereoRig::default();
    let mut frames: Vec<FrameAnnotation> = (1..=3)
        .map(|id| FrameAnnotation { frame_id: id, rig, instances: vec![], left: vec![], right: vec![] })
        .collect();
    let mut preds = Vec::new();
    for (k, row) in ROWS.iter().enumerate() {
        let frame = &mut frames[(row.frame - 1) as usize];
        // side by side, 100 px apart, never overlapping
        let u0 = 60.0 + 100.0 * (k % 4) as f64;
        let bbox = [u0, 100.0, u0 + 40.0, 100.0 + row.box_h];
        frame.instances.push(SceneInstance {
            person_id: row.person,
            center3d: [0.0, 0.0, row.z],
            height_m: 1.7,
            visible_left: true,
            visible_right: row.stereo,
            occlusion_level: row.occlusion,
            bbox_left: bbox,
        });
        let kp = keypoints(bbox);
        if row.stereo {
            frame.right.push(Detection {
                id: 100 + row.person,
                person_id: Some(row.person),
                keypoints: shifted(&kp, 10.0),
            });
        }
        if let Some(pr) = &row.pred {
            frame.left.push(Detection { id: row.person, person_id: Some(row.person), keypoints: kp });
            preds.push(localization(row.frame, row.person, pr.r, pr.b, pr.ism, pr.right_person.map(|p| 100 + p)));
        }
    }
    let fp_box = [1000.0, 100.0, 1040.0, 160.0];
    frames[1].left.push(Detection { id: FALSE_POSITIVE_ID, person_id: None, keypoints: keypoints(fp_box) });
    preds.push(localization(2, FALSE_POSITIVE_ID, 15.0, 0.5, 0.5, Some(105)));
    (frames, preds)
}

fn localization(frame_id: u64, instance_id: u32, r: f64, b: f64, ism: f64, right: Option<u32>) -> Localization {
    Localization {
        frame_id,
        instance_id,
        x: 0.0,
        y: 0.0,
        z: r,
        r,
        beta: 0.0,
        psi: 0.0,
        b,
        ism,
        mode: if ism >= 0.5 { Mode::Stereo } else { Mode::Mono },
        right_instance_id: right,
    }
}

/// Compare a report on [`metric_fixture`] with the hand-derived values.
/// Returns every mismatch.
pub fn check_fixture_report(report: &stereoloc::eval::MetricsReport) -> Vec<String> {
    use stereoloc::eval::{Difficulty, Group, Method};
    let bad = std::cell::RefCell::new(Vec::new());
    let exact = |what: String, got: Option<f64>, want: f64| {
        if got != Some(want) {
            bad.borrow_mut().push(format!("{what}: got {got:?}, want {want}"));
        }
    };
    let row = |g: Group, bin: &str| report.row(Method::Network, g, bin).expect("row exists");

    // ALE over the 11 matched instances: errors sum to
    // .25+.5+1+2+.5+2+1+2+1+4+.5 = 14.75
    exact("ale all".into(), row(Group::All, "all").ale, 14.75 / 11.0);
    // on-axis predictions: 3D error equals radial error
    exact("euclidean all".into(), row(Group::All, "all").ale_euclidean, 14.75 / 11.0);
    // B, F and J fall outside their intervals
    exact("coverage all".into(), row(Group::All, "all").coverage, 8.0 / 11.0);
    let size = (0.5 / 8.25
        + 0.25 / 12.5
        + 2.0 / 15.0
        + 4.0 / 22.0
        + 1.0 / 24.5
        + 1.0 / 30.0
        + 2.0 / 31.0
        + 4.0 / 34.0
        + 1.0 / 41.0
        + 2.5 / 40.0
        + 0.5 / 48.5)
        / 11.0;
    exact("interval size all".into(), row(Group::All, "all").relative_interval_size, size);
    exact("recall all".into(), Some(row(Group::All, "all").recall), 11.0 / 12.0);

    // Ranking by ism/b: B A K fp E I F G C J D H, relative hits marked *
    //   B* A* K* fp E* I* F G* ...
    // recall/precision after each: 1/12 1, 2/12 1, 3/12 1, 3/12 .75,
    // 4/12 .8, 5/12 5/6, 5/12 5/7, 6/12 .75, then no more hits.
    // 40 recall levels: k=1..10 (<= 3/12) precision 1, k=11..16 (<= 5/12)
    // best later precision 5/6, k=17..20 (<= 6/12) .75, k>20 unreachable.
    // (10 + 6*5/6 + 4*.75)/40 = 18/40 = 45%
    let ralp = row(Group::All, "all").ralp.unwrap_or(f64::NAN);
    if (ralp - 45.0).abs() > 1e-12 {
        bad.borrow_mut().push(format!("ralp all: got {ralp}, want 45"));
    }
    // Easy: A E G hit, L missed; recall reaches 3/4 at precision 1 -> 30/40
    exact("ralp easy".into(), row(Group::Easy, "all").ralp, 75.0);

    // Easy A E G (+L missed): .25 .5 1
    exact("ale easy".into(), row(Group::Easy, "all").ale, 1.75 / 3.0);
    // Moderate B C I K: .5 1 1 .5
    exact("ale moderate".into(), row(Group::Moderate, "all").ale, 0.75);
    // Hard D F H J: 2 2 2 4
    exact("ale hard".into(), row(Group::Hard, "all").ale, 2.5);
    // Hard coverage: D yes, F no, H yes, J no
    exact("coverage hard".into(), row(Group::Hard, "all").coverage, 0.5);
    exact("ale stereo".into(), row(Group::Stereo, "all").ale, 10.75 / 9.0);
    exact("ale mono".into(), row(Group::MonoOnly, "all").ale, 2.0);
    exact("coverage mono".into(), row(Group::MonoOnly, "all").coverage, 1.0);

    // distance bins: <10 A (L missed); 10-20 B C; 20-30 D E F; 30-50 G H I J K
    exact("ale <10".into(), row(Group::All, "<10").ale, 0.25);
    exact("ale 10-20".into(), row(Group::All, "10-20").ale, 0.75);
    exact("ale 20-30".into(), row(Group::All, "20-30").ale, 1.5);
    exact("ale 30-50".into(), row(Group::All, "30-50").ale, 1.7);

    // association: F picked person 7's right detection, 8 of 9 correct
    exact("association".into(), report.ism.association_accuracy, 8.0 / 9.0);
    exact("mono flag".into(), report.ism.mono_flag_accuracy, 1.0);

    for (d, want) in [(Difficulty::Easy, 4), (Difficulty::Moderate, 4), (Difficulty::Hard, 4)] {
        let got = report.difficulty_counts.get(&d).copied().unwrap_or(0);
        if got != want {
            bad.borrow_mut().push(format!("count {d:?}: got {got}, want {want}"));
        }
    }
    let counts = (report.n_gt, report.n_predictions, report.n_matched, report.n_unmatched_predictions);
    if counts != (12, 12, 11, 1) {
        bad.borrow_mut()
            .push(format!("counts (gt, predictions, matched, unmatched): got {counts:?}, want (12, 12, 11, 1)"));
    }
    bad.into_inner()
}
