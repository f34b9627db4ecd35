//! Per-instance evaluation records and the aggregated metrics report.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::baselines;
use super::metrics::{self, BoxStats, RankedPrediction, RALP_THRESHOLD};
use crate::error::{data, Result};
use crate::geometry::{self, Eye, HeightPrior};
use crate::inference::{greedy_box_match, gt_boxes, Localization, Mode, DEFAULT_IOU};
use crate::synth::{FrameAnnotation, SceneInstance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Easy,
    Moderate,
    Hard,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DifficultyThresholds {
    /// Minimum left box height for Easy, pixels.
    pub easy_min_px: f64,
    /// Box height below which an instance is Hard, pixels.
    pub hard_below_px: f64,
}

impl Default for DifficultyThresholds {
    fn default() -> Self {
        Self { easy_min_px: 40.0, hard_below_px: 25.0 }
    }
}

/// Easy: seen in both images with no joint outside the left image and a box
/// at least `easy_min_px` tall. Hard: seen in one image only, or shorter
/// than `hard_below_px`. Everything else is Moderate.
pub fn difficulty(inst: &SceneInstance, t: &DifficultyThresholds) -> Difficulty {
    let h = inst.bbox_left[3] - inst.bbox_left[1];
    if !inst.visible_right || h < t.hard_below_px {
        Difficulty::Hard
    } else if inst.occlusion_level == 0.0 && h >= t.easy_min_px {
        Difficulty::Easy
    } else {
        Difficulty::Moderate
    }
}

/// Ranking score used for precision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RankBy {
    /// Match probability divided by the interval half-width.
    #[default]
    IsmOverSpread,
    Ism,
    InverseSpread,
}

impl RankBy {
    pub fn score(self, l: &Localization) -> f64 {
        match self {
            RankBy::IsmOverSpread => l.ism / l.b,
            RankBy::Ism => l.ism,
            RankBy::InverseSpread => 1.0 / l.b,
        }
    }
}

/// How B-Median pairs left and right detections.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Association {
    /// Right detection with the same ground-truth person id.
    #[default]
    GroundTruth,
    /// Right detection selected by the network, when flagged stereo.
    Predicted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub iou_threshold: f64,
    pub rel_threshold: f64,
    pub rank_by: RankBy,
    pub difficulty: DifficultyThresholds,
    /// Prior used by the monocular baseline and the task-error reference.
    pub height_prior: HeightPrior,
    pub b_median_association: Association,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_threshold: DEFAULT_IOU,
            rel_threshold: RALP_THRESHOLD,
            rank_by: RankBy::default(),
            difficulty: DifficultyThresholds::default(),
            height_prior: HeightPrior::gaussian(1.71, 0.09).expect("valid prior"),
            b_median_association: Association::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkEstimate {
    pub r: f64,
    pub b: f64,
    pub ism: f64,
    pub mode: Mode,
    pub confidence: f64,
    pub euclidean_error: f64,
    /// Whether the selected right detection is the same person; `None` when
    /// the right detection carries no identity.
    pub association_correct: Option<bool>,
}

/// Everything known about one ground-truth instance after evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub frame_id: u64,
    pub person_id: u32,
    pub r_gt: f64,
    pub height_m: f64,
    pub difficulty: Difficulty,
    pub stereo_visible: bool,
    pub network: Option<NetworkEstimate>,
    pub b_median: Option<f64>,
    pub b_pose: Option<f64>,
    pub mono_geometric: Option<f64>,
}

impl InstanceRecord {
    pub fn estimate(&self, method: Method) -> Option<f64> {
        match method {
            Method::Network => self.network.as_ref().map(|n| n.r),
            Method::BMedian => self.b_median,
            Method::BPose => self.b_pose,
            Method::MonoGeometric => self.mono_geometric,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Network,
    BMedian,
    BPose,
    MonoGeometric,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Network, Method::BMedian, Method::BPose, Method::MonoGeometric];

    pub fn name(self) -> &'static str {
        match self {
            Method::Network => "network",
            Method::BMedian => "b_median",
            Method::BPose => "b_pose",
            Method::MonoGeometric => "mono_geometric",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    All,
    Easy,
    Moderate,
    Hard,
    /// Seen in both images.
    Stereo,
    /// Seen in the left image only.
    MonoOnly,
}

impl Group {
    pub const ALL: [Group; 6] = [Group::All, Group::Easy, Group::Moderate, Group::Hard, Group::Stereo, Group::MonoOnly];

    pub fn contains(self, r: &InstanceRecord) -> bool {
        match self {
            Group::All => true,
            Group::Easy => r.difficulty == Difficulty::Easy,
            Group::Moderate => r.difficulty == Difficulty::Moderate,
            Group::Hard => r.difficulty == Difficulty::Hard,
            Group::Stereo => r.stereo_visible,
            Group::MonoOnly => !r.stereo_visible,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Group::All => "all",
            Group::Easy => "easy",
            Group::Moderate => "moderate",
            Group::Hard => "hard",
            Group::Stereo => "stereo",
            Group::MonoOnly => "mono_only",
        }
    }
}

/// Ground-truth distance bins. The last bin is open-ended so instances a
/// few centimeters past 50 m still count.
pub const BINS: [(&str, f64, f64); 5] = [
    ("all", 0.0, f64::INFINITY),
    ("<10", 0.0, 10.0),
    ("10-20", 10.0, 20.0),
    ("20-30", 20.0, 30.0),
    ("30-50", 30.0, f64::INFINITY),
];

pub fn in_bin(bin: &str, r_gt: f64) -> bool {
    BINS.iter().find(|b| b.0 == bin).is_some_and(|&(_, lo, hi)| r_gt >= lo && r_gt < hi)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub method: Method,
    pub group: Group,
    pub bin: String,
    pub n_gt: usize,
    pub n_estimates: usize,
    pub recall: f64,
    pub ale: Option<f64>,
    pub ale_std: Option<f64>,
    /// Network only: mean 3D Euclidean error.
    pub ale_euclidean: Option<f64>,
    pub ralp: Option<f64>,
    pub coverage: Option<f64>,
    pub relative_interval_size: Option<f64>,
    pub error_box: Option<BoxStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsmSummary {
    /// Stereo-visible instances whose selected right detection is correct.
    pub association_accuracy: Option<f64>,
    pub n_stereo: usize,
    /// Mono-only instances flagged mono.
    pub mono_flag_accuracy: Option<f64>,
    pub n_mono: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpreadSummary {
    /// Mean spread of stereo-flagged, stereo-visible instances under 10 m.
    pub near_stereo_mean_b: Option<f64>,
    /// Mean monocular task error at the same instances' distances.
    pub near_task_error: Option<f64>,
    pub n_near: usize,
    /// Log-log slope of spread against distance for mono-only instances.
    pub mono_exponent: Option<f64>,
    pub n_mono: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub config: EvalConfig,
    pub n_frames: usize,
    pub n_gt: usize,
    pub n_predictions: usize,
    pub n_matched: usize,
    pub n_unmatched_predictions: usize,
    pub difficulty_counts: BTreeMap<Difficulty, usize>,
    pub rows: Vec<MetricsRow>,
    pub ism: IsmSummary,
    pub spread: SpreadSummary,
}

impl MetricsReport {
    pub fn row(&self, method: Method, group: Group, bin: &str) -> Option<&MetricsRow> {
        self.rows.iter().find(|r| r.method == method && r.group == group && r.bin == bin)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub records: Vec<InstanceRecord>,
    /// Confidences of predictions with no ground-truth match.
    pub unmatched_confidences: Vec<f64>,
    pub report: MetricsReport,
}

pub fn evaluate(frames: &[FrameAnnotation], preds: &[Localization], cfg: &EvalConfig) -> Result<Evaluation> {
    let mut by_frame: BTreeMap<u64, Vec<&Localization>> = BTreeMap::new();
    for p in preds {
        by_frame.entry(p.frame_id).or_default().push(p);
    }
    let known: std::collections::BTreeSet<u64> = frames.iter().map(|f| f.frame_id).collect();
    if known.len() != frames.len() {
        return Err(data("duplicate frame ids in annotations"));
    }
    if let Some(id) = by_frame.keys().find(|id| !known.contains(id)) {
        return Err(data(format!("prediction for unknown frame {id}")));
    }

    let mut records = Vec::new();
    let mut unmatched = Vec::new();
    for frame in frames {
        let locs = by_frame.get(&frame.frame_id).map(Vec::as_slice).unwrap_or(&[]);
        frame_records(frame, locs, cfg, &mut records, &mut unmatched)?;
    }
    let report = aggregate(frames.len(), preds.len(), &records, &unmatched, cfg);
    Ok(Evaluation { records, unmatched_confidences: unmatched, report })
}

fn frame_records(
    frame: &FrameAnnotation,
    locs: &[&Localization],
    cfg: &EvalConfig,
    records: &mut Vec<InstanceRecord>,
    unmatched: &mut Vec<f64>,
) -> Result<()> {
    let rig = &frame.rig;
    let det_boxes: Vec<Option<[f64; 4]>> = frame.left.iter().map(|d| d.keypoints.bbox()).collect();
    let matches = greedy_box_match(&det_boxes, &gt_boxes(frame), cfg.iou_threshold);
    let det_of_gt: BTreeMap<usize, usize> = matches.iter().map(|&(d, g, _)| (g, d)).collect();

    let mut loc_of_det: BTreeMap<usize, &Localization> = BTreeMap::new();
    for l in locs {
        let Some(d) = frame.left.iter().position(|d| d.id == l.instance_id) else {
            return Err(data(format!(
                "frame {}: prediction for unknown left detection {}",
                frame.frame_id, l.instance_id
            )));
        };
        if loc_of_det.insert(d, l).is_some() {
            return Err(data(format!(
                "frame {}: two predictions for left detection {}",
                frame.frame_id, l.instance_id
            )));
        }
    }
    let matched_dets: std::collections::BTreeSet<usize> = matches.iter().map(|m| m.0).collect();
    for (d, l) in &loc_of_det {
        if !matched_dets.contains(d) {
            unmatched.push(cfg.rank_by.score(l));
        }
    }
    let right_norm: Vec<_> = frame.right.iter().map(|d| d.keypoints.normalize(rig, Eye::Right)).collect();

    for (gi, inst) in frame.instances.iter().enumerate() {
        if !inst.visible_left {
            continue;
        }
        let gt = inst.spherical()?;
        let mut rec = InstanceRecord {
            frame_id: frame.frame_id,
            person_id: inst.person_id,
            r_gt: gt.r,
            height_m: inst.height_m,
            difficulty: difficulty(inst, &cfg.difficulty),
            stereo_visible: inst.visible_right,
            network: None,
            b_median: None,
            b_pose: None,
            mono_geometric: None,
        };
        if let Some(&di) = det_of_gt.get(&gi) {
            let left = &frame.left[di];
            let loc = loc_of_det.get(&di).copied();
            if let Some(l) = loc {
                let p = l.position_xyz();
                let c = inst.center3d;
                let association_correct = match l.right_instance_id {
                    None => Some(!inst.visible_right),
                    Some(rid) => frame
                        .right
                        .iter()
                        .find(|r| r.id == rid)
                        .and_then(|r| r.person_id)
                        .map(|pid| pid == inst.person_id),
                };
                rec.network = Some(NetworkEstimate {
                    r: l.r,
                    b: l.b,
                    ism: l.ism,
                    mode: l.mode,
                    confidence: cfg.rank_by.score(l),
                    euclidean_error: ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) + (p[2] - c[2]).powi(2)).sqrt(),
                    association_correct,
                });
            }

            let right_for_median = match cfg.b_median_association {
                Association::GroundTruth => frame.right.iter().find(|r| r.person_id == Some(inst.person_id)),
                Association::Predicted => loc
                    .filter(|l| l.mode == Mode::Stereo)
                    .and_then(|l| l.right_instance_id)
                    .and_then(|rid| frame.right.iter().find(|r| r.id == rid)),
            };
            rec.b_median = right_for_median.and_then(|r| baselines::b_median(&left.keypoints, &r.keypoints, rig));

            let left_norm = left.keypoints.normalize(rig, Eye::Left);
            rec.b_pose = baselines::b_pose_similarity(&left_norm, &right_norm)
                .and_then(|(best, _)| baselines::b_median(&left.keypoints, &frame.right[best].keypoints, rig));
            rec.mono_geometric = baselines::mono_geometric(&left.keypoints, rig, &cfg.height_prior);
        }
        records.push(rec);
    }
    Ok(())
}

fn aggregate(
    n_frames: usize,
    n_predictions: usize,
    records: &[InstanceRecord],
    unmatched: &[f64],
    cfg: &EvalConfig,
) -> MetricsReport {
    let mut rows = Vec::new();
    for method in Method::ALL {
        for group in Group::ALL {
            for (bin, _, _) in BINS {
                let sel: Vec<&InstanceRecord> =
                    records.iter().filter(|r| group.contains(r) && in_bin(bin, r.r_gt)).collect();
                // false positives have no distance; they only count in the overall row
                let fps = if group == Group::All && bin == "all" { unmatched } else { &[] };
                rows.push(row(method, group, bin, &sel, fps, cfg));
            }
        }
    }

    let mut difficulty_counts = BTreeMap::new();
    for r in records {
        *difficulty_counts.entry(r.difficulty).or_insert(0) += 1;
    }

    let stereo: Vec<bool> = records
        .iter()
        .filter(|r| r.stereo_visible)
        .filter_map(|r| r.network.as_ref().and_then(|n| n.association_correct))
        .collect();
    let mono: Vec<bool> = records
        .iter()
        .filter(|r| !r.stereo_visible)
        .filter_map(|r| r.network.as_ref().map(|n| n.mode == Mode::Mono))
        .collect();
    let frac = |v: &[bool]| (!v.is_empty()).then(|| v.iter().filter(|b| **b).count() as f64 / v.len() as f64);
    let ism = IsmSummary {
        association_accuracy: frac(&stereo),
        n_stereo: stereo.len(),
        mono_flag_accuracy: frac(&mono),
        n_mono: mono.len(),
    };

    let near: Vec<(f64, f64)> = records
        .iter()
        .filter(|r| r.stereo_visible && r.r_gt < 10.0)
        .filter_map(|r| r.network.as_ref().filter(|n| n.mode == Mode::Stereo).map(|n| (n.b, r.r_gt)))
        .collect();
    let c = cfg.height_prior.task_error_constant();
    let mono_pts: Vec<(f64, f64)> = records
        .iter()
        .filter(|r| !r.stereo_visible)
        .filter_map(|r| r.network.as_ref().map(|n| (r.r_gt.ln(), n.b.ln())))
        .collect();
    let spread = SpreadSummary {
        near_stereo_mean_b: metrics::mean(&near.iter().map(|p| p.0).collect::<Vec<_>>()),
        near_task_error: metrics::mean(&near.iter().map(|p| c * p.1).collect::<Vec<_>>()),
        n_near: near.len(),
        mono_exponent: slope(&mono_pts),
        n_mono: mono_pts.len(),
    };

    MetricsReport {
        config: cfg.clone(),
        n_frames,
        n_gt: records.len(),
        n_predictions,
        n_matched: records.iter().filter(|r| r.network.is_some()).count(),
        n_unmatched_predictions: unmatched.len(),
        difficulty_counts,
        rows,
        ism,
        spread,
    }
}

/// Least-squares slope, `None` with fewer than three points or no spread in x.
pub fn slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 3 {
        return None;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 1e-12).then(|| sxy / sxx)
}

fn row(method: Method, group: Group, bin: &str, sel: &[&InstanceRecord], fps: &[f64], cfg: &EvalConfig) -> MetricsRow {
    let with: Vec<&&InstanceRecord> = sel.iter().filter(|r| r.estimate(method).is_some()).collect();
    let pred: Vec<f64> = with.iter().map(|r| r.estimate(method).unwrap()).collect();
    let gt: Vec<f64> = with.iter().map(|r| r.r_gt).collect();
    let errors: Vec<f64> = pred.iter().zip(&gt).map(|(p, g)| (p - g).abs()).collect();
    let n_gt = sel.len();
    let mut out = MetricsRow {
        method,
        group,
        bin: bin.to_string(),
        n_gt,
        n_estimates: with.len(),
        recall: if n_gt == 0 { 0.0 } else { with.len() as f64 / n_gt as f64 },
        ale: metrics::ale(&pred, &gt),
        ale_std: metrics::std_dev(&errors),
        ale_euclidean: None,
        ralp: None,
        coverage: None,
        relative_interval_size: None,
        error_box: BoxStats::new(&errors),
    };
    if method == Method::Network {
        let nets: Vec<&NetworkEstimate> = with.iter().map(|r| r.network.as_ref().unwrap()).collect();
        out.ale_euclidean = metrics::mean(&nets.iter().map(|n| n.euclidean_error).collect::<Vec<_>>());
        let b: Vec<f64> = nets.iter().map(|n| n.b).collect();
        if let Some((cov, size)) = metrics::coverage_and_size(&pred, &gt, &b) {
            out.coverage = Some(cov);
            out.relative_interval_size = Some(size);
        }
        let mut ranked: Vec<RankedPrediction> = nets
            .iter()
            .zip(&gt)
            .map(|(n, g)| RankedPrediction { confidence: n.confidence, r_pred: n.r, r_gt: Some(*g) })
            .collect();
        ranked.extend(fps.iter().map(|&c| RankedPrediction { confidence: c, r_pred: 0.0, r_gt: None }));
        out.ralp = (n_gt > 0).then(|| metrics::ralp(&ranked, n_gt, cfg.rel_threshold));
    }
    out
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_report_json(path: impl AsRef<Path>, report: &MetricsReport) -> Result<()> {
    let mut s = serde_json::to_string_pretty(report)?;
    s.push('\n');
    std::fs::write(path, s)?;
    Ok(())
}

pub fn write_metrics_csv(path: impl AsRef<Path>, report: &MetricsReport) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        f,
        "method,group,bin,n_gt,n_estimates,recall,ale,ale_std,ale_euclidean,ralp,coverage,relative_interval_size"
    )?;
    for r in &report.rows {
        writeln!(
            f,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.method.name(),
            r.group.name(),
            r.bin,
            r.n_gt,
            r.n_estimates,
            r.recall,
            opt(r.ale),
            opt(r.ale_std),
            opt(r.ale_euclidean),
            opt(r.ralp),
            opt(r.coverage),
            opt(r.relative_interval_size)
        )?;
    }
    f.flush()?;
    Ok(())
}

/// Absolute radial error of every method per instance, for error-vs-distance curves.
pub fn write_errors_csv(path: impl AsRef<Path>, records: &[InstanceRecord], prior: &HeightPrior) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "frame_id,person_id,r_gt,difficulty,stereo_visible,network,b_median,b_pose,mono_geometric,task_error")?;
    for r in records {
        let err = |m| r.estimate(m).map(|e: f64| (e - r.r_gt).abs());
        writeln!(
            f,
            "{},{},{},{},{},{},{},{},{},{}",
            r.frame_id,
            r.person_id,
            r.r_gt,
            serde_json::to_value(r.difficulty)?.as_str().unwrap_or_default(),
            r.stereo_visible,
            opt(err(Method::Network)),
            opt(err(Method::BMedian)),
            opt(err(Method::BPose)),
            opt(err(Method::MonoGeometric)),
            geometry::monocular_task_error(r.r_gt, prior)
        )?;
    }
    f.flush()?;
    Ok(())
}

/// Predicted spread per matched instance, for spread-vs-distance plots.
pub fn write_spread_csv(path: impl AsRef<Path>, records: &[InstanceRecord]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "frame_id,person_id,r_gt,r_pred,b,ism,mode,stereo_visible")?;
    for r in records {
        if let Some(n) = &r.network {
            let mode = if n.mode == Mode::Stereo { "stereo" } else { "mono" };
            writeln!(
                f,
                "{},{},{},{},{},{},{},{}",
                r.frame_id, r.person_id, r.r_gt, n.r, n.b, n.ism, mode, r.stereo_visible
            )?;
        }
    }
    f.flush()?;
    Ok(())
}

/// Box-plot summaries of absolute error, all instances, per method and bin.
/// Outliers are the points beyond 1.5 IQR, semicolon-separated.
pub fn write_box_csv(path: impl AsRef<Path>, report: &MetricsReport) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "method,group,bin,n,min,q1,median,q3,max,whisker_low,whisker_high,n_outliers,outliers")?;
    for r in &report.rows {
        if let Some(b) = &r.error_box {
            let outliers: Vec<String> = b.outliers.iter().map(|v| v.to_string()).collect();
            writeln!(
                f,
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.method.name(),
                r.group.name(),
                r.bin,
                b.n,
                b.min,
                b.q1,
                b.median,
                b.q3,
                b.max,
                b.whisker_low,
                b.whisker_high,
                b.outliers.len(),
                outliers.join(";")
            )?;
        }
    }
    f.flush()?;
    Ok(())
}
