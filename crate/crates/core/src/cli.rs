//! Command-line interface. Every command is a pure function of its inputs
//! and seed; rerunning it reproduces its output files byte for byte.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{config, data, Error, Result};
use crate::eval::{self, EvalConfig, RankBy};
use crate::geometry::{self, StereoRig};
use crate::inference::predict_annotation;
use crate::jsonl;
use crate::model::{self, Checkpoint, Model, Objective, TrainConfig};
use crate::nn::gradcheck::{GradCheck, TOLERANCE};
use crate::nn::Network;
use crate::pairs::{frame_pairs, PairSample, FEATURE_LEN};
use crate::rng;
use crate::synth::{dataset_split, generate_frames, FrameAnnotation, HeightTail, SceneConfig};

#[derive(Debug, Parser)]
#[command(name = "stereoloc", version, about = "Stereo pedestrian association and 3D localization from 2D keypoints")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic stereo frames: train.jsonl, val.jsonl, rig.json
    Synth(SynthArgs),
    /// Build labeled left/right pairs from a frame file
    Pairs(PairsArgs),
    /// Train a model on labeled pairs
    Train(TrainArgs),
    /// Predict localizations for every left instance of every frame
    Predict(PredictArgs),
    /// Score predictions against annotated frames
    Eval(EvalArgs),
    /// Compare backprop gradients with finite differences
    Gradcheck(GradcheckArgs),
    /// Write CSV data for error, spread and box-plot figures
    Figures(FiguresArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Number of frames to generate
    #[arg(long, default_value_t = 2000)]
    pub scenes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory (created if missing)
    #[arg(long, default_value = "data")]
    pub out: PathBuf,
    /// Fraction of people hidden from the right camera
    #[arg(long, default_value_t = 0.15)]
    pub mono_only: f64,
    /// Extra height distribution, e.g. `uniform:1.2,2.0` or `uniform:1.2,2.0@0.3`
    #[arg(long)]
    pub height_tail: Option<String>,
    /// Keypoint noise standard deviation, pixels
    #[arg(long, default_value_t = 1.0)]
    pub noise: f64,
    /// Fraction of frames in the training split; the rest is validation
    #[arg(long, default_value_t = 0.8)]
    pub train_fraction: f64,
    /// Stereo rig JSON (default: 0.54 m baseline, 721 px focal, 1240x380)
    #[arg(long)]
    pub rig: Option<PathBuf>,
    /// Scene config JSON; its keys override the flags
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PairsArgs {
    /// Frame annotations (JSONL)
    #[arg(long)]
    pub frames: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Fraction of left instances that also get a zero-difference pair
    #[arg(long, default_value_t = 0.1)]
    pub null_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory from `synth`; pairs are built from its frames
    #[arg(long, conflicts_with_all = ["train_pairs", "val_pairs"])]
    pub data: Option<PathBuf>,
    /// Training pairs (JSONL), instead of --data
    #[arg(long, requires = "val_pairs")]
    pub train_pairs: Option<PathBuf>,
    /// Validation pairs (JSONL), instead of --data
    #[arg(long, requires = "train_pairs")]
    pub val_pairs: Option<PathBuf>,
    /// Rig JSON (default: <data>/rig.json, else the default rig)
    #[arg(long)]
    pub rig: Option<PathBuf>,
    /// Checkpoint path
    #[arg(long, default_value = "model.json")]
    pub out: PathBuf,
    /// Per-epoch CSV log
    #[arg(long, default_value = "train_log.csv")]
    pub log: PathBuf,
    /// Training config JSON; its keys override the flags
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Number of epochs [default: 400]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Mini-batch size [default: 512]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Adam learning rate [default: 0.001]
    #[arg(long)]
    pub lr: Option<f64>,
    /// Hidden layer width [default: 256]
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Null-pair fraction when building pairs from --data
    #[arg(long, default_value_t = 0.1)]
    pub null_fraction: f64,
    /// Train without the matching loss
    #[arg(long)]
    pub no_ism_loss: bool,
    /// Train without knowledge injection
    #[arg(long)]
    pub no_ki: bool,
    /// Supervise distance on true pairs only
    #[arg(long)]
    pub mask_distance_for_false: bool,
    /// Suppress per-epoch progress on stderr
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Frames (JSONL); ground-truth fields are ignored
    #[arg(long)]
    pub frames: PathBuf,
    #[arg(long, default_value = "predictions.jsonl")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Annotated frames (JSONL)
    #[arg(long)]
    pub frames: PathBuf,
    /// Localizations (JSONL) from `predict`
    #[arg(long)]
    pub predictions: PathBuf,
    /// Report directory
    #[arg(long, default_value = "report")]
    pub out: PathBuf,
    /// IoU threshold for matching predictions to ground truth
    #[arg(long, default_value_t = 0.5)]
    pub iou: f64,
    /// Ranking score for precision: ism-over-spread, ism, inverse-spread
    #[arg(long, default_value = "ism-over-spread")]
    pub rank_by: String,
    /// Evaluation config JSON; its keys override the flags
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Number of seeds (each draws a fresh network and batch)
    #[arg(long, default_value_t = 3)]
    pub seeds: u64,
    #[arg(long, default_value_t = 8)]
    pub batch: usize,
    /// Hidden width of the checked network
    #[arg(long, default_value_t = 256)]
    pub hidden: usize,
    /// Elements checked per parameter tensor (0 = all)
    #[arg(long, default_value_t = 64)]
    pub per_tensor: usize,
    /// Maximum accepted relative error
    #[arg(long, default_value_t = TOLERANCE)]
    pub tolerance: f64,
}

#[derive(Debug, Args)]
pub struct FiguresArgs {
    #[arg(long)]
    pub frames: PathBuf,
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long, default_value = "figures")]
    pub out: PathBuf,
    /// Rig for the error-model curve (default: the frames' rig)
    #[arg(long)]
    pub rig: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Pairs(a) => pairs(a),
        Command::Train(a) => train(a),
        Command::Predict(a) => predict(a),
        Command::Eval(a) => evaluate(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Figures(a) => figures(a),
    }
}

/// Overlay the keys of a JSON object file onto `base`.
fn overlay<T: Serialize + DeserializeOwned>(base: T, path: Option<&Path>) -> Result<T> {
    let Some(path) = path else { return Ok(base) };
    let text = std::fs::read_to_string(path)?;
    let patch: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| config(format!("{}: {e}", path.display())))?;
    let serde_json::Value::Object(patch) = patch else {
        return Err(config(format!("{}: expected a JSON object", path.display())));
    };
    let mut value = serde_json::to_value(base)?;
    let obj = value.as_object_mut().expect("configs serialize to objects");
    for (k, v) in patch {
        if !obj.contains_key(&k) {
            return Err(config(format!("{}: unknown key {k:?}", path.display())));
        }
        obj.insert(k, v);
    }
    serde_json::from_value(value).map_err(|e| config(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    std::fs::write(path, s)?;
    Ok(())
}

fn load_rig(path: Option<&Path>) -> Result<StereoRig> {
    match path {
        Some(p) => StereoRig::load(p),
        None => Ok(StereoRig::default()),
    }
}

fn synth(a: SynthArgs) -> Result<()> {
    if !(a.train_fraction > 0.0 && a.train_fraction < 1.0) {
        return Err(config(format!("train fraction must lie in (0, 1), got {}", a.train_fraction)));
    }
    let rig = load_rig(a.rig.as_deref())?;
    let mut cfg = SceneConfig { mono_only_fraction: a.mono_only, noise_px: a.noise, ..Default::default() };
    if let Some(tail) = &a.height_tail {
        cfg.height_tail = Some(tail.parse::<HeightTail>()?);
    }
    let cfg: SceneConfig = overlay(cfg, a.config.as_deref())?;
    cfg.validate()?;
    let frames = generate_frames(&cfg, &rig, a.seed, a.scenes)?;
    let split = dataset_split(frames.len(), &[a.train_fraction, 1.0 - a.train_fraction], a.seed)?;
    std::fs::create_dir_all(&a.out)?;
    for (name, idx) in ["train.jsonl", "val.jsonl"].iter().zip(&split) {
        let part: Vec<&FrameAnnotation> = idx.iter().map(|&i| &frames[i]).collect();
        jsonl::write(a.out.join(name), &part)?;
    }
    write_json(&a.out.join("rig.json"), &rig)?;
    write_json(&a.out.join("scene.json"), &cfg)?;
    eprintln!("wrote {} train and {} val frames to {}", split[0].len(), split[1].len(), a.out.display());
    Ok(())
}

fn build_pairs(frames: &[FrameAnnotation], null_fraction: f64, seed: u64) -> Result<Vec<PairSample>> {
    if !(0.0..=1.0).contains(&null_fraction) {
        return Err(config(format!("null fraction must lie in [0, 1], got {null_fraction}")));
    }
    for f in frames {
        f.validate()?;
    }
    Ok(frames.iter().flat_map(|f| frame_pairs(f, null_fraction, seed)).collect())
}

fn pairs(a: PairsArgs) -> Result<()> {
    let frames: Vec<FrameAnnotation> = jsonl::read(&a.frames)?;
    let pairs = build_pairs(&frames, a.null_fraction, a.seed)?;
    jsonl::write(&a.out, &pairs)?;
    let trues = pairs.iter().filter(|p| p.is_true_pair()).count();
    eprintln!("wrote {} pairs ({trues} matching) to {}", pairs.len(), a.out.display());
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = TrainConfig {
        seed: a.seed,
        no_ism_loss: a.no_ism_loss,
        no_ki: a.no_ki,
        mask_distance_for_false: a.mask_distance_for_false,
        ..Default::default()
    };
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = a.lr {
        cfg.lr = v;
    }
    if let Some(v) = a.hidden {
        cfg.hidden = v;
    }
    let cfg: TrainConfig = overlay(cfg, a.config.as_deref())?;
    cfg.validate()?;

    let (train_pairs, val_pairs, rig) = match (&a.data, &a.train_pairs, &a.val_pairs) {
        (Some(dir), _, _) => {
            let rig_path = a.rig.clone().unwrap_or_else(|| dir.join("rig.json"));
            let rig = if rig_path.exists() { StereoRig::load(&rig_path)? } else { StereoRig::default() };
            let tr: Vec<FrameAnnotation> = jsonl::read(dir.join("train.jsonl"))?;
            let va: Vec<FrameAnnotation> = jsonl::read(dir.join("val.jsonl"))?;
            (build_pairs(&tr, a.null_fraction, a.seed)?, build_pairs(&va, a.null_fraction, a.seed)?, rig)
        }
        (None, Some(t), Some(v)) => (jsonl::read(t)?, jsonl::read(v)?, load_rig(a.rig.as_deref())?),
        _ => return Err(config("give --data DIR or both --train-pairs and --val-pairs")),
    };

    let quiet = a.quiet;
    let outcome = model::train(&train_pairs, &val_pairs, &rig, &cfg, |e| {
        if !quiet {
            eprintln!(
                "epoch {:>4}  train {:.4}  val {:.4}  val ism acc {:.4}",
                e.epoch, e.train.total, e.val.total, e.val_ism_accuracy
            );
        }
    })?;
    outcome.checkpoint.save(&a.out)?;
    model::write_log_csv(&a.log, &outcome.log)?;
    if let Some(msg) = outcome.diverged {
        return Err(Error::Numeric(format!(
            "training diverged ({msg}); last good checkpoint (epoch {}) saved to {}",
            outcome.checkpoint.epoch,
            a.out.display()
        )));
    }
    eprintln!("saved {} after {} epochs", a.out.display(), outcome.checkpoint.epoch);
    Ok(())
}

fn predict(a: PredictArgs) -> Result<()> {
    let model = Model::from_checkpoint(&Checkpoint::load(&a.checkpoint)?)?;
    let frames: Vec<FrameAnnotation> = jsonl::read(&a.frames)?;
    let mut out = Vec::new();
    for f in &frames {
        f.validate()?;
        out.extend(predict_annotation(&model, f)?);
    }
    jsonl::write(&a.out, &out)?;
    eprintln!("wrote {} localizations to {}", out.len(), a.out.display());
    Ok(())
}

fn parse_rank_by(s: &str) -> Result<RankBy> {
    match s {
        "ism-over-spread" => Ok(RankBy::IsmOverSpread),
        "ism" => Ok(RankBy::Ism),
        "inverse-spread" => Ok(RankBy::InverseSpread),
        other => Err(config(format!("unknown ranking {other:?}"))),
    }
}

fn load_eval(frames: &Path, predictions: &Path, cfg: &EvalConfig) -> Result<eval::Evaluation> {
    let frames: Vec<FrameAnnotation> = jsonl::read(frames)?;
    let preds = jsonl::read(predictions)?;
    eval::evaluate(&frames, &preds, cfg)
}

fn evaluate(a: EvalArgs) -> Result<()> {
    let cfg = EvalConfig { iou_threshold: a.iou, rank_by: parse_rank_by(&a.rank_by)?, ..Default::default() };
    let cfg: EvalConfig = overlay(cfg, a.config.as_deref())?;
    cfg.height_prior.validate()?;
    let ev = load_eval(&a.frames, &a.predictions, &cfg)?;
    std::fs::create_dir_all(&a.out)?;
    eval::write_report_json(a.out.join("metrics.json"), &ev.report)?;
    eval::write_metrics_csv(a.out.join("metrics.csv"), &ev.report)?;
    eval::write_box_csv(a.out.join("box_plots.csv"), &ev.report)?;
    eval::write_spread_csv(a.out.join("spread_points.csv"), &ev.records)?;
    let all = ev.report.row(eval::Method::Network, eval::Group::All, "all").expect("overall row");
    eprintln!(
        "{} instances, {} matched; ALE {} m, RALP {}%, coverage {}",
        ev.report.n_gt,
        ev.report.n_matched,
        all.ale.map_or("-".into(), |v| format!("{v:.3}")),
        all.ralp.map_or("-".into(), |v| format!("{v:.1}")),
        all.coverage.map_or("-".into(), |v| format!("{v:.3}")),
    );
    Ok(())
}

/// Worst relative gradient error over `seeds` random networks and batches,
/// with the training objective on top of the network.
pub fn gradcheck_report(a: &GradcheckArgs) -> Result<f64> {
    let cfg = TrainConfig { hidden: a.hidden, ..Default::default() };
    let objective = Objective {
        weights: model::LossWeights::default(),
        distance_scale: cfg.distance_scale,
        mask_distance_for_false: false,
    };
    let mut worst = 0.0f64;
    for seed in 0..a.seeds {
        let mut net = Network::new(TrainConfig { seed, ..cfg.clone() }.network_spec())?;
        let (x, targets) = gradcheck_batch(seed, a.batch);
        let loss = |out: &ndarray::Array2<f64>| {
            let (l, g) = objective.evaluate(out, &targets).expect("finite objective");
            (l.total, g)
        };
        let check = GradCheck {
            max_per_tensor: (a.per_tensor > 0).then_some(a.per_tensor),
            dropout_seed: seed,
            ..Default::default()
        };
        let report = check.run(&mut net, &x, loss)?;
        eprintln!(
            "seed {seed}: {} elements, max relative error {:.3e} ({}[{}]: analytic {:.6e}, numeric {:.6e})",
            report.checked,
            report.max_rel_error,
            report.worst_param,
            report.worst_index,
            report.worst_analytic,
            report.worst_numeric
        );
        worst = worst.max(report.max_rel_error);
    }
    Ok(worst)
}

fn gradcheck_batch(seed: u64, n: usize) -> (ndarray::Array2<f64>, Vec<model::Target>) {
    use rand::Rng;
    let mut r = rng::substream(seed, "gradcheck", 0);
    let x = ndarray::Array2::from_shape_simple_fn((n, FEATURE_LEN), || r.random_range(-2.0..2.0));
    let targets = (0..n)
        .map(|_| model::Target {
            r: r.random_range(5.0..50.0),
            beta: r.random_range(-0.6..0.6),
            psi: r.random_range(0.0..0.2),
            ism_label: r.random_range(0..2u8),
        })
        .collect();
    (x, targets)
}

fn gradcheck(a: GradcheckArgs) -> Result<()> {
    let worst = gradcheck_report(&a)?;
    if worst < a.tolerance {
        eprintln!("gradcheck passed: max relative error {worst:.3e} < {:.0e}", a.tolerance);
        Ok(())
    } else {
        Err(Error::Numeric(format!("gradcheck failed: max relative error {worst:.3e} >= {:.0e}", a.tolerance)))
    }
}

fn figures(a: FiguresArgs) -> Result<()> {
    let frames: Vec<FrameAnnotation> = jsonl::read(&a.frames)?;
    let preds = jsonl::read(&a.predictions)?;
    let cfg = EvalConfig::default();
    let ev = eval::evaluate(&frames, &preds, &cfg)?;
    std::fs::create_dir_all(&a.out)?;
    eval::write_errors_csv(a.out.join("error_vs_distance.csv"), &ev.records, &cfg.height_prior)?;
    eval::write_spread_csv(a.out.join("spread_vs_distance.csv"), &ev.records)?;
    eval::write_box_csv(a.out.join("box_plots.csv"), &ev.report)?;

    let rig = match (&a.rig, frames.first()) {
        (Some(p), _) => StereoRig::load(p)?,
        (None, Some(f)) => f.rig,
        (None, None) => return Err(data("no frames and no rig for the error-model curve")),
    };
    let mut curve = String::from("distance_m,stereo_pixel_error_m,mono_task_error_m\n");
    for i in 1..=60 {
        let z = i as f64;
        curve.push_str(&format!(
            "{z},{},{}\n",
            geometry::stereo_pixel_error(z, &rig, 1.0),
            geometry::monocular_task_error(z, &cfg.height_prior)
        ));
    }
    std::fs::write(a.out.join("error_model.csv"), curve)?;
    eprintln!("wrote figure data to {}", a.out.display());
    Ok(())
}
