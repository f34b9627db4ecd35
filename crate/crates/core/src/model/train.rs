use std::io::Write;
use std::path::Path;

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use super::head::{LossBreakdown, LossWeights, Objective, Target, OUTPUT_DIM};
use super::{config_hash, ism_accuracy, Checkpoint, InputScaler, CHECKPOINT_VERSION};
use crate::error::{config, data, Error, Result};
use crate::geometry::StereoRig;
use crate::nn::{adam_step, AdamConfig, AdamState, Network, NetworkSpec};
use crate::pairs::{BalanceMode, EpochAugmenter, PairSample, FEATURE_LEN};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Global gradient norm limit; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub loss_weights: LossWeights,
    /// Height-rescaled copies added per pair each epoch.
    pub ki_multiplier: usize,
    pub ki_range_m: [f64; 2],
    pub flip: bool,
    pub balance: BalanceMode,
    pub seed: u64,
    /// Drop the match loss entirely (stereo + mono cues without matching).
    pub no_ism_loss: bool,
    /// Disable knowledge injection regardless of `ki_multiplier`.
    pub no_ki: bool,
    /// Supervise distance on true pairs only.
    pub mask_distance_for_false: bool,
    pub hidden: usize,
    pub residual_blocks: usize,
    pub dropout: f64,
    /// Meters per unit of softplus output in the distance head.
    pub distance_scale: f64,
    pub save_optimizer: bool,
    /// Return the epoch with the lowest validation loss rather than the last.
    pub keep_best: bool,
    /// Decay of an exponential moving average of the weights, taken after
    /// every step. When set, validation and checkpoints use the averaged
    /// weights. `None` uses the raw weights.
    pub weight_average: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 400,
            batch_size: 512,
            lr: 1e-3,
            clip_norm: Some(5.0),
            loss_weights: LossWeights::default(),
            ki_multiplier: 1,
            ki_range_m: [1.2, 2.0],
            flip: true,
            balance: BalanceMode::Downsample,
            seed: 0,
            no_ism_loss: false,
            no_ki: false,
            mask_distance_for_false: false,
            hidden: 256,
            residual_blocks: 2,
            dropout: 0.2,
            distance_scale: 20.0,
            save_optimizer: false,
            keep_best: true,
            weight_average: Some(0.99),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let w = &self.loss_weights;
        if self.epochs == 0 || self.batch_size < 2 || self.hidden == 0 {
            return Err(config("epochs, hidden width must be positive and batch size at least 2"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(config(format!("clip norm must be positive, got {c}")));
            }
        }
        if ![w.laplace, w.ism, w.angle].iter().all(|v| v.is_finite() && *v >= 0.0) {
            return Err(config(format!("loss weights must be finite and non-negative: {w:?}")));
        }
        if !(self.ki_range_m[0] < self.ki_range_m[1]) {
            return Err(config(format!("empty knowledge-injection range {:?}", self.ki_range_m)));
        }
        if !(0.0..1.0).contains(&self.dropout) || !(self.distance_scale > 0.0) {
            return Err(config("dropout must lie in [0, 1) and distance scale be positive"));
        }
        if let Some(d) = self.weight_average {
            if !(0.0..1.0).contains(&d) {
                return Err(config(format!("weight average decay must lie in [0, 1), got {d}")));
            }
        }
        Ok(())
    }

    pub fn effective_weights(&self) -> LossWeights {
        let mut w = self.loss_weights;
        if self.no_ism_loss {
            w.ism = 0.0;
        }
        w
    }

    pub fn effective_ki_multiplier(&self) -> usize {
        if self.no_ki {
            0
        } else {
            self.ki_multiplier
        }
    }

    pub fn objective(&self) -> Objective {
        Objective {
            weights: self.effective_weights(),
            distance_scale: self.distance_scale,
            mask_distance_for_false: self.mask_distance_for_false,
        }
    }

    pub fn network_spec(&self) -> NetworkSpec {
        NetworkSpec::standard(FEATURE_LEN, self.hidden, self.residual_blocks, OUTPUT_DIM, self.dropout, self.seed)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train: LossBreakdown,
    pub val: LossBreakdown,
    pub val_ism_accuracy: f64,
    pub mean_grad_norm: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Best or final checkpoint (see `keep_best`). After divergence, the
    /// best one so far or the last good one.
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochLog>,
    pub diverged: Option<String>,
}

/// Train from labeled pairs. `on_epoch` sees each epoch's log line as it
/// completes. A non-finite loss or gradient stops training; the outcome
/// then carries the checkpoint from the last completed epoch.
pub fn train(
    train_pairs: &[PairSample],
    val_pairs: &[PairSample],
    rig: &StereoRig,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    rig.validate()?;
    for p in train_pairs.iter().chain(val_pairs) {
        p.validate()?;
    }
    if !train_pairs.iter().any(|p| p.ism_label == 1) || !train_pairs.iter().any(|p| p.ism_label == 0) {
        return Err(data("training pairs must contain both matching and non-matching pairs"));
    }
    if val_pairs.is_empty() {
        return Err(data("validation pairs are empty"));
    }

    let scaler = InputScaler::fit(train_pairs)?;
    let mut network = Network::new(cfg.network_spec())?;
    let mut adam = AdamState::new(&network.params_mut());
    let adam_cfg = AdamConfig { lr: cfg.lr, clip_norm: cfg.clip_norm, ..Default::default() };
    let objective = cfg.objective();
    let augmenter = EpochAugmenter {
        balance: cfg.balance,
        ki_multiplier: cfg.effective_ki_multiplier(),
        ki_range: (cfg.ki_range_m[0], cfg.ki_range_m[1]),
        flip: cfg.flip,
        baseline_m: rig.baseline_m,
    };
    let hash = config_hash(cfg);
    let snapshot = |network: &Network, adam: &AdamState, epoch: usize| Checkpoint {
        version: CHECKPOINT_VERSION,
        epoch,
        config: cfg.clone(),
        config_hash: hash.clone(),
        distance_scale: cfg.distance_scale,
        scaler: scaler.clone(),
        network: network.state(),
        optimizer: cfg.save_optimizer.then(|| adam.clone()),
    };

    let val_x = scaler.apply(val_pairs.iter().map(|p| p.features.as_slice()))?;
    let val_t: Vec<Target> = val_pairs.iter().map(Target::from).collect();

    let mut last_good = snapshot(&network, &adam, 0);
    let mut best: Option<(f64, Checkpoint)> = None;
    let finish = |last_good: Checkpoint, best: Option<(f64, Checkpoint)>| match best {
        Some((_, b)) if cfg.keep_best => b,
        _ => last_good,
    };
    let mut average = cfg.weight_average.map(|decay| WeightAverage::new(&network, decay));
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut step: u64 = 0;
    for epoch in 1..=cfg.epochs {
        let samples = augmenter.epoch(train_pairs, cfg.seed, epoch as u64)?;
        let x = scaler.apply(samples.iter().map(|p| p.features.as_slice()))?;
        let targets: Vec<Target> = samples.iter().map(Target::from).collect();

        let result =
            run_epoch(&mut network, &mut adam, &adam_cfg, &objective, &x, &targets, cfg, &mut step, average.as_mut());
        let (train_loss, grad_norm) = match result {
            Ok(v) => v,
            Err(Error::Numeric(msg)) => {
                let checkpoint = finish(last_good, best);
                return Ok(TrainOutcome { checkpoint, log, diverged: Some(format!("epoch {epoch}: {msg}")) });
            }
            Err(e) => return Err(e),
        };

        let eval_net = match &average {
            Some(avg) => {
                let rows = x.nrows().min(CALIBRATION_ROWS);
                avg.network(&network, &x.slice(s![..rows, ..]).to_owned())?
            }
            None => network.clone(),
        };
        let val_raw = eval_net.forward_eval(&val_x)?;
        let val_loss = match objective.evaluate(&val_raw, &val_t) {
            Ok((l, _)) => l,
            Err(Error::Numeric(msg)) => {
                return Ok(TrainOutcome {
                    checkpoint: finish(last_good, best),
                    log,
                    diverged: Some(format!("epoch {epoch} validation: {msg}")),
                });
            }
            Err(e) => return Err(e),
        };
        let decoded: Vec<_> =
            val_raw.rows().into_iter().map(|r| super::head::decode_row(r, cfg.distance_scale)).collect();
        let entry = EpochLog {
            epoch,
            train: train_loss,
            val: val_loss,
            val_ism_accuracy: ism_accuracy(&decoded, val_pairs),
            mean_grad_norm: grad_norm,
        };
        on_epoch(&entry);
        log.push(entry);
        last_good = snapshot(&eval_net, &adam, epoch);
        // strict comparison keeps the earliest epoch on ties
        if cfg.keep_best && best.as_ref().is_none_or(|(b, _)| val_loss.total < *b) {
            best = Some((val_loss.total, last_good.clone()));
        }
    }
    Ok(TrainOutcome { checkpoint: finish(last_good, best), log, diverged: None })
}

/// One pass over an epoch's samples in their given order. Returns the
/// sample-weighted mean training loss and the mean pre-clip gradient norm.
#[allow(clippy::too_many_arguments)]
fn run_epoch(
    network: &mut Network,
    adam: &mut AdamState,
    adam_cfg: &AdamConfig,
    objective: &Objective,
    x: &Array2<f64>,
    targets: &[Target],
    cfg: &TrainConfig,
    step: &mut u64,
    mut average: Option<&mut WeightAverage>,
) -> Result<(LossBreakdown, f64)> {
    let n = targets.len();
    let mut sum = LossBreakdown::default();
    let mut seen = 0usize;
    let mut norm_sum = 0.0;
    let mut batches = 0usize;
    let mut start = 0;
    while start < n {
        let end = (start + cfg.batch_size).min(n);
        // A short trailing batch would dominate the batch-norm running
        // statistics for one update, so it is skipped unless it is the
        // whole epoch. Shuffling puts those samples in other batches later.
        if end - start < 2 || (start > 0 && end - start < cfg.batch_size / 2) {
            break;
        }
        let xb = x.slice(s![start..end, ..]).to_owned();
        let mut dropout_rng = rng::substream(cfg.seed, rng::DROPOUT, *step);
        let out = network.forward_train(&xb, &mut dropout_rng)?;
        let (loss, grad) = objective.evaluate(&out, &targets[start..end])?;
        network.backward(&grad)?;
        let info = adam_step(&mut network.params_mut(), adam, adam_cfg)?;
        if let Some(avg) = average.as_deref_mut() {
            avg.update(network);
        }

        let m = (end - start) as f64;
        sum.laplace += loss.laplace * m;
        sum.ism += loss.ism * m;
        sum.angle += loss.angle * m;
        sum.total += loss.total * m;
        seen += end - start;
        norm_sum += info.grad_norm;
        batches += 1;
        *step += 1;
        start = end;
    }
    if seen == 0 {
        return Err(data("epoch has fewer than two samples"));
    }
    let k = 1.0 / seen as f64;
    let mean = LossBreakdown { laplace: sum.laplace * k, ism: sum.ism * k, angle: sum.angle * k, total: sum.total * k };
    Ok((mean, norm_sum / batches as f64))
}

/// Rows of the epoch's (shuffled) training matrix used to re-estimate
/// batch-norm statistics for the averaged weights.
const CALIBRATION_ROWS: usize = 4096;

/// Exponential moving average of the parameters. Starts at zero and is
/// bias corrected, so early epochs are not pulled toward the init.
struct WeightAverage {
    decay: f64,
    steps: i32,
    values: Vec<Array2<f64>>,
}

impl WeightAverage {
    fn new(network: &Network, decay: f64) -> Self {
        let values = network.params().iter().map(|p| Array2::zeros(p.value.raw_dim())).collect();
        Self { decay, steps: 0, values }
    }

    fn update(&mut self, network: &Network) {
        for (a, p) in self.values.iter_mut().zip(network.params()) {
            a.zip_mut_with(&p.value, |a, &v| *a = self.decay * *a + (1.0 - self.decay) * v);
        }
        self.steps = self.steps.saturating_add(1);
    }

    /// Copy of `network` carrying the averaged weights, with batch-norm
    /// statistics recomputed on `calib`. The running statistics tracked
    /// during training belong to the raw weights and would not match.
    fn network(&self, network: &Network, calib: &Array2<f64>) -> Result<Network> {
        let mut out = network.clone();
        if self.steps == 0 {
            return Ok(out);
        }
        let correction = 1.0 / (1.0 - self.decay.powi(self.steps));
        for (p, a) in out.params_mut().into_iter().zip(&self.values) {
            p.value = a * correction;
        }
        out.recalibrate_batch_norm(calib)?;
        Ok(out)
    }
}

pub fn write_log_csv(path: impl AsRef<Path>, log: &[EpochLog]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        f,
        "epoch,train_total,train_laplace,train_ism,train_angle,val_total,val_laplace,val_ism,val_angle,val_ism_accuracy,mean_grad_norm"
    )?;
    for e in log {
        writeln!(
            f,
            "{},{},{},{},{},{},{},{},{},{},{}",
            e.epoch,
            e.train.total,
            e.train.laplace,
            e.train.ism,
            e.train.angle,
            e.val.total,
            e.val.laplace,
            e.val.ism,
            e.val.angle,
            e.val_ism_accuracy,
            e.mean_grad_norm
        )?;
    }
    f.flush()?;
    Ok(())
}
