use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::layers::{dropout_mask, BatchNorm, BatchNormCache, Linear, ParamTensor};
use crate::error::{config, data, Error, Result};
use crate::rng::{self, StreamRng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageSpec {
    pub input: usize,
    pub output: usize,
    pub batch_norm: bool,
    pub dropout: f64,
}

/// Layer description. A stage is linear -> (batch norm) -> ReLU -> dropout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Stage(StageSpec),
    /// `x + f(x)` where `f` chains the inner stages.
    Residual {
        stages: Vec<StageSpec>,
    },
    /// Plain affine output layer.
    Linear {
        input: usize,
        output: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub layers: Vec<LayerSpec>,
    pub bn_momentum: f64,
    pub bn_eps: f64,
    pub seed: u64,
}

impl NetworkSpec {
    /// Input stage, `blocks` residual blocks of two stages each, linear head.
    pub fn standard(input: usize, hidden: usize, blocks: usize, output: usize, dropout: f64, seed: u64) -> Self {
        let stage = |i, o| StageSpec { input: i, output: o, batch_norm: true, dropout };
        let mut layers = vec![LayerSpec::Stage(stage(input, hidden))];
        for _ in 0..blocks {
            layers.push(LayerSpec::Residual { stages: vec![stage(hidden, hidden), stage(hidden, hidden)] });
        }
        layers.push(LayerSpec::Linear { input: hidden, output });
        Self { input_dim: input, layers, bn_momentum: 0.1, bn_eps: 1e-5, seed }
    }

    pub fn output_dim(&self) -> usize {
        match self.layers.last() {
            Some(LayerSpec::Stage(s)) => s.output,
            Some(LayerSpec::Residual { stages }) => stages.last().map_or(0, |s| s.output),
            Some(LayerSpec::Linear { output, .. }) => *output,
            None => self.input_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut width = self.input_dim;
        if width == 0 {
            return Err(config("network input width must be positive"));
        }
        let check_stage = |s: &StageSpec, width: usize| -> Result<usize> {
            if s.input != width {
                return Err(config(format!("stage expects width {} but receives {width}", s.input)));
            }
            if s.output == 0 || !(0.0..1.0).contains(&s.dropout) {
                return Err(config(format!("invalid stage {s:?}")));
            }
            Ok(s.output)
        };
        for layer in &self.layers {
            width = match layer {
                LayerSpec::Stage(s) => check_stage(s, width)?,
                LayerSpec::Residual { stages } => {
                    let mut w = width;
                    for s in stages {
                        w = check_stage(s, w)?;
                    }
                    if stages.is_empty() || w != width {
                        return Err(config(format!("residual block maps {width} to {w}")));
                    }
                    w
                }
                LayerSpec::Linear { input, output } => {
                    if *input != width || *output == 0 {
                        return Err(config(format!("linear layer expects {input} but receives {width}")));
                    }
                    *output
                }
            };
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum <= 1.0) || !(self.bn_eps > 0.0) {
            return Err(config("batch-norm momentum must be in (0, 1] and eps > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Stage {
    linear: Linear,
    bn: Option<BatchNorm>,
    dropout: f64,
}

struct StageCache {
    input: Array2<f64>,
    bn: Option<BatchNormCache>,
    active: Array2<bool>,
    mask: Option<Array2<f64>>,
}

impl Stage {
    fn new(prefix: &str, spec: &StageSpec, net: &NetworkSpec, rng: &mut StreamRng) -> Self {
        let std = (2.0 / spec.input as f64).sqrt();
        Self {
            linear: Linear::new(&format!("{prefix}.linear"), spec.input, spec.output, !spec.batch_norm, std, rng),
            bn: spec
                .batch_norm
                .then(|| BatchNorm::new(&format!("{prefix}.bn"), spec.output, net.bn_momentum, net.bn_eps)),
            dropout: spec.dropout,
        }
    }

    fn forward_train(&mut self, x: Array2<f64>, rng: &mut StreamRng) -> (Array2<f64>, StageCache) {
        let z = self.linear.forward(&x);
        let (mut y, bn) = match &mut self.bn {
            Some(bn) => {
                let (y, c) = bn.forward_train(&z);
                (y, Some(c))
            }
            None => (z, None),
        };
        let active = y.mapv(|v| v > 0.0);
        y.mapv_inplace(|v| v.max(0.0));
        let mask = (self.dropout > 0.0).then(|| dropout_mask(y.dim(), self.dropout, rng));
        if let Some(m) = &mask {
            y *= m;
        }
        (y, StageCache { input: x, bn, active, mask })
    }

    /// Eval forward that first resets the batch-norm statistics to those of
    /// this input.
    fn recalibrate(&mut self, x: &Array2<f64>) -> Array2<f64> {
        if let Some(bn) = &mut self.bn {
            bn.set_statistics(&self.linear.forward(x));
        }
        self.forward_eval(x)
    }

    fn forward_eval(&self, x: &Array2<f64>) -> Array2<f64> {
        let z = self.linear.forward(x);
        let mut y = match &self.bn {
            Some(bn) => bn.forward_eval(&z),
            None => z,
        };
        y.mapv_inplace(|v| v.max(0.0));
        y
    }

    fn backward(&mut self, cache: &StageCache, upstream: &Array2<f64>) -> Array2<f64> {
        let mut dy = upstream.clone();
        if let Some(m) = &cache.mask {
            dy *= m;
        }
        dy.zip_mut_with(&cache.active, |g, a| {
            if !a {
                *g = 0.0;
            }
        });
        let dz = match (&mut self.bn, &cache.bn) {
            (Some(bn), Some(c)) => bn.backward(c, &dy),
            _ => dy,
        };
        self.linear.backward(&cache.input, &dz)
    }

    fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        let mut out = vec![&mut self.linear.weight];
        if let Some(b) = &mut self.linear.bias {
            out.push(b);
        }
        if let Some(bn) = &mut self.bn {
            out.push(&mut bn.gamma);
            out.push(&mut bn.beta);
        }
        out
    }

    fn params(&self) -> Vec<&ParamTensor> {
        let mut out = vec![&self.linear.weight];
        if let Some(b) = &self.linear.bias {
            out.push(b);
        }
        if let Some(bn) = &self.bn {
            out.push(&bn.gamma);
            out.push(&bn.beta);
        }
        out
    }
}

// a handful of layers per network; boxing buys nothing
#[allow(clippy::large_enum_variant)]
#[derive(Debug, Clone)]
enum Layer {
    Stage(Stage),
    Residual(Vec<Stage>),
    Linear(Linear),
}

#[allow(clippy::large_enum_variant)]
enum LayerCache {
    Stage(StageCache),
    Residual(Vec<StageCache>),
    Linear(Array2<f64>),
}

/// Serializable parameters and batch-norm running statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkState {
    pub spec: NetworkSpec,
    pub params: Vec<ParamTensor>,
    pub running_stats: Vec<(Array1<f64>, Array1<f64>)>,
}

pub struct Network {
    spec: NetworkSpec,
    layers: Vec<Layer>,
    cache: Option<Vec<LayerCache>>,
}

/// Clones parameters and statistics; the forward cache is not carried over.
impl Clone for Network {
    fn clone(&self) -> Self {
        Self { spec: self.spec.clone(), layers: self.layers.clone(), cache: None }
    }
}

impl std::fmt::Debug for Network {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Network")
            .field("spec", &self.spec)
            .field("params", &self.param_count())
            .field("cached", &self.cache.is_some())
            .finish()
    }
}

impl Network {
    pub fn new(spec: NetworkSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = rng::substream(spec.seed, rng::INIT, 0);
        let layers = spec
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| match l {
                LayerSpec::Stage(s) => Layer::Stage(Stage::new(&format!("layers.{i}"), s, &spec, &mut rng)),
                LayerSpec::Residual { stages } => Layer::Residual(
                    stages
                        .iter()
                        .enumerate()
                        .map(|(k, s)| Stage::new(&format!("layers.{i}.{k}"), s, &spec, &mut rng))
                        .collect(),
                ),
                LayerSpec::Linear { input, output } => {
                    let std = 0.1 / (*input as f64).sqrt();
                    Layer::Linear(Linear::new(&format!("layers.{i}"), *input, *output, true, std, &mut rng))
                }
            })
            .collect();
        Ok(Self { spec, layers, cache: None })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim()
    }

    fn check_input(&self, x: &Array2<f64>) -> Result<()> {
        if x.ncols() != self.spec.input_dim {
            return Err(data(format!("batch width {} != network input {}", x.ncols(), self.spec.input_dim)));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(data("non-finite network input"));
        }
        Ok(())
    }

    /// Training-mode forward: batch statistics, dropout masks from `rng`,
    /// running statistics updated, activations cached for [`Network::backward`].
    pub fn forward_train(&mut self, x: &Array2<f64>, rng: &mut StreamRng) -> Result<Array2<f64>> {
        self.check_input(x)?;
        if x.nrows() < 2 {
            return Err(data("training-mode forward needs a batch of at least 2"));
        }
        let mut h = x.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &mut self.layers {
            match layer {
                Layer::Stage(s) => {
                    let (y, c) = s.forward_train(h, rng);
                    caches.push(LayerCache::Stage(c));
                    h = y;
                }
                Layer::Residual(stages) => {
                    let skip = h.clone();
                    let mut inner = Vec::with_capacity(stages.len());
                    for s in stages.iter_mut() {
                        let (y, c) = s.forward_train(h, rng);
                        inner.push(c);
                        h = y;
                    }
                    h += &skip;
                    caches.push(LayerCache::Residual(inner));
                }
                Layer::Linear(l) => {
                    let y = l.forward(&h);
                    caches.push(LayerCache::Linear(h));
                    h = y;
                }
            }
        }
        self.cache = Some(caches);
        Ok(h)
    }

    /// Evaluation-mode forward: running statistics, no dropout. Read-only.
    pub fn forward_eval(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_input(x)?;
        let mut h = x.clone();
        for layer in &self.layers {
            h = match layer {
                Layer::Stage(s) => s.forward_eval(&h),
                Layer::Residual(stages) => {
                    let mut y = h.clone();
                    for s in stages {
                        y = s.forward_eval(&y);
                    }
                    y + &h
                }
                Layer::Linear(l) => l.forward(&h),
            };
        }
        Ok(h)
    }

    /// Set every batch-norm layer's running statistics to the population
    /// statistics of its input when `x` is passed through the network in
    /// evaluation mode, front to back. The moving averages kept during
    /// training lag behind weights that are still changing; this removes
    /// that lag.
    pub fn recalibrate_batch_norm(&mut self, x: &Array2<f64>) -> Result<()> {
        self.check_input(x)?;
        if x.nrows() < 2 {
            return Err(data("batch-norm recalibration needs at least 2 rows"));
        }
        let mut h = x.clone();
        for layer in &mut self.layers {
            h = match layer {
                Layer::Stage(s) => s.recalibrate(&h),
                Layer::Residual(stages) => {
                    let mut y = h.clone();
                    for s in stages.iter_mut() {
                        y = s.recalibrate(&y);
                    }
                    y + &h
                }
                Layer::Linear(l) => l.forward(&h),
            };
        }
        Ok(())
    }

    /// Back-propagate `upstream = dL/d(output)` through the last training
    /// forward. Overwrites every parameter gradient and returns `dL/d(input)`.
    pub fn backward(&mut self, upstream: &Array2<f64>) -> Result<Array2<f64>> {
        let caches =
            self.cache.take().ok_or_else(|| Error::Numeric("backward called without a training forward".into()))?;
        let rows = match caches.first() {
            Some(LayerCache::Stage(c)) => c.input.nrows(),
            Some(LayerCache::Residual(c)) => c[0].input.nrows(),
            Some(LayerCache::Linear(x)) => x.nrows(),
            None => upstream.nrows(),
        };
        if upstream.dim() != (rows, self.output_dim()) {
            return Err(data(format!("upstream gradient shape {:?} does not match output", upstream.dim())));
        }
        let mut g = upstream.clone();
        for (layer, cache) in self.layers.iter_mut().zip(caches.iter()).rev() {
            g = match (layer, cache) {
                (Layer::Stage(s), LayerCache::Stage(c)) => s.backward(c, &g),
                (Layer::Residual(stages), LayerCache::Residual(cs)) => {
                    let mut inner = g.clone();
                    for (s, c) in stages.iter_mut().zip(cs).rev() {
                        inner = s.backward(c, &inner);
                    }
                    g + &inner
                }
                (Layer::Linear(l), LayerCache::Linear(x)) => l.backward(x, &g),
                _ => unreachable!("cache mirrors layers"),
            };
        }
        Ok(g)
    }

    pub fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Stage(s) => out.extend(s.params_mut()),
                Layer::Residual(stages) => stages.iter_mut().for_each(|s| out.extend(s.params_mut())),
                Layer::Linear(l) => {
                    out.push(&mut l.weight);
                    if let Some(b) = &mut l.bias {
                        out.push(b);
                    }
                }
            }
        }
        out
    }

    pub fn params(&self) -> Vec<&ParamTensor> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Stage(s) => out.extend(s.params()),
                Layer::Residual(stages) => stages.iter().for_each(|s| out.extend(s.params())),
                Layer::Linear(l) => {
                    out.push(&l.weight);
                    if let Some(b) = &l.bias {
                        out.push(b);
                    }
                }
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    fn batch_norms_mut(&mut self) -> Vec<&mut BatchNorm> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Stage(s) => out.extend(s.bn.as_mut()),
                Layer::Residual(stages) => stages.iter_mut().for_each(|s| out.extend(s.bn.as_mut())),
                Layer::Linear(_) => {}
            }
        }
        out
    }

    /// Mutable bias of the final linear layer, if any.
    pub fn output_bias_mut(&mut self) -> Option<&mut ParamTensor> {
        match self.layers.last_mut() {
            Some(Layer::Linear(l)) => l.bias.as_mut(),
            _ => None,
        }
    }

    /// Mutable weight of the final linear layer, if any.
    pub fn output_weight_mut(&mut self) -> Option<&mut ParamTensor> {
        match self.layers.last_mut() {
            Some(Layer::Linear(l)) => Some(&mut l.weight),
            _ => None,
        }
    }

    pub fn state(&self) -> NetworkState {
        let mut me = self.clone();
        let running_stats =
            me.batch_norms_mut().into_iter().map(|b| (b.running_mean.clone(), b.running_var.clone())).collect();
        NetworkState {
            spec: self.spec.clone(),
            params: self.params().into_iter().map(|p| ParamTensor::new(p.name.clone(), p.value.clone())).collect(),
            running_stats,
        }
    }

    pub fn from_state(state: NetworkState) -> Result<Self> {
        let mut net = Network::new(state.spec)?;
        {
            let params = net.params_mut();
            if params.len() != state.params.len() {
                return Err(data(format!(
                    "checkpoint has {} tensors, network needs {}",
                    state.params.len(),
                    params.len()
                )));
            }
            for (p, saved) in params.into_iter().zip(state.params) {
                if p.name != saved.name || p.value.dim() != saved.value.dim() {
                    return Err(data(format!("checkpoint tensor {} does not match {}", saved.name, p.name)));
                }
                if saved.value.iter().any(|v| !v.is_finite()) {
                    return Err(data(format!("checkpoint tensor {} is not finite", saved.name)));
                }
                p.value = saved.value;
                p.ensure_grad();
            }
        }
        let bns = net.batch_norms_mut();
        if bns.len() != state.running_stats.len() {
            return Err(data("checkpoint batch-norm statistics do not match the network"));
        }
        for (bn, (mean, var)) in bns.into_iter().zip(state.running_stats) {
            if mean.len() != bn.running_mean.len() || var.len() != bn.running_var.len() {
                return Err(data("checkpoint batch-norm statistics have the wrong width"));
            }
            bn.running_mean = mean;
            bn.running_var = var;
        }
        Ok(net)
    }
}
