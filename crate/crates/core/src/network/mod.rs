//! Binary-weight network engine.
//!
//! Every layer is a crossbar MVM (fully connected, or a convolution applied
//! as one MVM per output position) followed by optional batch norm, then
//! `tanh` and a 9-level activation quantizer for hidden layers. The last
//! layer emits logits. Weights are the sign of clamped latent reals.

mod engine;
pub mod presets;
mod train;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::Dataset;
use crate::gbo::EncodingPlan;
use crate::rng::NoiseModel;
use crate::{Error, Result};

pub(crate) use engine::{
    backward as engine_backward, cross_entropy, forward as engine_forward, BnMode, EngineOptions,
    Injection,
};
pub use train::{pretrain, OptimizerKind, TrainConfig, TrainReport};
pub(crate) use train::{train_loop, NoiseSchedule};

/// Rows evaluated per engine call during inference.
const EVAL_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerKind {
    FullyConnected {
        inputs: usize,
        outputs: usize,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        in_height: usize,
        in_width: usize,
    },
}

impl LayerKind {
    pub fn input_len(&self) -> usize {
        match *self {
            LayerKind::FullyConnected { inputs, .. } => inputs,
            LayerKind::Conv2d {
                in_channels,
                in_height,
                in_width,
                ..
            } => in_channels * in_height * in_width,
        }
    }

    /// Crossbar rows: inputs of one MVM.
    pub fn fan_in(&self) -> usize {
        match *self {
            LayerKind::FullyConnected { inputs, .. } => inputs,
            LayerKind::Conv2d {
                in_channels,
                kernel,
                ..
            } => in_channels * kernel * kernel,
        }
    }

    /// Crossbar columns: outputs of one MVM (channels for convolutions).
    pub fn fan_out(&self) -> usize {
        match *self {
            LayerKind::FullyConnected { outputs, .. } => outputs,
            LayerKind::Conv2d { out_channels, .. } => out_channels,
        }
    }

    pub fn output_shape(&self) -> [usize; 3] {
        match *self {
            LayerKind::FullyConnected { outputs, .. } => [outputs, 1, 1],
            LayerKind::Conv2d {
                out_channels,
                kernel,
                stride,
                padding,
                in_height,
                in_width,
                ..
            } => [
                out_channels,
                (in_height + 2 * padding - kernel) / stride + 1,
                (in_width + 2 * padding - kernel) / stride + 1,
            ],
        }
    }

    /// MVMs per sample (output positions).
    pub fn positions(&self) -> usize {
        let [_, h, w] = self.output_shape();
        h * w
    }

    pub fn output_len(&self) -> usize {
        self.fan_out() * self.positions()
    }

    fn validate(&self) -> Result<()> {
        match *self {
            LayerKind::FullyConnected { inputs, outputs } => {
                if inputs == 0 || outputs == 0 {
                    return Err(Error::Configuration("empty fully connected layer".into()));
                }
            }
            LayerKind::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
                in_height,
                in_width,
            } => {
                if in_channels == 0 || out_channels == 0 || kernel == 0 || stride == 0 {
                    return Err(Error::Configuration("degenerate convolution".into()));
                }
                if in_height + 2 * padding < kernel || in_width + 2 * padding < kernel {
                    return Err(Error::Configuration(format!(
                        "kernel {kernel} larger than padded {in_height}x{in_width} input"
                    )));
                }
            }
        }
        Ok(())
    }

    /// For each `(position, fan-in slot)` the flat input index, or `u32::MAX`
    /// for zero padding.
    pub(crate) fn gather_table(&self) -> Vec<u32> {
        match *self {
            LayerKind::FullyConnected { inputs, .. } => (0..inputs as u32).collect(),
            LayerKind::Conv2d {
                in_channels,
                kernel,
                stride,
                padding,
                in_height,
                in_width,
                ..
            } => {
                let [_, oh, ow] = self.output_shape();
                let mut table = Vec::with_capacity(oh * ow * self.fan_in());
                for oy in 0..oh {
                    for ox in 0..ow {
                        for c in 0..in_channels {
                            for ky in 0..kernel {
                                for kx in 0..kernel {
                                    let iy = (oy * stride + ky) as isize - padding as isize;
                                    let ix = (ox * stride + kx) as isize - padding as isize;
                                    let inside = iy >= 0
                                        && ix >= 0
                                        && (iy as usize) < in_height
                                        && (ix as usize) < in_width;
                                    table.push(if inside {
                                        (c * in_height * in_width
                                            + iy as usize * in_width
                                            + ix as usize)
                                            as u32
                                    } else {
                                        u32::MAX
                                    });
                                }
                            }
                        }
                    }
                }
                table
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Tanh,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub has_batchnorm: bool,
    pub activation: Activation,
    pub quant_levels: u32,
}

impl LayerSpec {
    pub fn hidden(kind: LayerKind) -> Self {
        Self {
            kind,
            has_batchnorm: true,
            activation: Activation::Tanh,
            quant_levels: 9,
        }
    }

    pub fn output(kind: LayerKind) -> Self {
        Self {
            kind,
            has_batchnorm: true,
            activation: Activation::None,
            quant_levels: 9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: 0.1,
            eps: 1e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub spec: LayerSpec,
    /// `fan_out x fan_in`, row-major, kept in `[-1, 1]`.
    pub latent: Vec<f64>,
    pub bn: Option<BatchNorm>,
}

impl Layer {
    /// `sign(latent)` as reals, `sign(0) = +1`.
    pub fn binary_weights(&self) -> Vec<f64> {
        self.latent
            .iter()
            .map(|&w| f64::from(crate::crossbar::sign(w)))
            .collect()
    }

    pub fn crossbar(&self) -> Result<crate::crossbar::BinaryWeightMatrix> {
        crate::crossbar::binarize(
            self.spec.kind.fan_out(),
            self.spec.kind.fan_in(),
            &self.latent,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BwnnNetwork {
    pub input_shape: [usize; 3],
    /// Grid size the raw input is quantized to when `encode_input` is set.
    pub input_levels: u32,
    /// Quantize and pulse-encode the raw input of the first layer. When unset
    /// the first layer sees full-precision inputs and, in pulsed mode, only
    /// the accumulated noise of its pulse count.
    pub encode_input: bool,
    pub layers: Vec<Layer>,
    frozen: bool,
}

impl BwnnNetwork {
    /// Builds a network with latent weights drawn uniformly from
    /// `±1/sqrt(fan_in)`.
    pub fn new(input_shape: [usize; 3], specs: Vec<LayerSpec>, seed: u64) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::Configuration("network has no layers".into()));
        }
        let mut expected = input_shape.iter().product::<usize>();
        for (l, spec) in specs.iter().enumerate() {
            spec.kind.validate()?;
            if spec.kind.input_len() != expected {
                return Err(Error::Configuration(format!(
                    "layer {l} expects {} inputs but receives {expected}",
                    spec.kind.input_len()
                )));
            }
            let last = l + 1 == specs.len();
            match (last, spec.activation) {
                (true, Activation::None) | (false, Activation::Tanh) => {}
                (true, _) => {
                    return Err(Error::Configuration(
                        "the final layer must emit raw logits".into(),
                    ))
                }
                (false, _) => {
                    return Err(Error::Configuration(format!(
                        "hidden layer {l} must use tanh"
                    )))
                }
            }
            if spec.quant_levels < 2 {
                return Err(Error::Configuration(format!(
                    "layer {l} quantizer needs >= 2 levels"
                )));
            }
            expected = spec.kind.output_len();
        }

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = specs
            .into_iter()
            .map(|spec| {
                let n = spec.kind.fan_in() * spec.kind.fan_out();
                let a = 1.0 / (spec.kind.fan_in() as f64).sqrt();
                let latent = (0..n).map(|_| rng.random_range(-a..a)).collect();
                let bn = spec
                    .has_batchnorm
                    .then(|| BatchNorm::new(spec.kind.fan_out()));
                Layer { spec, latent, bn }
            })
            .collect();
        Ok(Self {
            input_shape,
            input_levels: 9,
            encode_input: true,
            layers,
            frozen: false,
        })
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn classes(&self) -> usize {
        self.layers.last().map_or(0, |l| l.spec.kind.output_len())
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Marks the weights as fixed; encoding optimization requires this.
    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn unfreeze(&mut self) {
        self.frozen = false;
    }

    /// Levels of the grid feeding layer `l`.
    pub(crate) fn input_grid_levels(&self, l: usize) -> u32 {
        if l == 0 {
            self.input_levels
        } else {
            self.layers[l - 1].spec.quant_levels
        }
    }

    /// Base thermometer pulse count of layer `l`'s inputs.
    pub fn base_pulses(&self, l: usize) -> usize {
        self.input_grid_levels(l) as usize - 1
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.latent.len() + l.bn.as_ref().map_or(0, |b| 2 * b.gamma.len()))
            .sum()
    }

    /// Shape check of `data` against the input layer and class count.
    pub fn check_data(&self, data: &Dataset) -> Result<()> {
        if data.input_len() != self.input_shape.iter().product::<usize>() {
            return Err(Error::Shape(format!(
                "dataset inputs of size {} for a network expecting {:?}",
                data.input_len(),
                self.input_shape
            )));
        }
        if data.classes > self.classes() {
            return Err(Error::Shape(format!(
                "{} classes for a network with {} outputs",
                data.classes,
                self.classes()
            )));
        }
        Ok(())
    }

    /// Writes a self-describing JSON checkpoint.
    pub fn save_checkpoint(&self, path: &Path, train_config_hash: &str) -> Result<()> {
        let ckpt = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            train_config_hash: train_config_hash.into(),
            network: self.clone(),
        };
        let text =
            serde_json::to_string_pretty(&ckpt).map_err(|e| Error::Checkpoint(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    /// Reads a checkpoint written by [`save_checkpoint`](Self::save_checkpoint),
    /// returning the network and its training-config hash.
    pub fn load_checkpoint(path: &Path) -> Result<(Self, String)> {
        let text = std::fs::read_to_string(path)?;
        let ckpt: Checkpoint =
            serde_json::from_str(&text).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if ckpt.format != CHECKPOINT_FORMAT || ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint {} v{}",
                ckpt.format, ckpt.version
            )));
        }
        let net = ckpt.network;
        // rebuild to re-run the structural checks
        let specs = net.layers.iter().map(|l| l.spec).collect();
        let shell = Self::new(net.input_shape, specs, 0)?;
        for (a, b) in shell.layers.iter().zip(&net.layers) {
            if a.latent.len() != b.latent.len()
                || a.bn.as_ref().map(|x| x.gamma.len()) != b.bn.as_ref().map(|x| x.gamma.len())
            {
                return Err(Error::Checkpoint(
                    "parameter shapes do not match layer specs".into(),
                ));
            }
        }
        Ok((net, ckpt.train_config_hash))
    }

    /// SHA-256 over the canonical JSON of the network parameters.
    pub fn fingerprint(&self) -> String {
        let text = serde_json::to_string(self).expect("network serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

const CHECKPOINT_FORMAT: &str = "xbar-bwnn-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    train_config_hash: String,
    network: BwnnNetwork,
}

/// How noise enters a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub enum ForwardMode {
    /// Exact quantized forward.
    Clean,
    /// `N(0, σ²)` added to the pre-batch-norm output of the listed layers.
    NoisePerLayer {
        noise: NoiseModel,
        layers: Vec<usize>,
    },
    /// Per-layer PLA encoding at the plan's pulse count and pulsed MVMs.
    Pulsed {
        plan: EncodingPlan,
        noise: NoiseModel,
    },
}

impl ForwardMode {
    pub fn all_layers(net: &BwnnNetwork, noise: NoiseModel) -> Self {
        ForwardMode::NoisePerLayer {
            noise,
            layers: (0..net.depth()).collect(),
        }
    }

    pub fn is_noisy(&self) -> bool {
        match self {
            ForwardMode::Clean => false,
            ForwardMode::NoisePerLayer { noise, layers } => noise.sigma > 0.0 && !layers.is_empty(),
            ForwardMode::Pulsed { noise, .. } => noise.sigma > 0.0,
        }
    }

    /// Same mode with the noise seed replaced.
    pub fn with_seed(&self, seed: u64) -> Self {
        match self {
            ForwardMode::Clean => ForwardMode::Clean,
            ForwardMode::NoisePerLayer { noise, layers } => ForwardMode::NoisePerLayer {
                noise: NoiseModel { seed, ..*noise },
                layers: layers.clone(),
            },
            ForwardMode::Pulsed { plan, noise } => ForwardMode::Pulsed {
                plan: plan.clone(),
                noise: NoiseModel { seed, ..*noise },
            },
        }
    }

    fn injection<'a>(&'a self, net: &BwnnNetwork) -> Result<Injection<'a>> {
        Ok(match self {
            ForwardMode::Clean => Injection::None,
            ForwardMode::NoisePerLayer { noise, layers } => {
                let mut mask = vec![false; net.depth()];
                for &l in layers {
                    *mask.get_mut(l).ok_or_else(|| {
                        Error::Configuration(format!(
                            "noise target layer {l} outside a {}-layer network",
                            net.depth()
                        ))
                    })? = true;
                }
                Injection::Gaussian {
                    noise: *noise,
                    mask,
                }
            }
            ForwardMode::Pulsed { plan, noise } => {
                if plan.len() != net.depth() {
                    return Err(Error::Configuration(format!(
                        "plan covers {} layers, network has {}",
                        plan.len(),
                        net.depth()
                    )));
                }
                Injection::Pulsed {
                    plan,
                    noise: *noise,
                }
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub classes: usize,
    /// `samples x classes`.
    pub logits: Vec<f64>,
    /// Per layer, `samples x output_len` (quantized for hidden layers).
    pub activations: Vec<Vec<f64>>,
}

impl ForwardOutput {
    pub fn predictions(&self) -> Vec<usize> {
        self.logits.chunks_exact(self.classes).map(argmax).collect()
    }
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| {
            if v > bv {
                (i, v)
            } else {
                (bi, bv)
            }
        })
        .0
}

/// Inference forward pass over the whole dataset with frozen batch-norm
/// statistics.
pub fn forward(net: &BwnnNetwork, data: &Dataset, mode: &ForwardMode) -> Result<ForwardOutput> {
    net.check_data(data)?;
    let injection = mode.injection(net)?;
    let opts = EngineOptions {
        smooth: false,
        bn: BnMode::Running,
    };
    let classes = net.classes();
    let mut logits = Vec::with_capacity(data.len() * classes);
    let mut activations = vec![Vec::new(); net.depth()];
    let all: Vec<usize> = (0..data.len()).collect();
    for chunk in all.chunks(EVAL_CHUNK) {
        let trace = engine::forward(net, data, chunk, &opts, &injection, false)?;
        logits.extend_from_slice(&trace.logits);
        for (acc, out) in activations.iter_mut().zip(trace.outputs) {
            acc.extend(out);
        }
    }
    Ok(ForwardOutput {
        classes,
        logits,
        activations,
    })
}

/// Fraction of samples whose argmax logit matches the label.
pub fn evaluate(net: &BwnnNetwork, data: &Dataset, mode: &ForwardMode) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::InvalidParameter(
            "cannot evaluate on an empty dataset".into(),
        ));
    }
    net.check_data(data)?;
    let injection = mode.injection(net)?;
    let opts = EngineOptions {
        smooth: false,
        bn: BnMode::Running,
    };
    let all: Vec<usize> = (0..data.len()).collect();
    let mut correct = 0usize;
    for chunk in all.chunks(EVAL_CHUNK) {
        let trace = engine::forward(net, data, chunk, &opts, &injection, false)?;
        correct += trace
            .logits
            .chunks_exact(net.classes())
            .zip(chunk)
            .filter(|(row, &i)| argmax(row) == data.labels[i])
            .count();
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Mean and spread of an accuracy over repeated noise draws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracyStats {
    pub mean: f64,
    /// Sample standard deviation (zero for a single run).
    pub std: f64,
    pub count: usize,
}

impl AccuracyStats {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        let mean = xs.iter().sum::<f64>() / n.max(1) as f64;
        let std = if n > 1 {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self {
            mean,
            std,
            count: n,
        }
    }

    pub fn std_error(&self) -> f64 {
        self.std / (self.count.max(1) as f64).sqrt()
    }
}

/// Evaluates `mode` once per seed. Noise-free modes run once.
pub fn evaluate_seeds(
    net: &BwnnNetwork,
    data: &Dataset,
    mode: &ForwardMode,
    seeds: &[u64],
) -> Result<AccuracyStats> {
    if seeds.is_empty() {
        return Err(Error::InvalidParameter(
            "need at least one noise seed".into(),
        ));
    }
    if !mode.is_noisy() {
        let acc = evaluate(net, data, mode)?;
        return Ok(AccuracyStats {
            mean: acc,
            std: 0.0,
            count: seeds.len(),
        });
    }
    let accs = seeds
        .iter()
        .map(|&s| evaluate(net, data, &mode.with_seed(s)))
        .collect::<Result<Vec<_>>>()?;
    Ok(AccuracyStats::from_samples(&accs))
}

/// Cross-entropy and latent-weight gradients of the smooth relaxation over
/// all of `data`: latent weights in place of their signs, no activation
/// quantizer, batch statistics in batch norm. The backward pass is the one
/// used in training, so central differences of the returned loss check it.
pub fn relaxed_gradients(net: &BwnnNetwork, data: &Dataset) -> Result<(f64, Vec<Vec<f64>>)> {
    if data.len() < 2 {
        return Err(Error::InvalidParameter(
            "batch statistics need at least two samples".into(),
        ));
    }
    net.check_data(data)?;
    let opts = EngineOptions {
        smooth: true,
        bn: BnMode::Batch,
    };
    let idx: Vec<usize> = (0..data.len()).collect();
    let trace = engine::forward(net, data, &idx, &opts, &Injection::None, true)?;
    let (loss, d_logits) = cross_entropy(&trace.logits, &data.labels, net.classes());
    let grads = engine::backward(net, &trace, &opts, &d_logits, true);
    Ok((loss, grads.latent))
}
