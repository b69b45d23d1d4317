use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::Dataset;
use crate::optim::{Adam, SgdMomentum};
use crate::rng::{stream_key, NoiseModel};
use crate::{Error, Result};

use super::engine::{self, BnMode, EngineOptions, Injection};
use super::{argmax, BwnnNetwork};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OptimizerKind {
    SgdMomentum,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    /// Fractions of `epochs` after which the learning rate is divided by
    /// `lr_decay_factor`.
    pub lr_decay_milestones: Vec<f64>,
    pub lr_decay_factor: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerKind::SgdMomentum,
            learning_rate: 1e-3,
            momentum: 0.9,
            weight_decay: 5e-4,
            epochs: 60,
            lr_decay_milestones: vec![0.5, 0.7, 0.9],
            lr_decay_factor: 10.0,
            batch_size: 64,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Configuration(format!(
                "learning rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Configuration(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.batch_size < 2 {
            return Err(Error::Configuration(
                "batch size must be >= 2 for batch statistics".into(),
            ));
        }
        if self.lr_decay_factor <= 0.0 {
            return Err(Error::Configuration(
                "lr decay factor must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Step-wise schedule: one division by the decay factor per milestone
    /// already passed.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let passed = self
            .lr_decay_milestones
            .iter()
            .filter(|&&m| epoch as f64 >= m * self.epochs as f64)
            .count();
        self.learning_rate / self.lr_decay_factor.powi(passed as i32)
    }

    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean training loss per epoch.
    pub epoch_loss: Vec<f64>,
    /// Training-batch accuracy per epoch.
    pub epoch_accuracy: Vec<f64>,
}

pub(crate) enum NoiseSchedule {
    None,
    /// Fresh `N(0, σ²)` at every layer for each batch.
    AllLayers {
        sigma: f64,
    },
}

enum ParamOpt {
    Sgd(SgdMomentum),
    Adam(Adam),
}

impl ParamOpt {
    fn new(kind: OptimizerKind, len: usize, momentum: f64) -> Self {
        match kind {
            OptimizerKind::SgdMomentum => ParamOpt::Sgd(SgdMomentum::new(len, momentum)),
            OptimizerKind::Adam => ParamOpt::Adam(Adam::new(len)),
        }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64, weight_decay: f64) {
        match self {
            ParamOpt::Sgd(opt) => opt.update(params, grads, lr, weight_decay),
            ParamOpt::Adam(opt) => {
                if weight_decay != 0.0 {
                    let g: Vec<f64> = grads
                        .iter()
                        .zip(params.iter())
                        .map(|(g, p)| g + weight_decay * p)
                        .collect();
                    opt.update(params, &g, lr);
                } else {
                    opt.update(params, grads, lr);
                }
            }
        }
    }
}

/// Trains latent weights and batch-norm affine parameters with
/// straight-through estimators for binarization and activation
/// quantization, cross-entropy loss and a step-wise learning-rate schedule.
pub fn pretrain(net: &mut BwnnNetwork, data: &Dataset, cfg: &TrainConfig) -> Result<TrainReport> {
    train_loop(net, data, cfg, NoiseSchedule::None)
}

pub(crate) fn train_loop(
    net: &mut BwnnNetwork,
    data: &Dataset,
    cfg: &TrainConfig,
    noise: NoiseSchedule,
) -> Result<TrainReport> {
    if net.is_frozen() {
        return Err(Error::Misuse("cannot train a frozen network".into()));
    }
    if data.is_empty() {
        return Err(Error::InvalidParameter("training set is empty".into()));
    }
    cfg.validate()?;
    net.check_data(data)?;

    let mut weight_opts: Vec<ParamOpt> = net
        .layers
        .iter()
        .map(|l| ParamOpt::new(cfg.optimizer, l.latent.len(), cfg.momentum))
        .collect();
    let mut bn_opts: Vec<Option<(ParamOpt, ParamOpt)>> = net
        .layers
        .iter()
        .map(|l| {
            l.bn.as_ref().map(|bn| {
                (
                    ParamOpt::new(cfg.optimizer, bn.gamma.len(), cfg.momentum),
                    ParamOpt::new(cfg.optimizer, bn.beta.len(), cfg.momentum),
                )
            })
        })
        .collect();

    let opts = EngineOptions {
        smooth: false,
        bn: BnMode::Batch,
    };
    let classes = net.classes();
    let mut report = TrainReport::default();
    let mut order: Vec<usize> = (0..data.len()).collect();

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let mut rng = ChaCha8Rng::seed_from_u64(stream_key(&[cfg.seed, epoch as u64]));
        order.shuffle(&mut rng);

        let (mut loss_sum, mut correct, mut seen) = (0.0, 0usize, 0usize);
        for (batch_idx, chunk) in order.chunks(cfg.batch_size).enumerate() {
            if chunk.len() < 2 {
                continue;
            }
            let injection = match noise {
                NoiseSchedule::None => Injection::None,
                NoiseSchedule::AllLayers { sigma } => Injection::Gaussian {
                    noise: NoiseModel {
                        sigma,
                        seed: cfg.seed,
                        stream_id: stream_key(&[epoch as u64, batch_idx as u64]),
                    },
                    mask: vec![true; net.depth()],
                },
            };
            let trace = engine::forward(net, data, chunk, &opts, &injection, true)?;
            let labels: Vec<usize> = chunk.iter().map(|&i| data.labels[i]).collect();
            let (loss, d_logits) = engine::cross_entropy(&trace.logits, &labels, classes);
            if !loss.is_finite() {
                return Err(Error::TrainingFailure(format!(
                    "non-finite loss {loss} at epoch {epoch}, batch {batch_idx} (lr {lr}, batch size {})",
                    chunk.len()
                )));
            }
            loss_sum += loss * chunk.len() as f64;
            seen += chunk.len();
            correct += trace
                .logits
                .chunks_exact(classes)
                .zip(&labels)
                .filter(|(row, &y)| argmax(row) == y)
                .count();

            let grads = engine::backward(net, &trace, &opts, &d_logits, true);
            if grads.latent.iter().flatten().any(|g| !g.is_finite()) {
                return Err(Error::TrainingFailure(format!(
                    "non-finite weight gradient at epoch {epoch}, batch {batch_idx}"
                )));
            }

            for (l, layer) in net.layers.iter_mut().enumerate() {
                weight_opts[l].step(&mut layer.latent, &grads.latent[l], lr, cfg.weight_decay);
                for w in layer.latent.iter_mut() {
                    *w = w.clamp(-1.0, 1.0);
                }
                if let (Some(bn), Some((og, ob))) = (layer.bn.as_mut(), bn_opts[l].as_mut()) {
                    og.step(&mut bn.gamma, &grads.gamma[l], lr, 0.0);
                    ob.step(&mut bn.beta, &grads.beta[l], lr, 0.0);
                    let m = bn.momentum;
                    let lt = &trace.layers[l];
                    for o in 0..bn.gamma.len() {
                        bn.running_mean[o] = (1.0 - m) * bn.running_mean[o] + m * lt.batch_mean[o];
                        bn.running_var[o] = (1.0 - m) * bn.running_var[o] + m * lt.batch_var[o];
                    }
                }
            }
        }
        let seen = seen.max(1) as f64;
        report.epoch_loss.push(loss_sum / seen);
        report.epoch_accuracy.push(correct as f64 / seen);
    }
    Ok(report)
}
