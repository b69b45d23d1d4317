//! Noise-injection fine-tuning.
//!
//! Continues training with `N(0, σ²)` added to the pre-batch-norm output of
//! every layer in every forward pass, so the weights adapt to the noise.
//! Batch-norm running statistics are updated from those noisy passes, as in
//! ordinary training, and are frozen again at evaluation.

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::network::{train_loop, BwnnNetwork, NoiseSchedule, TrainConfig, TrainReport};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NiaConfig {
    /// Injected noise standard deviation.
    pub sigma: f64,
    pub train: TrainConfig,
}

impl NiaConfig {
    /// Pre-training settings with the learning rate divided by ten.
    pub fn from_pretrain(sigma: f64, pretrain: &TrainConfig) -> Self {
        Self {
            sigma,
            train: TrainConfig {
                learning_rate: pretrain.learning_rate / 10.0,
                ..pretrain.clone()
            },
        }
    }
}

/// Returns a copy of `net` fine-tuned under all-layer noise injection.
pub fn nia_finetune(
    net: &BwnnNetwork,
    data: &Dataset,
    cfg: &NiaConfig,
) -> Result<(BwnnNetwork, TrainReport)> {
    if !(cfg.sigma >= 0.0) || !cfg.sigma.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "injected sigma must be finite and >= 0, got {}",
            cfg.sigma
        )));
    }
    if cfg.train.epochs == 0 {
        return Err(Error::InvalidParameter(
            "fine-tuning needs at least one epoch".into(),
        ));
    }
    let mut adapted = net.clone();
    adapted.unfreeze();
    let report = train_loop(
        &mut adapted,
        data,
        &cfg.train,
        NoiseSchedule::AllLayers { sigma: cfg.sigma },
    )?;
    Ok((adapted, report))
}
