//! Pipeline orchestration: pretrain, optional fine-tuning and encoding
//! optimization, then noisy evaluation of every requested method.

use std::collections::btree_map::Entry;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use xbar_core::dataset::Dataset;
use xbar_core::gbo::{
    gbo_train, select_plan, EncodingPlan, GboState, GboTrainConfig, PlanDocument,
};
use xbar_core::network::{
    evaluate_seeds, pretrain, AccuracyStats, BwnnNetwork, ForwardMode, TrainConfig,
};
use xbar_core::nia::{nia_finetune, NiaConfig};
use xbar_core::rng::{stream_key, NoiseModel};
use xbar_core::sensitivity::{layer_sensitivity, SensitivityReport};

use crate::config::{ExperimentConfig, Method};
use crate::data::Split;
use crate::error::{HarnessError, Result};

const STAGE_NIA: u64 = 2;
const STAGE_GBO: u64 = 3;
const STAGE_EVAL: u64 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: Method,
    pub sigma: f64,
    pub pulses_per_layer: Vec<usize>,
    pub avg_pulses: f64,
    pub acc_mean: f64,
    pub acc_std: f64,
    pub seeds: usize,
}

impl ResultRow {
    fn new(method: Method, sigma: f64, plan: &EncodingPlan, stats: AccuracyStats) -> Self {
        Self {
            method,
            sigma,
            pulses_per_layer: plan.pulses_per_layer.clone(),
            avg_pulses: plan.avg_pulses,
            acc_mean: stats.mean,
            acc_std: stats.std,
            seeds: stats.count,
        }
    }

    pub fn std_error(&self) -> f64 {
        self.acc_std / (self.seeds as f64).sqrt()
    }
}

/// Identifies everything that shapes the pre-trained weights.
pub fn pretrain_hash(cfg: &ExperimentConfig) -> String {
    let key = serde_json::json!({
        "seed": cfg.seed,
        "dataset": cfg.dataset,
        "architecture": cfg.architecture,
        "encode_input": cfg.encode_input,
        "train": cfg.effective_train(),
    });
    hex::encode(Sha256::digest(key.to_string().as_bytes()))
}

/// Trains a fresh network and freezes it.
pub fn pretrain_network(cfg: &ExperimentConfig, split: &Split) -> Result<BwnnNetwork> {
    let mut net = cfg.build_network(split.train.input_shape, split.train.classes)?;
    pretrain(&mut net, &split.train, &cfg.effective_train())?;
    net.freeze();
    Ok(net)
}

/// Loads the configured checkpoint. When it is missing, trains and saves it
/// if `cfg.pretrain` allows, and fails otherwise.
pub fn obtain_network(cfg: &ExperimentConfig, split: &Split) -> Result<BwnnNetwork> {
    let path = cfg.checkpoint_path();
    if path.exists() {
        let (mut net, hash) = BwnnNetwork::load_checkpoint(&path)?;
        if hash != pretrain_hash(cfg) {
            return Err(HarnessError::Config(format!(
                "checkpoint {} was trained with different settings; rerun `xbar pretrain --config <file>`",
                path.display()
            )));
        }
        net.check_data(&split.test)?;
        net.freeze();
        return Ok(net);
    }
    if !cfg.pretrain {
        return Err(HarnessError::MissingCheckpoint { path });
    }
    let net = pretrain_network(cfg, split)?;
    save_network(&net, cfg, &path)?;
    Ok(net)
}

pub fn save_network(
    net: &BwnnNetwork,
    cfg: &ExperimentConfig,
    path: &std::path::Path,
) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    net.save_checkpoint(path, &pretrain_hash(cfg))?;
    Ok(())
}

/// Training-time σ used by noise-injection fine-tuning for evaluation σ.
pub fn nia_sigma(cfg: &ExperimentConfig, sigma: f64) -> f64 {
    cfg.nia
        .sigma
        .unwrap_or(sigma / (cfg.gbo.base_pulses as f64).sqrt())
}

pub fn nia_config(cfg: &ExperimentConfig, sigma: f64) -> NiaConfig {
    let base = cfg.effective_train();
    NiaConfig {
        sigma: nia_sigma(cfg, sigma),
        train: TrainConfig {
            learning_rate: cfg.nia.learning_rate.unwrap_or(base.learning_rate / 10.0),
            epochs: cfg.nia.epochs.unwrap_or(base.epochs),
            seed: stream_key(&[cfg.seed, STAGE_NIA, sigma.to_bits()]),
            ..base
        },
    }
}

/// Fine-tuned, frozen copy of `net` adapted to evaluation noise `sigma`.
pub fn adapt_network(
    cfg: &ExperimentConfig,
    net: &BwnnNetwork,
    train: &Dataset,
    sigma: f64,
) -> Result<BwnnNetwork> {
    let (mut adapted, _) = nia_finetune(net, train, &nia_config(cfg, sigma))?;
    adapted.freeze();
    Ok(adapted)
}

/// Learns importances at `sigma` and `gamma`; returns the final state.
pub fn optimize_encoding(
    cfg: &ExperimentConfig,
    net: &BwnnNetwork,
    train: &Dataset,
    sigma: f64,
    gamma: f64,
) -> Result<GboState> {
    let g = &cfg.gbo;
    let mut state = GboState::new(net.depth(), &g.omega, g.base_pulses, gamma, g.eta, sigma)?;
    let run = GboTrainConfig {
        epochs: g.epochs,
        batch_size: g.batch_size,
        seed: stream_key(&[cfg.seed, STAGE_GBO, sigma.to_bits()]),
    };
    gbo_train(net, train, &mut state, &run)?;
    Ok(state)
}

pub fn plan_document(state: &GboState) -> PlanDocument {
    PlanDocument::from_state(state)
}

/// Pulsed evaluation of `plan` at per-pulse noise `sigma`, averaged over
/// the configured noise seeds.
pub fn evaluate_plan(
    cfg: &ExperimentConfig,
    net: &BwnnNetwork,
    test: &Dataset,
    plan: &EncodingPlan,
    sigma: f64,
) -> Result<AccuracyStats> {
    let mode = ForwardMode::Pulsed {
        plan: plan.clone(),
        noise: NoiseModel::new(sigma, cfg.seeds[0], stream_key(&[STAGE_EVAL]))?,
    };
    Ok(evaluate_seeds(net, test, &mode, &cfg.seeds)?)
}

/// Runs every method at every σ of the config and returns one row per
/// `(σ, method)`, σ-major in config order.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let split = cfg.dataset.load()?;
    let net = obtain_network(cfg, &split)?;
    run_on_network(cfg, &split, &net)
}

pub fn run_on_network(
    cfg: &ExperimentConfig,
    split: &Split,
    net: &BwnnNetwork,
) -> Result<Vec<ResultRow>> {
    let depth = net.depth();
    let base = EncodingPlan::uniform(cfg.gbo.base_pulses, depth)?;
    let mut rows = Vec::new();
    for &sigma in &cfg.sigma_list {
        let adapted = if cfg.methods.iter().any(|m| m.needs_nia()) {
            Some(adapt_network(cfg, net, &split.train, sigma)?)
        } else {
            None
        };
        let mut plans: BTreeMap<bool, EncodingPlan> = BTreeMap::new();
        for &method in &cfg.methods {
            let model = if method.needs_nia() {
                adapted.as_ref().expect("adapted when needed")
            } else {
                net
            };
            let plan = match method {
                Method::Baseline | Method::Nia => base.clone(),
                Method::Pla(n) | Method::NiaPla(n) => EncodingPlan::uniform(n, depth)?,
                Method::Gbo | Method::NiaGbo => match plans.entry(method.needs_nia()) {
                    Entry::Occupied(e) => e.get().clone(),
                    Entry::Vacant(e) => {
                        let state =
                            optimize_encoding(cfg, model, &split.train, sigma, cfg.gbo.gamma)?;
                        e.insert(select_plan(&state)).clone()
                    }
                },
            };
            let stats = evaluate_plan(cfg, model, &split.test, &plan, sigma)?;
            rows.push(ResultRow::new(method, sigma, &plan, stats));
        }
    }
    Ok(rows)
}

/// Single-layer sweeps at `cfg.sensitivity_sigmas`, or at the per-layer
/// equivalents of `sigma_list` for base-length pulse trains when unset.
pub fn run_sensitivity(
    cfg: &ExperimentConfig,
    split: &Split,
    net: &BwnnNetwork,
) -> Result<Vec<SensitivityReport>> {
    let sigmas: Vec<f64> = if cfg.sensitivity_sigmas.is_empty() {
        let scale = (cfg.gbo.base_pulses as f64).sqrt();
        cfg.sigma_list.iter().map(|s| s / scale).collect()
    } else {
        cfg.sensitivity_sigmas.clone()
    };
    sigmas
        .iter()
        .map(|&s| Ok(layer_sensitivity(net, &split.test, s, &cfg.seeds)?))
        .collect()
}
