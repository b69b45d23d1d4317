//! Learned per-layer pulse-count selection.
//!
//! Each layer `l` owns importances `λ_k^l` over a set of pulse scaling
//! factors `n_k`. With `α^l = softmax(λ^l)`, training runs the frozen network
//! with
//!
//! ```text
//! o^l = W o^{l-1} + Σ_k α_k^l ε_k^l,   ε_k^l ~ N(0, σ² / (n_k p))
//! L   = CE + γ Σ_l Σ_k α_k^l n_k p
//! ```
//!
//! and updates `λ` with Adam. The deployed plan takes the arg-max factor of
//! each layer.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::encoding::scaled_pulse_count;
use crate::network::{BnMode, BwnnNetwork, EngineOptions, Injection};
use crate::optim::Adam;
use crate::rng::stream_key;
use crate::{Error, Result};

pub const DEFAULT_OMEGA: [f64; 7] = [0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0];
pub const DEFAULT_BASE_PULSES: usize = 8;
pub const DEFAULT_LEARNING_RATE: f64 = 1e-4;

/// Pulses per layer used at inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodingPlan {
    pub pulses_per_layer: Vec<usize>,
    pub avg_pulses: f64,
}

impl EncodingPlan {
    pub fn new(pulses_per_layer: Vec<usize>) -> Result<Self> {
        if pulses_per_layer.is_empty() || pulses_per_layer.contains(&0) {
            return Err(Error::InvalidParameter(
                "a plan needs at least one layer and >= 1 pulse per layer".into(),
            ));
        }
        let avg_pulses =
            pulses_per_layer.iter().sum::<usize>() as f64 / pulses_per_layer.len() as f64;
        Ok(Self {
            pulses_per_layer,
            avg_pulses,
        })
    }

    pub fn uniform(pulses: usize, layers: usize) -> Result<Self> {
        Self::new(vec![pulses; layers])
    }

    pub fn len(&self) -> usize {
        self.pulses_per_layer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pulses_per_layer.is_empty()
    }

    pub fn total_pulses(&self) -> usize {
        self.pulses_per_layer.iter().sum()
    }

    /// Average pulse count with two decimals.
    pub fn avg_label(&self) -> String {
        format!("{:.2}", self.avg_pulses)
    }
}

impl std::fmt::Display for EncodingPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[")?;
        for (i, p) in self.pulses_per_layer.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{p}")?;
        }
        write!(f, "]")
    }
}

/// Softmax with max-subtraction.
pub fn compute_alphas(lambda_row: &[f64]) -> Vec<f64> {
    let max = lambda_row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = lambda_row.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GboState {
    /// `layers x options` importances.
    pub lambda: Vec<Vec<f64>>,
    /// Pulse scaling factors per layer.
    pub omega: Vec<Vec<f64>>,
    pub base_pulses: usize,
    pub gamma: f64,
    pub eta: f64,
    pub sigma: f64,
    adam: Adam,
}

impl GboState {
    /// Zero importances (uniform α) over the same `omega` for every layer.
    pub fn new(
        layers: usize,
        omega: &[f64],
        base_pulses: usize,
        gamma: f64,
        eta: f64,
        sigma: f64,
    ) -> Result<Self> {
        if layers == 0 {
            return Err(Error::InvalidParameter("no layers to optimize".into()));
        }
        Self::with_layer_omega(vec![omega.to_vec(); layers], base_pulses, gamma, eta, sigma)
    }

    pub fn with_layer_omega(
        omega: Vec<Vec<f64>>,
        base_pulses: usize,
        gamma: f64,
        eta: f64,
        sigma: f64,
    ) -> Result<Self> {
        if omega.iter().any(|row| row.len() < 2) {
            return Err(Error::InvalidParameter(
                "each layer needs at least two pulse scaling options".into(),
            ));
        }
        for row in &omega {
            for &n in row {
                scaled_pulse_count(n, base_pulses)?;
            }
        }
        if !(gamma >= 0.0) || !(eta >= 0.0) || !(sigma >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "gamma, eta and sigma must be >= 0 (got {gamma}, {eta}, {sigma})"
            )));
        }
        let lambda: Vec<Vec<f64>> = omega.iter().map(|r| vec![0.0; r.len()]).collect();
        let total = lambda.iter().map(Vec::len).sum();
        Ok(Self {
            lambda,
            omega,
            base_pulses,
            gamma,
            eta,
            sigma,
            adam: Adam::new(total),
        })
    }

    pub fn layers(&self) -> usize {
        self.lambda.len()
    }

    pub fn alphas(&self) -> Vec<Vec<f64>> {
        self.lambda.iter().map(|r| compute_alphas(r)).collect()
    }

    /// `round(n_k · p)` per layer and option.
    pub fn pulse_counts(&self) -> Vec<Vec<usize>> {
        self.omega
            .iter()
            .map(|row| {
                row.iter()
                    .map(|&n| scaled_pulse_count(n, self.base_pulses).expect("validated"))
                    .collect()
            })
            .collect()
    }

    /// Every pulse count any layer can be assigned.
    pub fn pulse_set(&self) -> Vec<usize> {
        let mut set: Vec<usize> = self.pulse_counts().into_iter().flatten().collect();
        set.sort_unstable();
        set.dedup();
        set
    }

    pub fn adam_steps(&self) -> u64 {
        self.adam.steps()
    }
}

/// `γ Σ_l Σ_k α_k^l P_k^l`.
pub fn latency_term(state: &GboState) -> f64 {
    let counts = state.pulse_counts();
    state.gamma
        * state
            .alphas()
            .iter()
            .zip(&counts)
            .map(|(a, c)| a.iter().zip(c).map(|(a, &c)| a * c as f64).sum::<f64>())
            .sum::<f64>()
}

/// Direct gradient of the latency term w.r.t. `λ`:
/// `γ α_k (P_k − Σ_j α_j P_j)`.
pub fn latency_gradient(state: &GboState) -> Vec<Vec<f64>> {
    let counts = state.pulse_counts();
    state
        .alphas()
        .iter()
        .zip(&counts)
        .map(|(a, c)| {
            let mean: f64 = a.iter().zip(c).map(|(a, &c)| a * c as f64).sum();
            a.iter()
                .zip(c)
                .map(|(a, &c)| state.gamma * a * (c as f64 - mean))
                .collect()
        })
        .collect()
}

/// Cross-entropy of `logits` plus the latency term.
pub fn gbo_loss(logits: &[f64], labels: &[usize], classes: usize, state: &GboState) -> f64 {
    let (ce, _) = crate::network::cross_entropy(logits, labels, classes);
    ce + latency_term(state)
}

fn check(net: &BwnnNetwork, state: &GboState) -> Result<()> {
    if !net.is_frozen() {
        return Err(Error::Misuse(
            "encoding optimization needs a frozen pre-trained network".into(),
        ));
    }
    if state.layers() != net.depth() {
        return Err(Error::Configuration(format!(
            "state covers {} layers, network has {}",
            state.layers(),
            net.depth()
        )));
    }
    Ok(())
}

/// Logits of the α-mixed noisy forward for the samples `indices`. Noise is
/// addressed by `(seed, layer, sample id, option)`.
pub fn mixed_forward(
    net: &BwnnNetwork,
    data: &Dataset,
    indices: &[usize],
    state: &GboState,
    seed: u64,
) -> Result<Vec<f64>> {
    check(net, state)?;
    let alphas = state.alphas();
    let pulses = state.pulse_counts();
    let injection = Injection::Mixed {
        alphas: &alphas,
        pulses: &pulses,
        sigma: state.sigma,
        seed,
    };
    let opts = EngineOptions {
        smooth: false,
        bn: BnMode::Running,
    };
    Ok(crate::network::engine_forward(net, data, indices, &opts, &injection, false)?.logits)
}

/// Loss and `∂L/∂λ` for one batch with the noise draws of `seed`.
///
/// `relaxed` drops the activation quantizer and the weight binarizer so the
/// loss is smooth in `λ`; it exists for finite-difference checks.
pub fn gbo_gradient(
    net: &BwnnNetwork,
    data: &Dataset,
    indices: &[usize],
    state: &GboState,
    seed: u64,
    relaxed: bool,
) -> Result<(f64, Vec<Vec<f64>>)> {
    check(net, state)?;
    if indices.is_empty() {
        return Err(Error::InvalidParameter("empty batch".into()));
    }
    let alphas = state.alphas();
    let pulses = state.pulse_counts();
    let injection = Injection::Mixed {
        alphas: &alphas,
        pulses: &pulses,
        sigma: state.sigma,
        seed,
    };
    let opts = EngineOptions {
        smooth: relaxed,
        bn: BnMode::Running,
    };
    let trace = crate::network::engine_forward(net, data, indices, &opts, &injection, true)?;
    let labels: Vec<usize> = indices.iter().map(|&i| data.labels[i]).collect();
    let (ce, d_logits) = crate::network::cross_entropy(&trace.logits, &labels, net.classes());
    let loss = ce + latency_term(state);
    let grads = crate::network::engine_backward(net, &trace, &opts, &d_logits, false);

    let mut out = Vec::with_capacity(state.layers());
    for (l, (alpha, counts)) in alphas.iter().zip(&pulses).enumerate() {
        let dz = &grads.pre_norm[l];
        // ∂L/∂α_k = Σ dz · ε_k + γ P_k
        let d_alpha: Vec<f64> = trace.layers[l]
            .eps
            .iter()
            .zip(counts)
            .map(|(eps, &c)| {
                dz.iter().zip(eps).map(|(g, e)| g * e).sum::<f64>() + state.gamma * c as f64
            })
            .collect();
        let mean: f64 = alpha.iter().zip(&d_alpha).map(|(a, g)| a * g).sum();
        out.push(
            alpha
                .iter()
                .zip(&d_alpha)
                .map(|(a, g)| a * (g - mean))
                .collect(),
        );
    }
    Ok((loss, out))
}

/// One Adam update of `λ` at learning rate `state.eta`. Returns the loss.
pub fn gbo_step(
    net: &BwnnNetwork,
    data: &Dataset,
    indices: &[usize],
    state: &mut GboState,
    seed: u64,
) -> Result<f64> {
    let (loss, grad) = gbo_gradient(net, data, indices, state, seed, false)?;
    let flat_grad: Vec<f64> = grad.into_iter().flatten().collect();
    if !loss.is_finite() || flat_grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::TrainingFailure(format!(
            "non-finite encoding-optimization loss/gradient (loss {loss})"
        )));
    }
    let mut flat: Vec<f64> = state.lambda.iter().flatten().copied().collect();
    state.adam.update(&mut flat, &flat_grad, state.eta);
    let mut it = flat.into_iter();
    for row in state.lambda.iter_mut() {
        for v in row.iter_mut() {
            *v = it.next().expect("length preserved");
        }
    }
    Ok(loss)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GboTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for GboTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 64,
            seed: 0,
        }
    }
}

/// Runs `epochs` passes of [`gbo_step`] over shuffled batches and returns the
/// mean loss per epoch.
pub fn gbo_train(
    net: &BwnnNetwork,
    data: &Dataset,
    state: &mut GboState,
    cfg: &GboTrainConfig,
) -> Result<Vec<f64>> {
    check(net, state)?;
    if data.is_empty() || cfg.batch_size == 0 {
        return Err(Error::InvalidParameter(
            "encoding optimization needs data and a positive batch size".into(),
        ));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(stream_key(&[cfg.seed, 0x0067_626f, epoch as u64]));
        order.shuffle(&mut rng);
        let (mut sum, mut n) = (0.0, 0usize);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let seed = stream_key(&[cfg.seed, epoch as u64, b as u64]);
            sum += gbo_step(net, data, chunk, state, seed)? * chunk.len() as f64;
            n += chunk.len();
        }
        losses.push(sum / n as f64);
    }
    Ok(losses)
}

/// Arg-max importance per layer, ties toward fewer pulses.
pub fn select_plan(state: &GboState) -> EncodingPlan {
    let counts = state.pulse_counts();
    let pulses = state
        .lambda
        .iter()
        .zip(&counts)
        .map(|(row, c)| {
            let mut best = 0;
            for k in 1..row.len() {
                if row[k] > row[best] || (row[k] == row[best] && c[k] < c[best]) {
                    best = k;
                }
            }
            c[best]
        })
        .collect();
    EncodingPlan::new(pulses).expect("pulse counts are >= 1")
}

/// Exported per-layer record of a trained state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanLayer {
    pub layer_index: usize,
    pub pulse_count: usize,
    pub lambda_row: Vec<f64>,
    pub alpha_row: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanDocument {
    pub gamma: f64,
    pub sigma: f64,
    pub base_pulses: usize,
    pub avg_pulses: f64,
    pub layers: Vec<PlanLayer>,
}

impl PlanDocument {
    pub fn from_state(state: &GboState) -> Self {
        let plan = select_plan(state);
        let layers = state
            .lambda
            .iter()
            .zip(state.alphas())
            .zip(&plan.pulses_per_layer)
            .enumerate()
            .map(|(i, ((lambda, alpha), &p))| PlanLayer {
                layer_index: i,
                pulse_count: p,
                lambda_row: lambda.clone(),
                alpha_row: alpha,
            })
            .collect();
        Self {
            gamma: state.gamma,
            sigma: state.sigma,
            base_pulses: state.base_pulses,
            avg_pulses: plan.avg_pulses,
            layers,
        }
    }

    pub fn plan(&self) -> Result<EncodingPlan> {
        EncodingPlan::new(self.layers.iter().map(|l| l.pulse_count).collect())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: Self = serde_json::from_str(text)
            .map_err(|e| Error::Configuration(format!("malformed plan document: {e}")))?;
        for (i, l) in doc.layers.iter().enumerate() {
            if l.layer_index != i {
                return Err(Error::Configuration(format!(
                    "plan layer {i} carries index {}",
                    l.layer_index
                )));
            }
        }
        Ok(doc)
    }
}
