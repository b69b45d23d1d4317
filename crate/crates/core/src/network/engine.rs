//! Batched forward and backward passes.
//!
//! Activations of a batch are stored sample-major; within a sample a layer
//! output is channel-major `(channel, position)`, which is also the
//! `(C, H, W)` layout the next layer gathers from.

use crate::crossbar::accumulated_noise;
use crate::dataset::Dataset;
use crate::encoding::{level_value, nearest_level_index, pla_decoded_value};
use crate::gbo::EncodingPlan;
use crate::rng::{stream_key, NoiseModel};
use crate::{Error, Result};

use super::{Activation, BwnnNetwork};

const TAG_LAYER_NOISE: u64 = 0x4c41_5945_525f_4e5a;
const TAG_PULSED: u64 = 0x5055_4c53_4544_5f4e;
const TAG_MIXED: u64 = 0x4d49_5845_445f_4e5a;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum BnMode {
    /// Normalize with batch statistics (training).
    Batch,
    /// Normalize with frozen running statistics (inference).
    Running,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct EngineOptions {
    /// Use latent weights directly and skip activation quantization.
    pub smooth: bool,
    pub bn: BnMode,
}

pub(crate) enum Injection<'a> {
    None,
    Gaussian {
        noise: NoiseModel,
        mask: Vec<bool>,
    },
    Pulsed {
        plan: &'a EncodingPlan,
        noise: NoiseModel,
    },
    /// `Σ_k α_k σ/√P_k · z_k` per output element, one draw per option.
    Mixed {
        alphas: &'a [Vec<f64>],
        pulses: &'a [Vec<usize>],
        sigma: f64,
        seed: u64,
    },
}

#[derive(Default)]
pub(crate) struct LayerTrace {
    cols: Vec<f64>,
    weights: Vec<f64>,
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    act: Vec<f64>,
    pub batch_mean: Vec<f64>,
    pub batch_var: Vec<f64>,
    /// Mixed-mode noise per option, `batch x rows` each.
    pub eps: Vec<Vec<f64>>,
}

pub(crate) struct Trace {
    pub batch: usize,
    pub layers: Vec<LayerTrace>,
    pub logits: Vec<f64>,
    pub outputs: Vec<Vec<f64>>,
}

pub(crate) struct Grads {
    pub latent: Vec<Vec<f64>>,
    pub gamma: Vec<Vec<f64>>,
    pub beta: Vec<Vec<f64>>,
    /// Gradient w.r.t. each layer's pre-batch-norm output, `batch x rows`.
    pub pre_norm: Vec<Vec<f64>>,
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
fn snap(v: f64, levels: u32) -> f64 {
    level_value(nearest_level_index(v, levels), levels)
}

pub(crate) fn forward(
    net: &BwnnNetwork,
    data: &Dataset,
    indices: &[usize],
    opts: &EngineOptions,
    injection: &Injection<'_>,
    keep_trace: bool,
) -> Result<Trace> {
    let batch = indices.len();
    let in_len = data.input_len();
    let mut x = Vec::with_capacity(batch * in_len);
    for &i in indices {
        let row = data.input(i);
        if let Some(v) = row.iter().find(|v| !(v.abs() <= 1.0)) {
            return Err(Error::Domain(format!("sample {i} has input {v}")));
        }
        x.extend_from_slice(row);
    }
    if net.encode_input && !opts.smooth {
        for v in x.iter_mut() {
            *v = snap(*v, net.input_levels);
        }
    }

    let mut layers = Vec::with_capacity(net.depth());
    let mut outputs = Vec::with_capacity(net.depth());

    for (l, layer) in net.layers.iter().enumerate() {
        let kind = layer.spec.kind;
        let fan_in = kind.fan_in();
        let fan_out = kind.fan_out();
        let positions = kind.positions();
        let rows = fan_out * positions;
        let cur_in = kind.input_len();

        if let Injection::Pulsed { plan, .. } = injection {
            if l > 0 || net.encode_input {
                let levels = net.input_grid_levels(l);
                let base = levels as usize - 1;
                let total = plan.pulses_per_layer[l];
                for v in x.iter_mut() {
                    *v = pla_decoded_value(nearest_level_index(*v, levels), base, total);
                }
            }
        }

        let weights = if opts.smooth {
            layer.latent.clone()
        } else {
            layer.binary_weights()
        };
        let table = kind.gather_table();

        let mut cols = vec![0.0; batch * positions * fan_in];
        for b in 0..batch {
            let xs = &x[b * cur_in..(b + 1) * cur_in];
            let dst = &mut cols[b * positions * fan_in..(b + 1) * positions * fan_in];
            for (c, &t) in dst.iter_mut().zip(&table) {
                if t != u32::MAX {
                    *c = xs[t as usize];
                }
            }
        }

        let mut z = vec![0.0; batch * rows];
        for b in 0..batch {
            for p in 0..positions {
                let col = &cols[(b * positions + p) * fan_in..(b * positions + p + 1) * fan_in];
                for o in 0..fan_out {
                    z[b * rows + o * positions + p] =
                        dot(&weights[o * fan_in..(o + 1) * fan_in], col);
                }
            }
        }

        let mut eps_trace = Vec::new();
        match injection {
            Injection::None => {}
            Injection::Gaussian { noise, mask } => {
                if mask[l] && noise.sigma > 0.0 {
                    let mut buf = vec![0.0; rows];
                    for (b, &i) in indices.iter().enumerate() {
                        let key =
                            stream_key(&[noise.stream_id, TAG_LAYER_NOISE, l as u64, data.ids[i]]);
                        noise.with_stream(key).fill(0, &mut buf);
                        axpy(&mut z[b * rows..(b + 1) * rows], 1.0, &buf);
                    }
                }
            }
            Injection::Pulsed { plan, noise } => {
                if noise.sigma > 0.0 {
                    let total = plan.pulses_per_layer[l];
                    let w = vec![1.0 / total as f64; total];
                    for (b, &i) in indices.iter().enumerate() {
                        let key = stream_key(&[noise.stream_id, TAG_PULSED, l as u64, data.ids[i]]);
                        let eps = accumulated_noise(&noise.with_stream(key), rows, &w);
                        axpy(&mut z[b * rows..(b + 1) * rows], 1.0, &eps);
                    }
                }
            }
            Injection::Mixed {
                alphas,
                pulses,
                sigma,
                seed,
            } => {
                for (k, (&alpha, &count)) in alphas[l].iter().zip(&pulses[l]).enumerate() {
                    let scale = sigma / (count as f64).sqrt();
                    let mut eps = vec![0.0; batch * rows];
                    if *sigma > 0.0 {
                        for (b, &i) in indices.iter().enumerate() {
                            let key = stream_key(&[TAG_MIXED, l as u64, data.ids[i], k as u64]);
                            let nm = NoiseModel {
                                sigma: scale,
                                seed: *seed,
                                stream_id: key,
                            };
                            nm.fill(0, &mut eps[b * rows..(b + 1) * rows]);
                        }
                    }
                    axpy(&mut z, alpha, &eps);
                    if keep_trace {
                        eps_trace.push(eps);
                    }
                }
            }
        }

        let mut trace = LayerTrace::default();
        let mut y = z;
        if let Some(bn) = &layer.bn {
            let mut xhat = vec![0.0; batch * rows];
            let mut inv_std = vec![0.0; fan_out];
            let count = (batch * positions) as f64;
            for o in 0..fan_out {
                let (mean, var) = match opts.bn {
                    BnMode::Batch => {
                        let mut s = 0.0;
                        for b in 0..batch {
                            s += y[b * rows + o * positions..b * rows + (o + 1) * positions]
                                .iter()
                                .sum::<f64>();
                        }
                        let mean = s / count;
                        let mut ss = 0.0;
                        for b in 0..batch {
                            ss += y[b * rows + o * positions..b * rows + (o + 1) * positions]
                                .iter()
                                .map(|v| (v - mean) * (v - mean))
                                .sum::<f64>();
                        }
                        let var = ss / count;
                        trace.batch_mean.push(mean);
                        trace
                            .batch_var
                            .push(if count > 1.0 { ss / (count - 1.0) } else { var });
                        (mean, var)
                    }
                    BnMode::Running => (bn.running_mean[o], bn.running_var[o]),
                };
                let inv = 1.0 / (var + bn.eps).sqrt();
                inv_std[o] = inv;
                let (g, beta) = (bn.gamma[o], bn.beta[o]);
                for b in 0..batch {
                    let base = b * rows + o * positions;
                    for j in base..base + positions {
                        let xh = (y[j] - mean) * inv;
                        xhat[j] = xh;
                        y[j] = g * xh + beta;
                    }
                }
            }
            trace.xhat = xhat;
            trace.inv_std = inv_std;
        }

        let out = match layer.spec.activation {
            Activation::Tanh => {
                for v in y.iter_mut() {
                    *v = v.tanh();
                }
                let act = y;
                let out = if opts.smooth {
                    act.clone()
                } else {
                    let levels = layer.spec.quant_levels;
                    act.iter().map(|&a| snap(a, levels)).collect()
                };
                if keep_trace {
                    trace.act = act;
                }
                out
            }
            Activation::None => y,
        };

        if keep_trace {
            trace.cols = cols;
            trace.weights = weights;
            trace.eps = eps_trace;
        }
        layers.push(trace);
        x = out.clone();
        outputs.push(out);
    }

    Ok(Trace {
        batch,
        layers,
        logits: x,
        outputs,
    })
}

/// Backpropagates `d_logits` (`batch x classes`) through a kept trace.
///
/// Straight-through conventions: the activation quantizer and the PLA
/// re-encoding pass gradients unchanged on `[-1, 1]`, and the sign binarizer
/// passes the binary-weight gradient to latent weights with `|w| <= 1`.
pub(crate) fn backward(
    net: &BwnnNetwork,
    trace: &Trace,
    opts: &EngineOptions,
    d_logits: &[f64],
    want_weights: bool,
) -> Grads {
    let batch = trace.batch;
    let depth = net.depth();
    let mut grads = Grads {
        latent: vec![Vec::new(); depth],
        gamma: vec![Vec::new(); depth],
        beta: vec![Vec::new(); depth],
        pre_norm: vec![Vec::new(); depth],
    };
    let mut d_out = d_logits.to_vec();

    for l in (0..depth).rev() {
        let layer = &net.layers[l];
        let lt = &trace.layers[l];
        let kind = layer.spec.kind;
        let fan_in = kind.fan_in();
        let fan_out = kind.fan_out();
        let positions = kind.positions();
        let rows = fan_out * positions;

        let mut d = d_out;
        if layer.spec.activation == Activation::Tanh {
            for (g, &a) in d.iter_mut().zip(&lt.act) {
                *g = if a.abs() <= 1.0 {
                    *g * (1.0 - a * a)
                } else {
                    0.0
                };
            }
        }

        if let Some(bn) = &layer.bn {
            let mut dg = vec![0.0; fan_out];
            let mut db = vec![0.0; fan_out];
            let count = (batch * positions) as f64;
            for o in 0..fan_out {
                let (mut sdy, mut sdyx) = (0.0, 0.0);
                for b in 0..batch {
                    let base = b * rows + o * positions;
                    for j in base..base + positions {
                        sdy += d[j];
                        sdyx += d[j] * lt.xhat[j];
                    }
                }
                dg[o] = sdyx;
                db[o] = sdy;
                let g = bn.gamma[o];
                let inv = lt.inv_std[o];
                match opts.bn {
                    BnMode::Batch => {
                        // dz = γ·inv/N · (N·dy − Σdy − x̂·Σ(dy·x̂))
                        let k = g * inv / count;
                        for b in 0..batch {
                            let base = b * rows + o * positions;
                            for j in base..base + positions {
                                d[j] = k * (count * d[j] - sdy - lt.xhat[j] * sdyx);
                            }
                        }
                    }
                    BnMode::Running => {
                        let k = g * inv;
                        for b in 0..batch {
                            let base = b * rows + o * positions;
                            for v in &mut d[base..base + positions] {
                                *v *= k;
                            }
                        }
                    }
                }
            }
            grads.gamma[l] = dg;
            grads.beta[l] = db;
        }

        if want_weights {
            let mut dw = vec![0.0; fan_out * fan_in];
            for b in 0..batch {
                for p in 0..positions {
                    let col =
                        &lt.cols[(b * positions + p) * fan_in..(b * positions + p + 1) * fan_in];
                    for o in 0..fan_out {
                        let g = d[b * rows + o * positions + p];
                        if g != 0.0 {
                            axpy(&mut dw[o * fan_in..(o + 1) * fan_in], g, col);
                        }
                    }
                }
            }
            for (g, &w) in dw.iter_mut().zip(&layer.latent) {
                if w.abs() > 1.0 {
                    *g = 0.0;
                }
            }
            grads.latent[l] = dw;
        }

        if l > 0 {
            let in_len = kind.input_len();
            let table = kind.gather_table();
            let mut dx = vec![0.0; batch * in_len];
            let mut dcol = vec![0.0; fan_in];
            for b in 0..batch {
                let dxs = &mut dx[b * in_len..(b + 1) * in_len];
                for p in 0..positions {
                    dcol.iter_mut().for_each(|v| *v = 0.0);
                    for o in 0..fan_out {
                        let g = d[b * rows + o * positions + p];
                        if g != 0.0 {
                            axpy(&mut dcol, g, &lt.weights[o * fan_in..(o + 1) * fan_in]);
                        }
                    }
                    for (&t, &g) in table[p * fan_in..(p + 1) * fan_in].iter().zip(&dcol) {
                        if t != u32::MAX {
                            dxs[t as usize] += g;
                        }
                    }
                }
            }
            d_out = dx;
        } else {
            d_out = Vec::new();
        }
        grads.pre_norm[l] = d;
    }
    grads
}

/// Mean softmax cross-entropy and its gradient w.r.t. the logits.
pub(crate) fn cross_entropy(logits: &[f64], labels: &[usize], classes: usize) -> (f64, Vec<f64>) {
    let n = labels.len() as f64;
    let mut grad = vec![0.0; logits.len()];
    let mut loss = 0.0;
    for ((row, g), &y) in logits
        .chunks_exact(classes)
        .zip(grad.chunks_exact_mut(classes))
        .zip(labels)
    {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_z = max + sum.ln();
        loss += log_z - row[y];
        for (gi, &v) in g.iter_mut().zip(row) {
            *gi = (v - log_z).exp() / n;
        }
        g[y] -= 1.0 / n;
    }
    (loss / n, grad)
}
