mod common;

use common::{bits, blobs, trained_net};
use xbar_core::dataset::Dataset;
use xbar_core::gbo::{
    gbo_gradient, gbo_step, gbo_train, latency_term, mixed_forward, select_plan, GboState,
    GboTrainConfig, DEFAULT_BASE_PULSES, DEFAULT_LEARNING_RATE, DEFAULT_OMEGA,
};
use xbar_core::network::{forward, Activation, BwnnNetwork, ForwardMode, LayerKind, LayerSpec};
use xbar_core::Error;

/// One fully connected layer without batch norm, so logits are the raw MVM
/// output plus the mixed noise.
fn single_layer(inputs: usize, outputs: usize) -> BwnnNetwork {
    let spec = LayerSpec {
        kind: LayerKind::FullyConnected { inputs, outputs },
        has_batchnorm: false,
        activation: Activation::None,
        quant_levels: 9,
    };
    let mut net = BwnnNetwork::new([inputs, 1, 1], vec![spec], 1).unwrap();
    net.freeze();
    net
}

fn constant_inputs(n: usize, d: usize, classes: usize) -> Dataset {
    let inputs = (0..n * d)
        .map(|i| if i % 2 == 0 { 0.5 } else { -0.25 })
        .collect();
    let labels = (0..n).map(|i| i % classes).collect();
    Dataset::new([d, 1, 1], classes, inputs, labels).unwrap()
}

fn offset_variance(net: &BwnnNetwork, data: &Dataset, state: &GboState, seed: u64) -> f64 {
    let idx: Vec<usize> = (0..data.len()).collect();
    let noisy = mixed_forward(net, data, &idx, state, seed).unwrap();
    let clean = forward(net, data, &ForwardMode::Clean).unwrap().logits;
    let d: Vec<f64> = noisy.iter().zip(&clean).map(|(a, b)| a - b).collect();
    let mean = d.iter().sum::<f64>() / d.len() as f64;
    d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (d.len() - 1) as f64
}

#[test]
fn noiseless_mixed_forward_is_clean() {
    let data = blobs(64, 0.3, 1);
    let net = trained_net(&data);
    let mut state = GboState::new(net.depth(), &DEFAULT_OMEGA, 8, 1e-3, 1e-4, 0.0).unwrap();
    state.lambda[0] = vec![3.0, -1.0, 0.0, 2.0, 0.5, 0.0, -4.0];
    let idx: Vec<usize> = (0..data.len()).collect();
    let mixed = mixed_forward(&net, &data, &idx, &state, 17).unwrap();
    let clean = forward(&net, &data, &ForwardMode::Clean).unwrap().logits;
    assert_eq!(bits(&mixed), bits(&clean));
}

#[test]
fn concentrated_alpha_gives_single_option_variance() {
    // 5·10^4 samples × 2 outputs = 10^5 draws
    let net = single_layer(3, 2);
    let data = constant_inputs(50_000, 3, 2);
    let sigma = 2.0;
    let mut state = GboState::new(1, &[1.0, 0.5], 8, 0.0, 0.0, sigma).unwrap();
    state.lambda[0] = vec![30.0, 0.0];
    let var = offset_variance(&net, &data, &state, 3);
    let want = sigma * sigma / 8.0;
    assert!((var / want - 1.0).abs() < 0.05, "{var} vs {want}");

    state.lambda[0] = vec![0.0, 30.0];
    let var = offset_variance(&net, &data, &state, 4);
    let want = sigma * sigma / 4.0;
    assert!((var / want - 1.0).abs() < 0.05, "{var} vs {want}");
}

#[test]
fn uniform_alpha_mixes_independent_draws() {
    let net = single_layer(3, 2);
    let data = constant_inputs(50_000, 3, 2);
    let sigma = 2.0;
    let state = GboState::new(1, &[1.0, 0.5], 8, 0.0, 0.0, sigma).unwrap();
    let var = offset_variance(&net, &data, &state, 5);
    // Σ α_k² σ²/P_k with α = 1/2
    let want = 0.25 * (sigma * sigma / 8.0 + sigma * sigma / 4.0);
    assert!((var / want - 1.0).abs() < 0.05, "{var} vs {want}");
}

#[test]
fn zero_learning_rate_keeps_lambda() {
    let data = blobs(64, 0.3, 2);
    let net = trained_net(&data);
    let mut state = GboState::new(net.depth(), &DEFAULT_OMEGA, 8, 1e-3, 0.0, 1.0).unwrap();
    state.lambda[1][3] = 0.7;
    let before = state.lambda.clone();
    let idx: Vec<usize> = (0..32).collect();
    for s in 0..5 {
        gbo_step(&net, &data, &idx, &mut state, s).unwrap();
    }
    assert_eq!(state.lambda, before);
    assert_eq!(state.adam_steps(), 5);
}

#[test]
fn latency_alone_selects_fewest_pulses() {
    let data = blobs(64, 0.3, 3);
    let net = trained_net(&data);
    let mut state = GboState::new(net.depth(), &DEFAULT_OMEGA, 8, 1e-2, 0.05, 0.0).unwrap();
    let idx: Vec<usize> = (0..32).collect();
    for s in 0..200 {
        gbo_step(&net, &data, &idx, &mut state, s).unwrap();
    }
    for row in &state.lambda {
        let best = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(row[0], best);
        assert!(row[1..].iter().all(|&v| v < best), "{row:?}");
    }
    assert_eq!(select_plan(&state).pulses_per_layer, vec![4; net.depth()]);
}

fn assert_fd(net: &BwnnNetwork, data: &Dataset, state: &GboState, relaxed: bool) {
    let idx: Vec<usize> = (0..data.len()).collect();
    let seed = 99;
    let (_, grad) = gbo_gradient(net, data, &idx, state, seed, relaxed).unwrap();
    let h = 1e-5;
    for l in 0..state.layers() {
        for k in 0..state.lambda[l].len() {
            let mut p = state.clone();
            p.lambda[l][k] += h;
            let mut m = state.clone();
            m.lambda[l][k] -= h;
            let lp = gbo_gradient(net, data, &idx, &p, seed, relaxed).unwrap().0;
            let lm = gbo_gradient(net, data, &idx, &m, seed, relaxed).unwrap().0;
            let numeric = (lp - lm) / (2.0 * h);
            let analytic = grad[l][k];
            let err = (analytic - numeric).abs();
            assert!(
                err <= 1e-4 * analytic.abs().max(numeric.abs()) || err < 1e-10,
                "λ[{l}][{k}]: analytic {analytic} numeric {numeric}"
            );
        }
    }
}

#[test]
fn single_row_gradient_matches_finite_differences() {
    let data = blobs(12, 0.4, 4);
    let spec = LayerSpec {
        kind: LayerKind::FullyConnected {
            inputs: 2,
            outputs: 4,
        },
        has_batchnorm: true,
        activation: Activation::None,
        quant_levels: 9,
    };
    let mut net = BwnnNetwork::new([2, 1, 1], vec![spec], 3).unwrap();
    net.freeze();
    let mut state = GboState::new(1, &DEFAULT_OMEGA, 8, 1e-3, 0.0, 1.5).unwrap();
    state.lambda[0] = vec![0.2, -0.1, 0.4, 0.0, -0.3, 0.1, 0.25];
    assert_fd(&net, &data, &state, false);
    assert_fd(&net, &data, &state, true);
}

#[test]
fn relaxed_multilayer_gradient_matches_finite_differences() {
    let data = blobs(10, 0.4, 5);
    let net = trained_net(&blobs(64, 0.3, 5));
    assert!(net.parameter_count() <= 500);
    let mut state = GboState::new(net.depth(), &[0.5, 1.0, 2.0], 8, 1e-3, 0.0, 0.8).unwrap();
    state.lambda = vec![
        vec![0.1, 0.0, -0.2],
        vec![0.3, -0.3, 0.0],
        vec![0.0, 0.2, 0.1],
    ];
    assert_fd(&net, &data, &state, true);
}

#[test]
fn training_keeps_weights_and_probabilities() {
    let data = blobs(96, 0.4, 6);
    let net = trained_net(&data);
    let before = net.fingerprint();
    let mut state = GboState::new(
        net.depth(),
        &DEFAULT_OMEGA,
        DEFAULT_BASE_PULSES,
        1e-3,
        DEFAULT_LEARNING_RATE * 100.0,
        1.0,
    )
    .unwrap();
    let cfg = GboTrainConfig {
        epochs: 3,
        batch_size: 32,
        seed: 1,
    };
    let losses = gbo_train(&net, &data, &mut state, &cfg).unwrap();
    assert_eq!(losses.len(), 3);
    assert_eq!(net.fingerprint(), before);
    for row in state.alphas() {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(row.iter().all(|&a| a > 0.0));
    }
    let plan = select_plan(&state);
    let allowed = state.pulse_set();
    assert!(plan.pulses_per_layer.iter().all(|p| allowed.contains(p)));
    let mean = plan.total_pulses() as f64 / plan.len() as f64;
    assert!((plan.avg_pulses - mean).abs() < 1e-12);
}

#[test]
fn training_is_reproducible() {
    let data = blobs(96, 0.4, 7);
    let net = trained_net(&data);
    let run = || {
        let mut state = GboState::new(net.depth(), &DEFAULT_OMEGA, 8, 1e-3, 1e-2, 1.0).unwrap();
        let cfg = GboTrainConfig {
            epochs: 2,
            batch_size: 16,
            seed: 4,
        };
        gbo_train(&net, &data, &mut state, &cfg).unwrap();
        state
    };
    let (a, b) = (run(), run());
    assert_eq!(a, b);
    assert_eq!(select_plan(&a), select_plan(&b));
}

#[test]
fn larger_gamma_never_adds_pulses() {
    let data = blobs(96, 0.4, 8);
    let net = trained_net(&data);
    let mut prev = f64::INFINITY;
    for gamma in [0.0, 1e-3, 1e-2, 1e-1, 1.0] {
        let mut state = GboState::new(net.depth(), &DEFAULT_OMEGA, 8, gamma, 1e-2, 1.5).unwrap();
        let cfg = GboTrainConfig {
            epochs: 4,
            batch_size: 16,
            seed: 2,
        };
        gbo_train(&net, &data, &mut state, &cfg).unwrap();
        let avg = select_plan(&state).avg_pulses;
        assert!(avg <= prev, "gamma {gamma}: {avg} > {prev}");
        prev = avg;
    }
}

#[test]
fn latency_term_tracks_alpha() {
    let mut state = GboState::new(3, &DEFAULT_OMEGA, 8, 0.5, 0.0, 0.0).unwrap();
    assert!((latency_term(&state) - 3.0 * 10.0 * 0.5).abs() < 1e-12);
    state.lambda[2] = vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 50.0];
    let want = 0.5 * (10.0 + 10.0 + 16.0);
    assert!((latency_term(&state) - want).abs() < 1e-9);
}

#[test]
fn misuse_and_failures_are_reported() {
    let data = blobs(32, 0.3, 9);
    let mut net = trained_net(&data);
    let idx: Vec<usize> = (0..8).collect();

    let mut wrong_depth = GboState::new(2, &DEFAULT_OMEGA, 8, 0.0, 1e-4, 1.0).unwrap();
    assert!(matches!(
        gbo_step(&net, &data, &idx, &mut wrong_depth, 0),
        Err(Error::Configuration(_))
    ));

    let mut blown =
        GboState::new(net.depth(), &DEFAULT_OMEGA, 8, 0.0, 1e-4, f64::INFINITY).unwrap();
    assert!(matches!(
        gbo_step(&net, &data, &idx, &mut blown, 0),
        Err(Error::TrainingFailure(_))
    ));

    net.unfreeze();
    let mut state = GboState::new(net.depth(), &DEFAULT_OMEGA, 8, 0.0, 1e-4, 1.0).unwrap();
    assert!(matches!(
        gbo_step(&net, &data, &idx, &mut state, 0),
        Err(Error::Misuse(_))
    ));
    assert!(matches!(
        mixed_forward(&net, &data, &idx, &state, 0),
        Err(Error::Misuse(_))
    ));

    assert!(GboState::new(2, &[1.0], 8, 0.0, 1e-4, 1.0).is_err());
    assert!(GboState::new(2, &[0.5, 1.0], 8, -1.0, 1e-4, 1.0).is_err());
    assert!(GboState::new(2, &[0.01, 1.0], 8, 0.0, 1e-4, 1.0).is_err());
}
