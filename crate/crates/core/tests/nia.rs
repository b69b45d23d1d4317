mod common;

use common::{blobs, train_config, trained_net};
use xbar_core::network::{evaluate, evaluate_seeds, ForwardMode, TrainConfig};
use xbar_core::nia::{nia_finetune, NiaConfig};
use xbar_core::rng::NoiseModel;
use xbar_core::Error;

fn finetune_config(sigma: f64) -> NiaConfig {
    NiaConfig {
        sigma,
        train: TrainConfig {
            learning_rate: 1e-3,
            ..train_config(10)
        },
    }
}

#[test]
fn noiseless_finetune_keeps_clean_accuracy() {
    let data = blobs(300, 0.4, 1);
    let net = trained_net(&data);
    let before = evaluate(&net, &data, &ForwardMode::Clean).unwrap();
    let (adapted, report) = nia_finetune(&net, &data, &finetune_config(0.0)).unwrap();
    assert_eq!(report.epoch_loss.len(), 10);
    let after = evaluate(&adapted, &data, &ForwardMode::Clean).unwrap();
    assert!(after >= before - 0.01, "{before} -> {after}");
    assert!(net.is_frozen());
}

#[test]
fn matched_noise_adaptation_helps_under_noise() {
    let train = blobs(400, 0.5, 2);
    let test = blobs(400, 0.5, 3);
    let net = trained_net(&train);
    let sigma = 2.0;
    let (adapted, _) = nia_finetune(&net, &train, &finetune_config(sigma)).unwrap();
    let seeds: Vec<u64> = (0..5).collect();
    let mode = ForwardMode::all_layers(&net, NoiseModel::new(sigma, 11, 0).unwrap());
    let base = evaluate_seeds(&net, &test, &mode, &seeds).unwrap();
    let nia = evaluate_seeds(&adapted, &test, &mode, &seeds).unwrap();
    let slack = base.std_error().hypot(nia.std_error());
    assert!(nia.mean >= base.mean - slack, "{nia:?} vs {base:?}");
}

#[test]
fn finetune_is_deterministic() {
    let data = blobs(120, 0.4, 4);
    let net = trained_net(&data);
    let cfg = finetune_config(1.0);
    let (a, _) = nia_finetune(&net, &data, &cfg).unwrap();
    let (b, _) = nia_finetune(&net, &data, &cfg).unwrap();
    assert_eq!(a.fingerprint(), b.fingerprint());
    assert_ne!(a.fingerprint(), net.fingerprint());
}

#[test]
fn lr_defaults_to_a_tenth_of_pretraining() {
    let base = train_config(7);
    let cfg = NiaConfig::from_pretrain(0.5, &base);
    assert_eq!(cfg.train.learning_rate, base.learning_rate / 10.0);
    assert_eq!(cfg.train.epochs, 7);
}

#[test]
fn invalid_settings_are_rejected() {
    let data = blobs(40, 0.4, 5);
    let net = trained_net(&data);
    assert!(matches!(
        nia_finetune(&net, &data, &finetune_config(-1.0)),
        Err(Error::InvalidParameter(_))
    ));
    let mut cfg = finetune_config(1.0);
    cfg.train.epochs = 0;
    assert!(matches!(
        nia_finetune(&net, &data, &cfg),
        Err(Error::InvalidParameter(_))
    ));
    let mut cfg = finetune_config(1.0);
    cfg.train.learning_rate = 1e308;
    assert!(matches!(
        nia_finetune(&net, &data, &cfg),
        Err(Error::TrainingFailure(_))
    ));
}
