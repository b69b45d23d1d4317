mod common;

use common::{blobs, trained_net};
use xbar_core::network::{evaluate, ForwardMode};
use xbar_core::sensitivity::layer_sensitivity;
use xbar_core::Error;

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

#[test]
fn zero_sigma_reproduces_clean_accuracy() {
    let data = blobs(200, 0.5, 1);
    let net = trained_net(&data);
    let report = layer_sensitivity(&net, &data, 0.0, &SEEDS).unwrap();
    let clean = evaluate(&net, &data, &ForwardMode::Clean).unwrap();
    assert_eq!(report.baseline_clean_accuracy, clean);
    assert_eq!(report.per_layer.len(), net.depth());
    for (l, row) in report.per_layer.iter().enumerate() {
        assert_eq!(row.layer, l);
        assert_eq!(row.accuracy.mean, clean);
        assert_eq!(row.accuracy.std, 0.0);
    }
}

#[test]
fn huge_noise_on_one_hidden_layer_is_chance() {
    let data = blobs(400, 0.5, 2);
    let net = trained_net(&data);
    let report = layer_sensitivity(&net, &data, 1e4, &SEEDS).unwrap();
    let chance = 1.0 / data.classes as f64;
    for row in &report.per_layer[..net.depth() - 1] {
        // per-seed binomial spread bounds the std error from below
        let binomial = (chance * (1.0 - chance) / data.len() as f64).sqrt();
        let se = row.accuracy.std_error().max(binomial);
        assert!(row.accuracy.mean <= chance + 3.0 * se, "{row:?}");
    }
}

#[test]
fn accuracy_is_non_increasing_in_sigma() {
    let net = trained_net(&blobs(300, 0.6, 3));
    let data = blobs(1000, 0.6, 13);
    let sigmas = [0.0, 0.1, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0];
    let reports: Vec<_> = sigmas
        .iter()
        .map(|&s| layer_sensitivity(&net, &data, s, &SEEDS).unwrap())
        .collect();
    for l in 0..net.depth() {
        for pair in reports.windows(2) {
            let (a, b) = (
                &pair[0].per_layer[l].accuracy,
                &pair[1].per_layer[l].accuracy,
            );
            let slack = a.std_error().hypot(b.std_error());
            assert!(b.mean <= a.mean + slack, "layer {l}: {a:?} -> {b:?}");
        }
    }
}

#[test]
fn report_is_deterministic_and_csv_shaped() {
    let data = blobs(120, 0.5, 4);
    let net = trained_net(&data);
    let a = layer_sensitivity(&net, &data, 1.0, &SEEDS).unwrap();
    let b = layer_sensitivity(&net, &data, 1.0, &SEEDS).unwrap();
    assert_eq!(a, b);
    let csv = a.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "layer,accuracy");
    assert_eq!(lines.len(), net.depth() + 1);
    assert!(lines[1].starts_with("0,"));
    let (gap, z) = a.spread();
    assert!(gap >= 0.0 && z >= 0.0);
}

#[test]
fn empty_inputs_are_rejected() {
    let data = blobs(40, 0.5, 5);
    let net = trained_net(&data);
    let empty = data.subset(&[]);
    assert!(matches!(
        layer_sensitivity(&net, &empty, 1.0, &SEEDS),
        Err(Error::InvalidParameter(_))
    ));
    assert!(matches!(
        layer_sensitivity(&net, &data, 1.0, &[]),
        Err(Error::InvalidParameter(_))
    ));
}
