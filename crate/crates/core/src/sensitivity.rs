//! Single-layer noise injection sweeps.

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::network::{evaluate, evaluate_seeds, AccuracyStats, BwnnNetwork, ForwardMode};
use crate::rng::NoiseModel;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerAccuracy {
    pub layer: usize,
    pub accuracy: AccuracyStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub sigma: f64,
    pub baseline_clean_accuracy: f64,
    pub per_layer: Vec<LayerAccuracy>,
}

impl SensitivityReport {
    /// `layer,accuracy` rows with the mean accuracy.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,accuracy\n");
        for row in &self.per_layer {
            out.push_str(&format!("{},{:.6}\n", row.layer, row.accuracy.mean));
        }
        out
    }

    /// Largest gap between two layers' mean accuracies, and that gap divided
    /// by the standard error of the difference.
    pub fn spread(&self) -> (f64, f64) {
        let mut best = (0.0, 0.0);
        for a in &self.per_layer {
            for b in &self.per_layer {
                let gap = a.accuracy.mean - b.accuracy.mean;
                if gap > best.0 {
                    let se = a.accuracy.std_error().hypot(b.accuracy.std_error());
                    best = (gap, if se > 0.0 { gap / se } else { f64::INFINITY });
                }
            }
        }
        best
    }
}

/// Accuracy with `N(0, σ²)` added to the pre-batch-norm output of one layer
/// at a time, averaged over `seeds`.
pub fn layer_sensitivity(
    net: &BwnnNetwork,
    data: &Dataset,
    sigma: f64,
    seeds: &[u64],
) -> Result<SensitivityReport> {
    if data.is_empty() {
        return Err(Error::InvalidParameter(
            "sensitivity needs a non-empty dataset".into(),
        ));
    }
    if seeds.is_empty() {
        return Err(Error::InvalidParameter(
            "sensitivity needs at least one seed".into(),
        ));
    }
    let noise = NoiseModel::new(sigma, seeds[0], 0)?;
    let baseline_clean_accuracy = evaluate(net, data, &ForwardMode::Clean)?;
    let per_layer = (0..net.depth())
        .map(|layer| {
            let mode = ForwardMode::NoisePerLayer {
                noise,
                layers: vec![layer],
            };
            Ok(LayerAccuracy {
                layer,
                accuracy: evaluate_seeds(net, data, &mode, seeds)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SensitivityReport {
        sigma,
        baseline_clean_accuracy,
        per_layer,
    })
}
