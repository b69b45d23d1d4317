//! Experiment configuration: one TOML file, optionally overridden from the
//! command line.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use xbar_core::gbo::{DEFAULT_BASE_PULSES, DEFAULT_LEARNING_RATE, DEFAULT_OMEGA};
use xbar_core::network::{presets, BwnnNetwork, LayerSpec, TrainConfig};

use crate::data::DatasetConfig;
use crate::error::{HarnessError, Result};

/// Environment variable naming the output directory when neither the
/// command line nor the config sets one.
pub const OUTPUT_DIR_ENV: &str = "XBAR_OUTPUT_DIR";
pub const DEFAULT_OUTPUT_DIR: &str = "xbar-out";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Architecture {
    Mlp {
        hidden: Vec<usize>,
    },
    SmallCnn {
        channels: [usize; 2],
        hidden: usize,
    },
    /// 3x32x32 inputs only.
    Vgg9,
}

impl Architecture {
    pub fn specs(&self, input_shape: [usize; 3], classes: usize) -> Result<Vec<LayerSpec>> {
        let inputs: usize = input_shape.iter().product();
        Ok(match self {
            Architecture::Mlp { hidden } => presets::mlp(inputs, hidden, classes),
            Architecture::SmallCnn { channels, hidden } => {
                presets::small_cnn(input_shape, *channels, *hidden, classes)
            }
            Architecture::Vgg9 => {
                if input_shape != [3, 32, 32] {
                    return Err(HarnessError::Config(format!(
                        "vgg9 expects 3x32x32 inputs, dataset has {input_shape:?}"
                    )));
                }
                presets::vgg9(classes)
            }
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NiaSettings {
    /// Training-time noise per layer. Unset: the evaluation σ divided by
    /// √base_pulses, the standard deviation a base-length pulse train
    /// accumulates.
    pub sigma: Option<f64>,
    /// Unset: the pre-training epoch count.
    pub epochs: Option<usize>,
    /// Unset: a tenth of the pre-training learning rate.
    pub learning_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GboSettings {
    pub gamma: f64,
    pub omega: Vec<f64>,
    pub base_pulses: usize,
    pub eta: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for GboSettings {
    fn default() -> Self {
        Self {
            gamma: 1e-3,
            omega: DEFAULT_OMEGA.to_vec(),
            base_pulses: DEFAULT_BASE_PULSES,
            eta: DEFAULT_LEARNING_RATE,
            epochs: 10,
            batch_size: 64,
        }
    }
}

/// One evaluated configuration of a results table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Baseline,
    Pla(usize),
    Gbo,
    Nia,
    NiaGbo,
    NiaPla(usize),
}

impl Method {
    pub fn needs_nia(self) -> bool {
        matches!(self, Method::Nia | Method::NiaGbo | Method::NiaPla(_))
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Baseline => f.write_str("Baseline"),
            Method::Pla(n) => write!(f, "PLA_{n}"),
            Method::Gbo => f.write_str("GBO"),
            Method::Nia => f.write_str("NIA"),
            Method::NiaGbo => f.write_str("NIA+GBO"),
            Method::NiaPla(n) => write!(f, "NIA+PLA_{n}"),
        }
    }
}

impl FromStr for Method {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        let pulses = |rest: &str| {
            rest.parse::<usize>()
                .ok()
                .filter(|&n| n >= 1)
                .ok_or_else(|| HarnessError::Config(format!("bad pulse count in method `{s}`")))
        };
        match s {
            "Baseline" => Ok(Method::Baseline),
            "GBO" => Ok(Method::Gbo),
            "NIA" => Ok(Method::Nia),
            "NIA+GBO" => Ok(Method::NiaGbo),
            _ => {
                if let Some(rest) = s.strip_prefix("NIA+PLA_") {
                    Ok(Method::NiaPla(pulses(rest)?))
                } else if let Some(rest) = s.strip_prefix("PLA_") {
                    Ok(Method::Pla(pulses(rest)?))
                } else {
                    Err(HarnessError::Config(format!(
                        "unknown method `{s}` (expected Baseline, PLA_<n>, GBO, NIA, NIA+GBO or NIA+PLA_<n>)"
                    )))
                }
            }
        }
    }
}

impl Serialize for Method {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Method {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed for pre-training, fine-tuning and encoding optimization.
    #[serde(default)]
    pub seed: u64,
    pub dataset: DatasetConfig,
    pub architecture: Architecture,
    #[serde(default = "default_true")]
    pub encode_input: bool,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub nia: NiaSettings,
    #[serde(default)]
    pub gbo: GboSettings,
    pub sigma_list: Vec<f64>,
    /// Noise seeds for evaluation.
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    /// σ grid for single-layer sensitivity sweeps.
    #[serde(default)]
    pub sensitivity_sigmas: Vec<f64>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Pre-trained network. Unset: `<output_dir>/pretrained.json`.
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    /// Train when the checkpoint is missing instead of failing.
    #[serde(default = "default_true")]
    pub pretrain: bool,
}

fn default_true() -> bool {
    true
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2, 3, 4]
}

fn default_methods() -> Vec<Method> {
    vec![Method::Baseline]
}

/// Command-line values that replace config keys.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub gamma: Option<f64>,
    pub sigma: Vec<f64>,
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    /// Parses `path`, resolves relative paths against its directory and
    /// validates the result.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let mut cfg = Self::from_toml(&text)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.dataset.source.rebase(base);
        for p in [&mut cfg.output_dir, &mut cfg.checkpoint]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(gamma) = o.gamma {
            self.gbo.gamma = gamma;
        }
        if !o.sigma.is_empty() {
            self.sigma_list = o.sigma.clone();
        }
        if let Some(dir) = &o.output_dir {
            self.output_dir = Some(dir.clone());
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.sigma_list.is_empty() {
            return bad("sigma_list must not be empty".into());
        }
        if let Some(s) = self
            .sigma_list
            .iter()
            .chain(&self.sensitivity_sigmas)
            .find(|s| !(**s >= 0.0) || !s.is_finite())
        {
            return bad(format!("noise levels must be finite and >= 0, got {s}"));
        }
        if self.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        if self.methods.is_empty() {
            return bad("methods must not be empty".into());
        }
        for p in self.dataset.source.paths() {
            if !p.exists() {
                return bad(format!("dataset file {} does not exist", p.display()));
            }
        }
        self.train.validate()?;
        if self.gbo.batch_size == 0 || self.gbo.epochs == 0 {
            return bad("gbo epochs and batch_size must be >= 1".into());
        }
        let allowed = self.pulse_set()?;
        for m in &self.methods {
            if let Method::Pla(n) | Method::NiaPla(n) = m {
                if !allowed.contains(n) {
                    return bad(format!(
                        "method {m} uses {n} pulses, outside the configured set {allowed:?}"
                    ));
                }
            }
        }
        Ok(())
    }

    /// Pulse counts reachable from `gbo.omega` and `gbo.base_pulses`.
    pub fn pulse_set(&self) -> Result<Vec<usize>> {
        let g = &self.gbo;
        Ok(
            xbar_core::gbo::GboState::new(1, &g.omega, g.base_pulses, g.gamma, g.eta, 0.0)?
                .pulse_set(),
        )
    }

    /// Flag, then config, then environment, then [`DEFAULT_OUTPUT_DIR`].
    pub fn output_dir(&self) -> PathBuf {
        Self::default_output_dir(self.output_dir.clone())
    }

    /// `explicit`, else the environment, else [`DEFAULT_OUTPUT_DIR`].
    pub fn default_output_dir(explicit: Option<PathBuf>) -> PathBuf {
        explicit
            .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR))
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint
            .clone()
            .unwrap_or_else(|| self.output_dir().join("pretrained.json"))
    }

    /// Pre-training settings with the seed derived from the master seed.
    pub fn effective_train(&self) -> TrainConfig {
        TrainConfig {
            seed: xbar_core::rng::stream_key(&[self.seed, 1]),
            ..self.train.clone()
        }
    }

    pub fn build_network(&self, input_shape: [usize; 3], classes: usize) -> Result<BwnnNetwork> {
        let specs = self.architecture.specs(input_shape, classes)?;
        let mut net = BwnnNetwork::new(
            input_shape,
            specs,
            xbar_core::rng::stream_key(&[self.seed, 0]),
        )?;
        net.encode_input = self.encode_input;
        Ok(net)
    }

    /// SHA-256 over the canonical JSON form, leaving out where outputs and
    /// checkpoints are written.
    pub fn hash(&self) -> String {
        let mut identity = self.clone();
        identity.output_dir = None;
        identity.checkpoint = None;
        let text = serde_json::to_string(&identity).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        sigma_list = [4.0, 8.0]
        methods = ["Baseline", "PLA_12", "GBO", "NIA+PLA_16", "NIA+GBO"]

        [dataset]
        kind = "synthetic-blobs"
        classes = 3
        samples = 90

        [architecture]
        kind = "mlp"
        hidden = [8]
    "#;

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(cfg.seeds, vec![0, 1, 2, 3, 4]);
        assert_eq!(cfg.gbo.base_pulses, 8);
        assert_eq!(cfg.gbo.omega, DEFAULT_OMEGA.to_vec());
        assert!(cfg.encode_input && cfg.pretrain);
        assert_eq!(
            cfg.methods,
            vec![
                Method::Baseline,
                Method::Pla(12),
                Method::Gbo,
                Method::NiaPla(16),
                Method::NiaGbo
            ]
        );
        cfg.validate().unwrap();
    }

    #[test]
    fn hash_ignores_output_locations() {
        let a = ExperimentConfig::from_toml(MINIMAL).unwrap();
        let mut b = a.clone();
        b.output_dir = Some("elsewhere".into());
        b.checkpoint = Some("elsewhere/net.json".into());
        assert_eq!(a.hash(), b.hash());
        b.seed = 7;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn method_names_round_trip() {
        for m in [
            Method::Baseline,
            Method::Pla(10),
            Method::Gbo,
            Method::Nia,
            Method::NiaGbo,
            Method::NiaPla(14),
        ] {
            assert_eq!(m.to_string().parse::<Method>().unwrap(), m);
        }
        assert!("PLA_0".parse::<Method>().is_err());
        assert!("PLA".parse::<Method>().is_err());
        assert!("Bogus".parse::<Method>().is_err());
    }

    #[test]
    fn overrides_replace_keys() {
        let mut cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        let before = cfg.hash();
        cfg.apply(&Overrides {
            seed: Some(9),
            gamma: Some(0.5),
            sigma: vec![1.0],
            output_dir: Some("elsewhere".into()),
        });
        assert_eq!((cfg.seed, cfg.gbo.gamma), (9, 0.5));
        assert_eq!(cfg.sigma_list, vec![1.0]);
        assert_eq!(cfg.output_dir(), PathBuf::from("elsewhere"));
        assert_ne!(cfg.hash(), before);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        cfg.sigma_list.clear();
        assert!(matches!(cfg.validate(), Err(HarnessError::Config(_))));

        assert!(ExperimentConfig::from_toml(&format!("{MINIMAL}\nunknown_key = 1")).is_err());
        assert!(ExperimentConfig::from_toml(&MINIMAL.replace("PLA_12", "PLA_x")).is_err());
        let odd = ExperimentConfig::from_toml(&MINIMAL.replace("PLA_12", "PLA_9")).unwrap();
        assert!(matches!(odd.validate(), Err(HarnessError::Config(_))));

        let missing = MINIMAL.replace(
            "kind = \"synthetic-blobs\"\n        classes = 3\n        samples = 90",
            "kind = \"mnist-idx\"\n        images = \"/nonexistent/a\"\n        labels = \"/nonexistent/b\"",
        );
        let cfg = ExperimentConfig::from_toml(&missing).unwrap();
        assert!(matches!(cfg.validate(), Err(HarnessError::Config(_))));
    }
}
