//! Dataset ingestion: IDX image/label pairs, labeled CSV and synthetic blobs.
//!
//! Every loader returns inputs on `[-1, 1]`. Pixel data is mapped affinely
//! from `[0, 255]`.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use xbar_core::dataset::Dataset;

use crate::error::{HarnessError, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DataSource {
    SyntheticBlobs {
        classes: usize,
        samples: usize,
        #[serde(default = "default_dims")]
        dims: usize,
        #[serde(default = "default_spread")]
        spread: f64,
        #[serde(default)]
        seed: u64,
    },
    MnistIdx {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default = "default_classes")]
        classes: usize,
    },
    Csv {
        path: PathBuf,
        classes: usize,
        /// Defaults to `(features, 1, 1)`.
        #[serde(default)]
        shape: Option<[usize; 3]>,
        /// Raw feature range mapped onto `[-1, 1]`.
        #[serde(default = "default_range")]
        feature_range: [f64; 2],
    },
}

fn default_dims() -> usize {
    2
}

fn default_spread() -> f64 {
    0.15
}

fn default_classes() -> usize {
    10
}

fn default_range() -> [f64; 2] {
    [0.0, 255.0]
}

impl DataSource {
    /// Resolves relative paths against `base`.
    pub fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match self {
            DataSource::SyntheticBlobs { .. } => {}
            DataSource::MnistIdx { images, labels, .. } => {
                fix(images);
                fix(labels);
            }
            DataSource::Csv { path, .. } => fix(path),
        }
    }

    pub fn paths(&self) -> Vec<&Path> {
        match self {
            DataSource::SyntheticBlobs { .. } => vec![],
            DataSource::MnistIdx { images, labels, .. } => vec![images, labels],
            DataSource::Csv { path, .. } => vec![path],
        }
    }

    pub fn load(&self) -> Result<Dataset> {
        match self {
            DataSource::SyntheticBlobs {
                classes,
                samples,
                dims,
                spread,
                seed,
            } => synthetic_blobs(*classes, *samples, *dims, *spread, *seed),
            DataSource::MnistIdx {
                images,
                labels,
                classes,
            } => load_idx(images, labels, *classes),
            DataSource::Csv {
                path,
                classes,
                shape,
                feature_range,
            } => load_csv(path, *classes, *shape, *feature_range),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    #[serde(flatten)]
    pub source: DataSource,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default)]
    pub split_seed: u64,
}

fn default_test_fraction() -> f64 {
    0.25
}

#[derive(Debug, Clone)]
pub struct Split {
    pub train: Dataset,
    pub test: Dataset,
}

impl DatasetConfig {
    pub fn load(&self) -> Result<Split> {
        let all = self.source.load()?;
        let (train, test) = train_test_split(&all, self.test_fraction, self.split_seed)?;
        Ok(Split { train, test })
    }
}

pub fn pixel_to_unit(p: u8) -> f64 {
    f64::from(p) / 127.5 - 1.0
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

fn format_error(path: &Path, offset: u64, message: impl Into<String>) -> HarnessError {
    HarnessError::Format {
        path: path.to_path_buf(),
        offset,
        message: message.into(),
    }
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| format_error(path, bytes.len() as u64, "truncated header"))
}

fn check_magic(bytes: &[u8], expected: u32, path: &Path) -> Result<()> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != expected {
        return Err(format_error(
            path,
            0,
            format!("magic number {magic:#010x}, expected {expected:#010x}"),
        ));
    }
    Ok(())
}

fn check_payload(bytes: &[u8], header: usize, expected: usize, path: &Path) -> Result<()> {
    let actual = bytes.len() - header;
    if actual != expected {
        let offset = (header + actual.min(expected)) as u64;
        return Err(format_error(
            path,
            offset,
            format!("payload has {actual} bytes, header declares {expected}"),
        ));
    }
    Ok(())
}

pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<IdxImages> {
    check_magic(bytes, IDX_IMAGES_MAGIC, path)?;
    let count = be_u32(bytes, 4, path)? as usize;
    let rows = be_u32(bytes, 8, path)? as usize;
    let cols = be_u32(bytes, 12, path)? as usize;
    check_payload(bytes, 16, count * rows * cols, path)?;
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels: bytes[16..].to_vec(),
    })
}

pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    check_magic(bytes, IDX_LABELS_MAGIC, path)?;
    let count = be_u32(bytes, 4, path)? as usize;
    check_payload(bytes, 8, count, path)?;
    Ok(bytes[8..].to_vec())
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| HarnessError::io(path, e))
}

fn check_labels(labels: &[usize], classes: usize) -> Result<()> {
    if classes < 2 {
        return Err(HarnessError::Config(format!(
            "need at least 2 classes, got {classes}"
        )));
    }
    if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= classes) {
        return Err(HarnessError::Data(format!(
            "sample {i} has label {y}, outside 0..{classes}"
        )));
    }
    Ok(())
}

pub fn load_idx(images: &Path, labels: &Path, classes: usize) -> Result<Dataset> {
    let img = parse_idx_images(&read(images)?, images)?;
    let lab = parse_idx_labels(&read(labels)?, labels)?;
    if lab.len() != img.count {
        return Err(HarnessError::Data(format!(
            "{} images but {} labels",
            img.count,
            lab.len()
        )));
    }
    let labels: Vec<usize> = lab.iter().map(|&y| usize::from(y)).collect();
    check_labels(&labels, classes)?;
    let inputs = img.pixels.iter().map(|&p| pixel_to_unit(p)).collect();
    Ok(Dataset::new(
        [1, img.rows, img.cols],
        classes,
        inputs,
        labels,
    )?)
}

/// CSV with a header whose first column is `label`, followed by numeric
/// features in `feature_range`.
pub fn load_csv(
    path: &Path,
    classes: usize,
    shape: Option<[usize; 3]>,
    feature_range: [f64; 2],
) -> Result<Dataset> {
    let [lo, hi] = feature_range;
    if !(hi > lo) {
        return Err(HarnessError::Config(format!(
            "empty feature range [{lo}, {hi}]"
        )));
    }
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.get(0).map(str::trim) != Some("label") || header.len() < 2 {
        return Err(format_error(
            path,
            0,
            "header must start with `label` followed by at least one feature column",
        ));
    }
    let features = header.len() - 1;
    let shape = shape.unwrap_or([features, 1, 1]);
    if shape.iter().product::<usize>() != features {
        return Err(HarnessError::Config(format!(
            "shape {shape:?} does not hold {features} features"
        )));
    }

    let (mut inputs, mut labels) = (Vec::new(), Vec::new());
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let offset = record.position().map_or(0, |p| p.byte());
        let bad = |what: &str| format_error(path, offset, what.to_string());
        let label: usize = record[0]
            .trim()
            .parse()
            .map_err(|_| bad("label is not an integer"))?;
        for field in record.iter().skip(1) {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| bad("feature is not a number"))?;
            if !(lo..=hi).contains(&v) {
                return Err(HarnessError::Data(format!(
                    "{}: feature {v} at byte {offset} outside [{lo}, {hi}]",
                    path.display()
                )));
            }
            inputs.push(2.0 * (v - lo) / (hi - lo) - 1.0);
        }
        labels.push(label);
    }
    check_labels(&labels, classes)?;
    Ok(Dataset::new(shape, classes, inputs, labels)?)
}

fn csv_error(path: &Path, e: csv::Error) -> HarnessError {
    let offset = e.position().map_or(0, |p| p.byte());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => HarnessError::io(path, io),
        kind => format_error(path, offset, format!("{kind:?}")),
    }
}

/// Isotropic clusters around random centers in `[-0.6, 0.6]^dims`, labels
/// assigned round-robin so classes are balanced within one sample.
pub fn synthetic_blobs(
    classes: usize,
    samples: usize,
    dims: usize,
    spread: f64,
    seed: u64,
) -> Result<Dataset> {
    if classes < 2 || dims == 0 || samples == 0 || !(spread >= 0.0) {
        return Err(HarnessError::Config(format!(
            "synthetic blobs need classes >= 2, dims >= 1, samples >= 1 and spread >= 0 \
             (got {classes}, {dims}, {samples}, {spread})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<f64> = (0..classes * dims)
        .map(|_| rng.random_range(-0.6..=0.6))
        .collect();
    let mut inputs = Vec::with_capacity(samples * dims);
    let mut labels = Vec::with_capacity(samples);
    for i in 0..samples {
        let c = i % classes;
        for d in 0..dims {
            let u: f64 = rng.random_range(-1.0..=1.0);
            inputs.push((centers[c * dims + d] + spread * u).clamp(-1.0, 1.0));
        }
        labels.push(c);
    }
    Ok(Dataset::new([dims, 1, 1], classes, inputs, labels)?)
}

/// Seeded shuffle, then the first `round(fraction · n)` samples form the
/// test set. Sample ids are kept.
pub fn train_test_split(data: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(HarnessError::Config(format!(
            "test fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let n = data.len();
    let n_test = (fraction * n as f64).round() as usize;
    if n_test == 0 || n_test == n {
        return Err(HarnessError::Data(format!(
            "{n} samples cannot be split with test fraction {fraction}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (test, train) = order.split_at(n_test);
    let (mut train, mut test) = (train.to_vec(), test.to_vec());
    train.sort_unstable();
    test.sort_unstable();
    Ok((data.subset(&train), data.subset(&test)))
}
