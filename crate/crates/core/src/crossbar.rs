//! Binary weight crossbar with pulse-by-pulse noisy accumulation.
//!
//! Every pulse drives one MVM `W x_t`; the crossbar adds an independent
//! `N(0, σ²)` sample to each output element of each pulse and the periphery
//! accumulates `Σ_t w_t (W x_t + ε_t)`.
//!
//! Noise for output row `r` at pulse `t` is the draw at index `r * P + t` of
//! the [`NoiseModel`] stream.

use serde::{Deserialize, Serialize};

use crate::encoding::PulseTrain;
use crate::rng::NoiseModel;
use crate::{Error, Result};

/// A `rows x cols` matrix of `±1` entries, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryWeightMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<i8>,
}

impl BinaryWeightMatrix {
    pub fn new(rows: usize, cols: usize, entries: Vec<i8>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Shape(format!("empty {rows}x{cols} crossbar")));
        }
        if entries.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} entries for a {rows}x{cols} crossbar",
                entries.len()
            )));
        }
        if entries.iter().any(|&e| e != 1 && e != -1) {
            return Err(Error::InvalidParameter(
                "binary crossbar entries must be -1 or +1".into(),
            ));
        }
        Ok(Self {
            rows,
            cols,
            entries,
        })
    }

    pub fn from_rows(rows: &[Vec<i8>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged weight rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn entries(&self) -> &[i8] {
        &self.entries
    }

    pub fn get(&self, row: usize, col: usize) -> i8 {
        self.entries[row * self.cols + col]
    }

    fn row(&self, r: usize) -> &[i8] {
        &self.entries[r * self.cols..(r + 1) * self.cols]
    }
}

/// Entry-wise sign with `sign(0) = +1`.
pub fn binarize(rows: usize, cols: usize, real: &[f64]) -> Result<BinaryWeightMatrix> {
    if real.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter(
            "cannot binarize non-finite weights".into(),
        ));
    }
    BinaryWeightMatrix::new(rows, cols, real.iter().map(|&v| sign(v)).collect())
}

#[inline]
pub(crate) fn sign(v: f64) -> i8 {
    if v >= 0.0 {
        1
    } else {
        -1
    }
}

/// Noise-free product `W x`.
pub fn ideal_mvm(w: &BinaryWeightMatrix, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != w.cols {
        return Err(Error::Shape(format!(
            "input of length {} for a crossbar with {} columns",
            x.len(),
            w.cols
        )));
    }
    Ok((0..w.rows)
        .map(|r| {
            w.row(r)
                .iter()
                .zip(x)
                .map(|(&e, &v)| f64::from(e) * v)
                .sum()
        })
        .collect())
}

fn check_trains(w: &BinaryWeightMatrix, trains: &[PulseTrain]) -> Result<()> {
    if trains.len() != w.cols {
        return Err(Error::Shape(format!(
            "{} pulse trains for a crossbar with {} columns",
            trains.len(),
            w.cols
        )));
    }
    let first = trains[0].weights();
    if trains.iter().any(|t| t.weights() != first) {
        return Err(Error::Encoding(
            "all pulse trains of one MVM must share length and weights".into(),
        ));
    }
    Ok(())
}

/// Pulse-by-pulse MVM: `Σ_t w_t (W x_t + ε_t)`.
///
/// With `σ = 0` this equals [`ideal_mvm`] of the decoded inputs up to
/// floating-point summation order.
pub fn pulsed_mvm(
    w: &BinaryWeightMatrix,
    trains: &[PulseTrain],
    noise: &NoiseModel,
) -> Result<Vec<f64>> {
    check_trains(w, trains)?;
    let weights = trains[0].weights();
    let pulses = weights.len();
    let mut out = vec![0.0; w.rows];
    let mut x_t = vec![0.0; w.cols];
    for (t, &wt) in weights.iter().enumerate() {
        for (x, train) in x_t.iter_mut().zip(trains) {
            *x = f64::from(train.pulses()[t]);
        }
        let y = ideal_mvm(w, &x_t)?;
        for (r, (acc, yr)) in out.iter_mut().zip(y).enumerate() {
            let eps = if noise.sigma > 0.0 {
                noise.sample((r * pulses + t) as u64)
            } else {
                0.0
            };
            *acc += wt * (yr + eps);
        }
    }
    Ok(out)
}

/// The accumulated noise term `Σ_t w_t ε_{r,t}` of [`pulsed_mvm`] for each
/// of `rows` outputs, using the same stream addressing.
pub fn accumulated_noise(noise: &NoiseModel, rows: usize, weights: &[f64]) -> Vec<f64> {
    let pulses = weights.len();
    let mut draws = vec![0.0; rows * pulses];
    if noise.sigma > 0.0 {
        noise.fill(0, &mut draws);
    }
    draws
        .chunks_exact(pulses.max(1))
        .map(|chunk| chunk.iter().zip(weights).map(|(e, w)| w * e).sum())
        .collect()
}

/// Equivalent form of [`pulsed_mvm`] that uses linearity: the MVM of the
/// decoded inputs plus [`accumulated_noise`]. Draws are identical.
pub fn pulsed_mvm_accumulated(
    w: &BinaryWeightMatrix,
    trains: &[PulseTrain],
    noise: &NoiseModel,
) -> Result<Vec<f64>> {
    check_trains(w, trains)?;
    let decoded: Vec<f64> = trains.iter().map(crate::encoding::decode).collect();
    let mut out = ideal_mvm(w, &decoded)?;
    let eps = accumulated_noise(noise, w.rows, trains[0].weights());
    for (o, e) in out.iter_mut().zip(eps) {
        *o += e;
    }
    Ok(out)
}
