//! Counter-based Gaussian noise streams.
//!
//! A draw is addressed by `(seed, stream_id, index)`. Each address maps to a
//! fixed position of a ChaCha8 keystream, so a sample never depends on how
//! many other samples were drawn before it or on evaluation order. Draws
//! `2j` and `2j + 1` are the cosine and sine outputs of one Box-Muller pair.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// 32-bit keystream words consumed per Box-Muller pair (two u64 uniforms).
const WORDS_PER_PAIR: u128 = 4;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Folds a tuple of identifiers into one stream id.
pub fn stream_key(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x6A09_E667_F3BC_C908, |acc, &p| mix64(acc ^ mix64(p)))
}

#[inline]
fn unit_open_closed(bits: u64) -> f64 {
    ((bits >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
}

#[inline]
fn unit_closed_open(bits: u64) -> f64 {
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

#[inline]
fn box_muller(rng: &mut ChaCha8Rng) -> (f64, f64) {
    let u1 = unit_open_closed(rng.next_u64());
    let u2 = unit_closed_open(rng.next_u64());
    let r = (-2.0 * u1.ln()).sqrt();
    let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
    (r * c, r * s)
}

/// Gaussian output-noise specification for one crossbar stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub sigma: f64,
    pub seed: u64,
    pub stream_id: u64,
}

impl NoiseModel {
    pub fn new(sigma: f64, seed: u64, stream_id: u64) -> Result<Self> {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "noise sigma must be finite and >= 0, got {sigma}"
            )));
        }
        Ok(Self {
            sigma,
            seed,
            stream_id,
        })
    }

    pub fn noiseless() -> Self {
        Self {
            sigma: 0.0,
            seed: 0,
            stream_id: 0,
        }
    }

    /// Same σ and seed, different stream.
    pub fn with_stream(&self, stream_id: u64) -> Self {
        Self { stream_id, ..*self }
    }

    fn seek_pair(&self, pair: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng.set_word_pos(pair as u128 * WORDS_PER_PAIR);
        rng
    }

    /// The N(0, 1) variate at `index`.
    pub fn standard_normal(&self, index: u64) -> f64 {
        let (c, s) = box_muller(&mut self.seek_pair(index / 2));
        if index.is_multiple_of(2) {
            c
        } else {
            s
        }
    }

    /// The N(0, σ²) variate at `index`.
    pub fn sample(&self, index: u64) -> f64 {
        self.sigma * self.standard_normal(index)
    }

    /// Fills `out[i]` with the N(0, 1) variate at `start + i`.
    pub fn fill_standard_normal(&self, start: u64, out: &mut [f64]) {
        if out.is_empty() {
            return;
        }
        let mut rng = self.seek_pair(start / 2);
        let mut rest = out;
        if start % 2 == 1 {
            rest[0] = box_muller(&mut rng).1;
            rest = &mut rest[1..];
        }
        let mut pairs = rest.chunks_exact_mut(2);
        for pair in &mut pairs {
            let (c, s) = box_muller(&mut rng);
            pair[0] = c;
            pair[1] = s;
        }
        if let [last] = pairs.into_remainder() {
            *last = box_muller(&mut rng).0;
        }
    }

    /// Fills `out[i]` with the N(0, σ²) variate at `start + i`.
    pub fn fill(&self, start: u64, out: &mut [f64]) {
        self.fill_standard_normal(start, out);
        if self.sigma != 1.0 {
            for v in out.iter_mut() {
                *v *= self.sigma;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn address_determines_sample() {
        let nm = NoiseModel::new(1.0, 42, 7).unwrap();
        for start in [100u64, 101] {
            for len in [0usize, 1, 2, 7, 64] {
                let mut block = vec![0.0; len];
                nm.fill_standard_normal(start, &mut block);
                for (i, v) in block.iter().enumerate() {
                    assert_eq!(v.to_bits(), nm.standard_normal(start + i as u64).to_bits());
                }
            }
        }
    }

    #[test]
    fn streams_and_seeds_differ() {
        let a = NoiseModel::new(1.0, 1, 0).unwrap();
        assert_ne!(a.standard_normal(0), a.with_stream(1).standard_normal(0));
        let b = NoiseModel::new(1.0, 2, 0).unwrap();
        assert_ne!(a.standard_normal(0), b.standard_normal(0));
    }

    #[test]
    fn moments_are_standard() {
        let nm = NoiseModel::new(1.0, 9, 3).unwrap();
        let mut xs = vec![0.0; 200_000];
        nm.fill_standard_normal(0, &mut xs);
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn negative_sigma_rejected() {
        assert!(NoiseModel::new(-1.0, 0, 0).is_err());
        assert!(NoiseModel::new(f64::NAN, 0, 0).is_err());
    }

    #[test]
    fn stream_key_is_order_sensitive() {
        assert_ne!(stream_key(&[1, 2]), stream_key(&[2, 1]));
        assert_eq!(stream_key(&[5, 6, 7]), stream_key(&[5, 6, 7]));
    }
}
