//! Activation quantization and binary pulse encodings.
//!
//! A quantized activation is one of `levels` evenly spaced points on
//! `[-1, 1]`. It is delivered to a crossbar as a [`PulseTrain`]: a sequence
//! of binary pulses whose weighted sum reproduces the value.
//!
//! * Thermometer coding uses `p` bipolar pulses with equal weight `1/p` and
//!   represents `p + 1` levels; the number of `+1` pulses is the level index.
//! * Bit slicing uses `b` unipolar pulses carrying the bits of an unsigned
//!   integer level, weighted by `2^i / (2^b - 1)`.
//! * Pulse length approximation re-encodes a thermometer level with a
//!   different pulse count, rounding the `+1` count toward the extreme that
//!   matches the value's sign when the level is not exactly representable.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

const WEIGHT_SUM_TOL: f64 = 1e-12;

/// A value on the uniform `levels`-point grid over `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QuantLevel {
    index: u32,
    levels: u32,
}

impl QuantLevel {
    pub fn new(index: u32, levels: u32) -> Result<Self> {
        if levels < 2 {
            return Err(Error::InvalidParameter(format!(
                "a quantization grid needs at least 2 levels, got {levels}"
            )));
        }
        if index >= levels {
            return Err(Error::InvalidParameter(format!(
                "level index {index} outside grid of {levels} levels"
            )));
        }
        Ok(Self { index, levels })
    }

    /// Position on the grid, 0 is `-1.0` and `levels - 1` is `+1.0`.
    pub fn index(&self) -> u32 {
        self.index
    }

    pub fn levels(&self) -> u32 {
        self.levels
    }

    pub fn value(&self) -> f64 {
        level_value(self.index, self.levels)
    }
}

#[inline]
pub(crate) fn level_value(index: u32, levels: u32) -> f64 {
    let span = f64::from(levels - 1);
    (2.0 * f64::from(index) - span) / span
}

/// Grid index of the level nearest to `x` (clamped), ties away from zero.
#[inline]
pub(crate) fn nearest_level_index(x: f64, levels: u32) -> u32 {
    let x = x.clamp(-1.0, 1.0);
    let span = f64::from(levels - 1);
    let t = (x + 1.0) * 0.5 * span;
    let lo = (t.floor() as u32).min(levels - 1);
    let hi = (lo + 1).min(levels - 1);
    let d_lo = (x - level_value(lo, levels)).abs();
    let d_hi = (x - level_value(hi, levels)).abs();
    if d_lo < d_hi || (d_lo == d_hi && x < 0.0) {
        lo
    } else {
        hi
    }
}

/// Rounds `x` to the nearest of `levels` uniformly spaced points on `[-1, 1]`.
///
/// Inputs outside the interval are clamped first; ties round away from zero.
pub fn quantize_activation(x: f64, levels: u32) -> Result<QuantLevel> {
    if levels < 2 {
        return Err(Error::InvalidParameter(format!(
            "a quantization grid needs at least 2 levels, got {levels}"
        )));
    }
    if !x.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "cannot quantize non-finite value {x}"
        )));
    }
    QuantLevel::new(nearest_level_index(x, levels), levels)
}

/// Encoding scheme selector used by [`analytic_noise_variance`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SchemeKind {
    BitSlicing,
    Thermometer,
    /// Thermometer coding re-encoded with `round(scale * p)` pulses.
    PlaThermometer {
        scale: f64,
    },
}

/// Pulse count produced by scaling a base count, `round(scale * base)`.
pub fn scaled_pulse_count(scale: f64, base: usize) -> Result<usize> {
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "pulse scaling factor must be positive, got {scale}"
        )));
    }
    let count = (scale * base as f64).round();
    if count < 1.0 {
        return Err(Error::InvalidParameter(format!(
            "scale {scale} on {base} pulses leaves no pulses"
        )));
    }
    Ok(count as usize)
}

/// A finite sequence of binary pulses and their accumulation weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseTrain {
    pulses: Vec<i8>,
    weights: Vec<f64>,
}

impl PulseTrain {
    /// Builds a train after checking the length and weight-sum invariants.
    pub fn new(pulses: Vec<i8>, weights: Vec<f64>) -> Result<Self> {
        if pulses.is_empty() || pulses.len() != weights.len() {
            return Err(Error::Encoding(format!(
                "pulse train needs matching non-empty pulses/weights, got {} and {}",
                pulses.len(),
                weights.len()
            )));
        }
        if pulses.iter().any(|&a| !(-1..=1).contains(&a)) {
            return Err(Error::Encoding("pulse amplitudes must be binary".into()));
        }
        if weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(Error::Encoding("pulse weights must be >= 0".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::Encoding(format!(
                "pulse weights sum to {total}, expected 1"
            )));
        }
        Ok(Self { pulses, weights })
    }

    /// Canonical bipolar train of `len` pulses with `positives` leading `+1`s.
    pub fn bipolar(positives: usize, len: usize) -> Result<Self> {
        if len == 0 || positives > len {
            return Err(Error::Encoding(format!(
                "cannot place {positives} positive pulses in a train of {len}"
            )));
        }
        let pulses = (0..len)
            .map(|i| if i < positives { 1 } else { -1 })
            .collect();
        let w = 1.0 / len as f64;
        Ok(Self {
            pulses,
            weights: vec![w; len],
        })
    }

    pub fn pulses(&self) -> &[i8] {
        &self.pulses
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.pulses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pulses.is_empty()
    }

    pub fn positive_count(&self) -> usize {
        self.pulses.iter().filter(|&&a| a > 0).count()
    }
}

/// Thermometer-encodes a level on a `p + 1` grid with `p` bipolar pulses.
pub fn encode_thermometer(q: QuantLevel, pulses: usize) -> Result<PulseTrain> {
    if q.levels() as usize != pulses + 1 {
        return Err(Error::LevelMismatch {
            levels: q.levels(),
            pulses,
        });
    }
    PulseTrain::bipolar(q.index() as usize, pulses)
}

/// Bit-slices an unsigned level into `bits` unipolar pulses, LSB first.
pub fn encode_bitslice(level: u64, bits: u32) -> Result<PulseTrain> {
    if bits == 0 || bits > 62 {
        return Err(Error::InvalidParameter(format!(
            "bit slicing supports 1..=62 bits, got {bits}"
        )));
    }
    let max = (1u64 << bits) - 1;
    if level > max {
        return Err(Error::InvalidParameter(format!(
            "level {level} does not fit in {bits} bits"
        )));
    }
    let denom = max as f64;
    let pulses = (0..bits).map(|i| ((level >> i) & 1) as i8).collect();
    let weights = (0..bits).map(|i| (1u64 << i) as f64 / denom).collect();
    Ok(PulseTrain { pulses, weights })
}

/// Weighted sum of the pulse amplitudes.
///
/// Uniform trains are summed in integers and divided once so that thermometer
/// codes decode to exactly the grid value.
pub fn decode(train: &PulseTrain) -> f64 {
    let w0 = train.weights[0];
    if train.weights.iter().all(|&w| w == w0) {
        let total: i64 = train.pulses.iter().map(|&a| i64::from(a)).sum();
        return total as f64 / train.len() as f64;
    }
    train
        .pulses
        .iter()
        .zip(&train.weights)
        .map(|(&a, &w)| w * f64::from(a))
        .sum()
}

/// Number of `+1` pulses when the level `index` of a `base + 1` grid is
/// re-encoded with `total` pulses.
///
/// Exact when `total * index / base` is an integer. Otherwise rounds up for
/// positive values, down for negative ones, and up on the tie at zero.
pub fn pla_positive_count(index: u32, base: usize, total: usize) -> usize {
    let num = total as u64 * u64::from(index);
    let den = base as u64;
    let floor = num / den;
    if num.is_multiple_of(den) {
        return floor as usize;
    }
    let twice = 2 * u64::from(index);
    let up = if twice > den {
        true
    } else if twice < den {
        false
    } else {
        // value 0 with an odd pulse count: remainder is exactly half
        true
    };
    (if up { floor + 1 } else { floor }) as usize
}

/// Decoded value of a pulse-length-approximated thermometer code.
#[inline]
pub fn pla_decoded_value(index: u32, base: usize, total: usize) -> f64 {
    let k = pla_positive_count(index, base, total) as f64;
    (2.0 * k - total as f64) / total as f64
}

/// Re-encodes a thermometer level with `round(scale * base)` pulses.
pub fn pla_encode(q: QuantLevel, base: usize, scale: f64) -> Result<PulseTrain> {
    if q.levels() as usize != base + 1 {
        return Err(Error::LevelMismatch {
            levels: q.levels(),
            pulses: base,
        });
    }
    let total = scaled_pulse_count(scale, base)?;
    PulseTrain::bipolar(pla_positive_count(q.index(), base, total), total)
}

/// Variance of the accumulated output noise of one pulse-encoded MVM.
pub fn analytic_noise_variance(scheme: SchemeKind, count: usize, sigma: f64) -> Result<f64> {
    if count == 0 {
        return Err(Error::InvalidParameter(
            "pulse or bit count must be >= 1".into(),
        ));
    }
    let s2 = sigma * sigma;
    match scheme {
        SchemeKind::BitSlicing => {
            if count > 62 {
                return Err(Error::InvalidParameter(format!(
                    "bit slicing supports 1..=62 bits, got {count}"
                )));
            }
            let (sq, lin) = (0..count).fold((0f64, 0f64), |(sq, lin), i| {
                let w = (1u64 << i) as f64;
                (sq + w * w, lin + w)
            });
            Ok(s2 * sq / (lin * lin))
        }
        SchemeKind::Thermometer => Ok(s2 / count as f64),
        SchemeKind::PlaThermometer { scale } => Ok(s2 / scaled_pulse_count(scale, count)? as f64),
    }
}

/// One point of the bit-information versus noise comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VariancePoint {
    pub bits: u32,
    pub thermometer_pulses: usize,
    pub thermometer_variance: f64,
    pub bitslice_variance: f64,
}

/// Normalized noise variance (single pulse = 1) of both schemes carrying
/// `b` bits, for `b` in `1..=max_bits`.
pub fn variance_curve(max_bits: u32) -> Result<Vec<VariancePoint>> {
    (1..=max_bits)
        .map(|b| {
            let thermometer_pulses = (1usize << b) - 1;
            Ok(VariancePoint {
                bits: b,
                thermometer_pulses,
                thermometer_variance: analytic_noise_variance(
                    SchemeKind::Thermometer,
                    thermometer_pulses,
                    1.0,
                )?,
                bitslice_variance: analytic_noise_variance(
                    SchemeKind::BitSlicing,
                    b as usize,
                    1.0,
                )?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_nearest(x: f64, levels: u32) -> f64 {
        let x = x.clamp(-1.0, 1.0);
        let grid: Vec<f64> = (0..levels)
            .map(|i| -1.0 + 2.0 * i as f64 / (levels - 1) as f64)
            .collect();
        let best = grid
            .iter()
            .map(|g| (x - g).abs())
            .fold(f64::INFINITY, f64::min);
        // among equidistant candidates, the one farthest from zero
        grid.iter()
            .copied()
            .filter(|g| ((x - g).abs() - best).abs() < 1e-15)
            .max_by(|a, b| a.abs().partial_cmp(&b.abs()).unwrap())
            .unwrap()
    }

    #[test]
    fn quantize_examples() {
        assert_eq!(quantize_activation(1.0, 9).unwrap().value(), 1.0);
        assert_eq!(quantize_activation(0.0, 9).unwrap().value(), 0.0);
        assert_eq!(brute_nearest(0.13, 9), 0.25);
        assert_eq!(quantize_activation(0.13, 9).unwrap().value(), 0.25);
    }

    #[test]
    fn quantize_ties_and_clamp() {
        assert_eq!(quantize_activation(0.125, 9).unwrap().value(), 0.25);
        assert_eq!(quantize_activation(-0.125, 9).unwrap().value(), -0.25);
        assert_eq!(quantize_activation(3.0, 9).unwrap().value(), 1.0);
        assert_eq!(quantize_activation(-7.5, 9).unwrap().value(), -1.0);
        assert_eq!(quantize_activation(0.0, 2).unwrap().value(), 1.0);
    }

    #[test]
    fn quantize_rejects_bad_grid() {
        assert!(matches!(
            quantize_activation(0.0, 1),
            Err(Error::InvalidParameter(_))
        ));
        assert!(quantize_activation(f64::NAN, 9).is_err());
    }

    #[test]
    fn thermometer_examples() {
        let t = encode_thermometer(quantize_activation(1.0, 9).unwrap(), 8).unwrap();
        assert_eq!(t.pulses(), &[1; 8]);
        let t = encode_thermometer(quantize_activation(0.0, 9).unwrap(), 8).unwrap();
        assert_eq!(t.pulses(), &[1, 1, 1, 1, -1, -1, -1, -1]);
        let t = encode_thermometer(quantize_activation(0.25, 9).unwrap(), 8).unwrap();
        assert_eq!(t.positive_count(), 5);
        assert_eq!(t.pulses(), &[1, 1, 1, 1, 1, -1, -1, -1]);
        assert!(t.weights().iter().all(|&w| w == 0.125));
    }

    #[test]
    fn thermometer_level_mismatch() {
        let q = quantize_activation(0.0, 9).unwrap();
        assert!(matches!(
            encode_thermometer(q, 6),
            Err(Error::LevelMismatch {
                levels: 9,
                pulses: 6
            })
        ));
    }

    #[test]
    fn bitslice_examples() {
        assert_eq!(encode_bitslice(0, 3).unwrap().pulses(), &[0, 0, 0]);
        let t = encode_bitslice(7, 3).unwrap();
        assert_eq!(t.pulses(), &[1, 1, 1]);
        assert_eq!(t.weights(), &[1.0 / 7.0, 2.0 / 7.0, 4.0 / 7.0]);
        assert_eq!(encode_bitslice(5, 3).unwrap().pulses(), &[1, 0, 1]);
        assert!(encode_bitslice(8, 3).is_err());
    }

    #[test]
    fn decode_examples() {
        let q = |v| quantize_activation(v, 9).unwrap();
        assert_eq!(decode(&encode_thermometer(q(1.0), 8).unwrap()), 1.0);
        assert_eq!(decode(&encode_thermometer(q(0.25), 8).unwrap()), 0.25);
        let d = decode(&encode_bitslice(5, 3).unwrap());
        assert!((d - 5.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn pla_examples() {
        let q = |v| quantize_activation(v, 9).unwrap();
        let t = pla_encode(q(0.5), 8, 2.0).unwrap();
        assert_eq!((t.len(), t.positive_count()), (16, 12));
        assert_eq!(decode(&t), 0.5);

        let t = pla_encode(q(0.25), 8, 0.75).unwrap();
        assert_eq!((t.len(), t.positive_count()), (6, 4));
        assert!((decode(&t) - 1.0 / 3.0).abs() < 1e-15);

        let t = pla_encode(q(-0.25), 8, 0.75).unwrap();
        assert_eq!((t.len(), t.positive_count()), (6, 2));
        assert!((decode(&t) + 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn pla_zero_tie_goes_positive() {
        // 9 pulses cannot encode 0 exactly: 4.5 positives rounds to 5
        let t = pla_encode(quantize_activation(0.0, 9).unwrap(), 8, 1.125).unwrap();
        assert_eq!((t.len(), t.positive_count()), (9, 5));
    }

    #[test]
    fn pla_rejects_empty_train() {
        let q = quantize_activation(0.0, 9).unwrap();
        assert!(matches!(
            pla_encode(q, 8, 0.01),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn variance_examples() {
        let v = analytic_noise_variance(SchemeKind::BitSlicing, 1, 1.0).unwrap();
        assert_eq!(v, 1.0);
        assert_eq!(
            analytic_noise_variance(SchemeKind::Thermometer, 1, 1.0).unwrap(),
            1.0
        );
        assert_eq!(
            analytic_noise_variance(SchemeKind::Thermometer, 8, 1.0).unwrap(),
            0.125
        );
        let v = analytic_noise_variance(SchemeKind::BitSlicing, 3, 1.0).unwrap();
        assert!((v - 21.0 / 49.0).abs() < 1e-15);
        let v = analytic_noise_variance(SchemeKind::PlaThermometer { scale: 1.25 }, 8, 2.0);
        assert_eq!(v.unwrap(), 0.4);
    }

    #[test]
    fn bitslice_variance_matches_weight_squares() {
        // Σ w_i² for the bit-slicing weights, computed from the train itself
        for bits in 1..=8u32 {
            let t = encode_bitslice(0, bits).unwrap();
            let direct: f64 = t.weights().iter().map(|w| w * w).sum();
            let v = analytic_noise_variance(SchemeKind::BitSlicing, bits as usize, 1.0).unwrap();
            assert!((direct - v).abs() < 1e-14, "bits {bits}");
        }
    }

    #[test]
    fn thermometer_beats_bitslicing_from_two_bits() {
        let curve = variance_curve(8).unwrap();
        assert_eq!(curve[0].thermometer_variance, curve[0].bitslice_variance);
        for pt in &curve[1..] {
            assert!(pt.thermometer_variance < pt.bitslice_variance, "{pt:?}");
        }
    }

    #[test]
    fn pla_integer_scale_divides_variance() {
        for p in 1..=16usize {
            let base = analytic_noise_variance(SchemeKind::Thermometer, p, 1.7).unwrap();
            for n in 1..=4u32 {
                let scaled = analytic_noise_variance(
                    SchemeKind::PlaThermometer {
                        scale: f64::from(n),
                    },
                    p,
                    1.7,
                )
                .unwrap();
                let want = base / f64::from(n);
                assert!((scaled - want).abs() <= 1e-15 * want, "{scaled} vs {want}");
            }
        }
    }

    proptest! {
        #[test]
        fn quantize_matches_enumeration(x in -1.5f64..1.5, levels in 2u32..40) {
            let q = quantize_activation(x, levels).unwrap();
            let want = brute_nearest(x, levels);
            prop_assert!((q.value() - want).abs() < 1e-12, "{} vs {}", q.value(), want);
        }

        #[test]
        fn thermometer_round_trips(p in 1usize..64, raw in 0u32..1000) {
            let idx = raw % (p as u32 + 1);
            let q = QuantLevel::new(idx, p as u32 + 1).unwrap();
            let t = encode_thermometer(q, p).unwrap();
            prop_assert_eq!(decode(&t), q.value());
        }

        #[test]
        fn pla_error_bound_and_sign(p in 1usize..24, raw in 0u32..1000, scale in 0.2f64..3.0) {
            let idx = raw % (p as u32 + 1);
            let q = QuantLevel::new(idx, p as u32 + 1).unwrap();
            let Ok(t) = pla_encode(q, p, scale) else { return Ok(()); };
            let v = q.value();
            let d = decode(&t);
            let total = t.len();
            prop_assert!((d - v).abs() <= 2.0 / total as f64 + 1e-12);
            if total % p == 0 {
                prop_assert!((d - v).abs() < 1e-12);
            }
            if v > 0.0 { prop_assert!(d >= v - 1e-12); }
            if v < 0.0 { prop_assert!(d <= v + 1e-12); }
            prop_assert_eq!(pla_decoded_value(idx, p, total), d);
        }
    }
}
