//! Affine int8 quantization and the fixed-point requantization used by the
//! integer kernels.
//!
//! `q = clamp(round(x / scale) + zero_point, -128, 127)` with rounding half
//! away from zero, `x ≈ (q - zero_point) * scale`.

use serde::{Deserialize, Serialize};

use crate::export::ExportError;

/// Scale used when a calibrated tensor has an empty range.
pub const DEGENERATE_SCALE: f32 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantParams {
    pub scale: f32,
    pub zero_point: i32,
}

impl QuantParams {
    pub fn is_valid(&self) -> bool {
        self.scale.is_finite() && self.scale > 0.0 && (-128..=127).contains(&self.zero_point)
    }

    /// Smallest and largest representable values.
    pub fn range(&self) -> (f64, f64) {
        (dequantize(i8::MIN, *self), dequantize(i8::MAX, *self))
    }
}

pub fn quantize(x: f32, q: QuantParams) -> i8 {
    let scaled = (x as f64 / q.scale as f64).round();
    (scaled + q.zero_point as f64).clamp(-128.0, 127.0) as i8
}

/// Exact in f64: an 8-bit integer times an f32 scale.
pub fn dequantize(v: i8, q: QuantParams) -> f64 {
    (v as i32 - q.zero_point) as f64 * q.scale as f64
}

/// Asymmetric parameters covering `[min, max]` widened to include zero.
pub fn affine_params(min: f64, max: f64) -> Result<QuantParams, ExportError> {
    let (lo, hi) = (min.min(0.0), max.max(0.0));
    if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
        return Err(ExportError::DegenerateRange);
    }
    let scale = ((hi - lo) / 255.0) as f32;
    let zero_point = (-128.0 - lo / scale as f64).round().clamp(-128.0, 127.0) as i32;
    Ok(QuantParams { scale, zero_point })
}

/// Like [`affine_params`] but falls back to [`DEGENERATE_SCALE`] for an empty range.
pub fn affine_params_or_fallback(min: f64, max: f64) -> QuantParams {
    affine_params(min, max).unwrap_or_else(|_| {
        log::warn!("degenerate calibration range [{min}, {max}], using scale {DEGENERATE_SCALE}");
        let zero_point = (-128.0 - min.min(0.0) / DEGENERATE_SCALE as f64).round().clamp(-128.0, 127.0) as i32;
        QuantParams { scale: DEGENERATE_SCALE, zero_point }
    })
}

/// Symmetric per-tensor weight scale `max|w| / 127`.
pub fn symmetric_params(weights: &[f64]) -> QuantParams {
    let max_abs = weights.iter().fold(0.0f64, |m, w| m.max(w.abs()));
    if max_abs == 0.0 {
        return QuantParams { scale: DEGENERATE_SCALE, zero_point: 0 };
    }
    QuantParams { scale: (max_abs / 127.0) as f32, zero_point: 0 }
}

/// A real multiplier `m` encoded as `multiplier * 2^(shift - 31)` with
/// `multiplier` in `[2^30, 2^31)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FixedMultiplier {
    pub multiplier: i32,
    pub shift: i32,
}

impl FixedMultiplier {
    pub fn from_real(m: f64) -> Self {
        if m <= 0.0 || !m.is_finite() {
            return Self { multiplier: 0, shift: 0 };
        }
        // m = frac * 2^exp, frac in [0.5, 1)
        let mut exp = m.log2().floor() as i32 + 1;
        let mut frac = m / 2f64.powi(exp);
        if frac >= 1.0 {
            frac /= 2.0;
            exp += 1;
        } else if frac < 0.5 {
            frac *= 2.0;
            exp -= 1;
        }
        let mut q = (frac * (1i64 << 31) as f64).round() as i64;
        if q == 1i64 << 31 {
            q /= 2;
            exp += 1;
        }
        Self { multiplier: q as i32, shift: exp }
    }

    /// `round(x * m)` in integer arithmetic, saturating to i32.
    pub fn apply(&self, x: i32) -> i32 {
        if self.multiplier == 0 {
            return 0;
        }
        let left = self.shift.max(0) as u32;
        let right = (-self.shift).max(0) as u32;
        let shifted = ((x as i64) << left.min(32)).clamp(i32::MIN as i64, i32::MAX as i64) as i32;
        rounding_divide_by_pot(saturating_rounding_doubling_high_mul(shifted, self.multiplier), right)
    }
}

fn saturating_rounding_doubling_high_mul(a: i32, b: i32) -> i32 {
    if a == i32::MIN && b == i32::MIN {
        return i32::MAX;
    }
    let ab = a as i64 * b as i64;
    let nudge = if ab >= 0 { 1i64 << 30 } else { 1 - (1i64 << 30) };
    ((ab + nudge) / (1i64 << 31)) as i32
}

fn rounding_divide_by_pot(x: i32, exponent: u32) -> i32 {
    let exponent = exponent.min(62);
    let x = x as i64;
    let mask = (1i64 << exponent) - 1;
    let remainder = x & mask;
    let threshold = (mask >> 1) + i64::from(x < 0);
    ((x >> exponent) + i64::from(remainder > threshold)) as i32
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn quantize_examples() {
        let q = QuantParams { scale: 0.05, zero_point: 0 };
        assert_eq!(quantize(1.0, q), 20);
        assert_eq!(quantize(0.0, QuantParams { scale: 0.3, zero_point: -17 }), -17);
        assert_eq!(quantize(1e9, q), 127);
        assert_eq!(quantize(-1e9, q), -128);
        // Half away from zero.
        let unit = QuantParams { scale: 1.0, zero_point: 0 };
        assert_eq!(quantize(2.5, unit), 3);
        assert_eq!(quantize(-2.5, unit), -3);
    }

    #[test]
    fn calibration_formulas() {
        let q = affine_params(-1.0, 1.0).unwrap();
        assert!((q.scale as f64 - 2.0 / 255.0).abs() < 1e-9);
        assert!((-1..=0).contains(&q.zero_point));
        let w = symmetric_params(&[0.1, -0.5, 0.25]);
        assert_eq!(w, QuantParams { scale: (0.5f64 / 127.0) as f32, zero_point: 0 });
        assert!(matches!(affine_params(0.0, 0.0), Err(ExportError::DegenerateRange)));
        assert_eq!(affine_params_or_fallback(0.0, 0.0).scale, DEGENERATE_SCALE);
        // Post-ReLU ranges put zero at the bottom of the int8 range.
        assert_eq!(affine_params(0.0, 6.0).unwrap().zero_point, -128);
        // A strictly positive range still represents zero exactly.
        let q = affine_params(2.0, 3.0).unwrap();
        assert_eq!(dequantize(quantize(0.0, q), q), 0.0);
    }

    #[test]
    fn fixed_multiplier_matches_real_product() {
        for m in [0.7, 0.25, 1e-3, 3.5e-5, 1.0, 2.75, 40.0] {
            let f = FixedMultiplier::from_real(m);
            for x in [-100000, -777, -3, 0, 1, 5, 123, 4096, 2_000_000] {
                let expect = (x as f64 * m).round();
                let got = f.apply(x) as f64;
                assert!((got - expect).abs() <= 1.0, "m={m} x={x}: {got} vs {expect}");
            }
        }
        assert_eq!(FixedMultiplier::from_real(0.0).apply(1234), 0);
    }

    proptest! {
        #[test]
        fn round_trip_within_half_step(lo in -100.0f64..-1e-3, hi in 1e-3f64..100.0, t in 0.0f64..=1.0) {
            let q = affine_params(lo, hi).unwrap();
            let (min, max) = q.range();
            let x = (min + t * (max - min)) as f32;
            prop_assume!((x as f64) >= min && (x as f64) <= max);
            let err = (dequantize(quantize(x, q), q) - x as f64).abs();
            prop_assert!(err <= q.scale as f64 / 2.0, "err {err} scale {}", q.scale);
        }
    }
}
