//! bfloat16 storage type.
//!
//! Values are held as raw 16-bit patterns. Exponent 0 is treated as zero
//! regardless of the fraction field (denormals flush to zero), and exponent
//! 255 (Inf/NaN) is refused at every ingestion point.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const EXP_BIAS: i32 = 127;
pub const MAX_BIASED_EXP: i32 = 254;
pub const MIN_BIASED_EXP: i32 = 1;
pub const FRAC_BITS: u32 = 7;

#[derive(Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Bf16Value(u16);

impl Bf16Value {
    pub const ZERO: Bf16Value = Bf16Value(0);
    pub const ONE: Bf16Value = Bf16Value(0x3f80);
    pub const MAX: Bf16Value = Bf16Value(0x7f7f);

    /// Raw pattern, no validation. Denormal patterns are flushed to zero.
    pub const fn from_bits_ftz(bits: u16) -> Self {
        if bits & 0x7f80 == 0 {
            Bf16Value(bits & 0x8000)
        } else {
            Bf16Value(bits)
        }
    }

    /// Ingest a raw pattern: rejects Inf/NaN, flushes denormals.
    pub fn from_bits(bits: u16) -> Result<Self> {
        if bits & 0x7f80 == 0x7f80 {
            return Err(Error::NonFinite(format!("bfloat16 pattern {bits:#06x}")));
        }
        Ok(Self::from_bits_ftz(bits))
    }

    /// Build from fields. `exponent` is biased; 0 yields signed zero.
    pub fn from_parts(negative: bool, exponent: u8, fraction: u8) -> Result<Self> {
        if exponent == 0xff {
            return Err(Error::NonFinite(format!("biased exponent {exponent}")));
        }
        let bits = ((negative as u16) << 15) | ((exponent as u16) << 7) | (fraction as u16 & 0x7f);
        Ok(Self::from_bits_ftz(bits))
    }

    pub const fn to_bits(self) -> u16 {
        self.0
    }

    pub const fn is_negative(self) -> bool {
        self.0 & 0x8000 != 0
    }

    /// Biased exponent field.
    pub const fn exponent(self) -> u8 {
        ((self.0 >> 7) & 0xff) as u8
    }

    /// 7-bit fraction field.
    pub const fn fraction(self) -> u8 {
        (self.0 & 0x7f) as u8
    }

    /// 8-bit significand including the hidden bit (0 for zero values).
    pub const fn significand(self) -> u8 {
        if self.is_zero() {
            0
        } else {
            0x80 | self.fraction()
        }
    }

    pub const fn is_zero(self) -> bool {
        self.0 & 0x7f80 == 0
    }

    /// Unbiased exponent; meaningless for zero.
    pub const fn unbiased_exponent(self) -> i32 {
        self.exponent() as i32 - EXP_BIAS
    }

    pub fn to_f64(self) -> f64 {
        if self.is_zero() {
            return if self.is_negative() { -0.0 } else { 0.0 };
        }
        let mag = self.significand() as f64 * 2f64.powi(self.unbiased_exponent() - FRAC_BITS as i32);
        if self.is_negative() {
            -mag
        } else {
            mag
        }
    }

    pub fn to_f32(self) -> f32 {
        f32::from_bits((Self::from_bits_ftz(self.0).0 as u32) << 16)
    }

    pub fn neg(self) -> Self {
        Bf16Value(self.0 ^ 0x8000)
    }
}

/// Nearest bfloat16 to `x`, ties to even. Overflow saturates to the largest
/// finite magnitude, results below the normal range flush to signed zero.
pub fn bf16_encode(x: f64) -> Result<Bf16Value> {
    if x.is_nan() {
        return Err(Error::NonFinite("NaN".into()));
    }
    let negative = x.is_sign_negative();
    let sign = (negative as u16) << 15;
    if x.is_infinite() {
        return Ok(Bf16Value(sign | Bf16Value::MAX.0));
    }
    let bits = x.to_bits();
    let exp_field = ((bits >> 52) & 0x7ff) as i32;
    if exp_field == 0 {
        // f64 zero or subnormal: far below bf16 range
        return Ok(Bf16Value(sign));
    }
    let mut exp = exp_field - 1023 + EXP_BIAS;
    let frac52 = bits & ((1u64 << 52) - 1);
    // keep 7 fraction bits, 45 dropped
    let mut kept = frac52 >> 45;
    let rest = frac52 & ((1u64 << 45) - 1);
    let half = 1u64 << 44;
    if rest > half || (rest == half && kept & 1 == 1) {
        kept += 1;
        if kept == 0x80 {
            kept = 0;
            exp += 1;
        }
    }
    if exp < MIN_BIASED_EXP {
        return Ok(Bf16Value(sign));
    }
    if exp > MAX_BIASED_EXP {
        return Ok(Bf16Value(sign | Bf16Value::MAX.0));
    }
    Ok(Bf16Value(sign | ((exp as u16) << 7) | kept as u16))
}

impl TryFrom<f64> for Bf16Value {
    type Error = Error;

    fn try_from(x: f64) -> Result<Self> {
        bf16_encode(x)
    }
}

impl fmt::Debug for Bf16Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "bf16({}{}, e={}, m={:07b})",
            if self.is_negative() { '-' } else { '+' },
            self.to_f64().abs(),
            self.exponent(),
            self.fraction()
        )
    }
}

impl fmt::Display for Bf16Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_f64())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_values() {
        let one = bf16_encode(1.0).unwrap();
        assert_eq!((one.is_negative(), one.exponent(), one.fraction()), (false, 127, 0));
        let zero = bf16_encode(0.0).unwrap();
        assert_eq!((zero.exponent(), zero.fraction()), (0, 0));
        assert!(bf16_encode(-0.0).unwrap().is_negative());
    }

    #[test]
    fn nearest_by_enumeration() {
        // brute force: all 128 fractions at exponent 0 plus 2.0, pick nearest, ties to even
        let candidates: Vec<(f64, u8)> = (0..128u8).map(|m| (1.0 + m as f64 / 128.0, m)).collect();
        for &x in &[1.8125, 1.00390625, 1.01171875, 1.3, 1.99, 1.998046875] {
            let v = bf16_encode(x).unwrap();
            let mut best = (f64::INFINITY, 0u8, 0i32);
            for &(c, m) in &candidates {
                let d = (c - x).abs();
                if d < best.0 || (d == best.0 && m % 2 == 0) {
                    best = (d, m, 127);
                }
            }
            if (2.0 - x).abs() < best.0 {
                best = ((2.0 - x).abs(), 0, 128);
            }
            assert_eq!((v.exponent() as i32, v.fraction()), (best.2, best.1), "x={x}");
        }
        let v = bf16_encode(1.8125).unwrap();
        assert_eq!((v.exponent(), v.fraction()), (127, 0b1101000));
    }

    #[test]
    fn nan_rejected_and_overflow_saturates() {
        assert!(matches!(bf16_encode(f64::NAN), Err(Error::NonFinite(_))));
        assert_eq!(bf16_encode(1e300).unwrap(), Bf16Value::MAX);
        assert_eq!(bf16_encode(-1e300).unwrap(), Bf16Value::MAX.neg());
    }

    #[test]
    fn denormals_flush() {
        let tiny = bf16_encode(1e-39).unwrap();
        assert!(tiny.is_zero());
        let d = Bf16Value::from_bits(0x0001).unwrap();
        assert!(d.is_zero());
        assert_eq!(d.to_bits(), 0);
        assert_eq!(Bf16Value::from_bits(0x8005).unwrap().to_bits(), 0x8000);
        assert!(Bf16Value::from_bits(0x7f80).is_err());
        assert!(Bf16Value::from_bits(0xffc1).is_err());
    }

    #[test]
    fn encode_decode_idempotent_exhaustive() {
        for bits in 0..=u16::MAX {
            let Ok(v) = Bf16Value::from_bits(bits) else { continue };
            assert_eq!(bf16_encode(v.to_f64()).unwrap(), v, "{bits:#x}");
            assert_eq!(v.to_f64(), v.to_f32() as f64);
        }
    }
}
