//! Extended-precision accumulator shared by the PE and the reference MAC.
//!
//! The register holds a biased 8-bit exponent and a two's-complement
//! significand with 4 integer and 12 fractional bits. Between groups the value
//! is normalised (leading one at the hidden position) and rounded to the
//! policy's fractional width. Inside a group, contributions are summed
//! exactly on a grid anchored `frac_bits + GRID_EXTRA` bits below `e_max`;
//! anything that falls off that grid only survives as the sticky bit.

use serde::{Deserialize, Serialize};

use super::bf16::{Bf16Value, EXP_BIAS, MAX_BIASED_EXP, MIN_BIASED_EXP};
use super::rounding::{rne_round, Fixed};
use super::terms::TermEncoding;
use crate::{Error, Result};

/// Fractional bits of the accumulator significand.
pub const ACC_FRAC_BITS: u32 = 12;
/// Integer bits (hidden + 3 carry bits).
pub const ACC_INT_BITS: u32 = 4;
/// Grid depth below the window: a kept term `Bm * 2^-k` with `k <= frac_bits`
/// has its last bit at `k + 7`, one more bit covers the `+1` NAF head.
pub const GRID_EXTRA: u32 = 8;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SkipMode {
    /// Out-of-bound terms are processed like any other.
    None,
    /// Out-of-bound terms are dropped outright.
    ObPaper,
    /// Out-of-bound terms are dropped but recorded in the sticky bit.
    #[default]
    ObExact,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AccumulatorPolicy {
    /// Effective fractional width of the accumulator (1..=12).
    pub frac_bits: u32,
    /// Products per chunk before folding into the second-level accumulator.
    pub chunk_size: u32,
    pub skip_mode: SkipMode,
    /// Digit set the serial operand is expressed in; the window boundary is
    /// drawn between whole digits.
    pub encoding: TermEncoding,
}

impl Default for AccumulatorPolicy {
    fn default() -> Self {
        AccumulatorPolicy {
            frac_bits: ACC_FRAC_BITS,
            chunk_size: 64,
            skip_mode: SkipMode::ObExact,
            encoding: TermEncoding::Canonical,
        }
    }
}

impl AccumulatorPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(1..=ACC_FRAC_BITS).contains(&self.frac_bits) {
            return Err(Error::Config(format!("frac_bits {} outside 1..=12", self.frac_bits)));
        }
        if self.chunk_size == 0 {
            return Err(Error::Config("chunk_size must be >= 1".into()));
        }
        Ok(())
    }

    pub fn with_frac_bits(mut self, frac_bits: u32) -> Self {
        self.frac_bits = frac_bits;
        self
    }

    pub fn with_skip_mode(mut self, skip_mode: SkipMode) -> Self {
        self.skip_mode = skip_mode;
        self
    }

    pub fn with_encoding(mut self, encoding: TermEncoding) -> Self {
        self.encoding = encoding;
        self
    }

    /// Bits of the exact in-group grid below `e_max`.
    pub const fn grid_bits(&self) -> u32 {
        self.frac_bits + GRID_EXTRA
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ExtendedAccumulator {
    /// Biased exponent. Kept across zero results, ignored while zero.
    pub exponent: u8,
    /// Two's-complement significand, `ACC_FRAC_BITS` fractional bits.
    pub significand: i32,
    pub sticky: bool,
}

impl ExtendedAccumulator {
    pub const ZERO: ExtendedAccumulator = ExtendedAccumulator {
        exponent: 0,
        significand: 0,
        sticky: false,
    };

    pub const fn is_zero(&self) -> bool {
        self.significand == 0
    }

    pub fn unbiased_exponent(&self) -> i32 {
        self.exponent as i32 - EXP_BIAS
    }

    /// Build a normalised accumulator from a bfloat16 value (exact).
    pub fn from_bf16(v: Bf16Value) -> Self {
        if v.is_zero() {
            return Self::ZERO;
        }
        let sig = (v.significand() as i32) << (ACC_FRAC_BITS - 7);
        ExtendedAccumulator {
            exponent: v.exponent(),
            significand: if v.is_negative() { -sig } else { sig },
            sticky: false,
        }
    }

    pub fn to_f64(&self) -> f64 {
        self.significand as f64 * 2f64.powi(self.unbiased_exponent() - ACC_FRAC_BITS as i32)
    }

    /// Read-out: round to a 7-bit significand (RNE, sticky included). The
    /// sticky bit is consumed here.
    pub fn to_bf16(&self) -> Result<Bf16Value> {
        if self.is_zero() {
            return Ok(Bf16Value::ZERO);
        }
        let r = rne_round(Fixed::new(self.significand as i64, ACC_FRAC_BITS), 7, self.sticky);
        let mut mag = r.value.raw.unsigned_abs();
        let mut exp = self.exponent as i32;
        if mag >= 0x100 {
            mag >>= 1;
            exp += 1;
        }
        debug_assert!((0x80..0x100).contains(&mag), "unnormalised accumulator {self:?}");
        if !(MIN_BIASED_EXP..=MAX_BIASED_EXP).contains(&exp) {
            return Err(Error::ExponentOutOfRange(exp));
        }
        Bf16Value::from_parts(self.significand < 0, exp as u8, (mag & 0x7f) as u8)
    }
}

/// Place `raw * 2^(exp - frac)` on the grid whose LSB weighs `2^lsb`.
/// Bits below the grid are truncated (toward zero); the flag reports whether
/// any were nonzero.
pub fn align_to_grid(raw: i64, frac: u32, exp: i32, lsb: i32) -> (i64, bool) {
    let shift = exp - frac as i32 - lsb;
    if shift >= 0 {
        debug_assert!(shift < 40, "grid shift {shift} too wide");
        (raw << shift, false)
    } else {
        let drop = (-shift) as u32;
        let mag = raw.unsigned_abs();
        if drop >= 64 {
            return (0, mag != 0);
        }
        let kept = (mag >> drop) as i64;
        let lost = mag & ((1u64 << drop) - 1) != 0;
        (if raw < 0 { -kept } else { kept }, lost)
    }
}

/// Normalise an exact grid sum and round it to the policy width.
///
/// `sum * 2^lsb` (unbiased) is the value; `sticky` marks discarded bits.
/// A zero sum keeps `zero_exponent` as the register's exponent field.
pub fn normalize_round(
    sum: i64,
    lsb: i32,
    sticky: bool,
    frac_bits: u32,
    zero_exponent: u8,
) -> Result<ExtendedAccumulator> {
    if sum == 0 {
        return Ok(ExtendedAccumulator {
            exponent: zero_exponent,
            significand: 0,
            sticky,
        });
    }
    let msb = 63 - sum.unsigned_abs().leading_zeros();
    let mut exp = lsb + msb as i32;
    let r = rne_round(Fixed::new(sum, msb), frac_bits, sticky);
    let mut q = r.value.raw;
    if q.unsigned_abs() == 1u64 << (frac_bits + 1) {
        q /= 2;
        exp += 1;
    }
    let biased = exp + EXP_BIAS;
    if !(MIN_BIASED_EXP..=MAX_BIASED_EXP).contains(&biased) {
        return Err(Error::ExponentOutOfRange(biased));
    }
    Ok(ExtendedAccumulator {
        exponent: biased as u8,
        significand: (q << (ACC_FRAC_BITS - frac_bits)) as i32,
        sticky: r.inexact,
    })
}

/// `acc + v`, aligned at the larger exponent and rounded once.
pub fn add_value(
    acc: ExtendedAccumulator,
    v: Bf16Value,
    policy: &AccumulatorPolicy,
) -> Result<ExtendedAccumulator> {
    if v.is_zero() {
        return Ok(acc);
    }
    let ve = v.unbiased_exponent();
    let e_max = if acc.is_zero() { ve } else { ve.max(acc.unbiased_exponent()) };
    let lsb = e_max - policy.grid_bits() as i32;
    let vs = v.significand() as i64;
    let (vg, lost_v) = align_to_grid(if v.is_negative() { -vs } else { vs }, 7, ve, lsb);
    let (ag, lost_a) = align_to_grid(acc.significand as i64, ACC_FRAC_BITS, acc.unbiased_exponent(), lsb);
    normalize_round(
        vg + ag,
        lsb,
        acc.sticky || lost_v || lost_a,
        policy.frac_bits,
        (e_max + EXP_BIAS) as u8,
    )
}

/// Two-level chunked accumulation: every `chunk_size` products the running
/// accumulator is read out to bfloat16 and added into a second-level
/// accumulator of the same format.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ChunkedAccumulator {
    running: ExtendedAccumulator,
    total: ExtendedAccumulator,
    products: u32,
}

impl ChunkedAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Accumulator the next group should add into.
    pub fn running(&self) -> ExtendedAccumulator {
        self.running
    }

    /// Store the result of a group of `lanes` products.
    pub fn commit(&mut self, acc: ExtendedAccumulator, lanes: u32, policy: &AccumulatorPolicy) -> Result<()> {
        self.running = acc;
        self.products += lanes;
        if self.products >= policy.chunk_size {
            self.fold(policy)?;
        }
        Ok(())
    }

    fn fold(&mut self, policy: &AccumulatorPolicy) -> Result<()> {
        let chunk = self.running.to_bf16()?;
        self.total = add_value(self.total, chunk, policy)?;
        self.running = ExtendedAccumulator::ZERO;
        self.products = 0;
        Ok(())
    }

    /// Fold the open chunk and read the final value out.
    pub fn finish(mut self, policy: &AccumulatorPolicy) -> Result<Bf16Value> {
        self.fold(policy)?;
        self.total.to_bf16()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::bf16::bf16_encode;

    #[test]
    fn format_widths() {
        assert_eq!(ACC_FRAC_BITS, 9 + 3);
        assert_eq!(ACC_INT_BITS, 1 + 3);
        assert_eq!(ACC_INT_BITS + ACC_FRAC_BITS, 16);
    }

    #[test]
    fn readout_roundtrip() {
        for x in [1.0, -3.25, 1.9921875, 1e-20, -7.5e30] {
            let v = bf16_encode(x).unwrap();
            assert_eq!(ExtendedAccumulator::from_bf16(v).to_bf16().unwrap(), v);
        }
    }

    #[test]
    fn normalize_carry_and_cancel() {
        // 1.0 + 1.0 at grid lsb -20 -> 2.0
        let acc = normalize_round(2 << 20, -20, false, 12, 0).unwrap();
        assert_eq!(acc.exponent as i32, 1 + EXP_BIAS);
        assert_eq!(acc.significand, 1 << 12);
        let zero = normalize_round(0, -20, false, 12, 130).unwrap();
        assert!(zero.is_zero());
        assert_eq!(zero.exponent, 130);
    }

    #[test]
    fn round_up_renormalises() {
        // 1.1111111111111 (13 fraction ones) rounds to 2.0 at 12 fractional bits
        let acc = normalize_round((1 << 14) - 1, -13, false, 12, 0).unwrap();
        assert_eq!(acc.significand, 1 << 12);
        assert_eq!(acc.unbiased_exponent(), 1);
        assert!(acc.sticky);
    }

    #[test]
    fn exponent_limits() {
        assert!(matches!(normalize_round(1, 200, false, 12, 0), Err(Error::ExponentOutOfRange(327))));
        assert!(normalize_round(1, -127, false, 12, 0).is_err());
        assert!(normalize_round(1, -126, false, 12, 0).is_ok());
    }

    #[test]
    fn swamping_add() {
        let policy = AccumulatorPolicy::default();
        let big = ExtendedAccumulator::from_bf16(bf16_encode(2f64.powi(64)).unwrap());
        let out = add_value(big, bf16_encode(2f64.powi(-64)).unwrap(), &policy).unwrap();
        assert_eq!(out.significand, big.significand);
        assert_eq!(out.exponent, big.exponent);
        assert!(out.sticky);
    }

    #[test]
    fn chunk_folding() {
        let policy = AccumulatorPolicy { chunk_size: 16, ..Default::default() };
        let mut c = ChunkedAccumulator::new();
        let one = ExtendedAccumulator::from_bf16(Bf16Value::ONE);
        for _ in 0..3 {
            let r = add_value(c.running(), Bf16Value::ONE, &policy).unwrap();
            c.commit(r, 8, &policy).unwrap();
        }
        assert_eq!(c.running(), one);
        assert_eq!(c.finish(&policy).unwrap().to_f64(), 3.0);
    }
}
