//! Bit-parallel fused MAC used as the golden model for the PE.
//!
//! One call consumes a group of value pairs: full significand products,
//! product exponents `ABe = Ae + Be`, a single alignment to
//! `e_max = max(ABe.., e_acc)`, one signed sum, one normalisation and one
//! RNE step. The accumulator window is `frac_bits` bits below `e_max`,
//! counted on the serial operand's digits: any digit of `Am` whose weight
//! lands beyond the window is not multiplied in and only sets the sticky bit.
//! The window split is done here with a closed-form digit-prefix expression
//! and a single wide multiply, so it shares no code with the PE's term
//! scheduler.

use super::accumulator::{align_to_grid, normalize_round, AccumulatorPolicy, ExtendedAccumulator, ACC_FRAC_BITS};
use super::bf16::{Bf16Value, EXP_BIAS, MAX_BIASED_EXP, MIN_BIASED_EXP};
use super::terms::{encode, TermEncoding, MIN_POWER};
use crate::{Error, Result};

/// Biased product exponent `Ae + Be - bias`, range-checked.
pub fn product_exponent(a: Bf16Value, b: Bf16Value) -> Result<i32> {
    let e = a.exponent() as i32 + b.exponent() as i32 - EXP_BIAS;
    if !(MIN_BIASED_EXP..=MAX_BIASED_EXP).contains(&e) {
        return Err(Error::ExponentOutOfRange(e));
    }
    Ok(e)
}

/// Value of the digits of `x` at positions `>= q` (position 0 = LSB of the
/// 8-bit significand). For the non-adjacent form this follows from
/// `NAF(x) = (x + x/2) - x/2` restricted bitwise to where the two differ.
pub fn digit_prefix(x: u8, q: i32, encoding: TermEncoding) -> i64 {
    let x = x as i64;
    if q <= 0 {
        return x;
    }
    if q >= 16 {
        return 0;
    }
    match encoding {
        TermEncoding::Canonical => {
            let half = x >> 1;
            let three_half = x + half;
            ((three_half >> q) - (half >> q)) << q
        }
        TermEncoding::Binary => (x >> q) << q,
    }
}

/// Reference MAC over one group of pairs. `a` is the serial operand.
pub fn reference_mac_group(
    acc: ExtendedAccumulator,
    a: &[Bf16Value],
    b: &[Bf16Value],
    policy: &AccumulatorPolicy,
) -> Result<ExtendedAccumulator> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!("{} A values vs {} B values", a.len(), b.len())));
    }
    let mut products = Vec::with_capacity(a.len());
    for (&x, &y) in a.iter().zip(b) {
        if x.is_zero() || y.is_zero() {
            continue;
        }
        products.push((x, y, product_exponent(x, y)?));
    }
    let acc_live = !acc.is_zero();
    let e_max = products
        .iter()
        .map(|p| p.2)
        .chain(acc_live.then_some(acc.exponent as i32))
        .max();
    let Some(e_max) = e_max else {
        return Ok(acc);
    };

    let window = policy.frac_bits as i32;
    // unbiased exponent of the grid LSB
    let lsb = e_max - EXP_BIAS - policy.grid_bits() as i32;
    let mut sum: i64 = 0;
    let mut sticky = acc.sticky;
    for &(x, y, abe) in &products {
        let delta = e_max - abe;
        // digit at position d has power d-7 and lands k = delta - (d-7) below e_max
        let first_kept = delta - window - MIN_POWER as i32;
        let kept_a = digit_prefix(x.significand(), first_kept, policy.encoding);
        if kept_a != x.significand() as i64 {
            sticky = true;
        }
        if kept_a == 0 {
            continue;
        }
        let prod = kept_a * y.significand() as i64;
        let signed = if x.is_negative() != y.is_negative() { -prod } else { prod };
        let (g, lost) = align_to_grid(signed, 14, abe - EXP_BIAS, lsb);
        debug_assert!(!lost, "kept digits must sit on the grid");
        sum += g;
    }
    if acc_live {
        let (g, lost) = align_to_grid(acc.significand as i64, ACC_FRAC_BITS, acc.unbiased_exponent(), lsb);
        sum += g;
        sticky |= lost;
    }
    normalize_round(sum, lsb, sticky, policy.frac_bits, e_max as u8)
}

/// One addend of the shift-and-add expansion: `addend * 2^shift`, with
/// `addend = ±Bm` as an 8-bit integer (7 fractional bits).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ShiftAddend {
    pub shift: i32,
    pub addend: i32,
}

/// Expand `a * b` into `Σ ±Bm << (i + Ae + Be)` over the canonical terms
/// `±2^i` of `Am`. Exponents are unbiased. Zero operands give no addends.
pub fn mul_decompose_check(a: Bf16Value, b: Bf16Value) -> Vec<ShiftAddend> {
    if a.is_zero() || b.is_zero() {
        return Vec::new();
    }
    let negative = a.is_negative() != b.is_negative();
    let bm = b.significand() as i32;
    let base = a.unbiased_exponent() + b.unbiased_exponent();
    encode(a.significand(), TermEncoding::Canonical)
        .as_slice()
        .iter()
        .map(|t| ShiftAddend {
            shift: base + t.power as i32,
            addend: if negative != t.negative { -bm } else { bm },
        })
        .collect()
}
