//! Round-to-nearest-even on signed fixed-point values.
//!
//! Rounding acts on the magnitude, so it is symmetric in sign. The incoming
//! `sticky` flag stands for nonzero bits already discarded below `value`; it
//! breaks ties away from the even choice exactly like any other nonzero bit
//! below the guard position would.

/// Signed fixed-point number: `raw * 2^-frac`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Fixed {
    pub raw: i64,
    pub frac: u32,
}

impl Fixed {
    pub const fn new(raw: i64, frac: u32) -> Self {
        Fixed { raw, frac }
    }
}

/// Result of a rounding step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Rounded {
    pub value: Fixed,
    /// Any nonzero bit (including the incoming sticky) was discarded.
    pub inexact: bool,
}

/// Round `value` to `keep_frac` fractional bits.
pub fn rne_round(value: Fixed, keep_frac: u32, sticky: bool) -> Rounded {
    if keep_frac >= value.frac {
        let shift = keep_frac - value.frac;
        return Rounded {
            value: Fixed::new(value.raw << shift, keep_frac),
            inexact: sticky,
        };
    }
    let drop = value.frac - keep_frac;
    let negative = value.raw < 0;
    let mag = value.raw.unsigned_abs();
    let (q, guard, below) = if drop >= 64 {
        (0, false, mag != 0)
    } else {
        let q = mag >> drop;
        let guard = (mag >> (drop - 1)) & 1 == 1;
        let below = mag & ((1u64 << (drop - 1)) - 1) != 0;
        (q, guard, below)
    };
    let round_bits = below || sticky;
    let up = guard && (round_bits || q & 1 == 1);
    let q = q + up as u64;
    let raw = if negative { -(q as i64) } else { q as i64 };
    Rounded {
        value: Fixed::new(raw, keep_frac),
        inexact: guard || round_bits,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::Ratio;
    use num_traits::Signed;

    /// Rational oracle: nearest multiple of 2^-keep to v (+ epsilon in the
    /// magnitude direction when sticky), ties to even.
    fn oracle(raw: i64, frac: u32, keep: u32, sticky: bool) -> i64 {
        let v = Ratio::new(raw as i128, 1i128 << frac);
        let scaled = v.abs() * Ratio::from_integer(1i128 << keep);
        let fl = scaled.floor();
        let rem = scaled - fl;
        let half = Ratio::new(1, 2);
        let fl = fl.to_integer();
        let q = if rem > half || (rem == half && (sticky || fl % 2 == 1)) {
            fl + 1
        } else {
            fl
        };
        (if v.is_negative() { -q } else { q }) as i64
    }

    #[test]
    fn worked_examples() {
        // 0.0110b -> 0.10b (tie to even), 0.0111b -> 0.10b, 0.0100b -> 0.01b
        assert_eq!(rne_round(Fixed::new(0b0110, 4), 2, false).value.raw, 0b10);
        assert_eq!(rne_round(Fixed::new(0b0111, 4), 2, false).value.raw, 0b10);
        let exact = rne_round(Fixed::new(0b0100, 4), 2, false);
        assert_eq!(exact.value.raw, 0b01);
        assert!(!exact.inexact);
        // tie with sticky rounds away from even
        assert_eq!(rne_round(Fixed::new(0b0010, 4), 2, true).value.raw, 0b01);
        assert_eq!(rne_round(Fixed::new(0b0010, 4), 2, false).value.raw, 0b00);
    }

    #[test]
    fn exhaustive_12_bit_against_rationals() {
        for raw in -4096i64..4096 {
            for keep in 0..=12u32 {
                for sticky in [false, true] {
                    let got = rne_round(Fixed::new(raw, 12), keep, sticky);
                    assert_eq!(got.value.raw, oracle(raw, 12, keep, sticky), "raw={raw} keep={keep} s={sticky}");
                    let lost = keep < 12 && raw.unsigned_abs() & ((1 << (12 - keep)) - 1) != 0;
                    assert_eq!(got.inexact, lost || sticky);
                }
            }
        }
    }

    #[test]
    fn huge_shift_collapses_to_sticky() {
        let r = rne_round(Fixed::new(5, 100), 0, false);
        assert_eq!(r.value.raw, 0);
        assert!(r.inexact);
    }
}
