//! Signed power-of-two term decomposition of significands.
//!
//! An 8-bit significand `1.fffffff` is split into terms `±2^p`, most
//! significant first. The canonical (non-adjacent form) encoder is what the
//! PE's term encoders use; the plain binary encoder (one term per set bit) is
//! kept for schedule studies on unrecoded operands.

use serde::{Deserialize, Serialize};

/// Largest possible term power: the NAF of an 8-bit significand can carry
/// into the position above the hidden bit.
pub const MAX_POWER: i8 = 1;
/// Smallest term power: the last fraction bit.
pub const MIN_POWER: i8 = -7;
/// Digit slots per significand (7 fraction bits + hidden).
pub const SLOTS: u32 = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Term {
    pub negative: bool,
    /// Weight exponent relative to the hidden bit (hidden bit = 0).
    pub power: i8,
}

impl Term {
    pub const fn new(negative: bool, power: i8) -> Self {
        Term { negative, power }
    }

    /// Value in units of 2^-7.
    pub const fn scaled(self) -> i32 {
        let v = 1i32 << (self.power - MIN_POWER);
        if self.negative {
            -v
        } else {
            v
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum TermEncoding {
    /// Non-adjacent form: minimal weight, no two neighbouring nonzero digits.
    #[default]
    Canonical,
    /// One positive term per set bit of the significand.
    Binary,
}

/// Terms of one significand, most significant first. At most 9 entries
/// (binary encoding of 8 bits, NAF never exceeds 5).
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct TermSequence {
    terms: [Term; 9],
    len: u8,
}

impl TermSequence {
    pub const EMPTY: TermSequence = TermSequence {
        terms: [Term::new(false, 0); 9],
        len: 0,
    };

    pub fn as_slice(&self) -> &[Term] {
        &self.terms[..self.len as usize]
    }

    pub fn len(&self) -> usize {
        self.len as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Sum of the terms in units of 2^-7.
    pub fn value(&self) -> i32 {
        self.as_slice().iter().map(|t| t.scaled()).sum()
    }

    fn push(&mut self, t: Term) {
        self.terms[self.len as usize] = t;
        self.len += 1;
    }
}

impl std::fmt::Debug for TermSequence {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list()
            .entries(
                self.as_slice()
                    .iter()
                    .map(|t| format!("{}2^{}", if t.negative { '-' } else { '+' }, t.power)),
            )
            .finish()
    }
}

/// Non-adjacent form of `significand` (8-bit pattern, hidden bit included).
/// Zero yields an empty sequence.
pub fn canonical_encode(significand: u8) -> TermSequence {
    let mut x = significand as i32;
    let mut digits = [0i8; 10];
    let mut i = 0;
    while x != 0 {
        if x & 1 == 1 {
            // pick the digit that leaves a multiple of 4
            let d = 2 - (x & 3);
            digits[i] = d as i8;
            x -= d;
        }
        x >>= 1;
        i += 1;
    }
    let mut seq = TermSequence::EMPTY;
    for pos in (0..i).rev() {
        if digits[pos] != 0 {
            seq.push(Term::new(digits[pos] < 0, pos as i8 + MIN_POWER));
        }
    }
    seq
}

/// One term per set bit.
pub fn binary_encode(significand: u8) -> TermSequence {
    let mut seq = TermSequence::EMPTY;
    for pos in (0..8).rev() {
        if significand >> pos & 1 == 1 {
            seq.push(Term::new(false, pos as i8 + MIN_POWER));
        }
    }
    seq
}

pub fn encode(significand: u8, encoding: TermEncoding) -> TermSequence {
    match encoding {
        TermEncoding::Canonical => canonical_encode(significand),
        TermEncoding::Binary => binary_encode(significand),
    }
}

/// Number of nonzero canonical digits of every 8-bit pattern.
pub fn naf_weight(significand: u8) -> u32 {
    canonical_encode(significand).len() as u32
}
