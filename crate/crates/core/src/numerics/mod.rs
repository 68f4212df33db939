//! Number formats and the golden arithmetic model.

pub mod accumulator;
pub mod bf16;
pub mod reference;
pub mod rounding;
pub mod terms;

pub use accumulator::{AccumulatorPolicy, ChunkedAccumulator, ExtendedAccumulator, SkipMode};
pub use bf16::{bf16_encode, Bf16Value};
pub use reference::{mul_decompose_check, reference_mac_group, ShiftAddend};
pub use rounding::{rne_round, Fixed};
pub use terms::{canonical_encode, Term, TermEncoding, TermSequence};
