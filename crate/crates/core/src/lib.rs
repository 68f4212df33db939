//! Functional and cycle-level model of a term-serial bfloat16 multiply-accumulate
//! processing element, the tile built from it, and the trace tooling around them.
//!
//! The crate is organised bottom-up:
//!
//! * [`numerics`]: bfloat16 codec, signed-digit term encoding, the extended
//!   accumulator and the bit-parallel reference MAC used as the golden model.
//! * [`pe`]: one processing element: exponent block, term scheduler with a
//!   limited shifter range, shift-and-reduce datapath and out-of-bound skipping.
//! * [`tile`]: a grid of PEs with shared exponent blocks, column-shared term
//!   encoders, row-shared B operands and per-PE buffers, plus the baseline tile.
//! * [`codec`]: base-delta exponent compression.
//! * [`trace`]: tensor traces, the container layout, the transposer, synthetic
//!   generators and sparsity analytics.
//! * [`cli`]: the command implementations behind the `fpraker` binary.

pub mod cli;
pub mod codec;
mod error;
pub mod exec;
pub mod numerics;
pub mod pe;
pub mod tile;
pub mod trace;

pub use error::{Error, Result};
