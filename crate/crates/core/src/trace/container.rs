//! 32x32 memory containers and the 8x8 transposer.
//!
//! A container holds channels `c0..c0+32` by columns `w0..w0+32` of one
//! `(n, h)` row, channel fastest: word `(w - w0) * 32 + (c - c0)`. Containers
//! follow each other channel block first, then column block, then row `h`,
//! then `n`. Edges are zero-padded.

use super::Tensor;
use crate::numerics::Bf16Value;
use crate::{Error, Result};

pub const CONTAINER_DIM: usize = 32;

pub type Block8 = [[Bf16Value; 8]; 8];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Container {
    pub values: Vec<Bf16Value>,
}

impl Container {
    pub fn empty() -> Self {
        Container { values: vec![Bf16Value::ZERO; CONTAINER_DIM * CONTAINER_DIM] }
    }
}

fn blocks(x: usize) -> usize {
    x.div_ceil(CONTAINER_DIM)
}

pub fn container_count(dims: [usize; 4]) -> usize {
    let [n, c, h, w] = dims;
    n * h * blocks(w) * blocks(c)
}

fn container_index(dims: [usize; 4], n: usize, h: usize, wb: usize, cb: usize) -> usize {
    let [_, c, hh, w] = dims;
    ((n * hh + h) * blocks(w) + wb) * blocks(c) + cb
}

pub fn pack_containers(t: &Tensor) -> Vec<Container> {
    let [n, c, h, w] = t.dims;
    let mut out = vec![Container::empty(); container_count(t.dims)];
    for ni in 0..n {
        for ci in 0..c {
            for hi in 0..h {
                for wi in 0..w {
                    let k = container_index(t.dims, ni, hi, wi / CONTAINER_DIM, ci / CONTAINER_DIM);
                    out[k].values[(wi % CONTAINER_DIM) * CONTAINER_DIM + ci % CONTAINER_DIM] = t.at(ni, ci, hi, wi);
                }
            }
        }
    }
    out
}

/// Dense NCHW payload back from containers.
pub fn unpack_containers(containers: &[Container], dims: [usize; 4]) -> Result<Vec<Bf16Value>> {
    if containers.len() != container_count(dims) {
        return Err(Error::DimensionMismatch(format!(
            "{} containers for dims {dims:?}",
            containers.len()
        )));
    }
    let [n, c, h, w] = dims;
    let mut out = Vec::with_capacity(n * c * h * w);
    for ni in 0..n {
        for ci in 0..c {
            for hi in 0..h {
                for wi in 0..w {
                    let k = container_index(dims, ni, hi, wi / CONTAINER_DIM, ci / CONTAINER_DIM);
                    out.push(containers[k].values[(wi % CONTAINER_DIM) * CONTAINER_DIM + ci % CONTAINER_DIM]);
                }
            }
        }
    }
    Ok(out)
}

pub fn transpose8(block: &Block8) -> Block8 {
    let mut out = [[Bf16Value::ZERO; 8]; 8];
    for (i, row) in block.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            out[j][i] = v;
        }
    }
    out
}

/// A tensor as it sits in memory, read back in 8-channel groups.
pub struct ContainerStore {
    pub dims: [usize; 4],
    containers: Vec<Container>,
}

impl ContainerStore {
    pub fn new(t: &Tensor) -> Self {
        ContainerStore { dims: t.dims, containers: pack_containers(t) }
    }

    /// Channels `c0..c0+8` at `(n, h, w)`; zero outside the tensor.
    pub fn channel_group(&self, n: usize, c0: usize, h: usize, w: usize) -> [Bf16Value; 8] {
        let [nn, c, hh, ww] = self.dims;
        let mut out = [Bf16Value::ZERO; 8];
        if n >= nn || h >= hh || w >= ww || c0 >= c {
            return out;
        }
        debug_assert_eq!(c0 % 8, 0);
        let k = container_index(self.dims, n, h, w / CONTAINER_DIM, c0 / CONTAINER_DIM);
        let base = (w % CONTAINER_DIM) * CONTAINER_DIM + c0 % CONTAINER_DIM;
        out.copy_from_slice(&self.containers[k].values[base..base + 8]);
        out
    }

    /// Rows are channel groups of `n0..n0+8` at a fixed `(h, w)`.
    pub fn block_nc(&self, n0: usize, c0: usize, h: usize, w: usize) -> Block8 {
        std::array::from_fn(|i| self.channel_group(n0 + i, c0, h, w))
    }

    /// Rows are channel groups of columns `w0..w0+8` at a fixed `(n, h)`.
    pub fn block_wc(&self, n: usize, c0: usize, h: usize, w0: usize) -> Block8 {
        std::array::from_fn(|i| self.channel_group(n, c0, h, w0 + i))
    }
}
