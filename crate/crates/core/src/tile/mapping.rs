//! Lowering the three training convolutions onto a tile.
//!
//! Every op becomes `Z[m][n] = Σ_l left[m][l] * right[n][l]`, with the
//! reduction index `l` padded so 8-value groups never straddle a channel
//! block. By default `right` is the serial (A) side fed down the columns and
//! `left` is the parallel (B) side fed across the rows:
//!
//! | op     | left (m)              | right (n)                 | l             |
//! |--------|-----------------------|---------------------------|---------------|
//! | FWD    | filters `k` of W      | windows `(n,y,x)` of I    | `(r,s,c)`     |
//! | GRAD_I | channels `c` of W^T   | pixels `(n,h,w)` of G     | `(r,s,k)`     |
//! | GRAD_W | filters `k` of G      | taps `(c,r,s)` of I       | `(n,y,x)`     |
//!
//! Convolutions are stride 1 without padding; GRAD_I is the matching full
//! convolution. Operands are read from container memory in 8-channel groups;
//! W^T for GRAD_I and the spatial groups of GRAD_W go through `transpose8`.

use serde::{Deserialize, Serialize};

use crate::numerics::terms::naf_weight;
use crate::numerics::Bf16Value;
use crate::trace::{transpose8, ContainerStore, Phase, Role, Tensor};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SerialSide {
    /// The activation/gradient side runs serially (table above).
    #[default]
    A,
    /// The other side runs serially.
    B,
    /// Whichever side carries fewer terms per value.
    Auto,
}

/// Matrix form of one op, oriented for the tile: `rows` feed the B inputs of
/// PE rows, `cols` feed the serial A inputs of PE columns.
#[derive(Clone, Debug, PartialEq)]
pub struct Workload {
    pub op: Phase,
    pub rows: Vec<Vec<Bf16Value>>,
    pub cols: Vec<Vec<Bf16Value>>,
    /// `rows` came from `right` rather than `left`.
    pub swapped: bool,
    pub out_dims: [usize; 4],
    /// Output tensor index of `Z[m][n]`, row-major over `(m, n)`.
    pub out_index: Vec<usize>,
}

impl Workload {
    /// Build from the canonical `left`/`right` matrices.
    pub fn new(
        op: Phase,
        left: Vec<Vec<Bf16Value>>,
        right: Vec<Vec<Bf16Value>>,
        serial: SerialSide,
        out_dims: [usize; 4],
        out_index: Vec<usize>,
    ) -> Result<Self> {
        let l = left.first().or(right.first()).map_or(0, Vec::len);
        if left.iter().chain(&right).any(|v| v.len() != l) {
            return Err(Error::DimensionMismatch("reduction lengths differ".into()));
        }
        if l % 8 != 0 {
            return Err(Error::DimensionMismatch(format!("reduction length {l} is not a multiple of 8")));
        }
        if out_index.len() != left.len() * right.len() {
            return Err(Error::DimensionMismatch("output index table size".into()));
        }
        let swapped = match serial {
            SerialSide::A => false,
            SerialSide::B => true,
            SerialSide::Auto => mean_terms(&left) < mean_terms(&right),
        };
        let (rows, cols) = if swapped { (right, left) } else { (left, right) };
        Ok(Workload { op, rows, cols, swapped, out_dims, out_index })
    }

    /// Plain `P x Q` matmul with `Z[p][q]` stored row-major.
    pub fn matmul(op: Phase, rows: Vec<Vec<Bf16Value>>, cols: Vec<Vec<Bf16Value>>) -> Result<Self> {
        let (p, q) = (rows.len(), cols.len());
        Self::new(op, rows, cols, SerialSide::A, [1, 1, p, q], (0..p * q).collect())
    }

    pub fn reduction_len(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    pub fn groups(&self) -> usize {
        self.reduction_len() / 8
    }

    /// Scatter tile outputs (`rows x cols`, row-major) into the output tensor.
    pub fn assemble(&self, z: &[Bf16Value]) -> Vec<Bf16Value> {
        let (p, q) = (self.rows.len(), self.cols.len());
        let mut out = vec![Bf16Value::ZERO; self.out_dims.iter().product()];
        for i in 0..p {
            for j in 0..q {
                let (m, n) = if self.swapped { (j, i) } else { (i, j) };
                let nn = if self.swapped { p } else { q };
                out[self.out_index[m * nn + n]] = z[i * q + j];
            }
        }
        out
    }
}

fn mean_terms(m: &[Vec<Bf16Value>]) -> f64 {
    let (mut t, mut n) = (0u64, 0u64);
    for v in m.iter().flatten() {
        n += 1;
        if !v.is_zero() {
            t += naf_weight(v.significand()) as u64;
        }
    }
    if n == 0 {
        0.0
    } else {
        t as f64 / n as f64
    }
}

/// Tensors of one layer.
#[derive(Clone, Copy, Debug, Default)]
pub struct LayerTensors<'a> {
    pub i: Option<&'a Tensor>,
    pub w: Option<&'a Tensor>,
    pub g: Option<&'a Tensor>,
}

impl<'a> LayerTensors<'a> {
    pub fn from_trace(trace: &'a crate::trace::TensorTrace, layer: &str) -> Self {
        LayerTensors {
            i: trace.find(layer, Role::I),
            w: trace.find(layer, Role::W),
            g: trace.find(layer, Role::G),
        }
    }

    /// Ops whose operands are all present.
    pub fn available(&self) -> Vec<Phase> {
        let mut out = Vec::new();
        if self.i.is_some() && self.w.is_some() {
            out.push(Phase::Fwd);
        }
        if self.g.is_some() && self.w.is_some() {
            out.push(Phase::GradI);
        }
        if self.g.is_some() && self.i.is_some() {
            out.push(Phase::GradW);
        }
        out
    }
}

fn need<'a>(t: Option<&'a Tensor>, what: &str) -> Result<&'a Tensor> {
    t.ok_or_else(|| Error::DimensionMismatch(format!("missing {what} tensor")))
}

fn pad8(x: usize) -> usize {
    x.div_ceil(8) * 8
}

fn mismatch(msg: String) -> Error {
    Error::DimensionMismatch(msg)
}

pub fn map_workload(t: LayerTensors<'_>, op: Phase, serial: SerialSide) -> Result<Workload> {
    match op {
        Phase::Fwd => map_fwd(need(t.i, "I")?, need(t.w, "W")?, serial),
        Phase::GradI => map_grad_i(need(t.g, "G")?, need(t.w, "W")?, serial),
        Phase::GradW => map_grad_w(need(t.g, "G")?, need(t.i, "I")?, serial),
    }
}

fn map_fwd(i: &Tensor, w: &Tensor, serial: SerialSide) -> Result<Workload> {
    let [n, c, h, wd] = i.dims;
    let [k, wc, r, s] = w.dims;
    if wc != c || r > h || s > wd {
        return Err(mismatch(format!("FWD: I {:?} vs W {:?}", i.dims, w.dims)));
    }
    let (ho, wo) = (h - r + 1, wd - s + 1);
    let cp = pad8(c);
    let l = r * s * cp;
    let (is, ws) = (ContainerStore::new(i), ContainerStore::new(w));
    let left: Vec<Vec<Bf16Value>> = (0..k)
        .map(|ki| {
            let mut v = Vec::with_capacity(l);
            for ri in 0..r {
                for si in 0..s {
                    for c0 in (0..cp).step_by(8) {
                        v.extend_from_slice(&ws.channel_group(ki, c0, ri, si));
                    }
                }
            }
            v
        })
        .collect();
    let mut right = Vec::with_capacity(n * ho * wo);
    for ni in 0..n {
        for y in 0..ho {
            for x in 0..wo {
                let mut v = Vec::with_capacity(l);
                for ri in 0..r {
                    for si in 0..s {
                        for c0 in (0..cp).step_by(8) {
                            v.extend_from_slice(&is.channel_group(ni, c0, y + ri, x + si));
                        }
                    }
                }
                right.push(v);
            }
        }
    }
    let out_dims = [n, k, ho, wo];
    let mut idx = Vec::with_capacity(k * n * ho * wo);
    for ki in 0..k {
        for ni in 0..n {
            for y in 0..ho {
                for x in 0..wo {
                    idx.push(((ni * k + ki) * ho + y) * wo + x);
                }
            }
        }
    }
    Workload::new(Phase::Fwd, left, right, serial, out_dims, idx)
}

fn map_grad_i(g: &Tensor, w: &Tensor, serial: SerialSide) -> Result<Workload> {
    let [n, k, ho, wo] = g.dims;
    let [wk, c, r, s] = w.dims;
    if wk != k {
        return Err(mismatch(format!("GRAD_I: G {:?} vs W {:?}", g.dims, w.dims)));
    }
    let (h, wd) = (ho + r - 1, wo + s - 1);
    let kp = pad8(k);
    let l = r * s * kp;
    let (gs, ws) = (ContainerStore::new(g), ContainerStore::new(w));
    let mut left = vec![vec![Bf16Value::ZERO; l]; c];
    for ri in 0..r {
        for si in 0..s {
            for k0 in (0..kp).step_by(8) {
                for c0 in (0..c).step_by(8) {
                    // rows: 8 filters, each an 8-channel group; out: per channel, 8 filters
                    let t = transpose8(&ws.block_nc(k0, c0, ri, si));
                    for (j, grp) in t.iter().enumerate().take(c - c0) {
                        let at = (ri * s + si) * kp + k0;
                        left[c0 + j][at..at + 8].copy_from_slice(grp);
                    }
                }
            }
        }
    }
    let mut right = Vec::with_capacity(n * h * wd);
    for ni in 0..n {
        for hi in 0..h {
            for wi in 0..wd {
                let mut v = Vec::with_capacity(l);
                for ri in 0..r {
                    for si in 0..s {
                        let (y, x) = (hi as isize - ri as isize, wi as isize - si as isize);
                        for k0 in (0..kp).step_by(8) {
                            if y < 0 || x < 0 {
                                v.extend_from_slice(&[Bf16Value::ZERO; 8]);
                            } else {
                                v.extend_from_slice(&gs.channel_group(ni, k0, y as usize, x as usize));
                            }
                        }
                    }
                }
                right.push(v);
            }
        }
    }
    let out_dims = [n, c, h, wd];
    let mut idx = Vec::with_capacity(c * n * h * wd);
    for ci in 0..c {
        for ni in 0..n {
            for hi in 0..h {
                for wi in 0..wd {
                    idx.push(((ni * c + ci) * h + hi) * wd + wi);
                }
            }
        }
    }
    Workload::new(Phase::GradI, left, right, serial, out_dims, idx)
}

fn map_grad_w(g: &Tensor, i: &Tensor, serial: SerialSide) -> Result<Workload> {
    let [n, k, ho, wo] = g.dims;
    let [ni_, c, h, wd] = i.dims;
    if ni_ != n || ho > h || wo > wd {
        return Err(mismatch(format!("GRAD_W: G {:?} vs I {:?}", g.dims, i.dims)));
    }
    let (r, s) = (h - ho + 1, wd - wo + 1);
    let wop = pad8(wo);
    let l = n * ho * wop;
    let (gs, is) = (ContainerStore::new(g), ContainerStore::new(i));
    let mask = |x0: usize, mut t: [[Bf16Value; 8]; 8]| {
        for row in t.iter_mut() {
            for (xi, v) in row.iter_mut().enumerate() {
                if x0 + xi >= wo {
                    *v = Bf16Value::ZERO;
                }
            }
        }
        t
    };
    let mut left = vec![vec![Bf16Value::ZERO; l]; k];
    let mut right = vec![vec![Bf16Value::ZERO; l]; c * r * s];
    for nn in 0..n {
        for y in 0..ho {
            for x0 in (0..wop).step_by(8) {
                let at = (nn * ho + y) * wop + x0;
                for k0 in (0..k).step_by(8) {
                    let t = mask(x0, transpose8(&gs.block_wc(nn, k0, y, x0)));
                    for (j, grp) in t.iter().enumerate().take(k - k0) {
                        left[k0 + j][at..at + 8].copy_from_slice(grp);
                    }
                }
                for ri in 0..r {
                    for si in 0..s {
                        for c0 in (0..c).step_by(8) {
                            let t = mask(x0, transpose8(&is.block_wc(nn, c0, y + ri, x0 + si)));
                            for (j, grp) in t.iter().enumerate().take(c - c0) {
                                right[((c0 + j) * r + ri) * s + si][at..at + 8].copy_from_slice(grp);
                            }
                        }
                    }
                }
            }
        }
    }
    let out_dims = [k, c, r, s];
    let idx = (0..k * c * r * s).collect();
    Workload::new(Phase::GradW, left, right, serial, out_dims, idx)
}
