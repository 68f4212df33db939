//! Base-delta exponent compression over groups of 32 values.
//!
//! Group layout, bits packed LSB first, every group starting on a byte:
//!
//! ```text
//! [width:3][base:8][31 x width-bit deltas | 32 x 8-bit raw exponents][32 x (sign:1 fraction:7)]
//! ```
//!
//! Deltas are two's complement, relative to the first exponent. Width 7 is
//! the escape: exponents follow raw. Signs and fractions are never
//! compressed. A short tail group repeats its last value.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::numerics::Bf16Value;
use crate::trace::Tensor;
use crate::{Error, Result};

pub const GROUP: usize = 32;
pub const ESCAPE: u8 = 7;
pub const HEADER_BITS: u32 = 3 + 8;
pub const RAW_EXPONENT_BITS: u32 = (GROUP * 8) as u32;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CompressedGroup {
    pub width: u8,
    pub base: u8,
    /// 31 deltas unless escaped.
    pub deltas: Vec<i16>,
    /// 32 exponents when escaped.
    pub raw: Vec<u8>,
    /// Sign in bit 7, fraction below.
    pub sign_frac: [u8; GROUP],
}

impl CompressedGroup {
    pub fn is_escape(&self) -> bool {
        self.width == ESCAPE
    }

    pub fn exponent_bits(&self) -> u32 {
        HEADER_BITS
            + if self.is_escape() {
                RAW_EXPONENT_BITS
            } else {
                (GROUP as u32 - 1) * self.width as u32
            }
    }

    /// Whole group on the wire, including padding to a byte.
    pub fn total_bits(&self) -> u32 {
        (self.exponent_bits() + RAW_EXPONENT_BITS).div_ceil(8) * 8
    }
}

/// Smallest signed width holding `d`.
fn signed_width(d: i16) -> u8 {
    (0..16u8)
        .find(|&w| {
            if w == 0 {
                d == 0
            } else {
                let lim = 1i32 << (w - 1);
                (-lim..lim).contains(&(d as i32))
            }
        })
        .unwrap_or(16)
}

pub fn compress_group(values: &[Bf16Value; GROUP]) -> CompressedGroup {
    let exps: Vec<u8> = values.iter().map(|v| v.exponent()).collect();
    let base = exps[0];
    let deltas: Vec<i16> = exps[1..].iter().map(|&e| e as i16 - base as i16).collect();
    let width = deltas.iter().map(|&d| signed_width(d)).max().unwrap_or(0);
    let sign_frac = std::array::from_fn(|i| (values[i].to_bits() >> 8 & 0x80) as u8 | values[i].fraction());
    if width >= ESCAPE {
        CompressedGroup { width: ESCAPE, base, deltas: Vec::new(), raw: exps, sign_frac }
    } else {
        CompressedGroup { width, base, deltas, raw: Vec::new(), sign_frac }
    }
}

pub fn decompress_group(g: &CompressedGroup) -> Result<[Bf16Value; GROUP]> {
    let corrupt = |m: String| Error::CorruptGroup(m);
    let exps: Vec<i32> = if g.is_escape() {
        if g.raw.len() != GROUP || g.raw[0] != g.base {
            return Err(corrupt("escape group without matching raw exponents".into()));
        }
        g.raw.iter().map(|&e| e as i32).collect()
    } else {
        if g.width > ESCAPE || g.deltas.len() != GROUP - 1 {
            return Err(corrupt(format!("width {} with {} deltas", g.width, g.deltas.len())));
        }
        std::iter::once(g.base as i32)
            .chain(g.deltas.iter().map(|&d| g.base as i32 + d as i32))
            .collect()
    };
    let mut out = [Bf16Value::ZERO; GROUP];
    for (i, (&e, &sf)) in exps.iter().zip(&g.sign_frac).enumerate() {
        if !(0..255).contains(&e) || (e == 0 && sf & 0x7f != 0) {
            return Err(corrupt(format!("value {i}: exponent {e}, fraction {:#x}", sf & 0x7f)));
        }
        out[i] = Bf16Value::from_bits(((sf as u16 & 0x80) << 8) | ((e as u16) << 7) | (sf as u16 & 0x7f))?;
    }
    Ok(out)
}

#[derive(Default)]
struct BitWriter {
    bytes: Vec<u8>,
    bit: u32,
}

impl BitWriter {
    fn put(&mut self, v: u32, n: u32) {
        for i in 0..n {
            if self.bit % 8 == 0 {
                self.bytes.push(0);
            }
            if v >> i & 1 == 1 {
                *self.bytes.last_mut().unwrap() |= 1 << (self.bit % 8);
            }
            self.bit += 1;
        }
    }

    fn align(&mut self) {
        self.bit = self.bit.div_ceil(8) * 8;
    }
}

struct BitReader<'a> {
    bytes: &'a [u8],
    bit: usize,
}

impl BitReader<'_> {
    fn get(&mut self, n: u32) -> Result<u32> {
        let mut v = 0;
        for i in 0..n {
            let byte = self
                .bytes
                .get(self.bit / 8)
                .ok_or_else(|| Error::CorruptGroup("stream ends inside a group".into()))?;
            v |= ((byte >> (self.bit % 8) & 1) as u32) << i;
            self.bit += 1;
        }
        Ok(v)
    }

    fn align(&mut self) {
        self.bit = self.bit.div_ceil(8) * 8;
    }
}

fn put_group(w: &mut BitWriter, g: &CompressedGroup) {
    w.put(g.width as u32, 3);
    w.put(g.base as u32, 8);
    if g.is_escape() {
        for &e in &g.raw {
            w.put(e as u32, 8);
        }
    } else {
        for &d in &g.deltas {
            w.put(d as u32 & ((1 << g.width) - 1), g.width as u32);
        }
    }
    for &b in &g.sign_frac {
        w.put(b as u32, 8);
    }
    w.align();
}

fn get_group(r: &mut BitReader<'_>) -> Result<CompressedGroup> {
    let width = r.get(3)? as u8;
    let base = r.get(8)? as u8;
    let (mut deltas, mut raw) = (Vec::new(), Vec::new());
    if width == ESCAPE {
        for _ in 0..GROUP {
            raw.push(r.get(8)? as u8);
        }
    } else {
        for _ in 0..GROUP - 1 {
            let u = r.get(width as u32)?;
            // sign-extend
            let d = if width > 0 && u >> (width - 1) & 1 == 1 { u as i32 - (1 << width) } else { u as i32 };
            deltas.push(d as i16);
        }
    }
    let mut sign_frac = [0u8; GROUP];
    for b in sign_frac.iter_mut() {
        *b = r.get(8)? as u8;
    }
    r.align();
    Ok(CompressedGroup { width, base, deltas, raw, sign_frac })
}

pub fn encode_groups(groups: &[CompressedGroup]) -> Vec<u8> {
    let mut w = BitWriter::default();
    for g in groups {
        put_group(&mut w, g);
    }
    w.bytes
}

pub fn decode_groups(bytes: &[u8], count: usize) -> Result<Vec<CompressedGroup>> {
    let mut r = BitReader { bytes, bit: 0 };
    (0..count).map(|i| get_group(&mut r).map_err(|e| e.context(format!("group {i}")))).collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum GroupAxis {
    /// 32 consecutive channels at one pixel.
    #[default]
    Channel,
    /// 32 consecutive rows at one channel and column.
    Spatial,
}

/// Cut a tensor into 32-value groups along `axis`, repeating the last value
/// of a short group.
pub fn group_values(t: &Tensor, axis: GroupAxis) -> Vec<[Bf16Value; GROUP]> {
    let [n, c, h, w] = t.dims;
    let mut lines: Vec<Vec<Bf16Value>> = Vec::new();
    match axis {
        GroupAxis::Channel => {
            for ni in 0..n {
                for hi in 0..h {
                    for wi in 0..w {
                        lines.push((0..c).map(|ci| t.at(ni, ci, hi, wi)).collect());
                    }
                }
            }
        }
        GroupAxis::Spatial => {
            for ni in 0..n {
                for ci in 0..c {
                    for wi in 0..w {
                        lines.push((0..h).map(|hi| t.at(ni, ci, hi, wi)).collect());
                    }
                }
            }
        }
    }
    let mut out = Vec::new();
    for line in lines {
        for chunk in line.chunks(GROUP) {
            let last = *chunk.last().unwrap();
            out.push(std::array::from_fn(|i| chunk.get(i).copied().unwrap_or(last)));
        }
    }
    out
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Footprint {
    pub groups: u64,
    pub exponent_bits: u64,
    pub raw_exponent_bits: u64,
    pub total_bits: u64,
    pub raw_total_bits: u64,
    pub escapes: u64,
}

impl Footprint {
    /// Compressed over raw exponent bits.
    pub fn ratio(&self) -> f64 {
        if self.raw_exponent_bits == 0 {
            1.0
        } else {
            self.exponent_bits as f64 / self.raw_exponent_bits as f64
        }
    }

    pub fn add(&mut self, g: &CompressedGroup) {
        self.groups += 1;
        self.exponent_bits += g.exponent_bits() as u64;
        self.raw_exponent_bits += RAW_EXPONENT_BITS as u64;
        self.total_bits += g.total_bits() as u64;
        self.raw_total_bits += (GROUP * 16) as u64;
        self.escapes += g.is_escape() as u64;
    }
}

pub fn footprint(t: &Tensor, axis: GroupAxis) -> Footprint {
    let mut f = Footprint::default();
    for g in group_values(t, axis) {
        f.add(&compress_group(&g));
    }
    f
}

pub const FILE_MAGIC: &[u8; 4] = b"FPRC";

/// One compressed tensor of a `.fprc` file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CompressedTensor {
    pub name: String,
    pub axis: GroupAxis,
    pub dims: [usize; 4],
    pub groups: usize,
    pub stream: Vec<u8>,
}

impl CompressedTensor {
    pub fn compress(t: &Tensor, axis: GroupAxis) -> Self {
        let groups: Vec<CompressedGroup> = group_values(t, axis).iter().map(compress_group).collect();
        CompressedTensor { name: t.name.clone(), axis, dims: t.dims, groups: groups.len(), stream: encode_groups(&groups) }
    }

    /// Dense NCHW payload.
    pub fn decompress(&self) -> Result<Vec<Bf16Value>> {
        let groups = decode_groups(&self.stream, self.groups)?;
        let mut vals = Vec::with_capacity(self.groups * GROUP);
        for g in &groups {
            vals.extend_from_slice(&decompress_group(g)?);
        }
        let [n, c, h, w] = self.dims;
        let line = match self.axis {
            GroupAxis::Channel => c,
            GroupAxis::Spatial => h,
        };
        let per_line = line.div_ceil(GROUP) * GROUP;
        if vals.len() != n * c * h * w / line.max(1) * per_line {
            return Err(Error::CorruptGroup(format!("{} groups for dims {:?}", self.groups, self.dims)));
        }
        let mut out = vec![Bf16Value::ZERO; n * c * h * w];
        let mut li = 0;
        let mut put = |ni, ci, hi, wi, v| out[((ni * c + ci) * h + hi) * w + wi] = v;
        for ni in 0..n {
            match self.axis {
                GroupAxis::Channel => {
                    for hi in 0..h {
                        for wi in 0..w {
                            for ci in 0..c {
                                put(ni, ci, hi, wi, vals[li * per_line + ci]);
                            }
                            li += 1;
                        }
                    }
                }
                GroupAxis::Spatial => {
                    for ci in 0..c {
                        for wi in 0..w {
                            for hi in 0..h {
                                put(ni, ci, hi, wi, vals[li * per_line + hi]);
                            }
                            li += 1;
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

pub fn write_compressed(mut w: impl Write, tensors: &[CompressedTensor]) -> Result<()> {
    w.write_all(FILE_MAGIC)?;
    w.write_all(&1u32.to_le_bytes())?;
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for t in tensors {
        w.write_all(&(t.name.len() as u16).to_le_bytes())?;
        w.write_all(t.name.as_bytes())?;
        w.write_all(&[t.axis as u8])?;
        for d in t.dims {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        w.write_all(&(t.groups as u32).to_le_bytes())?;
        w.write_all(&(t.stream.len() as u64).to_le_bytes())?;
        w.write_all(&t.stream)?;
    }
    Ok(())
}

pub fn read_compressed(mut r: impl Read) -> Result<Vec<CompressedTensor>> {
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    if &b4 != FILE_MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    r.read_exact(&mut b4)?;
    if u32::from_le_bytes(b4) != 1 {
        return Err(Error::Format("unsupported version".into()));
    }
    r.read_exact(&mut b4)?;
    let count = u32::from_le_bytes(b4);
    let mut out = Vec::new();
    for _ in 0..count {
        let mut b2 = [0u8; 2];
        r.read_exact(&mut b2)?;
        let mut name = vec![0u8; u16::from_le_bytes(b2) as usize];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| Error::Format("name is not utf-8".into()))?;
        let mut b1 = [0u8; 1];
        r.read_exact(&mut b1)?;
        let axis = match b1[0] {
            0 => GroupAxis::Channel,
            1 => GroupAxis::Spatial,
            a => return Err(Error::Format(format!("unknown axis {a}"))),
        };
        let mut dims = [0usize; 4];
        for d in dims.iter_mut() {
            r.read_exact(&mut b4)?;
            *d = u32::from_le_bytes(b4) as usize;
        }
        r.read_exact(&mut b4)?;
        let groups = u32::from_le_bytes(b4) as usize;
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let mut stream = vec![0u8; u64::from_le_bytes(b8) as usize];
        r.read_exact(&mut stream)?;
        out.push(CompressedTensor { name, axis, dims, groups, stream });
    }
    Ok(out)
}
