//! Tensor traces: in-memory form, the FPRT file format, container layout,
//! analytics and synthetic generators.
//!
//! File layout (little-endian):
//!
//! ```text
//! "FPRT" | version u32 | count u32 | per tensor:
//!     name_len u16 | name utf-8 | role u8 | phase u8 | N C H W (u32 each)
//!     payload: containers, 1024 bf16 words each
//! ```
//!
//! The layer a tensor belongs to is the part of its name before the last
//! `.` (`conv1.I` belongs to `conv1`).

mod analysis;
mod container;
mod synth;

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::numerics::Bf16Value;
use crate::{Error, Result};

pub use analysis::{analyze_sparsity, exponent_histogram, potential_speedup, ExponentHistogram, SparsityReport};
pub use container::{
    container_count, pack_containers, transpose8, unpack_containers, Container, ContainerStore, Block8, CONTAINER_DIM,
};
pub use synth::{synth_trace, LayerSpec, SynthSpec};

pub const MAGIC: &[u8; 4] = b"FPRT";
pub const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Role {
    I,
    W,
    G,
}

impl Role {
    fn code(self) -> u8 {
        self as u8
    }

    fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(Role::I),
            1 => Ok(Role::W),
            2 => Ok(Role::G),
            _ => Err(Error::Format(format!("unknown role {c}"))),
        }
    }
}

/// The three training convolutions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Phase {
    /// `Z = I * W`
    Fwd,
    /// `dE/dI = W^T * G`
    GradI,
    /// `dE/dW = G * I`
    GradW,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::Fwd, Phase::GradI, Phase::GradW];

    pub fn name(self) -> &'static str {
        match self {
            Phase::Fwd => "FWD",
            Phase::GradI => "GRAD_I",
            Phase::GradW => "GRAD_W",
        }
    }

    fn from_code(c: u8) -> Result<Self> {
        Phase::ALL
            .get(c as usize)
            .copied()
            .ok_or_else(|| Error::Format(format!("unknown phase {c}")))
    }
}

/// Dense NCHW tensor. Weights use `K x C x R x S` in the same slots.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Tensor {
    pub name: String,
    pub role: Role,
    pub phase: Phase,
    pub dims: [usize; 4],
    pub data: Vec<Bf16Value>,
}

impl Tensor {
    pub fn new(name: impl Into<String>, role: Role, phase: Phase, dims: [usize; 4], data: Vec<Bf16Value>) -> Result<Self> {
        let len: usize = dims.iter().product();
        if data.len() != len {
            return Err(Error::DimensionMismatch(format!("{} values for dims {dims:?}", data.len())));
        }
        Ok(Tensor { name: name.into(), role, phase, dims, data })
    }

    pub fn zeros(name: impl Into<String>, role: Role, phase: Phase, dims: [usize; 4]) -> Self {
        let len = dims.iter().product();
        Tensor { name: name.into(), role, phase, dims, data: vec![Bf16Value::ZERO; len] }
    }

    pub fn layer(&self) -> &str {
        self.name.rsplit_once('.').map_or(self.name.as_str(), |(l, _)| l)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        let [_, cc, hh, ww] = self.dims;
        ((n * cc + c) * hh + h) * ww + w
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> Bf16Value {
        self.data[self.index(n, c, h, w)]
    }

    /// Value at a possibly out-of-range spatial position; zero outside.
    #[inline]
    pub fn at_padded(&self, n: usize, c: usize, h: isize, w: isize) -> Bf16Value {
        let [_, _, hh, ww] = self.dims;
        if h < 0 || w < 0 || h as usize >= hh || w as usize >= ww {
            Bf16Value::ZERO
        } else {
            self.at(n, c, h as usize, w as usize)
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TensorTrace {
    pub tensors: Vec<Tensor>,
}

impl TensorTrace {
    /// Layer ids in first-appearance order.
    pub fn layers(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for t in &self.tensors {
            if !out.iter().any(|l| l == t.layer()) {
                out.push(t.layer().to_string());
            }
        }
        out
    }

    pub fn find(&self, layer: &str, role: Role) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.layer() == layer && t.role == role)
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.tensors.len() as u32).to_le_bytes())?;
        for t in &self.tensors {
            let name = t.name.as_bytes();
            let len = u16::try_from(name.len()).map_err(|_| Error::Format(format!("name too long: {}", t.name)))?;
            w.write_all(&len.to_le_bytes())?;
            w.write_all(name)?;
            w.write_all(&[t.role.code(), t.phase as u8])?;
            for d in t.dims {
                let d = u32::try_from(d).map_err(|_| Error::Format(format!("dim {d} too large")))?;
                w.write_all(&d.to_le_bytes())?;
            }
            let mut buf = Vec::with_capacity(container_count(t.dims) * CONTAINER_DIM * CONTAINER_DIM * 2);
            for c in pack_containers(t) {
                for v in c.values.iter() {
                    buf.extend_from_slice(&v.to_bits().to_le_bytes());
                }
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let count = read_u32(&mut r)?;
        let mut tensors = Vec::with_capacity(count.min(1024) as usize);
        for _ in 0..count {
            let mut b2 = [0u8; 2];
            r.read_exact(&mut b2)?;
            let mut name = vec![0u8; u16::from_le_bytes(b2) as usize];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|_| Error::Format("tensor name is not utf-8".into()))?;
            r.read_exact(&mut b2)?;
            let role = Role::from_code(b2[0])?;
            let phase = Phase::from_code(b2[1])?;
            let mut dims = [0usize; 4];
            for d in dims.iter_mut() {
                *d = read_u32(&mut r)? as usize;
            }
            let n = container_count(dims);
            let mut containers = Vec::with_capacity(n);
            let mut raw = vec![0u8; CONTAINER_DIM * CONTAINER_DIM * 2];
            for _ in 0..n {
                r.read_exact(&mut raw)?;
                let mut c = Container::empty();
                for (v, b) in c.values.iter_mut().zip(raw.chunks_exact(2)) {
                    *v = Bf16Value::from_bits(u16::from_le_bytes([b[0], b[1]]))
                        .map_err(|e| e.context(format!("tensor {name}")))?;
                }
                containers.push(c);
            }
            let data = unpack_containers(&containers, dims)?;
            tensors.push(Tensor { name, role, phase, dims, data });
        }
        Ok(TensorTrace { tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::from(e).context(path.display().to_string()))?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::from(e).context(path.display().to_string()))?;
        Self::read_from(std::io::BufReader::new(f)).map_err(|e| e.context(path.display().to_string()))
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::bf16_encode;

    fn sample() -> TensorTrace {
        let vals: Vec<_> = (0..2 * 3 * 5 * 40).map(|i| bf16_encode(i as f64 * 0.25 - 7.0).unwrap()).collect();
        let i = Tensor::new("conv1.I", Role::I, Phase::Fwd, [2, 3, 5, 40], vals).unwrap();
        let w = Tensor::zeros("conv1.W", Role::W, Phase::Fwd, [4, 3, 3, 3]);
        TensorTrace { tensors: vec![i, w] }
    }

    #[test]
    fn file_roundtrip() {
        let t = sample();
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"FPRT");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 2);
        let back = TensorTrace::read_from(&buf[..]).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.layers(), vec!["conv1".to_string()]);
        assert!(back.find("conv1", Role::W).is_some());
    }

    #[test]
    fn payload_is_whole_containers() {
        let t = TensorTrace { tensors: vec![Tensor::zeros("x.I", Role::I, Phase::Fwd, [1, 33, 1, 1])] };
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        let header = 12 + 2 + 3 + 2 + 16;
        assert_eq!(buf.len(), header + 2 * 1024 * 2);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let mut buf = Vec::new();
        sample().write_to(&mut buf).unwrap();
        assert!(matches!(TensorTrace::read_from(&buf[..buf.len() - 1]), Err(Error::Io(_))));
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(TensorTrace::read_from(&bad[..]), Err(Error::Format(_))));
        // a NaN payload word
        let mut nan = buf.clone();
        let at = 12 + 2 + 7 + 2 + 16;
        nan[at..at + 2].copy_from_slice(&0x7fc0u16.to_le_bytes());
        assert!(TensorTrace::read_from(&nan[..]).is_err());
    }

    #[test]
    fn layer_ids() {
        let t = Tensor::zeros("block2.conv.G", Role::G, Phase::GradI, [1, 1, 1, 1]);
        assert_eq!(t.layer(), "block2.conv");
        let t = Tensor::zeros("fc", Role::W, Phase::Fwd, [1, 1, 1, 1]);
        assert_eq!(t.layer(), "fc");
    }
}
