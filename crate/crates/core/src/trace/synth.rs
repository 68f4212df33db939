//! Seeded synthetic traces with exact zero and term-count statistics.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Phase, Role, Tensor, TensorTrace};
use crate::numerics::terms::naf_weight;
use crate::numerics::Bf16Value;
use crate::numerics::bf16::EXP_BIAS;
use crate::{Error, Result};

/// One convolution layer; fully connected layers use `h = w = r = s = 1`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    #[serde(default = "one")]
    pub r: usize,
    #[serde(default = "one")]
    pub s: usize,
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub layers: Vec<LayerSpec>,
    /// Fraction of exact zeros in every tensor.
    pub zero_frac: f64,
    /// Relative frequency of 1..=5 canonical terms among nonzero values.
    pub term_dist: Vec<f64>,
    /// Unbiased exponent distribution (rounded, clamped to +-60).
    pub exp_mean: f64,
    pub exp_std: f64,
    pub roles: Vec<Role>,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            layers: vec![LayerSpec { name: "conv1".into(), n: 1, c: 16, h: 8, w: 8, k: 16, r: 3, s: 3 }],
            zero_frac: 0.4,
            term_dist: vec![1.0; 5],
            exp_mean: -3.0,
            exp_std: 2.0,
            roles: vec![Role::I, Role::W, Role::G],
            seed: 1,
        }
    }
}

const EXP_CLAMP: i32 = 60;

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InfeasibleSpec(m));
        if !(0.0..=1.0).contains(&self.zero_frac) {
            return bad(format!("zero_frac {} outside [0, 1]", self.zero_frac));
        }
        if self.term_dist.is_empty() || self.term_dist.len() > 5 {
            return bad("term_dist needs 1..=5 entries".into());
        }
        if self.term_dist.iter().any(|p| !p.is_finite() || *p < 0.0) || self.term_dist.iter().sum::<f64>() <= 0.0 {
            return bad("term_dist must be non-negative with a positive sum".into());
        }
        if !self.exp_mean.is_finite() || !self.exp_std.is_finite() || self.exp_std < 0.0 {
            return bad("exponent distribution must be finite with std >= 0".into());
        }
        for l in &self.layers {
            if [l.n, l.c, l.h, l.w, l.k, l.r, l.s].contains(&0) {
                return bad(format!("layer {}: zero dimension", l.name));
            }
            if l.r > l.h || l.s > l.w {
                return bad(format!("layer {}: filter larger than input", l.name));
            }
        }
        Ok(())
    }
}

/// Split `total` into parts proportional to `weights`, largest remainder.
pub(crate) fn allocate(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let quotas: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut parts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut rest = total - parts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    // stable: ties go to the lower term count
    order.sort_by(|&a, &b| (quotas[b] - quotas[b].floor()).total_cmp(&(quotas[a] - quotas[a].floor())));
    for &i in order.iter().cycle() {
        if rest == 0 {
            break;
        }
        if weights[i] > 0.0 {
            parts[i] += 1;
            rest -= 1;
        }
    }
    parts
}

fn patterns_by_weight() -> Vec<Vec<u8>> {
    let mut out = vec![Vec::new(); 6];
    for s in 0x80..=0xffu8 {
        out[naf_weight(s) as usize].push(s);
    }
    out
}

fn synth_tensor(spec: &SynthSpec, name: String, role: Role, phase: Phase, dims: [usize; 4], seed: u64) -> Result<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len: usize = dims.iter().product();
    let zeros = (spec.zero_frac * len as f64).round() as usize;
    let counts = allocate(len - zeros, &spec.term_dist);
    let pats = patterns_by_weight();
    let normal = Normal::new(spec.exp_mean, spec.exp_std).map_err(|e| Error::InfeasibleSpec(e.to_string()))?;

    let mut data = Vec::with_capacity(len);
    data.resize(zeros, Bf16Value::ZERO);
    for (t, &count) in counts.iter().enumerate() {
        let choices = &pats[t + 1];
        for _ in 0..count {
            let sig = *choices.choose(&mut rng).expect("every weight 1..=5 has patterns");
            let e = (normal.sample(&mut rng).round() as i32).clamp(-EXP_CLAMP, EXP_CLAMP);
            data.push(Bf16Value::from_parts(rng.gen(), (e + EXP_BIAS) as u8, sig & 0x7f)?);
        }
    }
    data.shuffle(&mut rng);
    Tensor::new(name, role, phase, dims, data)
}

/// Build I, W and G tensors for every layer in the spec.
pub fn synth_trace(spec: &SynthSpec) -> Result<TensorTrace> {
    spec.validate()?;
    let mut jobs = Vec::new();
    for l in &spec.layers {
        let (ho, wo) = (l.h - l.r + 1, l.w - l.s + 1);
        for &role in &spec.roles {
            let (dims, phase) = match role {
                Role::I => ([l.n, l.c, l.h, l.w], Phase::Fwd),
                Role::W => ([l.k, l.c, l.r, l.s], Phase::Fwd),
                Role::G => ([l.n, l.k, ho, wo], Phase::GradI),
            };
            jobs.push((format!("{}.{role:?}", l.name), role, phase, dims));
        }
    }
    let tensors = crate::exec::map_range(jobs.len(), |i| {
        let (name, role, phase, dims) = jobs[i].clone();
        let seed = spec.seed.wrapping_add((i as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        synth_tensor(spec, name, role, phase, dims, seed)
    });
    Ok(TensorTrace { tensors: tensors.into_iter().collect::<Result<_>>()? })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{analyze_sparsity, potential_speedup};

    #[test]
    fn largest_remainder() {
        assert_eq!(allocate(10, &[1.0, 1.0, 1.0]), vec![4, 3, 3]);
        assert_eq!(allocate(7, &[0.0, 1.0]), vec![0, 7]);
        assert_eq!(allocate(0, &[1.0; 5]), vec![0; 5]);
        let p = allocate(1001, &[0.1, 0.2, 0.3, 0.4]);
        assert_eq!(p.iter().sum::<usize>(), 1001);
    }

    #[test]
    fn exact_statistics() {
        let spec = SynthSpec { zero_frac: 0.4, ..Default::default() };
        let t = synth_trace(&spec).unwrap();
        for r in analyze_sparsity(&t).unwrap() {
            let want = (0.4 * r.values as f64).round() / r.values as f64;
            assert_eq!(r.raw_value_sparsity, want, "{}", r.name);
            if r.role != Role::I {
                assert_eq!(r.value_sparsity, want);
            }
        }
        let ones = SynthSpec { term_dist: vec![1.0], zero_frac: 0.0, ..Default::default() };
        assert_eq!(potential_speedup(&synth_trace(&ones).unwrap()).unwrap(), 8.0);
    }

    #[test]
    fn deterministic() {
        let spec = SynthSpec::default();
        let (mut a, mut b) = (Vec::new(), Vec::new());
        synth_trace(&spec).unwrap().write_to(&mut a).unwrap();
        synth_trace(&spec).unwrap().write_to(&mut b).unwrap();
        assert_eq!(a, b);
        let other = SynthSpec { seed: 2, ..spec };
        let mut c = Vec::new();
        synth_trace(&other).unwrap().write_to(&mut c).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn infeasible() {
        for spec in [
            SynthSpec { zero_frac: 1.5, ..Default::default() },
            SynthSpec { term_dist: vec![0.0; 3], ..Default::default() },
            SynthSpec { term_dist: vec![1.0; 6], ..Default::default() },
            SynthSpec { exp_std: -1.0, ..Default::default() },
        ] {
            assert!(matches!(synth_trace(&spec), Err(Error::InfeasibleSpec(_))));
        }
        let mut spec = SynthSpec::default();
        spec.layers[0].r = 20;
        assert!(synth_trace(&spec).is_err());
    }

    #[test]
    fn all_zero() {
        let spec = SynthSpec { zero_frac: 1.0, ..Default::default() };
        let t = synth_trace(&spec).unwrap();
        assert!(t.tensors.iter().all(|t| t.data.iter().all(|v| v.is_zero())));
    }
}
