//! Value and term sparsity, potential speedup and exponent histograms.
//!
//! Sparsity is weighted by how often each value is used. Within one weight or
//! gradient tensor every value is used equally often, so only activations get
//! per-position weights: the number of filter windows covering that pixel,
//! taken from the layer's weight tensor.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Role, Tensor, TensorTrace};
use crate::numerics::terms::{naf_weight, SLOTS};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparsityReport {
    pub name: String,
    pub layer: String,
    pub role: Role,
    pub values: u64,
    pub value_sparsity: f64,
    pub term_sparsity: f64,
    pub raw_value_sparsity: f64,
    pub raw_term_sparsity: f64,
    /// `Σ w`
    pub weight: f64,
    /// `Σ w * terms`
    pub weighted_terms: f64,
    /// Slots over nonzero terms for this tensor alone; `None` if all zero.
    pub potential_speedup: Option<f64>,
}

/// How many output windows cover index `x` of an axis of length `len`
/// under a filter of length `f`.
fn coverage(x: usize, len: usize, f: usize) -> usize {
    if f > len {
        return 0;
    }
    let out = len - f + 1;
    // r in 0..f with 0 <= x - r < out
    let lo = x.saturating_sub(out - 1);
    let hi = x.min(f - 1);
    if hi < lo {
        0
    } else {
        hi - lo + 1
    }
}

fn use_weights(trace: &TensorTrace, t: &Tensor) -> Option<Vec<f64>> {
    if t.role != Role::I {
        return None;
    }
    let w = trace.find(t.layer(), Role::W)?;
    let [_, _, r, s] = w.dims;
    let [n, c, h, ww] = t.dims;
    let ch: Vec<usize> = (0..h).map(|y| coverage(y, h, r)).collect();
    let cw: Vec<usize> = (0..ww).map(|x| coverage(x, ww, s)).collect();
    if ch.iter().all(|&v| v == 0) || cw.iter().all(|&v| v == 0) {
        return None;
    }
    let mut out = Vec::with_capacity(t.len());
    for _ in 0..n * c {
        for &a in &ch {
            for &b in &cw {
                out.push((a * b) as f64);
            }
        }
    }
    Some(out)
}

fn tensor_report(trace: &TensorTrace, t: &Tensor) -> SparsityReport {
    let weights = use_weights(trace, t);
    let slots = SLOTS as f64;
    let (mut w_sum, mut w_zero, mut w_terms) = (0.0, 0.0, 0.0);
    let (mut zeros, mut terms) = (0u64, 0u64);
    for (i, v) in t.data.iter().enumerate() {
        let w = weights.as_ref().map_or(1.0, |ws| ws[i]);
        let k = if v.is_zero() { 0 } else { naf_weight(v.significand()) };
        w_sum += w;
        w_terms += w * k as f64;
        terms += k as u64;
        if v.is_zero() {
            w_zero += w;
            zeros += 1;
        }
    }
    let n = t.len() as f64;
    let ratio = |a: f64, b: f64| if b > 0.0 { a / b } else { 0.0 };
    SparsityReport {
        name: t.name.clone(),
        layer: t.layer().to_string(),
        role: t.role,
        values: t.len() as u64,
        value_sparsity: ratio(w_zero, w_sum),
        term_sparsity: 1.0 - ratio(w_terms, slots * w_sum),
        raw_value_sparsity: ratio(zeros as f64, n),
        raw_term_sparsity: 1.0 - ratio(terms as f64, slots * n),
        weight: w_sum,
        weighted_terms: w_terms,
        potential_speedup: (w_terms > 0.0).then(|| slots * w_sum / w_terms),
    }
}

pub fn analyze_sparsity(trace: &TensorTrace) -> Result<Vec<SparsityReport>> {
    if trace.tensors.iter().all(|t| t.is_empty()) {
        return Err(Error::DegenerateTrace("trace holds no values".into()));
    }
    Ok(crate::exec::map(&trace.tensors, |t| tensor_report(trace, t)))
}

/// Term slots over nonzero terms, use-weighted, across the whole trace.
pub fn potential_speedup(trace: &TensorTrace) -> Result<f64> {
    let reports = analyze_sparsity(trace)?;
    let w: f64 = reports.iter().map(|r| r.weight).sum();
    let terms: f64 = reports.iter().map(|r| r.weighted_terms).sum();
    if terms == 0.0 {
        return Err(Error::DegenerateTrace("no nonzero terms".into()));
    }
    Ok(SLOTS as f64 * w / terms)
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExponentHistogram {
    /// Biased exponent -> count, zeros excluded.
    pub bins: BTreeMap<u8, u64>,
    pub zeros: u64,
}

pub fn exponent_histogram(trace: &TensorTrace, role: Role) -> Result<ExponentHistogram> {
    let mut h = ExponentHistogram::default();
    let mut seen = false;
    for t in trace.tensors.iter().filter(|t| t.role == role) {
        seen |= !t.is_empty();
        for v in &t.data {
            if v.is_zero() {
                h.zeros += 1;
            } else {
                *h.bins.entry(v.exponent()).or_default() += 1;
            }
        }
    }
    if !seen {
        return Err(Error::DegenerateTrace(format!("no {role:?} values")));
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{bf16_encode, Bf16Value};
    use crate::trace::Phase;

    fn trace_of(vals: Vec<Bf16Value>) -> TensorTrace {
        let n = vals.len();
        TensorTrace { tensors: vec![Tensor::new("l.W", Role::W, Phase::Fwd, [1, n, 1, 1], vals).unwrap()] }
    }

    #[test]
    fn all_zero() {
        let t = trace_of(vec![Bf16Value::ZERO; 16]);
        let r = &analyze_sparsity(&t).unwrap()[0];
        assert_eq!((r.value_sparsity, r.term_sparsity), (1.0, 1.0));
        assert!(matches!(potential_speedup(&t), Err(Error::DegenerateTrace(_))));
    }

    #[test]
    fn ones_and_powers_of_two() {
        let t = trace_of(vec![Bf16Value::ONE; 16]);
        let r = &analyze_sparsity(&t).unwrap()[0];
        assert_eq!((r.value_sparsity, r.term_sparsity), (0.0, 7.0 / 8.0));
        let t = trace_of((0..16).map(|i| bf16_encode(2f64.powi(i - 8)).unwrap()).collect());
        assert_eq!(potential_speedup(&t).unwrap(), 8.0);
        // 0xcd has five canonical terms
        let v = Bf16Value::from_parts(false, 127, 0x4d).unwrap();
        assert_eq!(naf_weight(v.significand()), 5);
        assert_eq!(potential_speedup(&trace_of(vec![v; 4])).unwrap(), 1.6);
    }

    #[test]
    fn coverage_counts() {
        // length 5, filter 3 -> outputs 0..3
        let c: Vec<_> = (0..5).map(|x| coverage(x, 5, 3)).collect();
        assert_eq!(c, vec![1, 2, 3, 2, 1]);
        assert_eq!(c.iter().sum::<usize>(), 3 * 3);
        assert_eq!(coverage(0, 2, 3), 0);
        assert_eq!(coverage(0, 4, 1), 1);
    }

    #[test]
    fn activation_weights_favour_the_centre() {
        let mut i = Tensor::zeros("c.I", Role::I, Phase::Fwd, [1, 1, 1, 5]);
        // only the edge pixel is nonzero
        i.data[0] = Bf16Value::ONE;
        let w = Tensor::new("c.W", Role::W, Phase::Fwd, [1, 1, 1, 3], vec![Bf16Value::ONE; 3]).unwrap();
        let t = TensorTrace { tensors: vec![i, w] };
        let r = &analyze_sparsity(&t).unwrap()[0];
        assert_eq!(r.raw_value_sparsity, 0.8);
        assert_eq!(r.value_sparsity, 1.0 - 1.0 / 9.0);
    }

    #[test]
    fn histogram() {
        let mut vals = vec![bf16_encode(3.0).unwrap(); 5];
        vals.push(Bf16Value::ZERO);
        let h = exponent_histogram(&trace_of(vals), Role::W).unwrap();
        assert_eq!(h.bins.len(), 1);
        assert_eq!(h.bins[&128], 5);
        assert_eq!(h.zeros, 1);
        assert!(exponent_histogram(&trace_of(vec![Bf16Value::ONE]), Role::G).is_err());
    }
}
