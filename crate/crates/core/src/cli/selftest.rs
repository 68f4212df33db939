//! Built-in checks: the two-lane schedule example, PE against the reference
//! MAC on random groups, the NAF table, and codec round trips.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{compress_group, decode_groups, decompress_group, encode_groups, GROUP};
use crate::numerics::bf16::{bf16_encode, EXP_BIAS};
use crate::numerics::terms::{canonical_encode, TermEncoding};
use crate::numerics::{reference_mac_group, AccumulatorPolicy, Bf16Value, ExtendedAccumulator, SkipMode};
use crate::pe::{pe_process_group, PEConfig};
use crate::{exec, Result};

/// One random MAC group: accumulator, A and B values, and the policy to use.
#[derive(Clone, Debug)]
pub struct RandomGroup {
    pub acc: ExtendedAccumulator,
    pub a: Vec<Bf16Value>,
    pub b: Vec<Bf16Value>,
    pub policy: AccumulatorPolicy,
}

fn random_value(rng: &mut impl Rng, exp: i32) -> Bf16Value {
    Bf16Value::from_parts(rng.gen(), exp as u8, rng.gen_range(0..128)).expect("exponent in 1..=254")
}

/// A group whose product exponents sit around a centre drawn from the whole
/// biased range. One group in sixteen draws every exponent independently, so
/// out-of-range products are exercised too.
pub fn random_group(rng: &mut impl Rng, lanes: usize) -> RandomGroup {
    let wild = rng.gen_ratio(1, 16);
    let centre: i32 = rng.gen_range(1..=254);
    let spread: i32 = *[0, 2, 6, 14, 24].get(rng.gen_range(0..5)).unwrap();
    let mut a = Vec::with_capacity(lanes);
    let mut b = Vec::with_capacity(lanes);
    for _ in 0..lanes {
        if rng.gen_ratio(1, 8) {
            a.push(Bf16Value::ZERO);
            let e = rng.gen_range(1..=254);
            b.push(random_value(rng, e));
            continue;
        }
        let (ea, eb) = if wild {
            (rng.gen_range(1..=254), rng.gen_range(1..=254))
        } else {
            let pe = (centre + rng.gen_range(-spread..=spread)).clamp(1, 254);
            // Ae + Be - 127 = pe with both in 1..=254
            let lo = (pe + EXP_BIAS - 254).max(1);
            let hi = (pe + EXP_BIAS - 1).min(254);
            let ea = rng.gen_range(lo..=hi);
            (ea, pe + EXP_BIAS - ea)
        };
        a.push(random_value(rng, ea));
        b.push(random_value(rng, eb));
    }
    let frac_bits = if rng.gen_bool(0.5) { 12 } else { rng.gen_range(1..=12) };
    let acc = if rng.gen_ratio(1, 4) {
        ExtendedAccumulator::ZERO
    } else {
        let e = (centre + rng.gen_range(-spread - 2..=spread + 2)).clamp(1, 254);
        let mag = (rng.gen_range(4096..8192) >> (12 - frac_bits)) << (12 - frac_bits);
        let sig = if rng.gen() { -mag } else { mag };
        ExtendedAccumulator { exponent: e as u8, significand: sig, sticky: rng.gen_ratio(1, 4) }
    };
    let encoding = if rng.gen_ratio(1, 8) { TermEncoding::Binary } else { TermEncoding::Canonical };
    let policy = AccumulatorPolicy { frac_bits, encoding, ..Default::default() };
    RandomGroup { acc, a, b, policy }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleStats {
    pub groups: u64,
    /// Groups where PE and reference both returned the same value.
    pub matched_values: u64,
    /// Groups where both reported the same error kind.
    pub matched_errors: u64,
    pub mismatches: u64,
}

fn same_outcome(x: &Result<ExtendedAccumulator>, y: &Result<ExtendedAccumulator>) -> Option<bool> {
    match (x, y) {
        (Ok(p), Ok(q)) => (p == q).then_some(true),
        (Err(e), Err(f)) => (std::mem::discriminant(e.root()) == std::mem::discriminant(f.root())).then_some(false),
        _ => None,
    }
}

/// Compare the PE in NONE and OB_EXACT modes with the reference on `groups`
/// random groups.
pub fn oracle_suite(groups: u64, seed: u64) -> OracleStats {
    const CHUNK: u64 = 4096;
    let chunks = groups.div_ceil(CHUNK) as usize;
    let parts = exec::map_range(chunks, |ci| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (ci as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let n = CHUNK.min(groups - ci as u64 * CHUNK);
        let mut s = OracleStats::default();
        for _ in 0..n {
            let g = random_group(&mut rng, 8);
            let want = reference_mac_group(g.acc, &g.a, &g.b, &g.policy);
            let mut ok = Some(true);
            let mut value = true;
            for mode in [SkipMode::None, SkipMode::ObExact] {
                let cfg = PEConfig { policy: g.policy.with_skip_mode(mode), ob_window: g.policy.frac_bits, ..Default::default() };
                let got = pe_process_group(g.acc, &g.a, &g.b, &cfg).map(|r| r.accumulator);
                match same_outcome(&got, &want) {
                    Some(v) => value &= v,
                    None => ok = None,
                }
            }
            s.groups += 1;
            match ok {
                None => s.mismatches += 1,
                Some(_) if value => s.matched_values += 1,
                Some(_) => s.matched_errors += 1,
            }
        }
        s
    });
    parts.into_iter().fold(OracleStats::default(), |mut t, s| {
        t.groups += s.groups;
        t.matched_values += s.matched_values;
        t.matched_errors += s.matched_errors;
        t.mismatches += s.mismatches;
        t
    })
}

/// Cycles of the two-lane example without skipping and with a 6-bit
/// accumulator and skipping.
pub fn two_lane_cycles() -> Result<(u64, u64)> {
    let a = [bf16_encode(4.0 * 1.8125)?, bf16_encode(2.0 * 1.6875)?];
    let b = [bf16_encode(8.0 * 1.1875)?, bf16_encode(2.0 * 1.625)?];
    let mut cfg = PEConfig { lanes: 2, ..Default::default() };
    cfg.policy.encoding = TermEncoding::Binary;
    let off = pe_process_group(ExtendedAccumulator::ZERO, &a, &b, &cfg.with_skip_mode(SkipMode::None))?;
    let on = pe_process_group(
        ExtendedAccumulator::ZERO,
        &a,
        &b,
        &cfg.with_acc_frac_bits(6).with_skip_mode(SkipMode::ObExact),
    )?;
    Ok((off.cycles, on.cycles))
}

/// Random codec groups with a mix of narrow and escaped exponent spreads.
pub fn codec_suite(groups: u64, seed: u64) -> Result<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bad = 0;
    let mut batch = Vec::new();
    let mut originals = Vec::new();
    for _ in 0..groups {
        let spread = 1 << rng.gen_range(0..9);
        let base: i32 = rng.gen_range(1..=254);
        let vals: [Bf16Value; GROUP] = std::array::from_fn(|_| {
            let e = (base + rng.gen_range(-spread..spread)).clamp(0, 254);
            if e == 0 {
                Bf16Value::ZERO
            } else {
                random_value(&mut rng, e)
            }
        });
        let g = compress_group(&vals);
        if decompress_group(&g)? != vals {
            bad += 1;
        }
        batch.push(g);
        originals.push(vals);
    }
    let bytes = encode_groups(&batch);
    for (g, vals) in decode_groups(&bytes, batch.len())?.iter().zip(&originals) {
        if decompress_group(g)? != *vals {
            bad += 1;
        }
    }
    Ok(bad)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

pub fn run(groups: u64, seed: u64) -> Vec<Check> {
    let mut out = Vec::new();
    let mut push = |name: &str, pass: bool, detail: String| out.push(Check { name: name.into(), pass, detail });
    match two_lane_cycles() {
        Ok((off, on)) => push("two-lane", off == 5 && on == 4, format!("{off} cycles without skipping, {on} with")),
        Err(e) => push("two-lane", false, e.to_string()),
    }
    let s = oracle_suite(groups, seed);
    push(
        "oracle",
        s.mismatches == 0,
        format!("{} groups, {} mismatches, {} agreed errors", s.groups, s.mismatches, s.matched_errors),
    );
    let naf_ok = (0x80..=0xffu8).all(|x| {
        let t = canonical_encode(x);
        let p: Vec<i8> = t.as_slice().iter().map(|t| t.power).collect();
        t.value() == x as i32 && t.len() <= 5 && p.windows(2).all(|w| w[0] - w[1] >= 2)
    });
    push("naf", naf_ok, "128 significands".into());
    match codec_suite(groups.min(100_000), seed) {
        Ok(bad) => push("codec", bad == 0, format!("{} groups, {bad} failures", groups.min(100_000))),
        Err(e) => push("codec", false, e.to_string()),
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_selftest_passes() {
        for c in run(2000, 7) {
            assert!(c.pass, "{}: {}", c.name, c.detail);
        }
    }

    #[test]
    fn generator_covers_the_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (mut lo, mut hi) = (255u8, 0u8);
        for _ in 0..2000 {
            for v in random_group(&mut rng, 8).a {
                if !v.is_zero() {
                    lo = lo.min(v.exponent());
                    hi = hi.max(v.exponent());
                }
            }
        }
        assert!(lo <= 2 && hi >= 253, "{lo}..{hi}");
    }
}
