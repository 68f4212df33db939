//! One processing element: exponent block, term scheduler, shift-and-reduce
//! datapath and accumulation, modelled cycle by cycle.
//!
//! A group of up to `lanes` (A, B) pairs is processed as follows. The
//! exponent block runs once and fixes `e_max` and the per-lane alignment
//! `δe`. Each lane then streams the terms of its A significand, most
//! significant first. A term of power `p` in a lane with offset `δe` sits
//! `k = δe - p` positions below `e_max`. Every cycle the scheduler picks
//! `base = min k` over pending lanes; lanes within `max_delta` of `base` go
//! through their short shifters into the adder tree, the rest stall. The tree
//! output is shifted by `base` and added into the in-group register.
//!
//! Terms with `k > frac_bits` fall below the accumulator window and only
//! feed the sticky bit. With out-of-bound skipping on, a lane whose head term
//! is past `ob_window` drops its remaining terms without spending cycles.

use serde::{Deserialize, Serialize};

use crate::numerics::accumulator::{
    align_to_grid, normalize_round, AccumulatorPolicy, ExtendedAccumulator, SkipMode, ACC_FRAC_BITS,
};
use crate::numerics::bf16::{Bf16Value, EXP_BIAS};
use crate::numerics::reference::product_exponent;
use crate::numerics::rounding::{rne_round, Fixed};
use crate::numerics::terms::{encode, TermSequence, SLOTS};
use crate::{Error, Result};

/// Where bits shifted below the window are rounded.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OperandRounding {
    /// Operands enter the tree exactly; one RNE at accumulation.
    #[default]
    PostSum,
    /// Each lane operand is rounded to `frac_bits + 3` bits before the tree.
    /// Not bit-compatible with the reference MAC.
    PerLane,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PEConfig {
    pub lanes: usize,
    /// Largest per-cycle offset between active lanes (limited shifters).
    pub max_delta: u32,
    pub policy: AccumulatorPolicy,
    /// Terms more than this many positions below `e_max` are out of bounds.
    pub ob_window: u32,
    pub rounding: OperandRounding,
}

impl Default for PEConfig {
    fn default() -> Self {
        PEConfig {
            lanes: 8,
            max_delta: 3,
            policy: AccumulatorPolicy::default(),
            ob_window: 12,
            rounding: OperandRounding::PostSum,
        }
    }
}

impl PEConfig {
    pub fn validate(&self) -> Result<()> {
        self.policy.validate()?;
        if self.lanes == 0 {
            return Err(Error::Config("lanes must be >= 1".into()));
        }
        if self.max_delta > 16 {
            return Err(Error::Config(format!("max_delta {} too large", self.max_delta)));
        }
        if self.ob_window > self.policy.frac_bits {
            return Err(Error::Config(format!(
                "ob_window {} exceeds accumulator width {}",
                self.ob_window, self.policy.frac_bits
            )));
        }
        Ok(())
    }

    /// Set the accumulator width and move the OB threshold with it.
    pub fn with_acc_frac_bits(mut self, frac_bits: u32) -> Self {
        self.policy.frac_bits = frac_bits;
        self.ob_window = frac_bits;
        self
    }

    pub fn with_skip_mode(mut self, mode: SkipMode) -> Self {
        self.policy.skip_mode = mode;
        self
    }
}

/// Output of the exponent block, computed once per group.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExponentSetup {
    /// Biased `max(ABe.., e_acc)`; the accumulator only counts when nonzero.
    pub e_max: i32,
    /// Biased product exponents, `None` for lanes with a zero operand.
    pub product_exponents: Vec<Option<i32>>,
    /// `e_max - ABe` per live lane.
    pub deltas: Vec<Option<u32>>,
    /// Right shift applied to the old accumulator to align it with `e_max`.
    pub acc_shift: u32,
}

impl ExponentSetup {
    pub fn e_max_unbiased(&self) -> i32 {
        self.e_max - EXP_BIAS
    }
}

pub fn exponent_block(a: &[Bf16Value], b: &[Bf16Value], acc: &ExtendedAccumulator) -> Result<ExponentSetup> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!("{} A values vs {} B values", a.len(), b.len())));
    }
    let product_exponents = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| {
            if x.is_zero() || y.is_zero() {
                Ok(None)
            } else {
                product_exponent(x, y).map(Some)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let e_acc = (!acc.is_zero()).then_some(acc.exponent as i32);
    let e_max = product_exponents
        .iter()
        .flatten()
        .copied()
        .chain(e_acc)
        .max()
        .unwrap_or(acc.exponent as i32);
    let deltas = product_exponents
        .iter()
        .map(|abe| abe.map(|e| (e_max - e) as u32))
        .collect();
    Ok(ExponentSetup {
        e_max,
        product_exponents,
        deltas,
        acc_shift: e_acc.map_or(0, |e| (e_max - e) as u32),
    })
}

/// Per-lane state while a group is in flight.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LaneState {
    pub terms: TermSequence,
    /// Index of the head term.
    pub next: usize,
    /// Product sign (As xor Bs).
    pub negative: bool,
    pub bm: u8,
    pub delta: i32,
    /// First term index that may be skipped as out of bounds.
    pub ob_limit: usize,
    pub ob: bool,
}

impl LaneState {
    pub fn done(&self) -> bool {
        self.ob || self.next >= self.terms.len()
    }

    /// Position of the head term below `e_max`.
    pub fn current_k(&self) -> Option<i32> {
        self.terms
            .as_slice()
            .get(self.next)
            .filter(|_| !self.ob)
            .map(|t| self.delta - t.power as i32)
    }

    pub fn remaining(&self) -> usize {
        if self.ob {
            0
        } else {
            self.terms.len().saturating_sub(self.next)
        }
    }

    /// Index of the first term with `k > ob_window`.
    fn first_out_of_bounds(&self, ob_window: u32) -> usize {
        self.terms
            .as_slice()
            .iter()
            .position(|t| self.delta - t.power as i32 > ob_window as i32)
            .unwrap_or(self.terms.len())
    }
}

/// True when the lane's head term may be skipped together with everything
/// after it.
pub fn ob_check(lane: &LaneState, skip_mode: SkipMode) -> bool {
    skip_mode != SkipMode::None && !lane.done() && lane.next >= lane.ob_limit
}

/// One scheduling decision.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CycleSchedule {
    pub base: i32,
    /// (lane, Δ) for every lane issuing this cycle.
    pub active: Vec<(usize, u32)>,
    /// Pending lanes held back by the shifter range.
    pub stalled: Vec<usize>,
}

pub fn schedule_cycle(lanes: &[LaneState], max_delta: u32) -> Option<CycleSchedule> {
    let base = lanes.iter().filter_map(LaneState::current_k).min()?;
    let mut active = Vec::new();
    let mut stalled = Vec::new();
    for (i, lane) in lanes.iter().enumerate() {
        if let Some(k) = lane.current_k() {
            let d = (k - base) as u32;
            if d <= max_delta {
                active.push((i, d));
            } else {
                stalled.push(i);
            }
        }
    }
    Some(CycleSchedule { base, active, stalled })
}

/// Adder-tree output: `value * 2^-frac` relative to the base shifter.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PartialSum {
    pub value: i64,
    pub frac: u32,
    pub sticky: bool,
}

/// Shift each `±Bm` right by its Δ and reduce. Operands carry `max_delta`
/// extra fractional bits so nothing is shifted out.
pub fn shift_reduce(operands: &[(u8, bool, u32)], max_delta: u32) -> PartialSum {
    let value = operands
        .iter()
        .map(|&(bm, negative, d)| {
            debug_assert!(d <= max_delta);
            let v = (bm as i64) << (max_delta - d);
            if negative {
                -v
            } else {
                v
            }
        })
        .sum();
    PartialSum {
        value,
        frac: 7 + max_delta,
        sticky: false,
    }
}

/// Exact in-group accumulation register, anchored at `e_max`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GroupRegister {
    pub sum: i64,
    /// Unbiased weight of the register LSB.
    pub lsb: i32,
    pub sticky: bool,
    /// Unbiased `e_max`.
    pub e_max: i32,
}

impl GroupRegister {
    /// Load the old accumulator, realigned by `acc_shift`.
    pub fn load(acc: &ExtendedAccumulator, setup: &ExponentSetup, policy: &AccumulatorPolicy) -> Self {
        let e_max = setup.e_max_unbiased();
        let lsb = e_max - policy.grid_bits() as i32;
        let mut reg = GroupRegister { sum: 0, lsb, sticky: acc.sticky, e_max };
        if !acc.is_zero() {
            // acc sits acc_shift positions below e_max
            let exp = e_max - setup.acc_shift as i32;
            let (g, lost) = align_to_grid(acc.significand as i64, ACC_FRAC_BITS, exp, lsb);
            reg.sum = g;
            reg.sticky |= lost;
        }
        reg
    }

    /// Add the tree output behind a base shift of `base` positions.
    pub fn accumulate(&mut self, partial: PartialSum, base: i32) {
        let (g, lost) = align_to_grid(partial.value, partial.frac, self.e_max - base, self.lsb);
        self.sum += g;
        self.sticky |= lost || partial.sticky;
    }

    /// Normalise and round to the policy width.
    pub fn finish(&self, policy: &AccumulatorPolicy) -> Result<ExtendedAccumulator> {
        normalize_round(self.sum, self.lsb, self.sticky, policy.frac_bits, (self.e_max + EXP_BIAS) as u8)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeGroupResult {
    pub accumulator: ExtendedAccumulator,
    pub cycles: u64,
    /// Lane-cycles spent issuing a term.
    pub effective: u64,
    pub skipped_zero_terms: u64,
    pub skipped_ob_terms: u64,
    pub stall_shift_range: u64,
    pub stall_no_terms: u64,
}

/// A group after the exponent block, before any term is issued.
#[derive(Clone, Debug)]
pub struct PreparedGroup {
    pub setup: ExponentSetup,
    pub lanes: Vec<LaneState>,
    register: GroupRegister,
    zero_slots: u64,
}

impl PreparedGroup {
    pub fn new(acc: &ExtendedAccumulator, a: &[Bf16Value], b: &[Bf16Value], cfg: &PEConfig) -> Result<Self> {
        if a.len() > cfg.lanes {
            return Err(Error::GeometryMismatch(format!("{} pairs for {} lanes", a.len(), cfg.lanes)));
        }
        let setup = exponent_block(a, b, acc)?;
        let mut zero_slots = 0;
        let lanes = a
            .iter()
            .zip(b)
            .zip(&setup.deltas)
            .map(|((&x, &y), delta)| {
                let (terms, delta) = match delta {
                    Some(d) => (encode(x.significand(), cfg.policy.encoding), *d as i32),
                    None => (TermSequence::EMPTY, 0),
                };
                zero_slots += (SLOTS as u64).saturating_sub(terms.len() as u64);
                let mut lane = LaneState {
                    terms,
                    next: 0,
                    negative: x.is_negative() != y.is_negative(),
                    bm: y.significand(),
                    delta,
                    ob_limit: 0,
                    ob: false,
                };
                lane.ob_limit = lane.first_out_of_bounds(cfg.ob_window);
                lane
            })
            .collect();
        let register = GroupRegister::load(acc, &setup, &cfg.policy);
        Ok(PreparedGroup { setup, lanes, register, zero_slots })
    }

    /// Per-lane first skippable term index, as signalled to the term encoder.
    pub fn ob_limits(&self) -> Vec<usize> {
        self.lanes.iter().map(|l| l.ob_limit).collect()
    }

    /// Replace the skip points, e.g. with the column-wide agreement.
    pub fn set_ob_limits(&mut self, limits: &[usize]) {
        for (lane, &l) in self.lanes.iter_mut().zip(limits) {
            lane.ob_limit = l;
        }
    }

    pub fn run(self, cfg: &PEConfig) -> Result<PeGroupResult> {
        self.run_inner(cfg, None)
    }

    pub fn run_traced(self, cfg: &PEConfig) -> Result<(PeGroupResult, Vec<CycleSchedule>)> {
        let mut trace = Vec::new();
        let r = self.run_inner(cfg, Some(&mut trace))?;
        Ok((r, trace))
    }

    fn run_inner(mut self, cfg: &PEConfig, mut trace: Option<&mut Vec<CycleSchedule>>) -> Result<PeGroupResult> {
        let policy = &cfg.policy;
        let lanes_total = cfg.lanes as u64;
        let window = policy.frac_bits as i32;
        let mut res = PeGroupResult {
            skipped_zero_terms: self.zero_slots,
            ..Default::default()
        };
        let mut reg = self.register;
        loop {
            for lane in self.lanes.iter_mut() {
                if ob_check(lane, policy.skip_mode) {
                    res.skipped_ob_terms += lane.remaining() as u64;
                    if policy.skip_mode == SkipMode::ObExact {
                        reg.sticky = true;
                    }
                    lane.ob = true;
                }
            }
            let Some(sched) = schedule_cycle(&self.lanes, cfg.max_delta) else {
                break;
            };
            res.cycles += 1;
            res.effective += sched.active.len() as u64;
            res.stall_shift_range += sched.stalled.len() as u64;
            res.stall_no_terms += lanes_total - (sched.active.len() + sched.stalled.len()) as u64;

            let mut operands = Vec::with_capacity(sched.active.len());
            for &(i, d) in &sched.active {
                let lane = &mut self.lanes[i];
                let term = lane.terms.as_slice()[lane.next];
                lane.next += 1;
                if sched.base + d as i32 > window {
                    // whole term below the accumulator window
                    reg.sticky = true;
                    continue;
                }
                operands.push((lane.bm, lane.negative != term.negative, d));
            }
            match cfg.rounding {
                OperandRounding::PostSum => {
                    let partial = shift_reduce(&operands, cfg.max_delta);
                    reg.accumulate(partial, sched.base);
                }
                OperandRounding::PerLane => {
                    for op in &operands {
                        let mut one = GroupRegister { sum: 0, ..reg };
                        one.accumulate(shift_reduce(&[*op], cfg.max_delta), sched.base);
                        let bits = reg.e_max - reg.lsb;
                        let r = rne_round(Fixed::new(one.sum, bits as u32), policy.frac_bits + 3, false);
                        let (g, _) = align_to_grid(r.value.raw, policy.frac_bits + 3, 0, -bits);
                        reg.sum += g;
                        reg.sticky |= r.inexact;
                    }
                }
            }
            if let Some(t) = trace.as_deref_mut() {
                t.push(sched);
            }
        }
        if res.cycles == 0 {
            // the exponent block alone still occupies one cycle
            res.cycles = 1;
            res.stall_no_terms += lanes_total;
        }
        res.accumulator = reg.finish(policy)?;
        Ok(res)
    }
}

/// Process one group of pairs through a single PE.
pub fn pe_process_group(
    acc: ExtendedAccumulator,
    a: &[Bf16Value],
    b: &[Bf16Value],
    cfg: &PEConfig,
) -> Result<PeGroupResult> {
    PreparedGroup::new(&acc, a, b, cfg)?.run(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::bf16::bf16_encode;
    use crate::numerics::reference::reference_mac_group;
    use crate::numerics::terms::TermEncoding;

    fn v(x: f64) -> Bf16Value {
        bf16_encode(x).unwrap()
    }

    fn two_lane_pairs() -> ([Bf16Value; 2], [Bf16Value; 2]) {
        (
            [v(4.0 * 1.8125), v(2.0 * 1.6875)],
            [v(8.0 * 1.1875), v(2.0 * 1.625)],
        )
    }

    fn two_lane_cfg() -> PEConfig {
        let mut cfg = PEConfig { lanes: 2, ..Default::default() };
        cfg.policy.encoding = TermEncoding::Binary;
        cfg
    }

    #[test]
    fn exponent_block_two_lane() {
        let (a, b) = two_lane_pairs();
        let s = exponent_block(&a, &b, &ExtendedAccumulator::ZERO).unwrap();
        let abe: Vec<i32> = s.product_exponents.iter().map(|e| e.unwrap() - EXP_BIAS).collect();
        assert_eq!(abe, vec![5, 2]);
        assert_eq!(s.e_max_unbiased(), 5);
        assert_eq!(s.deltas, vec![Some(0), Some(3)]);
        assert_eq!(s.acc_shift, 0);
    }

    #[test]
    fn exponent_block_accumulator_dominates() {
        let acc = ExtendedAccumulator { exponent: 150, significand: 4096, sticky: false };
        let z = [Bf16Value::ZERO; 8];
        let s = exponent_block(&z, &z, &acc).unwrap();
        assert_eq!((s.e_max, s.acc_shift), (150, 0));
    }

    #[test]
    fn exponent_block_overflow() {
        let r = exponent_block(&[v(1e30)], &[v(1e30)], &ExtendedAccumulator::ZERO);
        assert!(matches!(r, Err(Error::ExponentOutOfRange(_))));
    }

    #[test]
    fn two_lane_schedule_without_skipping() {
        let (a, b) = two_lane_pairs();
        let cfg = two_lane_cfg().with_skip_mode(SkipMode::None);
        let (r, trace) = PreparedGroup::new(&ExtendedAccumulator::ZERO, &a, &b, &cfg)
            .unwrap()
            .run_traced(&cfg)
            .unwrap();
        assert_eq!(r.cycles, 5);
        let active: Vec<Vec<usize>> = trace.iter().map(|c| c.active.iter().map(|x| x.0).collect()).collect();
        assert_eq!(active, vec![vec![0, 1], vec![0, 1], vec![0], vec![0, 1], vec![1]]);
        assert_eq!(trace[2].stalled, vec![1]);
        assert_eq!(trace[2].base, 2);
        assert_eq!(trace[0].base, 0);
        assert_eq!(r.stall_shift_range, 1);
        assert_eq!(r.stall_no_terms, 1);
        assert_eq!(r.effective, 8);
    }

    #[test]
    fn two_lane_schedule_with_six_bit_accumulator() {
        let (a, b) = two_lane_pairs();
        let cfg = two_lane_cfg().with_acc_frac_bits(6).with_skip_mode(SkipMode::ObExact);
        let r = pe_process_group(ExtendedAccumulator::ZERO, &a, &b, &cfg).unwrap();
        assert_eq!(r.cycles, 4);
        assert_eq!(r.skipped_ob_terms, 1);
        let want = reference_mac_group(ExtendedAccumulator::ZERO, &a, &b, &cfg.policy).unwrap();
        assert_eq!(r.accumulator, want);
    }

    #[test]
    fn ob_boundary_is_inclusive() {
        // lane 1 head at k = ob_window must still be processed
        let cfg = PEConfig { lanes: 2, ob_window: 6, ..Default::default() }.with_acc_frac_bits(6);
        let a = [v(1.0), v(1.0)];
        let b = [v(64.0), v(1.0)];
        let g = PreparedGroup::new(&ExtendedAccumulator::ZERO, &a, &b, &cfg).unwrap();
        assert_eq!(g.lanes[1].current_k(), Some(6));
        assert!(!ob_check(&g.lanes[1], SkipMode::ObExact));
        let r = g.run(&cfg).unwrap();
        assert_eq!(r.skipped_ob_terms, 0);
        let b = [v(128.0), v(1.0)];
        let g = PreparedGroup::new(&ExtendedAccumulator::ZERO, &a, &b, &cfg).unwrap();
        assert!(ob_check(&g.lanes[1], SkipMode::ObExact));
        assert!(!ob_check(&g.lanes[1], SkipMode::None));
    }

    #[test]
    fn powers_of_two_take_one_cycle() {
        let cfg = PEConfig::default();
        let a: Vec<_> = (0..8).map(|i| v(2f64.powi(i - 3))).collect();
        let b: Vec<_> = (0..8).map(|i| v(1.0 + i as f64 / 16.0)).collect();
        let r = pe_process_group(ExtendedAccumulator::ZERO, &a, &b, &cfg.with_skip_mode(SkipMode::None)).unwrap();
        // offsets span 0..7 > max_delta, so this takes more than one cycle
        assert!(r.cycles > 1);
        let a: Vec<_> = (0..8).map(|i| v(if i % 2 == 0 { 1.0 } else { -2.0 })).collect();
        let b: Vec<_> = (0..8).map(|_| v(1.5)).collect();
        let r = pe_process_group(ExtendedAccumulator::ZERO, &a, &b, &cfg).unwrap();
        assert_eq!(r.cycles, 1);
        assert_eq!(r.effective, 8);
        assert_eq!(r.skipped_zero_terms, 8 * 7);
    }

    #[test]
    fn zero_group_takes_one_cycle() {
        let z = [Bf16Value::ZERO; 8];
        let r = pe_process_group(ExtendedAccumulator::ZERO, &z, &z, &PEConfig::default()).unwrap();
        assert_eq!(r.cycles, 1);
        assert_eq!(r.stall_no_terms, 8);
        assert_eq!(r.skipped_zero_terms, 64);
        assert!(r.accumulator.is_zero());
    }

    #[test]
    fn shift_reduce_basics() {
        let p = shift_reduce(&[(0b1001_1000, false, 0)], 3);
        assert_eq!((p.value, p.frac), (0b1001_1000 << 3, 10));
        let p = shift_reduce(&[(0x80, false, 0), (0x80, true, 0)], 3);
        assert_eq!(p.value, 0);
    }

    #[test]
    fn accumulate_first_deposit_and_carry() {
        let policy = AccumulatorPolicy::default();
        let setup = ExponentSetup { e_max: 5 + EXP_BIAS, product_exponents: vec![], deltas: vec![], acc_shift: 0 };
        let mut reg = GroupRegister::load(&ExtendedAccumulator::ZERO, &setup, &policy);
        reg.accumulate(shift_reduce(&[(0b1001_1000, false, 0)], 3), 0);
        let acc = reg.finish(&policy).unwrap();
        assert_eq!(acc.to_f64(), 32.0 * 1.1875);
        // 2^5 * 1.0 + 2^5 * 1.0 carries into 2^6
        let start = ExtendedAccumulator::from_bf16(v(32.0));
        let mut reg = GroupRegister::load(&start, &setup, &policy);
        reg.accumulate(shift_reduce(&[(0x80, false, 0)], 3), 0);
        let acc = reg.finish(&policy).unwrap();
        assert_eq!((acc.unbiased_exponent(), acc.significand), (6, 1 << 12));
        // zero partial leaves the value alone
        let mut reg = GroupRegister::load(&start, &setup, &policy);
        reg.accumulate(shift_reduce(&[], 3), 2);
        assert_eq!(reg.finish(&policy).unwrap(), start);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn value() -> impl Strategy<Value = Bf16Value> {
            prop_oneof![
                1 => Just(Bf16Value::ZERO),
                6 => (any::<bool>(), 100u8..150, 0u8..128)
                    .prop_map(|(s, e, f)| Bf16Value::from_parts(s, e, f).unwrap()),
            ]
        }

        fn group() -> impl Strategy<Value = (Vec<Bf16Value>, Vec<Bf16Value>)> {
            (1usize..=8).prop_flat_map(|n| (prop::collection::vec(value(), n), prop::collection::vec(value(), n)))
        }

        proptest! {
            #[test]
            fn matches_reference(
                (a, b) in group(),
                acc in value(),
                frac in 4u32..=12,
                max_delta in 0u32..=4,
                binary in any::<bool>(),
            ) {
                let mut cfg = PEConfig { max_delta, ..Default::default() }.with_acc_frac_bits(frac);
                if binary {
                    cfg.policy.encoding = TermEncoding::Binary;
                }
                let acc = ExtendedAccumulator::from_bf16(acc);
                let want = reference_mac_group(acc, &a, &b, &cfg.policy).unwrap();
                let none = pe_process_group(acc, &a, &b, &cfg.with_skip_mode(SkipMode::None)).unwrap();
                let exact = pe_process_group(acc, &a, &b, &cfg.with_skip_mode(SkipMode::ObExact)).unwrap();
                let dropped = pe_process_group(acc, &a, &b, &cfg.with_skip_mode(SkipMode::ObPaper)).unwrap();
                prop_assert_eq!(none.accumulator, want);
                prop_assert_eq!(exact.accumulator, want);
                prop_assert!(exact.cycles <= none.cycles);
                prop_assert_eq!(exact.cycles, dropped.cycles);
                prop_assert_eq!(none.skipped_ob_terms, 0);
                for r in [none, exact, dropped] {
                    prop_assert_eq!(
                        r.effective + r.stall_shift_range + r.stall_no_terms,
                        r.cycles * cfg.lanes as u64
                    );
                }
                // every issued term is one effective lane-cycle
                let terms: u64 = a.iter().zip(&b)
                    .filter(|(x, y)| !x.is_zero() && !y.is_zero())
                    .map(|(x, _)| encode(x.significand(), cfg.policy.encoding).len() as u64)
                    .sum();
                prop_assert_eq!(none.effective, terms);
                prop_assert_eq!(exact.effective + exact.skipped_ob_terms, terms);
                let longest = a.iter().zip(&b)
                    .filter(|(x, y)| !x.is_zero() && !y.is_zero())
                    .map(|(x, _)| encode(x.significand(), cfg.policy.encoding).len() as u64)
                    .max().unwrap_or(1).max(1);
                prop_assert!(none.cycles >= longest);
            }

            #[test]
            fn wider_shifters_never_slow_down((a, b) in group(), d in 0u32..4) {
                let cfg = PEConfig::default().with_skip_mode(SkipMode::None);
                let lo = pe_process_group(ExtendedAccumulator::ZERO, &a, &b, &PEConfig { max_delta: d, ..cfg }).unwrap();
                let hi = pe_process_group(ExtendedAccumulator::ZERO, &a, &b, &PEConfig { max_delta: d + 1, ..cfg }).unwrap();
                prop_assert!(hi.cycles <= lo.cycles);
                prop_assert_eq!(hi.accumulator, lo.accumulator);
            }

            #[test]
            fn per_lane_rounding_stays_close((a, b) in group()) {
                let cfg = PEConfig::default();
                let post = pe_process_group(ExtendedAccumulator::ZERO, &a, &b, &cfg).unwrap();
                let lane = pe_process_group(
                    ExtendedAccumulator::ZERO, &a, &b,
                    &PEConfig { rounding: OperandRounding::PerLane, ..cfg },
                ).unwrap();
                prop_assert_eq!(post.cycles, lane.cycles);
                let mag: f64 = a.iter().zip(&b).map(|(x, y)| (x.to_f64() * y.to_f64()).abs()).sum();
                let err = (post.accumulator.to_f64() - lane.accumulator.to_f64()).abs();
                prop_assert!(err <= mag * 2f64.powi(-12), "err {} mag {}", err, mag);
            }
        }
    }
}
