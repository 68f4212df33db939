//! A grid of PEs: A streams broadcast down columns, B streams across rows.
//!
//! Timing rules, per pass of the workload over the grid:
//!
//! * Each exponent block serves `exp_share` consecutive rows of one column,
//!   one setup per cycle, round-robin. A PE latches at most one setup ahead
//!   of the group it is running; the setup can feed the PE in the same cycle.
//! * All PEs of a column share the A term encoders, so a column starts group
//!   `g` only once all its PEs have finished `g - 1`. Lanes of one column
//!   also share out-of-bound decisions: a term is skipped only when every PE
//!   in the column finds it out of bounds.
//! * Per-row B buffers hold `buffer_depth` groups beyond the slowest column,
//!   so no column may set up group `g` before every column has finished
//!   `g - buffer_depth`.
//!
//! The simulator steps cycle by cycle and classifies every idle PE-cycle as an
//! exponent-block stall or an inter-PE stall (column sync, empty buffer, or
//! finished early).

mod mapping;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::numerics::reference::reference_mac_group;
use crate::numerics::{Bf16Value, ChunkedAccumulator, SkipMode};
use crate::pe::{PEConfig, PreparedGroup};
use crate::{exec, Error, Result};

pub use mapping::{map_workload, LayerTensors, SerialSide, Workload};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TileConfig {
    pub rows: usize,
    pub cols: usize,
    pub lanes: usize,
    /// PEs sharing one exponent block.
    pub exp_share: usize,
    /// Groups a column may run ahead of the slowest one.
    pub buffer_depth: usize,
    pub pe: PEConfig,
    pub tiles: usize,
}

impl Default for TileConfig {
    fn default() -> Self {
        TileConfig {
            rows: 8,
            cols: 8,
            lanes: 8,
            exp_share: 2,
            buffer_depth: 1,
            pe: PEConfig::default(),
            tiles: 36,
        }
    }
}

impl TileConfig {
    /// Bit-parallel baseline at the same geometry.
    pub fn baseline() -> Self {
        TileConfig { tiles: 8, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("rows", self.rows),
            ("cols", self.cols),
            ("lanes", self.lanes),
            ("exp_share", self.exp_share),
            ("buffer_depth", self.buffer_depth),
            ("tiles", self.tiles),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        if self.rows % self.exp_share != 0 {
            return Err(Error::Config(format!(
                "rows {} not divisible by exp_share {}",
                self.rows, self.exp_share
            )));
        }
        self.pe_config().validate()
    }

    pub fn pe_config(&self) -> PEConfig {
        PEConfig { lanes: self.lanes, ..self.pe }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CycleReport {
    pub total_cycles: u64,
    /// Lane-cycles that issued a term.
    pub effective: u64,
    pub stall_no_terms: u64,
    pub stall_shift_range: u64,
    pub stall_exponent: u64,
    pub stall_inter_pe: u64,
    pub skipped_zero_terms: u64,
    pub skipped_ob_terms: u64,
    /// Lanes in the grid; every cycle has this many lane-slots.
    pub lane_slots: u64,
    pub groups: u64,
    pub passes: u64,
    /// Largest distance, in groups, between a starting column and the
    /// slowest column's completed count.
    pub max_column_lead: u64,
    pub per_phase: BTreeMap<String, u64>,
}

impl CycleReport {
    pub fn stalls(&self) -> u64 {
        self.stall_no_terms + self.stall_shift_range + self.stall_exponent + self.stall_inter_pe
    }

    /// `effective + stalls == lanes * rows * cols * total_cycles`
    pub fn identity_holds(&self) -> bool {
        self.effective + self.stalls() == self.lane_slots * self.total_cycles
    }

    /// Append a report of a later run on the same grid.
    pub fn merge(&mut self, o: &CycleReport) {
        if self.lane_slots == 0 {
            self.lane_slots = o.lane_slots;
        }
        debug_assert!(o.lane_slots == 0 || o.lane_slots == self.lane_slots);
        self.total_cycles += o.total_cycles;
        self.effective += o.effective;
        self.stall_no_terms += o.stall_no_terms;
        self.stall_shift_range += o.stall_shift_range;
        self.stall_exponent += o.stall_exponent;
        self.stall_inter_pe += o.stall_inter_pe;
        self.skipped_zero_terms += o.skipped_zero_terms;
        self.skipped_ob_terms += o.skipped_ob_terms;
        self.groups += o.groups;
        self.passes += o.passes;
        self.max_column_lead = self.max_column_lead.max(o.max_column_lead);
        for (k, v) in &o.per_phase {
            *self.per_phase.entry(k.clone()).or_default() += v;
        }
    }
}

/// Functional result of one column of one pass.
struct ColumnRun {
    /// `cycles[row][group]`
    cycles: Vec<Vec<u32>>,
    outputs: Vec<Bf16Value>,
    effective: u64,
    shift_range: u64,
    no_terms: u64,
    skipped_zero: u64,
    skipped_ob: u64,
}

fn run_column(a: &[Bf16Value], bs: &[&[Bf16Value]], pe: &PEConfig) -> Result<ColumnRun> {
    let lanes = pe.lanes;
    let groups = a.len() / lanes;
    let mut accs = vec![ChunkedAccumulator::new(); bs.len()];
    let mut run = ColumnRun {
        cycles: vec![Vec::with_capacity(groups); bs.len()],
        outputs: Vec::with_capacity(bs.len()),
        effective: 0,
        shift_range: 0,
        no_terms: 0,
        skipped_zero: 0,
        skipped_ob: 0,
    };
    let mut prepared = Vec::with_capacity(bs.len());
    for g in 0..groups {
        let ga = &a[g * lanes..(g + 1) * lanes];
        prepared.clear();
        for (r, b) in bs.iter().enumerate() {
            let p = PreparedGroup::new(&accs[r].running(), ga, &b[g * lanes..(g + 1) * lanes], pe)
                .map_err(|e| e.context(format!("row {r} group {g}")))?;
            prepared.push(p);
        }
        if pe.policy.skip_mode != SkipMode::None {
            let mut limits = vec![0usize; lanes];
            for p in &prepared {
                for (l, x) in limits.iter_mut().zip(p.ob_limits()) {
                    *l = (*l).max(x);
                }
            }
            for p in prepared.iter_mut() {
                p.set_ob_limits(&limits);
            }
        }
        for (r, p) in prepared.drain(..).enumerate() {
            let res = p.run(pe).map_err(|e| e.context(format!("row {r} group {g}")))?;
            accs[r].commit(res.accumulator, lanes as u32, &pe.policy)?;
            run.cycles[r].push(res.cycles as u32);
            run.effective += res.effective;
            run.shift_range += res.stall_shift_range;
            run.no_terms += res.stall_no_terms;
            run.skipped_zero += res.skipped_zero_terms;
            run.skipped_ob += res.skipped_ob_terms;
        }
    }
    for acc in accs {
        run.outputs.push(acc.finish(&pe.policy)?);
    }
    Ok(run)
}

/// Timing of one pass: start/finish schedule of every PE and idle counts.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PassTiming {
    pub total_cycles: u64,
    /// Idle PE-cycles waiting for an exponent block.
    pub idle_exponent: u64,
    /// Idle PE-cycles waiting on the column, the buffers, or finished.
    pub idle_inter_pe: u64,
    pub max_column_lead: u64,
    /// `start[col][row][group]`
    pub start: Vec<Vec<Vec<u64>>>,
}

/// Cycle-stepped schedule of one pass. `d[col][row][group]` is the PE time
/// of each group; every column has the same row count and group count.
pub fn schedule_pass(d: &[Vec<Vec<u32>>], exp_share: usize, buffer_depth: usize) -> PassTiming {
    let cols = d.len();
    let rows = d.first().map_or(0, Vec::len);
    let groups = d.first().and_then(|c| c.first()).map_or(0, Vec::len);
    let mut t_out = PassTiming { start: vec![vec![Vec::with_capacity(groups); rows]; cols], ..Default::default() };
    if cols == 0 || rows == 0 || groups == 0 {
        return t_out;
    }
    #[derive(Clone, Copy, Default)]
    struct Pe {
        done: usize,
        next_setup: usize,
        latched: Option<usize>,
        end: Option<u64>,
    }
    let mut pes = vec![vec![Pe::default(); rows]; cols];
    let blocks = rows.div_ceil(exp_share);
    let mut rr = vec![vec![0usize; blocks]; cols];
    let mut col_done = vec![0usize; cols];
    let mut t: u64 = 0;
    loop {
        for (c, col) in pes.iter_mut().enumerate() {
            for pe in col.iter_mut() {
                if pe.end == Some(t) {
                    pe.end = None;
                    pe.done += 1;
                }
            }
            col_done[c] = col.iter().map(|p| p.done).min().unwrap_or(groups);
        }
        let min_done = *col_done.iter().min().unwrap();
        if min_done == groups {
            break;
        }
        for c in 0..cols {
            for b in 0..blocks {
                let members = (b * exp_share..((b + 1) * exp_share).min(rows)).collect::<Vec<_>>();
                let n = members.len();
                for off in 0..n {
                    let i = (rr[c][b] + off) % n;
                    let pe = &mut pes[c][members[i]];
                    if pe.latched.is_none() && pe.next_setup < groups && pe.next_setup <= min_done + buffer_depth {
                        pe.latched = Some(pe.next_setup);
                        pe.next_setup += 1;
                        rr[c][b] = (i + 1) % n;
                        break;
                    }
                }
            }
        }
        for c in 0..cols {
            for r in 0..rows {
                let pe = &mut pes[c][r];
                match (pe.latched, pe.end) {
                    (Some(g), None) if col_done[c] >= g => {
                        pe.latched = None;
                        pe.end = Some(t + d[c][r][g] as u64);
                        t_out.start[c][r].push(t);
                        t_out.max_column_lead = t_out.max_column_lead.max((g - min_done) as u64);
                    }
                    _ => {}
                }
                if pe.end.is_some() {
                    continue;
                }
                if pe.done == groups || pe.latched.is_some() || pe.next_setup > min_done + buffer_depth {
                    t_out.idle_inter_pe += 1;
                } else {
                    t_out.idle_exponent += 1;
                }
            }
        }
        t += 1;
    }
    t_out.total_cycles = t;
    t_out
}

/// Run a workload on one tile. Outputs are `rows x cols` of the workload,
/// row-major.
pub fn tile_simulate(w: &Workload, cfg: &TileConfig) -> Result<(Vec<Bf16Value>, CycleReport)> {
    cfg.validate()?;
    let pe = cfg.pe_config();
    let (p, q, l) = (w.rows.len(), w.cols.len(), w.reduction_len());
    if w.rows.iter().chain(&w.cols).any(|v| v.len() != l) || l % cfg.lanes != 0 {
        return Err(Error::GeometryMismatch(format!(
            "reduction length {l} does not split into groups of {}",
            cfg.lanes
        )));
    }
    let lanes = cfg.lanes as u64;
    let mut report = CycleReport {
        lane_slots: (cfg.rows * cfg.cols * cfg.lanes) as u64,
        ..Default::default()
    };
    let mut out = vec![Bf16Value::ZERO; p * q];
    for r0 in (0..p).step_by(cfg.rows) {
        for c0 in (0..q).step_by(cfg.cols) {
            let rows: Vec<&[Bf16Value]> = w.rows[r0..(r0 + cfg.rows).min(p)].iter().map(Vec::as_slice).collect();
            let ncols = cfg.cols.min(q - c0);
            let runs = exec::map_range(ncols, |j| {
                run_column(&w.cols[c0 + j], &rows, &pe).map_err(|e| e.context(format!("pass ({r0}, {c0}) column {j}")))
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
            let d: Vec<Vec<Vec<u32>>> = runs.iter().map(|r| r.cycles.clone()).collect();
            let timing = schedule_pass(&d, cfg.exp_share, cfg.buffer_depth);
            let mapped = (rows.len() * ncols) as u64;
            let unmapped = report.lane_slots / lanes - mapped;
            report.total_cycles += timing.total_cycles;
            report.stall_exponent += timing.idle_exponent * lanes;
            report.stall_inter_pe += timing.idle_inter_pe * lanes;
            report.stall_no_terms += unmapped * timing.total_cycles * lanes;
            report.max_column_lead = report.max_column_lead.max(timing.max_column_lead);
            report.passes += 1;
            report.groups += mapped * (l / cfg.lanes) as u64;
            for (j, run) in runs.iter().enumerate() {
                report.effective += run.effective;
                report.stall_shift_range += run.shift_range;
                report.stall_no_terms += run.no_terms;
                report.skipped_zero_terms += run.skipped_zero;
                report.skipped_ob_terms += run.skipped_ob;
                for (i, v) in run.outputs.iter().enumerate() {
                    out[(r0 + i) * q + c0 + j] = *v;
                }
            }
        }
    }
    report.per_phase.insert(w.op.name().to_string(), report.total_cycles);
    debug_assert!(report.identity_holds());
    Ok((out, report))
}

/// Bit-parallel tile: one group per PE per cycle. Returns outputs and cycles.
pub fn baseline_simulate(w: &Workload, cfg: &TileConfig) -> Result<(Vec<Bf16Value>, u64)> {
    cfg.validate()?;
    let policy = cfg.pe.policy;
    let (p, q, l) = (w.rows.len(), w.cols.len(), w.reduction_len());
    if l % cfg.lanes != 0 {
        return Err(Error::GeometryMismatch(format!("reduction length {l} vs {} lanes", cfg.lanes)));
    }
    let groups = l / cfg.lanes;
    let rows = exec::map_range(p, |i| -> Result<Vec<Bf16Value>> {
        (0..q)
            .map(|j| {
                let mut acc = ChunkedAccumulator::new();
                for g in 0..groups {
                    let s = g * cfg.lanes..(g + 1) * cfg.lanes;
                    let r = reference_mac_group(acc.running(), &w.cols[j][s.clone()], &w.rows[i][s], &policy)
                        .map_err(|e| e.context(format!("output ({i}, {j}) group {g}")))?;
                    acc.commit(r, cfg.lanes as u32, &policy)?;
                }
                acc.finish(&policy)
            })
            .collect()
    });
    let mut out = Vec::with_capacity(p * q);
    for r in rows {
        out.extend(r?);
    }
    let passes = (p.div_ceil(cfg.rows) * q.div_ceil(cfg.cols)) as u64;
    Ok((out, passes * groups as u64))
}

/// Throughput ratio at the configured tile counts.
pub fn speedup(w: &Workload, fpr: &TileConfig, base: &TileConfig) -> Result<f64> {
    let (_, rep) = tile_simulate(w, fpr)?;
    let (_, base_cycles) = baseline_simulate(w, base)?;
    Ok(speedup_from(base_cycles, base.tiles, rep.total_cycles, fpr.tiles))
}

pub fn speedup_from(base_cycles: u64, base_tiles: usize, fpr_cycles: u64, fpr_tiles: usize) -> f64 {
    if fpr_cycles == 0 {
        return 1.0;
    }
    (base_cycles as f64 / fpr_cycles as f64) * (fpr_tiles as f64 / base_tiles as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::bf16_encode;
    use crate::numerics::terms::TermEncoding;
    use crate::pe::pe_process_group;
    use crate::numerics::ExtendedAccumulator;
    use crate::trace::Phase;

    fn v(x: f64) -> Bf16Value {
        bf16_encode(x).unwrap()
    }

    fn uniform(p: usize, q: usize, groups: usize, a: Bf16Value, b: Bf16Value) -> Workload {
        Workload::matmul(Phase::Fwd, vec![vec![b; groups * 8]; p], vec![vec![a; groups * 8]; q]).unwrap()
    }

    #[test]
    fn degenerate_tile_matches_pe() {
        let mut a = vec![v(4.0 * 1.8125), v(2.0 * 1.6875)];
        let mut b = vec![v(8.0 * 1.1875), v(2.0 * 1.625)];
        a.resize(8, Bf16Value::ZERO);
        b.resize(8, Bf16Value::ZERO);
        let mut cfg = TileConfig { rows: 1, cols: 1, exp_share: 1, ..Default::default() };
        cfg.pe.policy.encoding = TermEncoding::Binary;
        cfg.pe.policy.skip_mode = SkipMode::None;
        let w = Workload::matmul(Phase::Fwd, vec![b.clone()], vec![a.clone()]).unwrap();
        let (_, rep) = tile_simulate(&w, &cfg).unwrap();
        let pe = pe_process_group(ExtendedAccumulator::ZERO, &a, &b, &cfg.pe_config()).unwrap();
        assert_eq!(rep.total_cycles, pe.cycles);
        assert_eq!(rep.total_cycles, 5);
        assert!(rep.identity_holds());
        assert_eq!(baseline_simulate(&w, &cfg).unwrap().1, 1);
    }

    #[test]
    fn single_term_groups_take_two_cycles() {
        let w = uniform(8, 8, 50, Bf16Value::ONE, v(1.5));
        let (_, rep) = tile_simulate(&w, &TileConfig::default()).unwrap();
        assert_eq!(rep.total_cycles, 2 * 50);
        assert!(rep.identity_holds());
        let s = speedup(&w, &TileConfig::default(), &TileConfig::baseline()).unwrap();
        assert_eq!(s, 2.25);
    }

    #[test]
    fn heavy_column_stalls_the_rest() {
        let heavy = Bf16Value::from_parts(false, 127, 0x4d).unwrap();
        let mut w = uniform(8, 8, 20, Bf16Value::ONE, v(1.25));
        w.cols[3] = vec![heavy; 160];
        let (_, rep) = tile_simulate(&w, &TileConfig::default()).unwrap();
        assert!(rep.stall_inter_pe > 0);
        assert!(rep.max_column_lead <= 1);
        assert!(rep.identity_holds());
    }

    #[test]
    fn outputs_match_baseline() {
        let vals: Vec<Bf16Value> = (0..24 * 11).map(|i| v(((i * 37 % 101) as f64 - 50.0) / 7.0)).collect();
        let rows: Vec<Vec<_>> = (0..11).map(|i| vals[i * 24..(i + 1) * 24].to_vec()).collect();
        let cols: Vec<Vec<_>> = (0..9).map(|i| vals[i * 24..(i + 1) * 24].iter().rev().copied().collect()).collect();
        let w = Workload::matmul(Phase::Fwd, rows, cols).unwrap();
        let cfg = TileConfig::default();
        let (o, rep) = tile_simulate(&w, &cfg).unwrap();
        let (b, base_cycles) = baseline_simulate(&w, &cfg).unwrap();
        assert_eq!(o, b);
        assert_eq!(rep.passes, 4);
        assert_eq!(base_cycles, 4 * 3);
        assert!(rep.identity_holds());
    }

    #[test]
    fn geometry_errors() {
        let w = Workload::matmul(Phase::Fwd, vec![vec![Bf16Value::ONE; 8]], vec![vec![Bf16Value::ONE; 8]]).unwrap();
        let cfg = TileConfig { rows: 3, ..Default::default() };
        assert!(matches!(tile_simulate(&w, &cfg), Err(Error::Config(_))));
        let cfg = TileConfig { lanes: 16, ..Default::default() };
        assert!(matches!(tile_simulate(&w, &cfg), Err(Error::GeometryMismatch(_))));
    }
}
