//! Command-line front end.
//!
//! ```text
//! fpraker gen      [--config spec.json] [--seed N] --out trace.fprt
//! fpraker analyze  --trace trace.fprt [--out report.json] [--format json|csv]
//! fpraker simulate --trace trace.fprt [--config run.json] [tile flags] [--out ..] [--format ..]
//! fpraker compress --trace trace.fprt [--axis channel|spatial] [--out file.fprc] [--verify]
//! fpraker selftest [--groups N] [--seed N]
//! ```
//!
//! Reports are JSON unless `--format csv` is given, in which case the
//! per-run (simulate) or per-tensor (analyze, compress) tables are written.

pub mod commands;
pub mod config;
pub mod selftest;

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::codec::{write_compressed, GroupAxis};
use crate::numerics::{SkipMode, TermEncoding};
use crate::tile::SerialSide;
use crate::trace::{synth_trace, SynthSpec, TensorTrace};
use crate::{Error, Result};
pub use config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "fpraker", version, about = "Term-serial floating-point PE and tile simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic trace.
    Gen(GenArgs),
    /// Sparsity, term, exponent and footprint statistics of a trace.
    Analyze(AnalyzeArgs),
    /// Cycle simulation against the bit-parallel baseline.
    Simulate(SimArgs),
    /// Base-delta exponent compression of a trace.
    Compress(CompressArgs),
    /// Run the built-in checks.
    Selftest(SelftestArgs),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum)]
pub enum Format {
    #[default]
    Json,
    Csv,
}

#[derive(Args, Debug)]
pub struct GenArgs {
    /// Generator spec (JSON); defaults when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub trace: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t)]
    pub format: Format,
}

#[derive(Args, Debug, Default)]
pub struct TileFlags {
    #[arg(long)]
    pub tiles: Option<usize>,
    #[arg(long)]
    pub baseline_tiles: Option<usize>,
    #[arg(long)]
    pub rows: Option<usize>,
    #[arg(long)]
    pub cols: Option<usize>,
    #[arg(long)]
    pub lanes: Option<usize>,
    #[arg(long)]
    pub exp_share: Option<usize>,
    #[arg(long)]
    pub buffer_depth: Option<usize>,
    #[arg(long)]
    pub max_delta: Option<u32>,
    /// Accumulator fractional bits; the OB threshold follows.
    #[arg(long)]
    pub acc_frac_bits: Option<u32>,
    /// JSON object mapping layer id to fractional bits.
    #[arg(long)]
    pub acc_width_table: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub skip_mode: Option<SkipMode>,
    #[arg(long, value_enum)]
    pub serial_side: Option<SerialSide>,
    #[arg(long, value_enum)]
    pub term_encoding: Option<TermEncoding>,
    #[arg(long)]
    pub chunk_size: Option<u32>,
}

#[derive(Args, Debug)]
pub struct SimArgs {
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum, default_value_t)]
    pub format: Format,
    #[command(flatten)]
    pub tile: TileFlags,
}

#[derive(Args, Debug)]
pub struct CompressArgs {
    #[arg(long)]
    pub trace: PathBuf,
    #[arg(long, value_enum, default_value_t)]
    pub axis: GroupAxis,
    /// Compressed output file.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Decompress again and compare with the input.
    #[arg(long)]
    pub verify: bool,
    #[arg(long, value_enum, default_value_t)]
    pub format: Format,
}

#[derive(Args, Debug)]
pub struct SelftestArgs {
    #[arg(long, default_value_t = 100_000)]
    pub groups: u64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

/// Resolve defaults < config file < flags.
pub fn resolve_config(args: &SimArgs) -> Result<RunConfig> {
    let mut c = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let f = &args.tile;
    macro_rules! set {
        ($flag:expr, $field:expr) => {
            if let Some(v) = $flag {
                $field = v;
            }
        };
    }
    set!(f.tiles, c.tile.tiles);
    set!(f.baseline_tiles, c.baseline_tiles);
    set!(f.rows, c.tile.rows);
    set!(f.cols, c.tile.cols);
    set!(f.lanes, c.tile.lanes);
    set!(f.exp_share, c.tile.exp_share);
    set!(f.buffer_depth, c.tile.buffer_depth);
    set!(f.max_delta, c.tile.pe.max_delta);
    set!(f.skip_mode, c.tile.pe.policy.skip_mode);
    set!(f.serial_side, c.serial_side);
    set!(f.term_encoding, c.tile.pe.policy.encoding);
    set!(f.chunk_size, c.tile.pe.policy.chunk_size);
    set!(args.seed, c.seed);
    if let Some(bits) = f.acc_frac_bits {
        c.tile.pe = c.tile.pe.with_acc_frac_bits(bits);
    }
    if let Some(p) = &f.acc_width_table {
        c.acc_width_table = config::load_width_table(p)?;
    }
    if args.trace.is_some() {
        c.trace = args.trace.clone();
    }
    if args.out.is_some() {
        c.out = args.out.clone();
    }
    c.validate()?;
    Ok(c)
}

fn emit_json(value: &impl Serialize, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::from(e).context(p.display().to_string())),
        None => Ok(std::io::stdout().write_all(text.as_bytes())?),
    }
}

fn emit_csv<R: Serialize>(rows: &[R], out: Option<&Path>) -> Result<()> {
    let sink: Box<dyn Write> = match out {
        Some(p) => Box::new(std::fs::File::create(p).map_err(|e| Error::from(e).context(p.display().to_string()))?),
        None => Box::new(std::io::stdout()),
    };
    let mut w = csv::Writer::from_writer(sink);
    for r in rows {
        w.serialize(r).map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct SimRow<'a> {
    layer: &'a str,
    phase: &'static str,
    frac_bits: u32,
    total_cycles: u64,
    baseline_cycles: u64,
    speedup: f64,
    effective: u64,
    stall_no_terms: u64,
    stall_shift_range: u64,
    stall_exponent: u64,
    stall_inter_pe: u64,
    skipped_zero_terms: u64,
    skipped_ob_terms: u64,
    oracle: &'static str,
}

#[derive(Serialize)]
struct AnalyzeRow<'a> {
    name: &'a str,
    layer: &'a str,
    role: String,
    values: u64,
    value_sparsity: f64,
    term_sparsity: f64,
    raw_value_sparsity: f64,
    raw_term_sparsity: f64,
    potential_speedup: Option<f64>,
    channel_ratio: f64,
    spatial_ratio: f64,
}

fn verdict(v: Option<bool>) -> &'static str {
    match v {
        Some(true) => "PASS",
        Some(false) => "FAIL",
        None => "SKIPPED",
    }
}

fn cmd_gen(a: &GenArgs) -> Result<()> {
    let mut spec: SynthSpec = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::from(e).context(p.display().to_string()))?;
            serde_json::from_str(&text).map_err(|e| Error::from(e).context(p.display().to_string()))?
        }
        None => SynthSpec::default(),
    };
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    let trace = synth_trace(&spec)?;
    trace.save(&a.out)?;
    eprintln!("wrote {} tensors to {}", trace.tensors.len(), a.out.display());
    Ok(())
}

fn cmd_analyze(a: &AnalyzeArgs) -> Result<()> {
    let trace = TensorTrace::load(&a.trace)?;
    let rep = commands::analyze(&trace)?;
    match a.format {
        Format::Json => emit_json(&rep, a.out.as_deref()),
        Format::Csv => {
            let rows: Vec<AnalyzeRow> = rep
                .tensors
                .iter()
                .zip(&rep.footprint)
                .map(|(t, f)| AnalyzeRow {
                    name: &t.name,
                    layer: &t.layer,
                    role: format!("{:?}", t.role),
                    values: t.values,
                    value_sparsity: t.value_sparsity,
                    term_sparsity: t.term_sparsity,
                    raw_value_sparsity: t.raw_value_sparsity,
                    raw_term_sparsity: t.raw_term_sparsity,
                    potential_speedup: t.potential_speedup,
                    channel_ratio: f.channel_ratio,
                    spatial_ratio: f.spatial_ratio,
                })
                .collect();
            emit_csv(&rows, a.out.as_deref())
        }
    }
}

fn cmd_simulate(a: &SimArgs) -> Result<()> {
    let cfg = resolve_config(a)?;
    let path = cfg.trace.clone().ok_or_else(|| Error::Config("simulate needs --trace".into()))?;
    let trace = TensorTrace::load(&path)?;
    let rep = commands::simulate(&trace, &cfg)?;
    match a.format {
        Format::Json => emit_json(&rep, cfg.out.as_deref())?,
        Format::Csv => {
            let rows: Vec<SimRow> = rep
                .runs
                .iter()
                .map(|r| SimRow {
                    layer: &r.layer,
                    phase: r.phase.name(),
                    frac_bits: r.frac_bits,
                    total_cycles: r.cycles.total_cycles,
                    baseline_cycles: r.baseline_cycles,
                    speedup: r.speedup,
                    effective: r.cycles.effective,
                    stall_no_terms: r.cycles.stall_no_terms,
                    stall_shift_range: r.cycles.stall_shift_range,
                    stall_exponent: r.cycles.stall_exponent,
                    stall_inter_pe: r.cycles.stall_inter_pe,
                    skipped_zero_terms: r.cycles.skipped_zero_terms,
                    skipped_ob_terms: r.cycles.skipped_ob_terms,
                    oracle: verdict(r.oracle),
                })
                .collect();
            emit_csv(&rows, cfg.out.as_deref())?
        }
    }
    eprintln!("oracle: {}", rep.oracle);
    if rep.oracle == "FAIL" {
        let bad: Vec<String> = rep
            .runs
            .iter()
            .filter(|r| r.oracle == Some(false))
            .map(|r| format!("{} {}", r.layer, r.phase.name()))
            .collect();
        return Err(Error::OracleMismatch(bad.join(", ")));
    }
    Ok(())
}

fn cmd_compress(a: &CompressArgs) -> Result<()> {
    let trace = TensorTrace::load(&a.trace)?;
    let (packed, mut rep) = commands::compress(&trace, a.axis);
    if let Some(p) = &a.out {
        let f = std::fs::File::create(p).map_err(|e| Error::from(e).context(p.display().to_string()))?;
        let mut w = std::io::BufWriter::new(f);
        write_compressed(&mut w, &packed)?;
        w.flush()?;
    }
    if a.verify {
        let reread = match &a.out {
            Some(p) => crate::codec::read_compressed(std::io::BufReader::new(std::fs::File::open(p)?))?,
            None => packed,
        };
        rep.verify = if commands::verify(&trace, &reread)? { "PASS" } else { "FAIL" }.into();
    }
    match a.format {
        Format::Json => emit_json(&rep, None)?,
        Format::Csv => emit_csv(&rep.tensors, None)?,
    }
    if rep.verify == "FAIL" {
        return Err(Error::CorruptGroup("round trip differs from the input".into()));
    }
    Ok(())
}

fn cmd_selftest(a: &SelftestArgs) -> Result<bool> {
    let checks = selftest::run(a.groups, a.seed);
    for c in &checks {
        println!("{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    Ok(checks.iter().all(|c| c.pass))
}

/// Run a parsed command. `Ok(false)` means the command ran but a check failed.
pub fn run(cli: &Cli) -> Result<bool> {
    match &cli.command {
        Command::Gen(a) => cmd_gen(a).map(|_| true),
        Command::Analyze(a) => cmd_analyze(a).map(|_| true),
        Command::Simulate(a) => cmd_simulate(a).map(|_| true),
        Command::Compress(a) => cmd_compress(a).map(|_| true),
        Command::Selftest(a) => cmd_selftest(a),
    }
}

/// Entry point for the binary; returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.json");
        std::fs::write(&p, r#"{"tile": {"rows": 4, "cols": 2}, "baseline_tiles": 3}"#).unwrap();
        let cli = Cli::try_parse_from([
            "fpraker", "simulate", "--config", p.to_str().unwrap(), "--rows", "2", "--skip-mode", "ob-paper",
            "--acc-frac-bits", "7", "--serial-side", "auto",
        ])
        .unwrap();
        let Command::Simulate(a) = cli.command else { panic!() };
        let c = resolve_config(&a).unwrap();
        assert_eq!((c.tile.rows, c.tile.cols, c.baseline_tiles), (2, 2, 3));
        assert_eq!(c.tile.pe.policy.skip_mode, SkipMode::ObPaper);
        assert_eq!((c.tile.pe.policy.frac_bits, c.tile.pe.ob_window), (7, 7));
        assert_eq!(c.serial_side, SerialSide::Auto);
    }

    #[test]
    fn invalid_flags_are_errors() {
        let cli = Cli::try_parse_from(["fpraker", "simulate", "--rows", "3"]).unwrap();
        let Command::Simulate(a) = cli.command else { panic!() };
        assert!(resolve_config(&a).is_err());
        assert!(Cli::try_parse_from(["fpraker", "simulate", "--skip-mode", "maybe"]).is_err());
    }
}
