//! Benchmark suite files: key=value blocks separated by blank lines,
//! one benchmark per block, `#` comments. The `kind` key selects the
//! benchmark; `ladder` and `format_sweep` expand to several result rows.

use serde::Serialize;

use crate::cluster::{ClusterConfig, Mode};
use crate::energy::EnergyParams;
use crate::simd::{Precision, SignMode};

use super::{
    run_conv, run_format_sweep, run_ladder, run_matmul, run_vecadd, AllocPolicy, BenchError,
    ConvBench, ConvSpec, Im2colStyle, MatmulBench, MixedPath, VecaddBench,
};

#[derive(Debug, Clone)]
pub enum SuiteEntry {
    Conv(ConvBench),
    Matmul(MatmulBench),
    Vecadd(VecaddBench),
    Ladder,
    FormatSweep(ConvSpec),
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteRow {
    pub index: usize,
    pub name: String,
    pub kind: String,
    pub cycles: u64,
    pub instructions_retired: u64,
    pub macs: u64,
    pub macs_per_cycle: f64,
    pub tcdm_accesses: u64,
    pub conflict_stall_cycles: u64,
    pub broadcasts: u64,
    pub energy_total_pj: f64,
    pub pj_per_cycle: f64,
    pub verified: bool,
    pub note: String,
}

pub const CSV_HEADER: &str = "index,name,kind,cycles,instructions_retired,macs,macs_per_cycle,\
tcdm_accesses,conflict_stall_cycles,broadcasts,energy_total_pj,pj_per_cycle,verified,note";

pub fn rows_to_csv(rows: &[SuiteRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{:.4},{},{},{},{:.1},{:.4},{},{}\n",
            r.index,
            r.name,
            r.kind,
            r.cycles,
            r.instructions_retired,
            r.macs,
            r.macs_per_cycle,
            r.tcdm_accesses,
            r.conflict_stall_cycles,
            r.broadcasts,
            r.energy_total_pj,
            r.pj_per_cycle,
            r.verified,
            r.note
        ));
    }
    out
}

fn parse_precision(v: &str) -> Result<Precision, String> {
    v.parse::<u32>()
        .ok()
        .and_then(Precision::from_bits)
        .ok_or_else(|| format!("bad precision `{v}` (expected 2, 4, 8 or 16)"))
}

fn parse_mode(v: &str) -> Result<Mode, String> {
    match v {
        "mimd" => Ok(Mode::Mimd),
        "vlem" => Ok(Mode::Vlem),
        other => Err(format!("bad mode `{other}` (mimd|vlem)")),
    }
}

/// Parses a suite file into benchmark entries.
pub fn parse_suite(text: &str) -> Result<Vec<SuiteEntry>, String> {
    let mut entries = Vec::new();
    let mut block: Vec<(String, String)> = Vec::new();
    let mut flush = |block: &mut Vec<(String, String)>| -> Result<(), String> {
        if block.is_empty() {
            return Ok(());
        }
        entries.push(parse_block(block)?);
        block.clear();
        Ok(())
    };
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            flush(&mut block)?;
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected key=value", no + 1))?;
        block.push((k.trim().to_string(), v.trim().to_string()));
    }
    flush(&mut block)?;
    if entries.is_empty() {
        return Err("suite file contains no benchmarks".into());
    }
    Ok(entries)
}

fn parse_block(kv: &[(String, String)]) -> Result<SuiteEntry, String> {
    let get = |key: &str| kv.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str());
    let get_num = |key: &str, default: usize| -> Result<usize, String> {
        match get(key) {
            Some(v) => v.parse().map_err(|_| format!("bad {key} `{v}`")),
            None => Ok(default),
        }
    };
    let kind = get("kind").ok_or("block is missing `kind`")?;
    let seed = get_num("seed", 1)? as u64;
    let mode = parse_mode(get("mode").unwrap_or("vlem"))?;
    match kind {
        "conv" => {
            let spec = ConvSpec {
                h: get_num("h", 8)?,
                w: get_num("w", 8)?,
                c_in: get_num("c_in", 16)?,
                c_out: get_num("c_out", 16)?,
                k: get_num("k", 3)?,
                act: parse_precision(get("act").unwrap_or("8"))?,
                wgt: parse_precision(get("wgt").unwrap_or("8"))?,
                sign: match get("sign").unwrap_or("us") {
                    "ss" => SignMode::SS,
                    "uu" => SignMode::UU,
                    "us" => SignMode::US,
                    other => return Err(format!("bad sign `{other}`")),
                },
                hwc: true,
            };
            Ok(SuiteEntry::Conv(ConvBench {
                spec,
                mode,
                path: match get("path").unwrap_or("hardware") {
                    "hardware" => MixedPath::Hardware,
                    "software" => MixedPath::Software,
                    other => return Err(format!("bad path `{other}`")),
                },
                alloc: match get("alloc").unwrap_or("misaligned") {
                    "naive" => AllocPolicy::Naive,
                    "misaligned" => AllocPolicy::Misaligned,
                    other => return Err(format!("bad alloc `{other}`")),
                },
                im2col: match get("im2col").unwrap_or("word") {
                    "word" => Im2colStyle::Word,
                    "byte" => Im2colStyle::Byte,
                    other => return Err(format!("bad im2col `{other}`")),
                },
                seed,
            }))
        }
        "matmul" => Ok(SuiteEntry::Matmul(MatmulBench {
            rows: 32,
            inner: get_num("inner", 256)?,
            cols: get_num("cols", 16)?,
            mode,
            seed,
        })),
        "vecadd" => Ok(SuiteEntry::Vecadd(VecaddBench {
            chunk: get_num("chunk", 1)? as u32,
            elem_bytes: get_num("elem_bytes", 4)? as u32,
            groups: get_num("groups", 3)? as u32,
            mode,
            seed,
        })),
        "ladder" => Ok(SuiteEntry::Ladder),
        "format_sweep" => Ok(SuiteEntry::FormatSweep(ConvSpec::new(
            get_num("h", 8)?,
            get_num("w", 8)?,
            get_num("c_in", 16)?,
            get_num("c_out", 16)?,
            get_num("k", 3)?,
        ))),
        other => Err(format!("unknown benchmark kind `{other}`")),
    }
}

/// Runs every suite entry in order and flattens the results into rows.
pub fn run_suite(
    entries: &[SuiteEntry],
    cfg: &ClusterConfig,
    params: &EnergyParams,
) -> Result<Vec<SuiteRow>, BenchError> {
    let mut rows = Vec::new();
    for (index, entry) in entries.iter().enumerate() {
        match entry {
            SuiteEntry::Conv(bench) => {
                let r = run_conv(bench, cfg, params)?;
                rows.push(SuiteRow {
                    index,
                    name: r.name.clone(),
                    kind: "conv".into(),
                    cycles: r.metrics.cycles,
                    instructions_retired: r.metrics.instructions_retired,
                    macs: r.metrics.macs,
                    macs_per_cycle: r.mac_per_cycle,
                    tcdm_accesses: r.metrics.tcdm_accesses,
                    conflict_stall_cycles: r.metrics.bank_conflict_stall_cycles,
                    broadcasts: r.metrics.broadcasts,
                    energy_total_pj: r.energy.total_pj,
                    pj_per_cycle: r.energy.pj_per_cycle,
                    verified: r.verified,
                    note: String::new(),
                });
            }
            SuiteEntry::Matmul(bench) => {
                let r = run_matmul(bench, cfg, params)?;
                rows.push(SuiteRow {
                    index,
                    name: r.name.clone(),
                    kind: "matmul".into(),
                    cycles: r.metrics.cycles,
                    instructions_retired: r.metrics.instructions_retired,
                    macs: r.metrics.macs,
                    macs_per_cycle: r.mac_per_cycle,
                    tcdm_accesses: r.metrics.tcdm_accesses,
                    conflict_stall_cycles: r.metrics.bank_conflict_stall_cycles,
                    broadcasts: r.metrics.broadcasts,
                    energy_total_pj: r.energy.total_pj,
                    pj_per_cycle: r.energy.pj_per_cycle,
                    verified: r.verified,
                    note: String::new(),
                });
            }
            SuiteEntry::Vecadd(bench) => {
                let r = run_vecadd(bench, cfg, params)?;
                rows.push(SuiteRow {
                    index,
                    name: r.name.clone(),
                    kind: "vecadd".into(),
                    cycles: r.metrics.cycles,
                    instructions_retired: r.metrics.instructions_retired,
                    macs: 0,
                    macs_per_cycle: 0.0,
                    tcdm_accesses: r.metrics.tcdm_accesses,
                    conflict_stall_cycles: r.metrics.bank_conflict_stall_cycles,
                    broadcasts: r.metrics.broadcasts,
                    energy_total_pj: 0.0,
                    pj_per_cycle: 0.0,
                    verified: r.verified,
                    note: String::new(),
                });
            }
            SuiteEntry::Ladder => {
                let report = run_ladder(params)?;
                for rung in report.rungs {
                    rows.push(SuiteRow {
                        index,
                        name: format!("ladder-{}", rung.name),
                        kind: "ladder".into(),
                        cycles: rung.vlem_cycles,
                        instructions_retired: 0,
                        macs: 0,
                        macs_per_cycle: 0.0,
                        tcdm_accesses: 0,
                        conflict_stall_cycles: 0,
                        broadcasts: 0,
                        energy_total_pj: 0.0,
                        pj_per_cycle: 0.0,
                        verified: true,
                        note: format!(
                            "overhead {:.1}% (target {:.0}% band {})",
                            rung.overhead_pct,
                            rung.target_pct,
                            if rung.within_band { "in" } else { "out" }
                        ),
                    });
                }
            }
            SuiteEntry::FormatSweep(spec) => {
                for row in run_format_sweep(params, spec)? {
                    rows.push(SuiteRow {
                        index,
                        name: format!("fmt-{}x{}-{}", row.act_bits, row.wgt_bits, row.path),
                        kind: "format_sweep".into(),
                        cycles: row.cycles,
                        instructions_retired: 0,
                        macs: 0,
                        macs_per_cycle: row.mac_per_cycle,
                        tcdm_accesses: 0,
                        conflict_stall_cycles: 0,
                        broadcasts: 0,
                        energy_total_pj: 0.0,
                        pj_per_cycle: 0.0,
                        verified: row.verified,
                        note: String::new(),
                    });
                }
            }
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_blocks_and_defaults() {
        let text = "
# demo suite
kind = conv
act = 8
wgt = 4
mode = vlem

kind = vecadd
chunk = 2
elem_bytes = 4
";
        let entries = parse_suite(text).unwrap();
        assert_eq!(entries.len(), 2);
        match &entries[0] {
            SuiteEntry::Conv(c) => {
                assert_eq!(c.spec.wgt, Precision::B4);
                assert_eq!(c.mode, Mode::Vlem);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_empty_and_malformed() {
        assert!(parse_suite("").is_err());
        assert!(parse_suite("kind = conv\nbogus\n").is_err());
        assert!(parse_suite("kind = teapot\n").is_err());
        assert!(parse_suite("h = 8\n").is_err());
    }
}
