//! The software stack at desk scale: layout HAL formulas, golden QNN
//! models, assembly kernel generators, and the benchmark runners that
//! drive every experiment.

pub mod gen;
pub mod golden;
pub mod layout;
pub mod suite;

use serde::Serialize;

use crate::asm::{self, AsmError, LoadError};
use crate::cluster::{Cluster, ClusterConfig, Metrics, Mode, SimError};
use crate::energy::{EnergyParams, EnergyReport};
use crate::simd::{Precision, SignMode};

pub use gen::{
    gen_cnn, gen_conv, gen_matmul, gen_vecadd, AllocPolicy, ConvBench, GenError,
    GeneratedProgram, Im2colStyle, MatmulBench, MixedPath, VecaddBench,
};
pub use layout::{
    max_chunk, min_chunk, misaligned_offset, misaligned_padding, misaligned_sub_buffer_size,
    misaligned_total, L1Allocator, LayoutParams,
};

/// One convolution layer shape plus operand formats (HWC layout).
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConvSpec {
    pub h: usize,
    pub w: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub act: Precision,
    pub wgt: Precision,
    pub sign: SignMode,
    pub hwc: bool,
}

impl ConvSpec {
    pub fn new(h: usize, w: usize, c_in: usize, c_out: usize, k: usize) -> ConvSpec {
        ConvSpec {
            h,
            w,
            c_in,
            c_out,
            k,
            act: Precision::B8,
            wgt: Precision::B8,
            sign: SignMode::US,
            hwc: true,
        }
    }

    pub fn with_formats(mut self, act: Precision, wgt: Precision) -> ConvSpec {
        self.act = act;
        self.wgt = wgt;
        self
    }

    pub fn macs(&self) -> u64 {
        (self.h * self.w * self.k * self.k * self.c_in * self.c_out) as u64
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("kernel generation failed: {0}")]
    Gen(#[from] GenError),
    #[error("generated program failed to assemble: {}", format_asm_errors(.0))]
    Asm(Vec<AsmError>),
    #[error("program load failed: {0}")]
    Load(#[from] LoadError),
    #[error("simulation failed: {0}")]
    Sim(#[from] SimError),
    #[error("verification mismatch in {name}: {detail}")]
    Verify { name: String, detail: String },
}

fn format_asm_errors(errs: &[AsmError]) -> String {
    errs.iter()
        .take(3)
        .map(|e| e.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

/// Everything a finished benchmark reports.
#[derive(Debug, Clone, Serialize)]
pub struct BenchResult {
    pub name: String,
    pub metrics: Metrics,
    pub energy: EnergyReport,
    pub mac_per_cycle: f64,
    pub verified: bool,
}

const BENCH_CYCLE_CAP: u64 = 50_000_000;

fn run_generated(
    name: &str,
    prog: &GeneratedProgram,
    cfg: &ClusterConfig,
    params: &EnergyParams,
) -> Result<BenchResult, BenchError> {
    let program = asm::assemble(&prog.asm, &format!("{name}.s")).map_err(BenchError::Asm)?;
    let mut cluster = Cluster::new(cfg.clone(), *params);
    asm::load(&program, &mut cluster)?;
    cluster.run(Some(BENCH_CYCLE_CAP))?;

    let got = read_output(&cluster, prog);
    if got.len() != prog.expected.len() {
        return Err(BenchError::Verify {
            name: name.to_string(),
            detail: format!("row count {} vs {}", got.len(), prog.expected.len()),
        });
    }
    for (r, (g, e)) in got.iter().zip(&prog.expected).enumerate() {
        for (c, (a, b)) in g.iter().zip(e).enumerate() {
            if a != b {
                return Err(BenchError::Verify {
                    name: name.to_string(),
                    detail: format!("row {r} col {c}: got {a:#010x}, expected {b:#010x}"),
                });
            }
        }
    }

    let metrics = cluster.metrics();
    let energy = cluster.energy.report(metrics.cycles);
    Ok(BenchResult {
        name: name.to_string(),
        mac_per_cycle: metrics.macs_per_cycle(),
        metrics,
        energy,
        verified: true,
    })
}

/// Reads the per-core output tiles back as a row-major matrix.
fn read_output(cluster: &Cluster, prog: &GeneratedProgram) -> Vec<Vec<i32>> {
    let mut rows = Vec::new();
    for core in 0..16u32 {
        let base = prog.out.base + core * prog.out.stride;
        let bytes = cluster
            .read_bytes(base, prog.out.bytes_per_core as usize)
            .expect("output region must be mapped");
        for r in 0..prog.rows_per_core {
            let row: Vec<i32> = (0..prog.cols)
                .map(|c| {
                    let off = (r * prog.cols + c) * 4;
                    i32::from_le_bytes(bytes[off..off + 4].try_into().unwrap())
                })
                .collect();
            rows.push(row);
        }
    }
    rows
}

/// Assembles, loads, runs and verifies one convolution benchmark.
pub fn run_conv(
    bench: &ConvBench,
    cfg: &ClusterConfig,
    params: &EnergyParams,
) -> Result<BenchResult, BenchError> {
    let prog = gen_conv(bench, cfg)?;
    let name = format!(
        "conv{}x{}x{}-{}x{}{}-{:?}-{:?}",
        bench.spec.h,
        bench.spec.w,
        bench.spec.c_in,
        bench.spec.act,
        bench.spec.wgt,
        bench.spec.sign,
        bench.mode,
        bench.path
    );
    run_generated(&name, &prog, cfg, params)
}

pub fn run_matmul(
    bench: &MatmulBench,
    cfg: &ClusterConfig,
    params: &EnergyParams,
) -> Result<BenchResult, BenchError> {
    let prog = gen_matmul(bench, cfg)?;
    let name = format!(
        "matmul{}x{}x{}-{:?}",
        bench.rows, bench.inner, bench.cols, bench.mode
    );
    run_generated(&name, &prog, cfg, params)
}

#[derive(Debug, Clone, Serialize)]
pub struct VecaddResult {
    pub name: String,
    pub metrics: Metrics,
    pub verified: bool,
}

pub fn run_vecadd(
    bench: &VecaddBench,
    cfg: &ClusterConfig,
    params: &EnergyParams,
) -> Result<VecaddResult, BenchError> {
    let prog = gen_vecadd(bench, cfg)?;
    let name = format!(
        "vecadd-c{}-s{}-{:?}",
        bench.chunk, bench.elem_bytes, bench.mode
    );
    let program = asm::assemble(&prog.asm, &format!("{name}.s")).map_err(BenchError::Asm)?;
    let mut cluster = Cluster::new(cfg.clone(), *params);
    asm::load(&program, &mut cluster)?;
    cluster.run(Some(BENCH_CYCLE_CAP))?;
    let got = cluster
        .read_bytes(prog.c_base, prog.n_bytes as usize)
        .expect("result vector must be mapped");
    if got != prog.expected {
        let i = got
            .iter()
            .zip(&prog.expected)
            .position(|(a, b)| a != b)
            .unwrap();
        return Err(BenchError::Verify {
            name,
            detail: format!("byte {i}: got {:#04x}, expected {:#04x}", got[i], prog.expected[i]),
        });
    }
    Ok(VecaddResult {
        name,
        metrics: cluster.metrics(),
        verified: true,
    })
}

/// The calibration workload: the 8-bit parallel matmul in both modes.
pub fn calibration_pair(
    params: &EnergyParams,
) -> Result<(BenchResult, BenchResult), BenchError> {
    let cfg = ClusterConfig::default();
    let mimd = run_matmul(
        &MatmulBench {
            mode: Mode::Mimd,
            ..MatmulBench::default()
        },
        &cfg,
        params,
    )?;
    let vlem = run_matmul(
        &MatmulBench {
            mode: Mode::Vlem,
            ..MatmulBench::default()
        },
        &cfg,
        params,
    )?;
    Ok((mimd, vlem))
}

// ---------------------------------------------------------------------
// conflict ladder

#[derive(Debug, Clone, Serialize)]
pub struct LadderRung {
    pub name: String,
    pub mimd_cycles: u64,
    pub vlem_cycles: u64,
    pub overhead_pct: f64,
    pub target_pct: f64,
    pub within_band: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct LadderReport {
    pub rungs: Vec<LadderRung>,
}

/// The lockstep-overhead ladder on the 16x16x16 layer: no countermeasure,
/// broadcast only, broadcast plus misaligned allocation. Each rung
/// compares a lockstep run against the matched MIMD run.
pub fn run_ladder(params: &EnergyParams) -> Result<LadderReport, BenchError> {
    let spec = ConvSpec::new(16, 16, 16, 16, 3);
    let cases: [(&str, bool, AllocPolicy, f64); 3] = [
        ("naive", false, AllocPolicy::Naive, 73.0),
        ("broadcast", true, AllocPolicy::Naive, 50.0),
        ("misaligned", true, AllocPolicy::Misaligned, 3.0),
    ];
    let mut rungs = Vec::new();
    for (name, broadcast, alloc, target) in cases {
        let mut cfg = ClusterConfig::default();
        cfg.broadcast_enabled = broadcast;
        let mk = |mode: Mode| ConvBench {
            spec: spec.clone(),
            mode,
            path: MixedPath::Hardware,
            alloc,
            im2col: Im2colStyle::Byte,
            seed: 0x1ADE,
        };
        let mimd = run_conv(&mk(Mode::Mimd), &cfg, params)?;
        let vlem = run_conv(&mk(Mode::Vlem), &cfg, params)?;
        let overhead_pct = 100.0 * (vlem.metrics.cycles as f64 - mimd.metrics.cycles as f64)
            / mimd.metrics.cycles as f64;
        rungs.push(LadderRung {
            name: name.to_string(),
            mimd_cycles: mimd.metrics.cycles,
            vlem_cycles: vlem.metrics.cycles,
            overhead_pct,
            target_pct: target,
            within_band: (overhead_pct - target).abs() <= 10.0,
        });
    }
    Ok(LadderReport { rungs })
}

// ---------------------------------------------------------------------
// mini-CNN

#[derive(Debug, Clone, Serialize)]
pub struct CnnRun {
    pub name: String,
    pub cycles: u64,
    pub energy_pj: f64,
    pub verified: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct MiniCnnReport {
    pub all_mimd: CnnRun,
    pub phased_vlem: CnnRun,
    pub baseline_sw_mimd: CnnRun,
    pub combined_hw_vlem: CnnRun,
    pub phased_energy_reduction_pct: f64,
    pub phased_time_increase_pct: f64,
    pub combined_cycle_reduction_pct: f64,
    pub combined_energy_reduction_pct: f64,
}

fn mini_cnn_layers(wgt: Precision) -> Vec<ConvSpec> {
    (0..3)
        .map(|_| ConvSpec::new(8, 8, 16, 16, 3).with_formats(Precision::B8, wgt))
        .collect()
}

fn run_cnn(
    name: &str,
    specs: &[ConvSpec],
    mode: Mode,
    path: MixedPath,
    cfg: &ClusterConfig,
    params: &EnergyParams,
) -> Result<CnnRun, BenchError> {
    let prog = gen_cnn(specs, mode, path, cfg, 0xC22)?;
    let r = run_generated(name, &prog, cfg, params)?;
    Ok(CnnRun {
        name: name.to_string(),
        cycles: r.metrics.cycles,
        energy_pj: r.energy.total_pj,
        verified: r.verified,
    })
}

/// Three chained convolution layers, the end-to-end experiment: phased
/// lockstep vs all-MIMD at 8-bit, and hardware-mixed lockstep vs the
/// software baseline at 8x4.
pub fn run_mini_cnn(params: &EnergyParams) -> Result<MiniCnnReport, BenchError> {
    let cfg = ClusterConfig::default();
    let l8 = mini_cnn_layers(Precision::B8);
    let l84 = mini_cnn_layers(Precision::B4);

    let all_mimd = run_cnn("cnn8-mimd", &l8, Mode::Mimd, MixedPath::Hardware, &cfg, params)?;
    let phased = run_cnn("cnn8-vlem", &l8, Mode::Vlem, MixedPath::Hardware, &cfg, params)?;
    let baseline = run_cnn(
        "cnn8x4-sw-mimd",
        &l84,
        Mode::Mimd,
        MixedPath::Software,
        &cfg,
        params,
    )?;
    let combined = run_cnn(
        "cnn8x4-hw-vlem",
        &l84,
        Mode::Vlem,
        MixedPath::Hardware,
        &cfg,
        params,
    )?;

    let pct = |a: f64, b: f64| 100.0 * (a - b) / a;
    Ok(MiniCnnReport {
        phased_energy_reduction_pct: pct(all_mimd.energy_pj, phased.energy_pj),
        phased_time_increase_pct: -pct(all_mimd.cycles as f64, phased.cycles as f64),
        combined_cycle_reduction_pct: pct(baseline.cycles as f64, combined.cycles as f64),
        combined_energy_reduction_pct: pct(baseline.energy_pj, combined.energy_pj),
        all_mimd,
        phased_vlem: phased,
        baseline_sw_mimd: baseline,
        combined_hw_vlem: combined,
    })
}

// ---------------------------------------------------------------------
// format sweep

#[derive(Debug, Clone, Serialize)]
pub struct FormatRow {
    pub act_bits: u32,
    pub wgt_bits: u32,
    pub path: String,
    pub cycles: u64,
    pub mac_per_cycle: f64,
    pub verified: bool,
}

/// Runs the conv kernel across all ten precision pairs on the hardware
/// path plus every software-expressible pair, in lockstep mode.
pub fn run_format_sweep(
    params: &EnergyParams,
    spec_base: &ConvSpec,
) -> Result<Vec<FormatRow>, BenchError> {
    let cfg = ClusterConfig::default();
    let mut rows = Vec::new();
    for (a, b) in crate::simd::SimdFormat::all_pairs() {
        for path in [MixedPath::Hardware, MixedPath::Software] {
            let spec = spec_base.clone().with_formats(a, b);
            let bench = ConvBench {
                spec,
                mode: Mode::Vlem,
                path,
                alloc: AllocPolicy::Misaligned,
                im2col: Im2colStyle::Word,
                seed: 0xF0F0,
            };
            match run_conv(&bench, &cfg, params) {
                Ok(r) => rows.push(FormatRow {
                    act_bits: a.bits(),
                    wgt_bits: b.bits(),
                    path: format!("{path:?}").to_lowercase(),
                    cycles: r.metrics.cycles,
                    mac_per_cycle: r.mac_per_cycle,
                    verified: r.verified,
                }),
                Err(BenchError::Gen(GenError::Unsupported(_))) => continue,
                Err(e) => return Err(e),
            }
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> ConvSpec {
        ConvSpec::new(8, 4, 16, 8, 3)
    }

    #[test]
    fn conv_hardware_uniform_matches_golden() {
        let r = run_conv(
            &ConvBench {
                spec: small_spec(),
                mode: Mode::Mimd,
                path: MixedPath::Hardware,
                alloc: AllocPolicy::Misaligned,
                im2col: Im2colStyle::Word,
                seed: 7,
            },
            &ClusterConfig::default(),
            &EnergyParams::default(),
        )
        .expect("bench should pass");
        assert!(r.verified);
        assert!(r.metrics.macs > 0);
    }

    #[test]
    fn conv_all_formats_both_modes_match_golden() {
        let cfg = ClusterConfig::default();
        let params = EnergyParams::default();
        for (a, b) in crate::simd::SimdFormat::all_pairs() {
            for mode in [Mode::Mimd, Mode::Vlem] {
                for path in [MixedPath::Hardware, MixedPath::Software] {
                    let bench = ConvBench {
                        spec: small_spec().with_formats(a, b),
                        mode,
                        path,
                        alloc: AllocPolicy::Misaligned,
                        im2col: Im2colStyle::Word,
                        seed: 21,
                    };
                    match run_conv(&bench, &cfg, &params) {
                        Ok(r) => assert!(r.verified, "{}", r.name),
                        Err(BenchError::Gen(GenError::Unsupported(_))) => continue,
                        Err(e) => panic!("{a}x{b} {mode:?} {path:?}: {e}"),
                    }
                }
            }
        }
    }

    #[test]
    fn software_path_rejects_16bit_mixed() {
        let bench = ConvBench {
            spec: small_spec().with_formats(Precision::B16, Precision::B4),
            mode: Mode::Mimd,
            path: MixedPath::Software,
            alloc: AllocPolicy::Misaligned,
            im2col: Im2colStyle::Word,
            seed: 0,
        };
        let err = gen_conv(&bench, &ClusterConfig::default());
        assert!(matches!(err, Err(GenError::Unsupported(_))));
    }

    #[test]
    fn hw_and_sw_mixed_paths_agree_bitwise_with_6_instruction_overhead() {
        let cfg = ClusterConfig::default();
        let params = EnergyParams::default();
        let mk = |path| ConvBench {
            spec: small_spec().with_formats(Precision::B8, Precision::B4),
            mode: Mode::Mimd,
            path,
            alloc: AllocPolicy::Misaligned,
            im2col: Im2colStyle::Word,
            seed: 33,
        };
        let hw_prog = gen_conv(&mk(MixedPath::Hardware), &cfg).unwrap();
        let sw_prog = gen_conv(&mk(MixedPath::Software), &cfg).unwrap();
        assert_eq!(hw_prog.expected, sw_prog.expected);
        assert_eq!(hw_prog.n_sdotp, sw_prog.n_sdotp);
        let hw = run_generated("hw84", &hw_prog, &cfg, &params).unwrap();
        let sw = run_generated("sw84", &sw_prog, &cfg, &params).unwrap();
        assert!(hw.verified && sw.verified);
        let delta = sw.metrics.instructions_retired - hw.metrics.instructions_retired;
        assert_eq!(delta, 6 * sw_prog.n_sdotp, "unpack overhead per dot product");
    }

    #[test]
    fn matmul_both_modes_verified() {
        let params = EnergyParams::default();
        let (mimd, vlem) = calibration_pair(&params).expect("calibration pair runs");
        assert!(mimd.verified && vlem.verified);
        assert!(vlem.metrics.broadcasts > 0, "weights should broadcast");
        // functionally identical work, near-identical cycles
        let delta = (vlem.metrics.cycles as f64 - mimd.metrics.cycles as f64).abs()
            / mimd.metrics.cycles as f64;
        assert!(delta < 0.01, "cycle delta {delta}");
    }

    #[test]
    fn vecadd_good_chunks_conflict_free() {
        let cfg = ClusterConfig::default();
        let params = EnergyParams::default();
        for (s, chunk) in [(4u32, 1u32), (4, 2), (1, 4), (1, 8), (2, 2), (2, 4)] {
            let r = run_vecadd(
                &VecaddBench {
                    chunk,
                    elem_bytes: s,
                    groups: 3,
                    mode: Mode::Vlem,
                    seed: 5,
                },
                &cfg,
                &params,
            )
            .expect("vecadd runs");
            assert!(r.verified);
            assert_eq!(
                r.metrics.bank_conflict_stall_cycles, 0,
                "chunk {chunk} elem {s} must be conflict-free"
            );
        }
    }

    #[test]
    fn vecadd_chunk_64_conflicts_every_round() {
        let r = run_vecadd(
            &VecaddBench {
                chunk: 64,
                elem_bytes: 4,
                groups: 2,
                mode: Mode::Vlem,
                seed: 5,
            },
            &ClusterConfig::default(),
            &EnergyParams::default(),
        )
        .expect("vecadd runs");
        // every load/store round serializes over all 16 cores
        let rounds = 2 * 64 * 3; // groups * chunk * (2 loads + 1 store)
        assert!(
            r.metrics.bank_conflict_stall_cycles >= (rounds as u64) * 15,
            "stalls = {}",
            r.metrics.bank_conflict_stall_cycles
        );
    }
}
