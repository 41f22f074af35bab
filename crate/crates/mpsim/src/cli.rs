//! The `mpsim` command line: assemble, run, benchmark and sweep.
//!
//! Exit codes are a stable contract: 0 success, 1 input error,
//! 2 simulation trap/divergence/deadlock/timeout, 3 verification
//! mismatch.

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::asm;
use crate::cluster::{Cluster, ClusterConfig, Metrics};
use crate::config;
use crate::energy::{EnergyParams, EnergyReport};
use crate::kernels::{self, suite, BenchError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_SIM: i32 = 2;
pub const EXIT_VERIFY: i32 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "mpsim",
    version,
    about = "Cycle-approximate simulator of a 16-core mixed-precision cluster with a vector lockstep mode"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Assemble a source file and print (or write) the listing.
    Asm(AsmArgs),
    /// Assemble, load and run a program on the cluster.
    Run(RunArgs),
    /// Run a benchmark suite file and emit CSV results.
    Bench(BenchArgs),
    /// Sweep energy parameters over the calibration matmul.
    Sweep(SweepArgs),
}

#[derive(Args, Debug)]
pub struct AsmArgs {
    /// Assembly source file.
    pub input: PathBuf,
    /// Write the listing here instead of stdout.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    /// Print the disassembled (round-tripped) program.
    #[arg(long)]
    pub disasm: bool,
}

#[derive(Args, Debug)]
pub struct RunArgs {
    /// Assembly source file.
    pub program: PathBuf,
    /// Cluster configuration file (key=value).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Energy parameter file (key=value, pJ).
    #[arg(long)]
    pub energy_params: Option<PathBuf>,
    /// Fail on lockstep divergence (default; see --permissive-divergence).
    #[arg(long)]
    pub mode_strict_divergence: bool,
    /// Record divergences and force the leader's PC instead of failing.
    #[arg(long, conflicts_with = "mode_strict_divergence")]
    pub permissive_divergence: bool,
    /// Stop with an error after this many cycles.
    #[arg(long)]
    pub max_cycles: Option<u64>,
    /// Write the JSON report here ("-" for stdout, the default).
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Benchmark suite file.
    #[arg(long)]
    pub suite: PathBuf,
    /// Write CSV here instead of stdout.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub energy_params: Option<PathBuf>,
    /// Seed override applied to every entry.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    /// Parameter grid: `--param key=v1,v2,...`, repeatable (cartesian).
    #[arg(long = "param", required = true)]
    pub params: Vec<String>,
    /// Write CSV here instead of stdout.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long)]
    pub energy_params: Option<PathBuf>,
}

/// Output of one CLI invocation, separated for testability.
pub struct Outcome {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

impl Outcome {
    fn ok(stdout: String) -> Outcome {
        Outcome {
            code: EXIT_OK,
            stdout,
            stderr: String::new(),
        }
    }

    fn fail(code: i32, stderr: String) -> Outcome {
        Outcome {
            code,
            stdout: String::new(),
            stderr,
        }
    }
}

/// The machine-readable run report. Key names are a stable contract.
#[derive(Serialize)]
struct RunReport {
    tool_version: &'static str,
    input_sha256: String,
    config: ClusterConfig,
    energy_params: EnergyParams,
    cycles: u64,
    instructions_retired: u64,
    per_core: Vec<PerCore>,
    tcdm: TcdmReport,
    vlem: VlemReport,
    energy: EnergyJson,
    macs: u64,
    macs_per_cycle: f64,
    verified: Option<bool>,
}

#[derive(Serialize)]
struct PerCore {
    core: usize,
    retired: u64,
}

#[derive(Serialize)]
struct TcdmReport {
    accesses: u64,
    conflict_stall_cycles: u64,
    broadcasts: u64,
}

#[derive(Serialize)]
struct VlemReport {
    entries: u64,
    exits: u64,
    cycles_in_vlem: u64,
}

#[derive(Serialize)]
struct EnergyJson {
    #[serde(rename = "total_pJ")]
    total_pj: f64,
    by_unit: BTreeMap<String, f64>,
    #[serde(rename = "pJ_per_cycle")]
    pj_per_cycle: f64,
}

fn report_json(
    cfg: &ClusterConfig,
    params: &EnergyParams,
    hash: String,
    metrics: &Metrics,
    energy: &EnergyReport,
    verified: Option<bool>,
) -> String {
    let report = RunReport {
        tool_version: env!("CARGO_PKG_VERSION"),
        input_sha256: hash,
        config: cfg.clone(),
        energy_params: *params,
        cycles: metrics.cycles,
        instructions_retired: metrics.instructions_retired,
        per_core: metrics
            .retired_per_core
            .iter()
            .enumerate()
            .map(|(core, &retired)| PerCore { core, retired })
            .collect(),
        tcdm: TcdmReport {
            accesses: metrics.tcdm_accesses,
            conflict_stall_cycles: metrics.bank_conflict_stall_cycles,
            broadcasts: metrics.broadcasts,
        },
        vlem: VlemReport {
            entries: metrics.vlem_entries,
            exits: metrics.vlem_exits,
            cycles_in_vlem: metrics.cycles_in_vlem,
        },
        energy: EnergyJson {
            total_pj: energy.total_pj,
            by_unit: energy.by_unit.clone(),
            pj_per_cycle: energy.pj_per_cycle,
        },
        macs: metrics.macs,
        macs_per_cycle: metrics.macs_per_cycle(),
        verified,
    };
    serde_json::to_string_pretty(&report).expect("report serialization cannot fail")
}

pub fn execute(cli: Cli) -> Outcome {
    match cli.command {
        Command::Asm(a) => cmd_asm(a),
        Command::Run(a) => cmd_run(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Sweep(a) => cmd_sweep(a),
    }
}

fn read_file(path: &PathBuf) -> Result<String, Outcome> {
    fs::read_to_string(path).map_err(|e| {
        Outcome::fail(EXIT_INPUT, format!("cannot read {}: {e}\n", path.display()))
    })
}

fn load_config(path: &Option<PathBuf>) -> Result<ClusterConfig, Outcome> {
    match path {
        None => Ok(ClusterConfig::default()),
        Some(p) => {
            let text = read_file(p)?;
            config::cluster_config_from_kv(&text)
                .map_err(|e| Outcome::fail(EXIT_INPUT, format!("{}: {e}\n", p.display())))
        }
    }
}

fn load_params(path: &Option<PathBuf>) -> Result<EnergyParams, Outcome> {
    match path {
        None => Ok(EnergyParams::default()),
        Some(p) => {
            let text = read_file(p)?;
            EnergyParams::from_kv_text(&text)
                .map_err(|e| Outcome::fail(EXIT_INPUT, format!("{}: {e}\n", p.display())))
        }
    }
}

fn write_or_stdout(path: &Option<PathBuf>, content: String) -> Outcome {
    match path {
        Some(p) if p.as_os_str() != "-" => match fs::write(p, &content) {
            Ok(()) => Outcome::ok(String::new()),
            Err(e) => Outcome::fail(EXIT_INPUT, format!("cannot write {}: {e}\n", p.display())),
        },
        _ => Outcome::ok(content),
    }
}

fn cmd_asm(a: AsmArgs) -> Outcome {
    let source = match read_file(&a.input) {
        Ok(s) => s,
        Err(o) => return o,
    };
    let file = a.input.display().to_string();
    match asm::assemble(&source, &file) {
        Ok(program) => {
            let listing = asm::disassemble(&program);
            if a.disasm {
                // prove the round trip before emitting
                if let Err(errs) = asm::assemble(&listing, "roundtrip") {
                    return Outcome::fail(
                        EXIT_INPUT,
                        format!("round-trip failed: {}\n", errs[0]),
                    );
                }
            }
            write_or_stdout(&a.output, listing)
        }
        Err(errors) => {
            let mut msg = String::new();
            for e in errors {
                msg.push_str(&format!("{e}\n"));
            }
            Outcome::fail(EXIT_INPUT, msg)
        }
    }
}

fn cmd_run(a: RunArgs) -> Outcome {
    let source = match read_file(&a.program) {
        Ok(s) => s,
        Err(o) => return o,
    };
    let mut cfg = match load_config(&a.config) {
        Ok(c) => c,
        Err(o) => return o,
    };
    if a.mode_strict_divergence {
        cfg.strict_divergence = true;
    }
    if a.permissive_divergence {
        cfg.strict_divergence = false;
    }
    let params = match load_params(&a.energy_params) {
        Ok(p) => p,
        Err(o) => return o,
    };

    let file = a.program.display().to_string();
    let program = match asm::assemble(&source, &file) {
        Ok(p) => p,
        Err(errors) => {
            let mut msg = String::new();
            for e in errors {
                msg.push_str(&format!("{e}\n"));
            }
            return Outcome::fail(EXIT_INPUT, msg);
        }
    };

    let hash = hex_digest(source.as_bytes());
    let mut cluster = Cluster::new(cfg.clone(), params);
    if let Err(e) = asm::load(&program, &mut cluster) {
        return Outcome::fail(EXIT_INPUT, format!("{e}\n"));
    }
    match cluster.run(a.max_cycles) {
        Ok(()) => {
            let metrics = cluster.metrics();
            let energy = cluster.energy.report(metrics.cycles);
            let json = report_json(&cfg, &params, hash, &metrics, &energy, None);
            write_or_stdout(&a.json, json + "\n")
        }
        Err(e) => {
            let metrics = cluster.metrics();
            Outcome::fail(
                EXIT_SIM,
                format!(
                    "{e}\npartial metrics: {} cycles, {} instructions retired\n",
                    metrics.cycles, metrics.instructions_retired
                ),
            )
        }
    }
}

fn cmd_bench(a: BenchArgs) -> Outcome {
    let text = match read_file(&a.suite) {
        Ok(s) => s,
        Err(o) => return o,
    };
    let cfg = match load_config(&a.config) {
        Ok(c) => c,
        Err(o) => return o,
    };
    let params = match load_params(&a.energy_params) {
        Ok(p) => p,
        Err(o) => return o,
    };
    let mut entries = match suite::parse_suite(&text) {
        Ok(e) => e,
        Err(e) => {
            return Outcome::fail(
                EXIT_INPUT,
                format!(
                    "{}: {e}\nusage: suite files hold key=value blocks, one `kind = ...` each\n",
                    a.suite.display()
                ),
            )
        }
    };
    if let Some(seed) = a.seed {
        for entry in &mut entries {
            match entry {
                suite::SuiteEntry::Conv(c) => c.seed = seed,
                suite::SuiteEntry::Matmul(m) => m.seed = seed,
                suite::SuiteEntry::Vecadd(v) => v.seed = seed,
                _ => {}
            }
        }
    }
    match suite::run_suite(&entries, &cfg, &params) {
        Ok(rows) => write_or_stdout(&a.csv, suite::rows_to_csv(&rows)),
        Err(e) => Outcome::fail(bench_error_code(&e), format!("{e}\n")),
    }
}

fn bench_error_code(e: &BenchError) -> i32 {
    match e {
        BenchError::Verify { .. } => EXIT_VERIFY,
        BenchError::Sim(_) => EXIT_SIM,
        _ => EXIT_INPUT,
    }
}

fn cmd_sweep(a: SweepArgs) -> Outcome {
    let base = match load_params(&a.energy_params) {
        Ok(p) => p,
        Err(o) => return o,
    };
    // parse the grid
    let mut axes: Vec<(String, Vec<f64>)> = Vec::new();
    for spec in &a.params {
        let Some((key, values)) = spec.split_once('=') else {
            return Outcome::fail(EXIT_INPUT, format!("bad --param `{spec}`: expected key=v1,v2\n"));
        };
        let mut parsed = Vec::new();
        for v in values.split(',') {
            match v.trim().parse::<f64>() {
                Ok(x) if x.is_finite() && x >= 0.0 => parsed.push(x),
                _ => {
                    return Outcome::fail(EXIT_INPUT, format!("bad value `{v}` in --param {key}\n"))
                }
            }
        }
        if parsed.is_empty() {
            return Outcome::fail(EXIT_INPUT, format!("--param {key} has no values\n"));
        }
        // validate the key against the parameter set
        let mut probe = base;
        if let Err(e) = probe.set(key.trim(), parsed[0]) {
            return Outcome::fail(EXIT_INPUT, format!("{e}\n"));
        }
        axes.push((key.trim().to_string(), parsed));
    }

    let mut csv = String::from("point");
    for (k, _) in &axes {
        csv.push(',');
        csv.push_str(k);
    }
    csv.push_str(",mimd_pj_per_cycle,vlem_pj_per_cycle,ratio,savings_pct,mimd_cycles,vlem_cycles\n");

    let mut point = vec![0usize; axes.len()];
    let mut index = 0usize;
    loop {
        let mut params = base;
        for (axis, &i) in axes.iter().zip(&point) {
            params.set(&axis.0, axis.1[i]).unwrap();
        }
        match kernels::calibration_pair(&params) {
            Ok((mimd, vlem)) => {
                let ratio = vlem.energy.pj_per_cycle / mimd.energy.pj_per_cycle;
                csv.push_str(&format!("{index}"));
                for (axis, &i) in axes.iter().zip(&point) {
                    csv.push_str(&format!(",{}", axis.1[i]));
                }
                csv.push_str(&format!(
                    ",{:.4},{:.4},{:.4},{:.1},{},{}\n",
                    mimd.energy.pj_per_cycle,
                    vlem.energy.pj_per_cycle,
                    ratio,
                    100.0 * (1.0 - ratio),
                    mimd.metrics.cycles,
                    vlem.metrics.cycles
                ));
            }
            Err(e) => return Outcome::fail(bench_error_code(&e), format!("{e}\n")),
        }
        index += 1;
        // advance the cartesian counter
        let mut axis = axes.len();
        loop {
            if axis == 0 {
                return write_or_stdout(&a.csv, csv);
            }
            axis -= 1;
            point[axis] += 1;
            if point[axis] < axes[axis].1.len() {
                break;
            }
            point[axis] = 0;
        }
    }
}

fn hex_digest(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn tmpfile(content: &str, suffix: &str) -> PathBuf {
        let dir = std::env::temp_dir();
        let path = dir.join(format!(
            "mpsim-test-{}-{suffix}",
            std::process::id() as u64 ^ content.len() as u64
        ));
        let mut f = fs::File::create(&path).unwrap();
        f.write_all(content.as_bytes()).unwrap();
        path
    }

    #[test]
    fn asm_ok_and_error_exit_codes() {
        let good = tmpfile("addi x5, x0, 42\n", "good.s");
        let out = execute(Cli {
            command: Command::Asm(AsmArgs {
                input: good.clone(),
                output: None,
                disasm: true,
            }),
        });
        assert_eq!(out.code, EXIT_OK);
        assert!(out.stdout.contains("addi x5, x0, 42"));
        fs::remove_file(good).ok();

        let bad = tmpfile("frobnicate x1\n", "bad.s");
        let out = execute(Cli {
            command: Command::Asm(AsmArgs {
                input: bad.clone(),
                output: None,
                disasm: false,
            }),
        });
        assert_eq!(out.code, EXIT_INPUT);
        assert!(out.stderr.contains(":1:"), "diagnostic: {}", out.stderr);
        fs::remove_file(bad).ok();
    }

    #[test]
    fn run_emits_schema_keys_and_is_deterministic() {
        let prog = tmpfile(
            "li x5, 10\nlp.setup 0, x5, e\naddi x6, x6, 1\ne:\nbarrier\nend: j end\n",
            "run.s",
        );
        let run = || {
            execute(Cli {
                command: Command::Run(RunArgs {
                    program: prog.clone(),
                    config: None,
                    energy_params: None,
                    mode_strict_divergence: false,
                    permissive_divergence: false,
                    max_cycles: Some(100_000),
                    json: None,
                }),
            })
        };
        let a = run();
        let b = run();
        assert_eq!(a.code, EXIT_OK, "{}", a.stderr);
        assert_eq!(a.stdout, b.stdout, "reports must be byte-identical");
        for key in [
            "\"cycles\"",
            "\"instructions_retired\"",
            "\"per_core\"",
            "\"tcdm\"",
            "\"accesses\"",
            "\"conflict_stall_cycles\"",
            "\"broadcasts\"",
            "\"vlem\"",
            "\"entries\"",
            "\"exits\"",
            "\"cycles_in_vlem\"",
            "\"energy\"",
            "\"total_pJ\"",
            "\"by_unit\"",
            "\"pJ_per_cycle\"",
            "\"macs\"",
            "\"macs_per_cycle\"",
            "\"verified\"",
        ] {
            assert!(a.stdout.contains(key), "missing {key}");
        }
        fs::remove_file(prog).ok();
    }

    #[test]
    fn divergent_program_exits_2_under_strict_mode() {
        let prog = tmpfile(
            "csrrs x5, mhartid, x0\nbarrier\nvlem.on\nbeq x5, x0, t\nt:\nvlem.off\nbarrier\nend: j end\n",
            "div.s",
        );
        let out = execute(Cli {
            command: Command::Run(RunArgs {
                program: prog.clone(),
                config: None,
                energy_params: None,
                mode_strict_divergence: true,
                permissive_divergence: false,
                max_cycles: Some(100_000),
                json: None,
            }),
        });
        assert_eq!(out.code, EXIT_SIM, "{}", out.stderr);
        assert!(out.stderr.contains("divergence"), "{}", out.stderr);
        fs::remove_file(prog).ok();
    }

    #[test]
    fn empty_suite_exits_1_with_usage() {
        let f = tmpfile("", "empty.suite");
        let out = execute(Cli {
            command: Command::Bench(BenchArgs {
                suite: f.clone(),
                csv: None,
                config: None,
                energy_params: None,
                seed: None,
            }),
        });
        assert_eq!(out.code, EXIT_INPUT);
        assert!(out.stderr.contains("usage"), "{}", out.stderr);
        fs::remove_file(f).ok();
    }

    #[test]
    fn malformed_sweep_grid_exits_1() {
        let out = execute(Cli {
            command: Command::Sweep(SweepArgs {
                params: vec!["not-a-grid".into()],
                csv: None,
                energy_params: None,
            }),
        });
        assert_eq!(out.code, EXIT_INPUT);
        let out = execute(Cli {
            command: Command::Sweep(SweepArgs {
                params: vec!["bogus_key=1.0".into()],
                csv: None,
                energy_params: None,
            }),
        });
        assert_eq!(out.code, EXIT_INPUT);
    }
}
