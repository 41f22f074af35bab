//! Instruction-level, cycle-approximate, energy-annotated simulator of a
//! 16-core RISC-V cluster with 2-to-16-bit fully mixed-precision SIMD
//! arithmetic and a switchable vector lockstep execution mode (VLEM).
//!
//! The crate is organized as:
//!
//! - [`simd`]: bit-exact semantics of the mixed-precision dot-product
//!   datapath and the pack/extract instructions, plus an independent
//!   scalar oracle.
//! - [`isa`]: the decoded instruction set and its textual forms.
//! - [`asm`]: two-pass assembler, disassembler and program loader.
//! - [`core`]: one in-order core: registers, CSRs (format register and
//!   mixed-precision controller), hardware loops, cycle costs.
//! - [`cluster`]: 16 cores, 32-bank TCDM with round-robin arbitration,
//!   the lockstep unit (grant-hold, broadcast), event unit and a
//!   two-level instruction-cache model.
//! - [`energy`]: per-cycle activity-event energy accounting.
//! - [`kernels`]: memory-layout HAL formulas, golden QNN models and
//!   assembly kernel generators driving the benchmarks.
//! - [`cli`]: the `mpsim` command-line front end.

pub mod asm;
pub mod cli;
pub mod cluster;
pub mod config;
pub mod core;
pub mod energy;
pub mod isa;
pub mod kernels;
pub mod simd;
