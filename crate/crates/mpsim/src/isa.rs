//! The decoded instruction set: an RV32IM scalar subset, the DSP extras
//! the kernels need (hardware loops, post-increment load/store, lane
//! extract, byte packing) and the virtual SIMD dot-product family whose
//! operand precision lives in a CSR rather than in the instruction.
//!
//! Programs store decoded instructions; there is no binary encoding.
//! Immediates are full 32-bit values.

use std::fmt;

use crate::simd::{PackHalf, SignMode};

/// Register index, 0..=31. Writes to register 0 are discarded.
pub type Reg = u8;

/// The complete mnemonic table of the textual ISA.
pub const MNEMONICS: &[&str] = &[
    "add", "sub", "and", "or", "xor", "sll", "srl", "sra", "slt", "sltu", "addi", "andi", "ori",
    "xori", "slli", "srli", "srai", "slti", "lui", "auipc", "mul", "mulh", "div", "rem", "lw",
    "lh", "lhu", "lb", "lbu", "sw", "sh", "sb", "beq", "bne", "blt", "bge", "bltu", "bgeu", "jal",
    "jalr", "csrrw", "csrrs", "csrrc", "csrrwi", "lp.setup", "lp.count", "lp.start", "lp.end",
    "p.lw", "p.sw", "p.extract", "p.extractu", "pv.packlo.b", "pv.packhi.b", "pv.dotp", "pv.dotpu",
    "pv.dotpus", "pv.sdotp", "pv.sdotpu", "pv.sdotpus", "barrier", "vlem.on", "vlem.off",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AluOp {
    Add,
    Sub,
    And,
    Or,
    Xor,
    Sll,
    Srl,
    Sra,
    Slt,
    Sltu,
    Mul,
    Mulh,
    Div,
    Rem,
}

impl AluOp {
    pub fn mnemonic(self) -> &'static str {
        match self {
            AluOp::Add => "add",
            AluOp::Sub => "sub",
            AluOp::And => "and",
            AluOp::Or => "or",
            AluOp::Xor => "xor",
            AluOp::Sll => "sll",
            AluOp::Srl => "srl",
            AluOp::Sra => "sra",
            AluOp::Slt => "slt",
            AluOp::Sltu => "sltu",
            AluOp::Mul => "mul",
            AluOp::Mulh => "mulh",
            AluOp::Div => "div",
            AluOp::Rem => "rem",
        }
    }

    pub fn eval(self, a: u32, b: u32) -> u32 {
        match self {
            AluOp::Add => a.wrapping_add(b),
            AluOp::Sub => a.wrapping_sub(b),
            AluOp::And => a & b,
            AluOp::Or => a | b,
            AluOp::Xor => a ^ b,
            AluOp::Sll => a.wrapping_shl(b & 31),
            AluOp::Srl => a.wrapping_shr(b & 31),
            AluOp::Sra => (a as i32).wrapping_shr(b & 31) as u32,
            AluOp::Slt => ((a as i32) < (b as i32)) as u32,
            AluOp::Sltu => (a < b) as u32,
            AluOp::Mul => a.wrapping_mul(b),
            AluOp::Mulh => ((a as i32 as i64 * b as i32 as i64) >> 32) as u32,
            AluOp::Div => {
                if b == 0 {
                    u32::MAX
                } else if a as i32 == i32::MIN && b as i32 == -1 {
                    a
                } else {
                    (a as i32 / b as i32) as u32
                }
            }
            AluOp::Rem => {
                if b == 0 {
                    a
                } else if a as i32 == i32::MIN && b as i32 == -1 {
                    0
                } else {
                    (a as i32 % b as i32) as u32
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AluImmOp {
    Addi,
    Andi,
    Ori,
    Xori,
    Slli,
    Srli,
    Srai,
    Slti,
}

impl AluImmOp {
    pub fn mnemonic(self) -> &'static str {
        match self {
            AluImmOp::Addi => "addi",
            AluImmOp::Andi => "andi",
            AluImmOp::Ori => "ori",
            AluImmOp::Xori => "xori",
            AluImmOp::Slli => "slli",
            AluImmOp::Srli => "srli",
            AluImmOp::Srai => "srai",
            AluImmOp::Slti => "slti",
        }
    }

    pub fn eval(self, a: u32, imm: i32) -> u32 {
        match self {
            AluImmOp::Addi => a.wrapping_add(imm as u32),
            AluImmOp::Andi => a & imm as u32,
            AluImmOp::Ori => a | imm as u32,
            AluImmOp::Xori => a ^ imm as u32,
            AluImmOp::Slli => a.wrapping_shl(imm as u32 & 31),
            AluImmOp::Srli => a.wrapping_shr(imm as u32 & 31),
            AluImmOp::Srai => (a as i32).wrapping_shr(imm as u32 & 31) as u32,
            AluImmOp::Slti => ((a as i32) < imm) as u32,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BranchCond {
    Eq,
    Ne,
    Lt,
    Ge,
    Ltu,
    Geu,
}

impl BranchCond {
    pub fn mnemonic(self) -> &'static str {
        match self {
            BranchCond::Eq => "beq",
            BranchCond::Ne => "bne",
            BranchCond::Lt => "blt",
            BranchCond::Ge => "bge",
            BranchCond::Ltu => "bltu",
            BranchCond::Geu => "bgeu",
        }
    }

    pub fn holds(self, a: u32, b: u32) -> bool {
        match self {
            BranchCond::Eq => a == b,
            BranchCond::Ne => a != b,
            BranchCond::Lt => (a as i32) < (b as i32),
            BranchCond::Ge => (a as i32) >= (b as i32),
            BranchCond::Ltu => a < b,
            BranchCond::Geu => a >= b,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MemWidth {
    Byte,
    Half,
    Word,
}

impl MemWidth {
    pub fn bytes(self) -> u32 {
        match self {
            MemWidth::Byte => 1,
            MemWidth::Half => 2,
            MemWidth::Word => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsrOp {
    Rw,
    Rs,
    Rc,
    Rwi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Instruction {
    Alu {
        op: AluOp,
        rd: Reg,
        rs1: Reg,
        rs2: Reg,
    },
    AluImm {
        op: AluImmOp,
        rd: Reg,
        rs1: Reg,
        imm: i32,
    },
    Lui {
        rd: Reg,
        imm: u32,
    },
    Auipc {
        rd: Reg,
        imm: u32,
    },
    Load {
        width: MemWidth,
        signed: bool,
        rd: Reg,
        rs1: Reg,
        imm: i32,
        /// Post-increment form: address is `rs1`, then `rs1 += imm`.
        post_inc: bool,
    },
    Store {
        width: MemWidth,
        rs2: Reg,
        rs1: Reg,
        imm: i32,
        post_inc: bool,
    },
    Branch {
        cond: BranchCond,
        rs1: Reg,
        rs2: Reg,
        target: u32,
    },
    Jal {
        rd: Reg,
        target: u32,
    },
    Jalr {
        rd: Reg,
        rs1: Reg,
        imm: i32,
    },
    Csr {
        op: CsrOp,
        rd: Reg,
        addr: u16,
        /// Source register for rw/rs/rc, immediate for rwi.
        src: u32,
    },
    /// Sets start = pc + 4, end = `end`, count = value of `count`.
    LpSetup {
        loop_idx: u8,
        count: Reg,
        end: u32,
    },
    LpCount {
        loop_idx: u8,
        count: Reg,
    },
    LpStart {
        loop_idx: u8,
        addr: u32,
    },
    LpEnd {
        loop_idx: u8,
        addr: u32,
    },
    /// Lane extract: `p.extract rd, rs1, bits, index`.
    Extract {
        rd: Reg,
        rs1: Reg,
        bits: u32,
        index: u32,
        signed: bool,
    },
    PackByte {
        rd: Reg,
        rs1: Reg,
        rs2: Reg,
        half: PackHalf,
    },
    /// Virtual SIMD dot-product: precision comes from the format CSR at
    /// execution time; only the operation type and signedness are encoded.
    SimdDotp {
        rd: Reg,
        rs1: Reg,
        rs2: Reg,
        accumulate: bool,
        sign: SignMode,
    },
    /// Event-unit barrier: executes as a load from the barrier register.
    Barrier,
    /// Lockstep-mode enter: executes as a store of 1 to the control register.
    VlemOn,
    /// Lockstep-mode exit: executes as a store of 0 to the control register.
    VlemOff,
}

impl Instruction {
    /// True exactly for the dot-product family, whose precision is not
    /// encoded in the instruction.
    pub fn is_simd_virtual(&self) -> bool {
        matches!(self, Instruction::SimdDotp { .. })
    }

    pub fn mnemonic(&self) -> &'static str {
        match self {
            Instruction::Alu { op, .. } => op.mnemonic(),
            Instruction::AluImm { op, .. } => op.mnemonic(),
            Instruction::Lui { .. } => "lui",
            Instruction::Auipc { .. } => "auipc",
            Instruction::Load {
                width,
                signed,
                post_inc,
                ..
            } => match (width, signed, post_inc) {
                (MemWidth::Word, _, true) => "p.lw",
                (MemWidth::Word, _, false) => "lw",
                (MemWidth::Half, true, _) => "lh",
                (MemWidth::Half, false, _) => "lhu",
                (MemWidth::Byte, true, _) => "lb",
                (MemWidth::Byte, false, _) => "lbu",
            },
            Instruction::Store {
                width, post_inc, ..
            } => match (width, post_inc) {
                (MemWidth::Word, true) => "p.sw",
                (MemWidth::Word, false) => "sw",
                (MemWidth::Half, _) => "sh",
                (MemWidth::Byte, _) => "sb",
            },
            Instruction::Branch { cond, .. } => cond.mnemonic(),
            Instruction::Jal { .. } => "jal",
            Instruction::Jalr { .. } => "jalr",
            Instruction::Csr { op, .. } => match op {
                CsrOp::Rw => "csrrw",
                CsrOp::Rs => "csrrs",
                CsrOp::Rc => "csrrc",
                CsrOp::Rwi => "csrrwi",
            },
            Instruction::LpSetup { .. } => "lp.setup",
            Instruction::LpCount { .. } => "lp.count",
            Instruction::LpStart { .. } => "lp.start",
            Instruction::LpEnd { .. } => "lp.end",
            Instruction::Extract { signed, .. } => {
                if *signed {
                    "p.extract"
                } else {
                    "p.extractu"
                }
            }
            Instruction::PackByte { half, .. } => match half {
                PackHalf::Lo => "pv.packlo.b",
                PackHalf::Hi => "pv.packhi.b",
            },
            Instruction::SimdDotp {
                accumulate, sign, ..
            } => match (accumulate, sign) {
                (false, SignMode::SS) => "pv.dotp",
                (false, SignMode::UU) => "pv.dotpu",
                (false, SignMode::US) => "pv.dotpus",
                (true, SignMode::SS) => "pv.sdotp",
                (true, SignMode::UU) => "pv.sdotpu",
                (true, SignMode::US) => "pv.sdotpus",
            },
            Instruction::Barrier => "barrier",
            Instruction::VlemOn => "vlem.on",
            Instruction::VlemOff => "vlem.off",
        }
    }
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let m = self.mnemonic();
        match *self {
            Instruction::Alu { rd, rs1, rs2, .. } => write!(f, "{m} x{rd}, x{rs1}, x{rs2}"),
            Instruction::AluImm { rd, rs1, imm, .. } => write!(f, "{m} x{rd}, x{rs1}, {imm}"),
            Instruction::Lui { rd, imm } => write!(f, "{m} x{rd}, {imm:#x}"),
            Instruction::Auipc { rd, imm } => write!(f, "{m} x{rd}, {imm:#x}"),
            Instruction::Load {
                rd,
                rs1,
                imm,
                post_inc,
                ..
            } => {
                if post_inc {
                    write!(f, "{m} x{rd}, {imm}(x{rs1}!)")
                } else {
                    write!(f, "{m} x{rd}, {imm}(x{rs1})")
                }
            }
            Instruction::Store {
                rs2,
                rs1,
                imm,
                post_inc,
                ..
            } => {
                if post_inc {
                    write!(f, "{m} x{rs2}, {imm}(x{rs1}!)")
                } else {
                    write!(f, "{m} x{rs2}, {imm}(x{rs1})")
                }
            }
            Instruction::Branch {
                rs1, rs2, target, ..
            } => write!(f, "{m} x{rs1}, x{rs2}, {target:#x}"),
            Instruction::Jal { rd, target } => write!(f, "{m} x{rd}, {target:#x}"),
            Instruction::Jalr { rd, rs1, imm } => write!(f, "{m} x{rd}, x{rs1}, {imm}"),
            Instruction::Csr { op, rd, addr, src } => match op {
                CsrOp::Rwi => write!(f, "{m} x{rd}, {addr:#x}, {src}"),
                _ => write!(f, "{m} x{rd}, {addr:#x}, x{src}"),
            },
            Instruction::LpSetup {
                loop_idx,
                count,
                end,
            } => write!(f, "{m} {loop_idx}, x{count}, {end:#x}"),
            Instruction::LpCount { loop_idx, count } => write!(f, "{m} {loop_idx}, x{count}"),
            Instruction::LpStart { loop_idx, addr } => write!(f, "{m} {loop_idx}, {addr:#x}"),
            Instruction::LpEnd { loop_idx, addr } => write!(f, "{m} {loop_idx}, {addr:#x}"),
            Instruction::Extract {
                rd,
                rs1,
                bits,
                index,
                ..
            } => write!(f, "{m} x{rd}, x{rs1}, {bits}, {index}"),
            Instruction::PackByte { rd, rs1, rs2, .. } => {
                write!(f, "{m} x{rd}, x{rs1}, x{rs2}")
            }
            Instruction::SimdDotp { rd, rs1, rs2, .. } => {
                write!(f, "{m} x{rd}, x{rs1}, x{rs2}")
            }
            Instruction::Barrier | Instruction::VlemOn | Instruction::VlemOff => write!(f, "{m}"),
        }
    }
}
