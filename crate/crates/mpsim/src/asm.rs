//! Two-pass assembler and loader for the simulator's textual ISA.
//!
//! Pass 1 walks the source collecting labels and section layout; pass 2
//! encodes instructions and data with all references resolved. Errors are
//! collected rather than fail-fast wherever recovery is possible, and
//! every error carries a source span.

use std::collections::BTreeMap;
use std::fmt;

use crate::cluster::{Cluster, EU_BARRIER, VLEM_CTRL};
use crate::isa::{
    AluImmOp, AluOp, BranchCond, CsrOp, Instruction, MemWidth, Reg, MNEMONICS,
};
use crate::simd::{PackHalf, SignMode};

/// Default placement: code is resident in L2 and fetched through the
/// instruction-cache model; data defaults to L1 (TCDM).
pub const DEFAULT_TEXT_BASE: u32 = 0x1C00_0000;
pub const DEFAULT_L1_DATA_BASE: u32 = 0x1000_0000;
pub const DEFAULT_L2_DATA_BASE: u32 = 0x1C10_0000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AsmErrorKind {
    Syntax,
    UnknownMnemonic,
    BadOperand,
    DuplicateLabel,
    UndefinedLabel,
    SectionOverflow,
}

impl fmt::Display for AsmErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            AsmErrorKind::Syntax => "syntax",
            AsmErrorKind::UnknownMnemonic => "unknown-mnemonic",
            AsmErrorKind::BadOperand => "bad-operand",
            AsmErrorKind::DuplicateLabel => "duplicate-label",
            AsmErrorKind::UndefinedLabel => "undefined-label",
            AsmErrorKind::SectionOverflow => "section-overflow",
        };
        write!(f, "{s}")
    }
}

#[derive(Debug, Clone)]
pub struct AsmError {
    pub kind: AsmErrorKind,
    pub file: String,
    pub line: u32,
    pub col: u32,
    pub message: String,
}

impl fmt::Display for AsmError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:{}:{}: {} ({})",
            self.file, self.line, self.col, self.message, self.kind
        )
    }
}

impl std::error::Error for AsmError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataRegion {
    L1,
    L2,
}

impl fmt::Display for DataRegion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataRegion::L1 => write!(f, ".l1"),
            DataRegion::L2 => write!(f, ".l2"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DataSection {
    pub region: DataRegion,
    pub base: u32,
    pub bytes: Vec<u8>,
}

/// A relocated program image: decoded text, data sections, symbols and
/// the entry address.
#[derive(Debug, Clone, Default)]
pub struct Program {
    pub text_base: u32,
    pub text: Vec<Instruction>,
    /// Source line of each text instruction (for trap diagnostics).
    pub lines: Vec<u32>,
    pub data: Vec<DataSection>,
    pub symbols: BTreeMap<String, u32>,
    pub entry: u32,
}

impl Program {
    pub fn text_end(&self) -> u32 {
        self.text_base + 4 * self.text.len() as u32
    }

    pub fn instruction_at(&self, pc: u32) -> Option<Instruction> {
        if pc < self.text_base || pc >= self.text_end() || pc % 4 != 0 {
            return None;
        }
        Some(self.text[((pc - self.text_base) / 4) as usize])
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("program has no entry point (empty text)")]
    NoEntry,
    #[error("entry address {0:#x} points outside the text section")]
    EntryOutsideText(u32),
    #[error("section at {base:#x} ({len} bytes) overflows the {region} region")]
    SectionOverflow {
        region: &'static str,
        base: u32,
        len: usize,
    },
    #[error("sections at {0:#x} and {1:#x} overlap")]
    Overlap(u32, u32),
}

// ---------------------------------------------------------------------
// parsing helpers

fn parse_reg(token: &str) -> Option<Reg> {
    let t = token.trim();
    if let Some(num) = t.strip_prefix('x') {
        let n: u8 = num.parse().ok()?;
        return (n < 32).then_some(n);
    }
    let abi = match t {
        "zero" => 0,
        "ra" => 1,
        "sp" => 2,
        "gp" => 3,
        "tp" => 4,
        "t0" => 5,
        "t1" => 6,
        "t2" => 7,
        "s0" | "fp" => 8,
        "s1" => 9,
        "a0" => 10,
        "a1" => 11,
        "a2" => 12,
        "a3" => 13,
        "a4" => 14,
        "a5" => 15,
        "a6" => 16,
        "a7" => 17,
        "s2" => 18,
        "s3" => 19,
        "s4" => 20,
        "s5" => 21,
        "s6" => 22,
        "s7" => 23,
        "s8" => 24,
        "s9" => 25,
        "s10" => 26,
        "s11" => 27,
        "t3" => 28,
        "t4" => 29,
        "t5" => 30,
        "t6" => 31,
        _ => return None,
    };
    Some(abi)
}

fn parse_int(token: &str) -> Option<i64> {
    let t = token.trim();
    let (neg, t) = match t.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, t),
    };
    let v = if let Some(hex) = t.strip_prefix("0x").or_else(|| t.strip_prefix("0X")) {
        i64::from_str_radix(hex, 16).ok()?
    } else if let Some(bin) = t.strip_prefix("0b") {
        i64::from_str_radix(bin, 2).ok()?
    } else {
        t.parse::<i64>().ok()?
    };
    Some(if neg { -v } else { v })
}

fn parse_csr(token: &str) -> Option<u16> {
    match token.trim().to_ascii_uppercase().as_str() {
        "SIMD_FMT" => Some(0x7C0),
        "MP_MACCTL" => Some(0x7C1),
        "MP_STATE" => Some(0x7C2),
        "MHARTID" => Some(0xF14),
        _ => parse_int(token).and_then(|v| u16::try_from(v).ok()),
    }
}

fn is_ident(s: &str) -> bool {
    !s.is_empty()
        && s.chars().next().unwrap().is_ascii_alphabetic()
        && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
        // dotted words are reserved for mnemonics/directives
        && !s.starts_with('.')
}

/// Splits `imm(reg)` / `imm(reg!)` memory operands.
fn split_mem_operand(op: &str) -> Option<(&str, &str, bool)> {
    let op = op.trim();
    let open = op.find('(')?;
    let close = op.rfind(')')?;
    if close != op.len() - 1 || close <= open {
        return None;
    }
    let imm = &op[..open];
    let mut reg = &op[open + 1..close];
    let post_inc = reg.ends_with('!');
    if post_inc {
        reg = &reg[..reg.len() - 1];
    }
    let imm = if imm.trim().is_empty() { "0" } else { imm };
    Some((imm, reg.trim(), post_inc))
}

// ---------------------------------------------------------------------
// assembler internals

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Section {
    Text,
    Data(usize),
}

struct Assembler<'a> {
    file: &'a str,
    errors: Vec<AsmError>,
    symbols: BTreeMap<String, u32>,
    text: Vec<(Instruction, u32)>,
    data: Vec<DataSection>,
    section: Section,
    l1_cursor: u32,
    l2_cursor: u32,
    region_default: DataRegion,
    text_base: u32,
    globals: Vec<String>,
}

impl<'a> Assembler<'a> {
    fn new(file: &'a str) -> Self {
        Assembler {
            file,
            errors: Vec::new(),
            symbols: BTreeMap::new(),
            text: Vec::new(),
            data: Vec::new(),
            section: Section::Text,
            l1_cursor: DEFAULT_L1_DATA_BASE,
            l2_cursor: DEFAULT_L2_DATA_BASE,
            region_default: DataRegion::L1,
            text_base: DEFAULT_TEXT_BASE,
            globals: Vec::new(),
        }
    }

    fn error(&mut self, kind: AsmErrorKind, line: u32, col: u32, message: impl Into<String>) {
        self.errors.push(AsmError {
            kind,
            file: self.file.to_string(),
            line,
            col,
            message: message.into(),
        });
    }

    fn cursor(&self) -> u32 {
        match self.section {
            Section::Text => self.text_base + 4 * self.text.len() as u32,
            Section::Data(i) => {
                let s = &self.data[i];
                s.base + s.bytes.len() as u32
            }
        }
    }

    fn define_label(&mut self, name: &str, line: u32) {
        let addr = self.cursor();
        if self.symbols.insert(name.to_string(), addr).is_some() {
            self.error(
                AsmErrorKind::DuplicateLabel,
                line,
                1,
                format!("label `{name}` defined more than once"),
            );
        }
    }

    fn open_data_section(&mut self, region: DataRegion, base: Option<u32>) {
        let base = base.unwrap_or(match region {
            DataRegion::L1 => self.l1_cursor,
            DataRegion::L2 => self.l2_cursor,
        });
        // keep the region cursor word-aligned for the next implicit section
        let aligned = (base + 3) & !3;
        self.data.push(DataSection {
            region,
            base: if base % 4 == 0 { base } else { aligned },
            bytes: Vec::new(),
        });
        self.section = Section::Data(self.data.len() - 1);
    }

    fn close_section_cursors(&mut self) {
        if let Section::Data(i) = self.section {
            let s = &self.data[i];
            let end = (s.base + s.bytes.len() as u32 + 3) & !3;
            match s.region {
                DataRegion::L1 => self.l1_cursor = self.l1_cursor.max(end),
                DataRegion::L2 => self.l2_cursor = self.l2_cursor.max(end),
            }
        }
    }
}

/// Assembles a source text into a relocated [`Program`].
///
/// Two passes: the first collects labels and section layout, the second
/// encodes. Output is deterministic for identical input.
pub fn assemble(source: &str, file: &str) -> Result<Program, Vec<AsmError>> {
    // ---- pass 1: layout & labels -------------------------------------
    let mut a = Assembler::new(file);
    let parsed: Vec<ParsedLine> = source
        .lines()
        .enumerate()
        .map(|(i, raw)| parse_line(raw, i as u32 + 1))
        .collect();

    for pl in &parsed {
        for label in &pl.labels {
            a.define_label(label, pl.line);
        }
        match &pl.stmt {
            Stmt::None => {}
            Stmt::Directive(name, args) => layout_directive(&mut a, pl.line, name, args),
            Stmt::Instr(mnemonic, _) => {
                if a.section != Section::Text {
                    a.error(
                        AsmErrorKind::Syntax,
                        pl.line,
                        1,
                        format!("instruction `{mnemonic}` outside .text section"),
                    );
                } else {
                    // reserve the slot even on a bad mnemonic so later
                    // label addresses stay stable
                    a.text.push((
                        Instruction::AluImm {
                            op: AluImmOp::Addi,
                            rd: 0,
                            rs1: 0,
                            imm: 0,
                        },
                        pl.line,
                    ));
                }
            }
        }
    }
    a.close_section_cursors();

    // ---- pass 2: encode ----------------------------------------------
    let symbols = a.symbols.clone();
    let mut b = Assembler::new(file);
    b.symbols = symbols;
    b.errors = std::mem::take(&mut a.errors);
    b.text_base = a.text_base;

    for pl in &parsed {
        match &pl.stmt {
            Stmt::None => {}
            Stmt::Directive(name, args) => layout_directive(&mut b, pl.line, name, args),
            Stmt::Instr(mnemonic, operands) => {
                if b.section != Section::Text {
                    continue; // reported in pass 1
                }
                let pc = b.cursor();
                match encode_instruction(&mut b, pl.line, pc, mnemonic, operands) {
                    Some(instr) => b.text.push((instr, pl.line)),
                    None => b.text.push((
                        Instruction::AluImm {
                            op: AluImmOp::Addi,
                            rd: 0,
                            rs1: 0,
                            imm: 0,
                        },
                        pl.line,
                    )),
                }
            }
        }
    }
    b.close_section_cursors();

    if !b.errors.is_empty() {
        return Err(b.errors);
    }

    let entry = b
        .symbols
        .get("_start")
        .copied()
        .unwrap_or(b.text_base);
    let (text, lines): (Vec<_>, Vec<_>) = b.text.into_iter().unzip();
    Ok(Program {
        text_base: b.text_base,
        text,
        lines,
        data: b.data,
        symbols: b.symbols,
        entry,
    })
}

struct ParsedLine {
    line: u32,
    labels: Vec<String>,
    stmt: Stmt,
}

enum Stmt {
    None,
    Directive(String, Vec<String>),
    Instr(String, Vec<String>),
}

fn parse_line(raw: &str, line: u32) -> ParsedLine {
    let mut rest = match raw.find('#') {
        Some(i) => &raw[..i],
        None => raw,
    };
    rest = rest.trim();

    let mut labels = Vec::new();
    while let Some(colon) = rest.find(':') {
        let (head, tail) = rest.split_at(colon);
        let head = head.trim();
        if is_ident(head) || head.starts_with('_') {
            labels.push(head.to_string());
            rest = tail[1..].trim();
        } else {
            break;
        }
    }

    if rest.is_empty() {
        return ParsedLine {
            line,
            labels,
            stmt: Stmt::None,
        };
    }

    let (word, args) = match rest.find(char::is_whitespace) {
        Some(i) => (&rest[..i], rest[i..].trim()),
        None => (rest, ""),
    };

    if word.starts_with('.') {
        let args: Vec<String> = args
            .split([',', ' ', '\t'])
            .filter(|s| !s.trim().is_empty())
            .map(|s| s.trim().to_string())
            .collect();
        ParsedLine {
            line,
            labels,
            stmt: Stmt::Directive(word.to_string(), args),
        }
    } else {
        let operands: Vec<String> = if args.is_empty() {
            Vec::new()
        } else {
            args.split(',').map(|s| s.trim().to_string()).collect()
        };
        ParsedLine {
            line,
            labels,
            stmt: Stmt::Instr(word.to_ascii_lowercase(), operands),
        }
    }
}

fn layout_directive(a: &mut Assembler, line: u32, name: &str, args: &[String]) {
    match name {
        ".text" => {
            if !a.text.is_empty() && !args.is_empty() {
                a.error(
                    AsmErrorKind::Syntax,
                    line,
                    1,
                    ".text base must be set before the first instruction",
                );
            } else if let Some(base) = args.first() {
                match parse_int(base) {
                    Some(v) if v % 4 == 0 => a.text_base = v as u32,
                    _ => a.error(AsmErrorKind::BadOperand, line, 1, "bad .text base address"),
                }
            }
            a.section = Section::Text;
        }
        ".data" => {
            a.close_section_cursors();
            let mut region = a.region_default;
            let mut base = None;
            for arg in args {
                match arg.as_str() {
                    ".l1" => region = DataRegion::L1,
                    ".l2" => region = DataRegion::L2,
                    other => match parse_int(other) {
                        Some(v) => base = Some(v as u32),
                        None => {
                            a.error(AsmErrorKind::BadOperand, line, 1, "bad .data argument")
                        }
                    },
                }
            }
            a.open_data_section(region, base);
        }
        ".l1" | ".l2" => {
            let region = if name == ".l1" {
                DataRegion::L1
            } else {
                DataRegion::L2
            };
            a.region_default = region;
            if let Section::Data(i) = a.section {
                if a.data[i].bytes.is_empty() {
                    a.data[i].region = region;
                    let base = match region {
                        DataRegion::L1 => a.l1_cursor,
                        DataRegion::L2 => a.l2_cursor,
                    };
                    a.data[i].base = base;
                }
            }
        }
        ".word" | ".byte" | ".space" | ".align" => {
            let idx = match a.section {
                Section::Data(i) => i,
                Section::Text => {
                    a.error(
                        AsmErrorKind::Syntax,
                        line,
                        1,
                        format!("{name} outside a data section"),
                    );
                    return;
                }
            };
            match name {
                ".word" => {
                    for arg in args {
                        let v = match parse_int(arg) {
                            Some(v) => v as u32,
                            None => match a.symbols.get(arg.as_str()) {
                                Some(&addr) => addr,
                                None => {
                                    // pass 1 may not know the label yet;
                                    // reserve space, pass 2 resolves
                                    0
                                }
                            },
                        };
                        if parse_int(arg).is_none()
                            && !a.symbols.contains_key(arg.as_str())
                            && !a.text.is_empty()
                        {
                            // pass 2 (symbols fully known): genuine error
                        }
                        a.data[idx].bytes.extend_from_slice(&v.to_le_bytes());
                    }
                }
                ".byte" => {
                    for arg in args {
                        match parse_int(arg) {
                            Some(v) if (-128..=255).contains(&v) => {
                                a.data[idx].bytes.push(v as u8)
                            }
                            _ => a.error(AsmErrorKind::BadOperand, line, 1, "bad .byte value"),
                        }
                    }
                }
                ".space" => match args.first().and_then(|s| parse_int(s)) {
                    Some(n) if n >= 0 => {
                        a.data[idx].bytes.extend(std::iter::repeat(0u8).take(n as usize))
                    }
                    _ => a.error(AsmErrorKind::BadOperand, line, 1, "bad .space size"),
                },
                ".align" => match args.first().and_then(|s| parse_int(s)) {
                    Some(p) if (0..=16).contains(&p) => {
                        let align = 1u32 << p;
                        let s = &mut a.data[idx];
                        let end = s.base + s.bytes.len() as u32;
                        let pad = (align - end % align) % align;
                        s.bytes.extend(std::iter::repeat(0u8).take(pad as usize));
                    }
                    _ => a.error(AsmErrorKind::BadOperand, line, 1, "bad .align exponent"),
                },
                _ => unreachable!(),
            }
        }
        ".global" | ".globl" => {
            if let Some(name) = args.first() {
                a.globals.push(name.clone());
            }
        }
        other => {
            a.error(
                AsmErrorKind::Syntax,
                line,
                1,
                format!("unknown directive `{other}`"),
            );
        }
    }
}

macro_rules! operand {
    ($a:expr, $line:expr, $ops:expr, $n:expr, $what:expr) => {
        match $ops.get($n) {
            Some(op) => op.as_str(),
            None => {
                $a.error(
                    AsmErrorKind::BadOperand,
                    $line,
                    1,
                    format!("missing operand {}: expected {}", $n + 1, $what),
                );
                return None;
            }
        }
    };
}

fn encode_instruction(
    a: &mut Assembler,
    line: u32,
    pc: u32,
    mnemonic: &str,
    ops: &[String],
) -> Option<Instruction> {
    let reg = |a: &mut Assembler, tok: &str| -> Option<Reg> {
        match parse_reg(tok) {
            Some(r) => Some(r),
            None => {
                a.error(
                    AsmErrorKind::BadOperand,
                    line,
                    1,
                    format!("`{tok}` is not a register"),
                );
                None
            }
        }
    };
    let imm = |a: &mut Assembler, tok: &str| -> Option<i32> {
        match parse_int(tok) {
            Some(v) if i32::try_from(v).is_ok() || u32::try_from(v).is_ok() => Some(v as i32),
            _ => {
                a.error(
                    AsmErrorKind::BadOperand,
                    line,
                    1,
                    format!("`{tok}` is not a valid immediate"),
                );
                None
            }
        }
    };
    // numeric value or label
    let value = |a: &mut Assembler, tok: &str| -> Option<u32> {
        if let Some(v) = parse_int(tok) {
            return Some(v as u32);
        }
        match a.symbols.get(tok) {
            Some(&addr) => Some(addr),
            None => {
                a.error(
                    AsmErrorKind::UndefinedLabel,
                    line,
                    1,
                    format!("undefined label `{tok}`"),
                );
                None
            }
        }
    };

    let alu = |op: AluOp| -> &'static str {
        let _ = op;
        "rd, rs1, rs2"
    };

    match mnemonic {
        // register-register ALU
        "add" | "sub" | "and" | "or" | "xor" | "sll" | "srl" | "sra" | "slt" | "sltu" | "mul"
        | "mulh" | "div" | "rem" => {
            let op = match mnemonic {
                "add" => AluOp::Add,
                "sub" => AluOp::Sub,
                "and" => AluOp::And,
                "or" => AluOp::Or,
                "xor" => AluOp::Xor,
                "sll" => AluOp::Sll,
                "srl" => AluOp::Srl,
                "sra" => AluOp::Sra,
                "slt" => AluOp::Slt,
                "sltu" => AluOp::Sltu,
                "mul" => AluOp::Mul,
                "mulh" => AluOp::Mulh,
                "div" => AluOp::Div,
                _ => AluOp::Rem,
            };
            let rd = reg(a, operand!(a, line, ops, 0, alu(op)))?;
            let rs1 = reg(a, operand!(a, line, ops, 1, "rs1"))?;
            let rs2 = reg(a, operand!(a, line, ops, 2, "rs2"))?;
            Some(Instruction::Alu { op, rd, rs1, rs2 })
        }
        // immediate ALU
        "addi" | "andi" | "ori" | "xori" | "slli" | "srli" | "srai" | "slti" => {
            let op = match mnemonic {
                "addi" => AluImmOp::Addi,
                "andi" => AluImmOp::Andi,
                "ori" => AluImmOp::Ori,
                "xori" => AluImmOp::Xori,
                "slli" => AluImmOp::Slli,
                "srli" => AluImmOp::Srli,
                "srai" => AluImmOp::Srai,
                _ => AluImmOp::Slti,
            };
            let rd = reg(a, operand!(a, line, ops, 0, "rd"))?;
            let rs1 = reg(a, operand!(a, line, ops, 1, "rs1"))?;
            let v = imm(a, operand!(a, line, ops, 2, "imm"))?;
            Some(Instruction::AluImm { op, rd, rs1, imm: v })
        }
        "lui" | "auipc" => {
            let rd = reg(a, operand!(a, line, ops, 0, "rd"))?;
            let v = imm(a, operand!(a, line, ops, 1, "imm"))? as u32;
            Some(if mnemonic == "lui" {
                Instruction::Lui { rd, imm: v }
            } else {
                Instruction::Auipc { rd, imm: v }
            })
        }
        // loads
        "lw" | "lh" | "lhu" | "lb" | "lbu" | "p.lw" => {
            let rd = reg(a, operand!(a, line, ops, 0, "rd"))?;
            let memop = operand!(a, line, ops, 1, "imm(rs1)");
            let Some((imm_s, reg_s, post_inc)) = split_mem_operand(memop) else {
                a.error(AsmErrorKind::BadOperand, line, 1, "expected imm(rs1) operand");
                return None;
            };
            if post_inc && mnemonic != "p.lw" {
                a.error(
                    AsmErrorKind::BadOperand,
                    line,
                    1,
                    "post-increment needs the p.lw form",
                );
                return None;
            }
            let rs1 = reg(a, reg_s)?;
            let v = imm(a, imm_s)?;
            let (width, signed) = match mnemonic {
                "lw" | "p.lw" => (MemWidth::Word, true),
                "lh" => (MemWidth::Half, true),
                "lhu" => (MemWidth::Half, false),
                "lb" => (MemWidth::Byte, true),
                _ => (MemWidth::Byte, false),
            };
            Some(Instruction::Load {
                width,
                signed,
                rd,
                rs1,
                imm: v,
                post_inc,
            })
        }
        // stores
        "sw" | "sh" | "sb" | "p.sw" => {
            let rs2 = reg(a, operand!(a, line, ops, 0, "rs2"))?;
            let memop = operand!(a, line, ops, 1, "imm(rs1)");
            let Some((imm_s, reg_s, post_inc)) = split_mem_operand(memop) else {
                a.error(AsmErrorKind::BadOperand, line, 1, "expected imm(rs1) operand");
                return None;
            };
            if post_inc && mnemonic != "p.sw" {
                a.error(
                    AsmErrorKind::BadOperand,
                    line,
                    1,
                    "post-increment needs the p.sw form",
                );
                return None;
            }
            let rs1 = reg(a, reg_s)?;
            let v = imm(a, imm_s)?;
            let width = match mnemonic {
                "sw" | "p.sw" => MemWidth::Word,
                "sh" => MemWidth::Half,
                _ => MemWidth::Byte,
            };
            Some(Instruction::Store {
                width,
                rs2,
                rs1,
                imm: v,
                post_inc,
            })
        }
        // branches
        "beq" | "bne" | "blt" | "bge" | "bltu" | "bgeu" => {
            let cond = match mnemonic {
                "beq" => BranchCond::Eq,
                "bne" => BranchCond::Ne,
                "blt" => BranchCond::Lt,
                "bge" => BranchCond::Ge,
                "bltu" => BranchCond::Ltu,
                _ => BranchCond::Geu,
            };
            let rs1 = reg(a, operand!(a, line, ops, 0, "rs1"))?;
            let rs2 = reg(a, operand!(a, line, ops, 1, "rs2"))?;
            let target = value(a, operand!(a, line, ops, 2, "target"))?;
            Some(Instruction::Branch {
                cond,
                rs1,
                rs2,
                target,
            })
        }
        "jal" => {
            // one-operand form defaults rd = x1
            let (rd, tgt_idx) = if ops.len() == 1 { (1u8, 0) } else { (reg(a, operand!(a, line, ops, 0, "rd"))?, 1) };
            let target = value(a, operand!(a, line, ops, tgt_idx, "target"))?;
            Some(Instruction::Jal { rd, target })
        }
        "j" => {
            let target = value(a, operand!(a, line, ops, 0, "target"))?;
            Some(Instruction::Jal { rd: 0, target })
        }
        "jalr" => {
            let rd = reg(a, operand!(a, line, ops, 0, "rd"))?;
            let rs1 = reg(a, operand!(a, line, ops, 1, "rs1"))?;
            let v = if ops.len() > 2 { imm(a, &ops[2])? } else { 0 };
            Some(Instruction::Jalr { rd, rs1, imm: v })
        }
        // CSR
        "csrrw" | "csrrs" | "csrrc" | "csrrwi" => {
            let op = match mnemonic {
                "csrrw" => CsrOp::Rw,
                "csrrs" => CsrOp::Rs,
                "csrrc" => CsrOp::Rc,
                _ => CsrOp::Rwi,
            };
            let rd = reg(a, operand!(a, line, ops, 0, "rd"))?;
            let csr_tok = operand!(a, line, ops, 1, "csr");
            let Some(addr) = parse_csr(csr_tok) else {
                a.error(
                    AsmErrorKind::BadOperand,
                    line,
                    1,
                    format!("`{csr_tok}` is not a CSR"),
                );
                return None;
            };
            let src = if op == CsrOp::Rwi {
                imm(a, operand!(a, line, ops, 2, "imm"))? as u32
            } else {
                reg(a, operand!(a, line, ops, 2, "rs1"))? as u32
            };
            Some(Instruction::Csr { op, rd, addr, src })
        }
        // hardware loops
        "lp.setup" | "lp.count" | "lp.start" | "lp.end" => {
            let idx_tok = operand!(a, line, ops, 0, "loop index");
            let loop_idx = match parse_int(idx_tok) {
                Some(v @ (0 | 1)) => v as u8,
                _ => {
                    a.error(AsmErrorKind::BadOperand, line, 1, "loop index must be 0 or 1");
                    return None;
                }
            };
            match mnemonic {
                "lp.setup" => {
                    let count = reg(a, operand!(a, line, ops, 1, "count register"))?;
                    let end = value(a, operand!(a, line, ops, 2, "end label"))?;
                    Some(Instruction::LpSetup {
                        loop_idx,
                        count,
                        end,
                    })
                }
                "lp.count" => {
                    let count = reg(a, operand!(a, line, ops, 1, "count register"))?;
                    Some(Instruction::LpCount { loop_idx, count })
                }
                "lp.start" => {
                    let addr = value(a, operand!(a, line, ops, 1, "start label"))?;
                    Some(Instruction::LpStart { loop_idx, addr })
                }
                _ => {
                    let addr = value(a, operand!(a, line, ops, 1, "end label"))?;
                    Some(Instruction::LpEnd { loop_idx, addr })
                }
            }
        }
        // lane extract / byte pack
        "p.extract" | "p.extractu" => {
            let rd = reg(a, operand!(a, line, ops, 0, "rd"))?;
            let rs1 = reg(a, operand!(a, line, ops, 1, "rs1"))?;
            let bits = imm(a, operand!(a, line, ops, 2, "lane bits"))?;
            let index = imm(a, operand!(a, line, ops, 3, "lane index"))?;
            if !matches!(bits, 2 | 4 | 8 | 16) || index < 0 || (index as u32) >= 32 / bits as u32 {
                a.error(
                    AsmErrorKind::BadOperand,
                    line,
                    1,
                    "extract needs bits in {2,4,8,16} and index < 32/bits",
                );
                return None;
            }
            Some(Instruction::Extract {
                rd,
                rs1,
                bits: bits as u32,
                index: index as u32,
                signed: mnemonic == "p.extract",
            })
        }
        "pv.packlo.b" | "pv.packhi.b" => {
            let rd = reg(a, operand!(a, line, ops, 0, "rd"))?;
            let rs1 = reg(a, operand!(a, line, ops, 1, "rs1"))?;
            let rs2 = reg(a, operand!(a, line, ops, 2, "rs2"))?;
            Some(Instruction::PackByte {
                rd,
                rs1,
                rs2,
                half: if mnemonic == "pv.packlo.b" {
                    PackHalf::Lo
                } else {
                    PackHalf::Hi
                },
            })
        }
        // virtual SIMD dot products
        "pv.dotp" | "pv.dotpu" | "pv.dotpus" | "pv.sdotp" | "pv.sdotpu" | "pv.sdotpus" => {
            let rd = reg(a, operand!(a, line, ops, 0, "rd"))?;
            let rs1 = reg(a, operand!(a, line, ops, 1, "rs1"))?;
            let rs2 = reg(a, operand!(a, line, ops, 2, "rs2"))?;
            let accumulate = mnemonic.starts_with("pv.s");
            let sign = if mnemonic.ends_with("us") {
                SignMode::US
            } else if mnemonic.ends_with('u') {
                SignMode::UU
            } else {
                SignMode::SS
            };
            Some(Instruction::SimdDotp {
                rd,
                rs1,
                rs2,
                accumulate,
                sign,
            })
        }
        "barrier" => Some(Instruction::Barrier),
        "vlem.on" => Some(Instruction::VlemOn),
        "vlem.off" => Some(Instruction::VlemOff),
        // pseudo-instructions
        "nop" => Some(Instruction::AluImm {
            op: AluImmOp::Addi,
            rd: 0,
            rs1: 0,
            imm: 0,
        }),
        "mv" => {
            let rd = reg(a, operand!(a, line, ops, 0, "rd"))?;
            let rs1 = reg(a, operand!(a, line, ops, 1, "rs"))?;
            Some(Instruction::AluImm {
                op: AluImmOp::Addi,
                rd,
                rs1,
                imm: 0,
            })
        }
        "li" | "la" => {
            let rd = reg(a, operand!(a, line, ops, 0, "rd"))?;
            let v = value(a, operand!(a, line, ops, 1, "value"))?;
            Some(Instruction::AluImm {
                op: AluImmOp::Addi,
                rd,
                rs1: 0,
                imm: v as i32,
            })
        }
        other => {
            let _ = pc;
            a.error(
                AsmErrorKind::UnknownMnemonic,
                line,
                1,
                format!("unknown mnemonic `{other}`"),
            );
            None
        }
    }
}

/// Renders a program back to assembly text. `assemble(disassemble(p))`
/// yields an instruction stream identical to `p`'s.
pub fn disassemble(program: &Program) -> String {
    let mut out = String::new();
    out.push_str(&format!(".text {:#x}\n", program.text_base));
    let entry = program.entry;
    for (i, instr) in program.text.iter().enumerate() {
        let pc = program.text_base + 4 * i as u32;
        if pc == entry {
            out.push_str("_start:\n");
        }
        out.push_str(&format!("    {instr}\n"));
    }
    for section in &program.data {
        out.push_str(&format!(".data {} {:#x}\n", section.region, section.base));
        let mut chunks = section.bytes.chunks_exact(4);
        for chunk in &mut chunks {
            let w = u32::from_le_bytes(chunk.try_into().unwrap());
            out.push_str(&format!("    .word {w:#010x}\n"));
        }
        for b in chunks.remainder() {
            out.push_str(&format!("    .byte {b:#04x}\n"));
        }
    }
    out
}

/// Writes a program's images into cluster memory, points every core at the
/// entry address and leaves the cluster ready at cycle 0.
pub fn load(program: &Program, cluster: &mut Cluster) -> Result<(), LoadError> {
    if program.text.is_empty() {
        return Err(LoadError::NoEntry);
    }
    if program.entry < program.text_base
        || program.entry >= program.text_end()
        || program.entry % 4 != 0
    {
        return Err(LoadError::EntryOutsideText(program.entry));
    }

    // overlap check across data sections and the text range
    let mut ranges: Vec<(u32, u32)> = program
        .data
        .iter()
        .filter(|s| !s.bytes.is_empty())
        .map(|s| (s.base, s.base + s.bytes.len() as u32))
        .collect();
    ranges.push((program.text_base, program.text_end()));
    ranges.sort_unstable();
    for pair in ranges.windows(2) {
        if pair[0].1 > pair[1].0 {
            return Err(LoadError::Overlap(pair[0].0, pair[1].0));
        }
    }

    for section in &program.data {
        let (name, ok) = match section.region {
            DataRegion::L1 => ("L1", cluster.tcdm_range_ok(section.base, section.bytes.len())),
            DataRegion::L2 => ("L2", cluster.l2_range_ok(section.base, section.bytes.len())),
        };
        if !ok {
            return Err(LoadError::SectionOverflow {
                region: name,
                base: section.base,
                len: section.bytes.len(),
            });
        }
    }

    cluster.install_program(program.clone());
    for section in &program.data {
        cluster.write_image(section.base, &section.bytes);
    }
    Ok(())
}

/// Address operands of the `barrier` / `vlem.*` pseudo forms, re-exported
/// so tests can assert the lowering target.
pub fn barrier_address() -> u32 {
    EU_BARRIER
}

pub fn vlem_ctrl_address() -> u32 {
    VLEM_CTRL
}

pub fn is_known_mnemonic(m: &str) -> bool {
    MNEMONICS.contains(&m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn asm(src: &str) -> Program {
        assemble(src, "test.s").expect("assembly should succeed")
    }

    #[test]
    fn addi_example() {
        let p = asm("addi x5, x0, 42\n");
        assert_eq!(p.text.len(), 1);
        assert_eq!(
            p.text[0],
            Instruction::AluImm {
                op: AluImmOp::Addi,
                rd: 5,
                rs1: 0,
                imm: 42
            }
        );
    }

    #[test]
    fn label_resolution_backward() {
        let p = asm("loop: p.lw x8, 4(x9!)\n j loop\n");
        assert_eq!(
            p.text[0],
            Instruction::Load {
                width: MemWidth::Word,
                signed: true,
                rd: 8,
                rs1: 9,
                imm: 4,
                post_inc: true
            }
        );
        assert_eq!(
            p.text[1],
            Instruction::Jal {
                rd: 0,
                target: p.text_base
            }
        );
    }

    #[test]
    fn label_resolution_forward() {
        let p = asm("j end\n nop\nend: nop\n");
        assert_eq!(
            p.text[0],
            Instruction::Jal {
                rd: 0,
                target: p.text_base + 8
            }
        );
    }

    #[test]
    fn simd_virtual_has_no_precision() {
        let p = asm("pv.sdotp x10, x11, x12\n");
        assert!(p.text[0].is_simd_virtual());
        assert_eq!(
            p.text[0],
            Instruction::SimdDotp {
                rd: 10,
                rs1: 11,
                rs2: 12,
                accumulate: true,
                sign: SignMode::SS
            }
        );
    }

    #[test]
    fn data_section_words() {
        let p = asm(".data .l1 0x10000000\nvals: .word 1, 2, 0xdeadbeef\n.byte 7\n");
        assert_eq!(p.data.len(), 1);
        assert_eq!(p.data[0].base, 0x1000_0000);
        assert_eq!(p.data[0].bytes.len(), 13);
        assert_eq!(p.symbols["vals"], 0x1000_0000);
        assert_eq!(&p.data[0].bytes[8..12], &0xdeadbeefu32.to_le_bytes());
    }

    #[test]
    fn errors_carry_spans_and_collect() {
        let err = assemble("addi x5, x0, 42\nbogus x1\naddi x99, x0, 1\n", "f.s").unwrap_err();
        assert_eq!(err.len(), 2);
        assert_eq!(err[0].kind, AsmErrorKind::UnknownMnemonic);
        assert_eq!(err[0].line, 2);
        assert_eq!(err[1].kind, AsmErrorKind::BadOperand);
        assert_eq!(err[1].line, 3);
    }

    #[test]
    fn duplicate_label_rejected() {
        let err = assemble("a: nop\na: nop\n", "f.s").unwrap_err();
        assert_eq!(err[0].kind, AsmErrorKind::DuplicateLabel);
    }

    #[test]
    fn undefined_label_rejected() {
        let err = assemble("j nowhere\n", "f.s").unwrap_err();
        assert_eq!(err[0].kind, AsmErrorKind::UndefinedLabel);
    }

    #[test]
    fn malformed_corpus_never_panics() {
        let cases = [
            "",
            ",,,",
            "addi",
            "lw x1, (",
            "lw x1, 4(x2",
            ".word 1",
            ".data\n.align 99",
            "lp.setup 7, x1, 0",
            "p.extract x1, x2, 3, 0",
            "csrrw x1, NOPE, x2",
            "beq x1, x2",
            ": nop",
            "\u{1F980} nop",
            ".space -4",
            "sw x1, 0(x2!)",
        ];
        for c in cases {
            let _ = assemble(c, "fuzz.s");
        }
    }

    #[test]
    fn round_trip_identity() {
        let src = "\
_start:
    addi x5, x0, 42
    lui x6, 0x10000
    lw x7, 8(x6)
    p.lw x8, 4(x6!)
    p.sw x8, 4(x6!)
    pv.sdotpus x10, x11, x12
    p.extract x13, x11, 4, 2
    pv.packlo.b x14, x13, x13
    lp.setup 0, x5, done
    addi x7, x7, 1
done:
    barrier
    vlem.on
    vlem.off
    beq x7, x0, done
    j done
.data .l1 0x10000000
    .word 0x01020304, 55
    .byte 1, 2, 3
";
        let p1 = asm(src);
        let text = disassemble(&p1);
        let p2 = assemble(&text, "rt.s").expect("round trip should assemble");
        assert_eq!(p1.text, p2.text);
        assert_eq!(p1.entry, p2.entry);
        assert_eq!(p1.data.len(), p2.data.len());
        for (a, b) in p1.data.iter().zip(&p2.data) {
            assert_eq!(a.base, b.base);
            assert_eq!(a.bytes, b.bytes);
        }
    }

    #[test]
    fn forward_and_backward_references_assemble_identically() {
        let fwd = asm("j target\nnop\ntarget: nop\n");
        let bwd = asm("target0: nop\nnop\nj target0\n");
        // same jump distance, opposite direction
        assert_eq!(
            fwd.text[0],
            Instruction::Jal {
                rd: 0,
                target: fwd.text_base + 8
            }
        );
        assert_eq!(
            bwd.text[2],
            Instruction::Jal {
                rd: 0,
                target: bwd.text_base
            }
        );
    }

    #[test]
    fn empty_text_disassembles_with_data() {
        let p = asm(".data .l1\n.word 9\n");
        let text = disassemble(&p);
        assert!(text.contains(".word"));
        let p2 = assemble(&text, "rt.s").unwrap();
        assert_eq!(p2.data[0].bytes, p.data[0].bytes);
    }
}
