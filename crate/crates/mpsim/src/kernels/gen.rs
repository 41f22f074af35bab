//! Assembly program generators for the benchmark kernels.
//!
//! Convolutions follow the im2col + matmul flow: pixels are partitioned
//! in contiguous tiles across the 16 cores, weights are shared (the
//! broadcast-friendly operand), and per-core buffers come from either a
//! naive bump allocator or the misaligned allocator. In lockstep runs the
//! im2col phase stays in MIMD and only the matmul runs in VLEM, with
//! barrier + control-register writes around each pixel-block phase.
//!
//! Register map used by every generated kernel:
//!   x1  scratch / loop counts        x14-x21 accumulators
//!   x2  oc-group counter             x18-x25 activation words (mixed)
//!   x3  output store pointer         x26 first pixel of the block
//!   x4  block output base            x27 block counter
//!   x5/x6 activation pointers        x28 core id
//!   x7  weight pointer               x29 im2col buffer base (per core)
//!   x8-x11 weight words              x30 output region base (per core)
//!   x12/x13 act words / unpack tmp   x31 pack destination / temp

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cluster::{ClusterConfig, Mode};
use crate::simd::{Precision, SignMode};

use super::golden::{
    self, golden_matmul, pack_elems, random_elems, sign_of_act, sign_of_wgt,
};
use super::layout::{misaligned_sub_buffer_size, L1Allocator};
use super::ConvSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MixedPath {
    /// Native mixed-precision dot products driven by the format CSR.
    Hardware,
    /// Baseline path: weights unpacked with extract/pack in the inner
    /// loop (mixed formats) or lifted to 8-bit offline (uniform
    /// sub-byte), activations lifted to 8-bit during im2col.
    Software,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AllocPolicy {
    /// Contiguous per-core buffers, word aligned: bases collide on a few
    /// banks and lockstep accesses serialize.
    Naive,
    /// Misaligned allocation: core `i`'s buffer starts on bank `i`.
    Misaligned,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Im2colStyle {
    /// Word-granular copies (fast path).
    Word,
    /// Byte-granular copies (reference-style loop).
    Byte,
}

#[derive(Debug, thiserror::Error)]
pub enum GenError {
    #[error("unsupported kernel configuration: {0}")]
    Unsupported(String),
    #[error("invalid kernel configuration: {0}")]
    Invalid(String),
    #[error("L1 layout does not fit: {0}")]
    OutOfMemory(#[from] super::layout::OutOfMemory),
}

/// Where a per-core result region lives: `base + core_id * stride`.
#[derive(Debug, Clone, Copy)]
pub struct PerCoreRegion {
    pub base: u32,
    pub stride: u32,
    pub bytes_per_core: u32,
}

pub struct GeneratedProgram {
    pub asm: String,
    /// Final output accumulators per core tile.
    pub out: PerCoreRegion,
    pub rows_per_core: usize,
    pub cols: usize,
    /// Expected output, row-major over all cores' tiles.
    pub expected: Vec<Vec<i32>>,
    /// Dot-product instructions the program will retire (all cores).
    pub n_sdotp: u64,
    /// Scalar MACs the program performs (all cores).
    pub macs: u64,
}

// ---------------------------------------------------------------------
// small assembly writer

struct W {
    buf: String,
    fresh: usize,
}

impl W {
    fn new() -> W {
        W {
            buf: String::new(),
            fresh: 0,
        }
    }

    fn l(&mut self, line: &str) {
        self.buf.push_str("    ");
        self.buf.push_str(line);
        self.buf.push('\n');
    }

    fn raw(&mut self, line: &str) {
        self.buf.push_str(line);
        self.buf.push('\n');
    }

    fn label(&mut self, name: &str) {
        self.buf.push_str(name);
        self.buf.push_str(":\n");
    }

    fn fresh(&mut self, stem: &str) -> String {
        self.fresh += 1;
        format!("{stem}_{}", self.fresh)
    }
}

fn sdotp_mnemonic(sign: SignMode) -> &'static str {
    match sign {
        SignMode::SS => "pv.sdotp",
        SignMode::UU => "pv.sdotpu",
        SignMode::US => "pv.sdotpus",
    }
}

fn extract_mnemonic(signed: bool) -> &'static str {
    if signed {
        "p.extract"
    } else {
        "p.extractu"
    }
}

fn fmt_csr_value(a: Precision, b: Precision, sign: SignMode) -> u32 {
    a.code() | (b.code() << 2) | (sign.code() << 4)
}

// ---------------------------------------------------------------------
// convolution planning

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum KernelKind {
    /// a == b at the executed precision; 2-pixel x 4-channel blocking.
    Uniform { elem_bits: u32 },
    /// Native mixed: `slices` B sub-groups per weight word; 1-pixel
    /// blocking.
    MixedHw { slices: u32 },
    /// Emulated mixed: weights unpacked in the loop; `subwords`
    /// byte-words per weight word; 1-pixel blocking.
    MixedSw { subwords: u32, wgt_bits: u32 },
}

#[derive(Debug, Clone)]
struct ConvPlan {
    spec: ConvSpec,
    kind: KernelKind,
    pad: u32,
    wp: u32,
    ppc: u32,
    blocks: u32,
    /// Bytes of one input line (all channels of one x position).
    line_bytes: u32,
    /// Bytes of one im2col row (one pixel's receptive field).
    row_bytes: u32,
    /// Bytes of one copied input segment (K columns of one row).
    seg_bytes: u32,
    /// im2col bits per element (8 when the software path lifts).
    im2col_bits: u32,
    n_chunks: u32,
    fmt_value: u32,
    in_base: u32,
    wgt_base: u32,
    im2col_base: u32,
    im2col_stride: u32,
    out_base: u32,
    out_stride: u32,
}

impl ConvPlan {
    fn sdotp_per_chunk(&self) -> u32 {
        match self.kind {
            KernelKind::Uniform { .. } => 8, // 4 channels x 2 pixels
            KernelKind::MixedHw { slices } => 4 * slices,
            KernelKind::MixedSw { subwords, .. } => 4 * subwords,
        }
    }

    fn n_sdotp(&self) -> u64 {
        let px = (self.spec.h * self.spec.w) as u64;
        let per_px = match self.kind {
            KernelKind::Uniform { .. } => self.sdotp_per_chunk() as u64 / 2,
            _ => self.sdotp_per_chunk() as u64,
        };
        px * (self.spec.c_out as u64 / 4) * self.n_chunks as u64 * per_px
    }
}

fn plan_conv(
    spec: &ConvSpec,
    path: MixedPath,
    alloc: AllocPolicy,
    l1: &mut L1Allocator,
) -> Result<ConvPlan, GenError> {
    let (pa, pb) = (spec.act.bits(), spec.wgt.bits());
    if pb > pa {
        return Err(GenError::Invalid("weights wider than activations".into()));
    }
    if spec.k % 2 == 0 || spec.k == 0 {
        return Err(GenError::Invalid("filter size must be odd".into()));
    }
    let px_total = (spec.h * spec.w) as u32;
    if px_total % 32 != 0 {
        return Err(GenError::Invalid(
            "H*W must be a multiple of 32 (even pixels per core)".into(),
        ));
    }
    if spec.c_out % 4 != 0 {
        return Err(GenError::Invalid("C_out must be a multiple of 4".into()));
    }
    if (spec.c_in as u32 * pa) % 32 != 0 {
        return Err(GenError::Invalid(
            "C_in * act_bits must be a multiple of 32".into(),
        ));
    }

    let kkc = (spec.k * spec.k * spec.c_in) as u32;
    let (kind, im2col_bits, wgt_eff_bits) = match path {
        MixedPath::Hardware => {
            if pa == pb {
                (KernelKind::Uniform { elem_bits: pa }, pa, pb)
            } else {
                (KernelKind::MixedHw { slices: pa / pb }, pa, pb)
            }
        }
        MixedPath::Software => {
            if pa == pb && pa >= 8 {
                // natively supported by the baseline SIMD: same program
                (KernelKind::Uniform { elem_bits: pa }, pa, pb)
            } else if pa == 16 {
                return Err(GenError::Unsupported(
                    "software path cannot pack 16-bit lanes".into(),
                ));
            } else if pa == pb {
                // uniform sub-byte: lift both operands to 8-bit offline
                (KernelKind::Uniform { elem_bits: 8 }, 8, 8)
            } else {
                (
                    KernelKind::MixedSw {
                        subwords: 8 / pb,
                        wgt_bits: pb,
                    },
                    8,
                    pb,
                )
            }
        }
    };

    let wgt_word_elems = 32 / wgt_eff_bits;
    if kkc % wgt_word_elems != 0 {
        return Err(GenError::Invalid(format!(
            "K*K*C_in = {kkc} must be a multiple of {wgt_word_elems} for this format"
        )));
    }
    let n_chunks = kkc / wgt_word_elems;

    let pad = (spec.k as u32 - 1) / 2;
    let wp = spec.w as u32 + 2 * pad;
    let hp = spec.h as u32 + 2 * pad;
    let line_bytes = spec.c_in as u32 * pa / 8;
    let row_bytes = kkc * im2col_bits / 8;
    let seg_bytes = spec.k as u32 * line_bytes;
    let ppc = px_total / 16;
    let blocks = ppc / 2;

    let in_bytes = hp * wp * line_bytes;
    let wgt_bytes = spec.c_out as u32 * kkc * wgt_eff_bits / 8;
    let block_buf = 2 * row_bytes;
    let out_per_core = ppc * spec.c_out as u32 * 4;

    let in_base = l1.alloc(in_bytes, 128)?;
    let wgt_base = l1.alloc(wgt_bytes, 128)?;
    let (im2col_base, im2col_stride) = alloc_per_core(l1, block_buf, alloc)?;
    let (out_base, out_stride) = alloc_per_core(l1, out_per_core, alloc)?;

    let fmt_value = match kind {
        KernelKind::Uniform { elem_bits } => {
            let p = Precision::from_bits(elem_bits).unwrap();
            fmt_csr_value(p, p, spec.sign)
        }
        KernelKind::MixedHw { .. } => fmt_csr_value(spec.act, spec.wgt, spec.sign),
        KernelKind::MixedSw { .. } => fmt_csr_value(Precision::B8, Precision::B8, spec.sign),
    };

    Ok(ConvPlan {
        spec: spec.clone(),
        kind,
        pad,
        wp,
        ppc,
        blocks,

        line_bytes,
        row_bytes,
        seg_bytes,
        im2col_bits,
        n_chunks,
        fmt_value,
        in_base,
        wgt_base,
        im2col_base,
        im2col_stride,
        out_base,
        out_stride,
    })
}

fn alloc_per_core(
    l1: &mut L1Allocator,
    bytes_per_core: u32,
    policy: AllocPolicy,
) -> Result<(u32, u32), GenError> {
    match policy {
        AllocPolicy::Naive => {
            let stride = (bytes_per_core + 3) & !3;
            Ok((l1.alloc(stride * 16, 128)?, stride))
        }
        AllocPolicy::Misaligned => {
            let stride = misaligned_sub_buffer_size(bytes_per_core) + 4;
            let base = l1.alloc_misaligned(bytes_per_core)?;
            Ok((base, stride))
        }
    }
}

// ---------------------------------------------------------------------
// data images

struct ConvData {
    input: Vec<i32>,
    weights: Vec<Vec<i32>>,
}

fn conv_data(spec: &ConvSpec, rng: &mut ChaCha8Rng) -> ConvData {
    let input = random_elems(
        rng,
        spec.h * spec.w * spec.c_in,
        spec.act,
        sign_of_act(spec.sign),
    );
    let weights = (0..spec.c_out)
        .map(|_| random_elems(rng, spec.k * spec.k * spec.c_in, spec.wgt, sign_of_wgt(spec.sign)))
        .collect();
    ConvData { input, weights }
}

/// Zero-bordered input image, packed at the activation precision.
fn padded_input_bytes(plan: &ConvPlan, input: &[i32]) -> Vec<u8> {
    let s = &plan.spec;
    let hp = s.h as u32 + 2 * plan.pad;
    let mut padded = vec![0i32; (hp * plan.wp) as usize * s.c_in];
    for y in 0..s.h {
        for x in 0..s.w {
            for ci in 0..s.c_in {
                let dst = ((y as u32 + plan.pad) * plan.wp + (x as u32 + plan.pad)) as usize
                    * s.c_in
                    + ci;
                padded[dst] = input[(y * s.w + x) * s.c_in + ci];
            }
        }
    }
    pack_elems(&padded, s.act)
}

/// Weights interleaved by oc-group: for each group of 4 output channels
/// and each k-chunk, the 4 channels' words are adjacent, so the kernel
/// streams them with one post-increment pointer.
fn interleaved_weight_bytes(plan: &ConvPlan, weights: &[Vec<i32>]) -> Vec<u8> {
    let wgt_bits = match plan.kind {
        KernelKind::Uniform { elem_bits } => elem_bits,
        KernelKind::MixedHw { .. } => plan.spec.wgt.bits(),
        KernelKind::MixedSw { wgt_bits, .. } => wgt_bits,
    };
    let p = Precision::from_bits(wgt_bits).unwrap();
    let elems = (32 / wgt_bits) as usize;
    let mut bytes = Vec::new();
    for ocg in 0..plan.spec.c_out / 4 {
        for chunk in 0..plan.n_chunks as usize {
            for j in 0..4 {
                let oc = ocg * 4 + j;
                let lane_vals = &weights[oc][chunk * elems..(chunk + 1) * elems];
                bytes.extend(pack_elems(lane_vals, p));
            }
        }
    }
    bytes
}

fn emit_data_section(w: &mut W, base: u32, bytes: &[u8]) {
    w.raw(&format!(".data .l1 {base:#x}"));
    let mut chunks = bytes.chunks_exact(4);
    for c in &mut chunks {
        let v = u32::from_le_bytes(c.try_into().unwrap());
        w.l(&format!(".word {v:#010x}"));
    }
    for b in chunks.remainder() {
        w.l(&format!(".byte {b:#04x}"));
    }
}

fn emit_space(w: &mut W, base: u32, bytes: u32) {
    w.raw(&format!(".data .l1 {base:#x}"));
    w.l(&format!(".space {bytes}"));
}

// ---------------------------------------------------------------------
// shared emission helpers

fn emit_core_id(w: &mut W) {
    w.l("csrrs x28, mhartid, x0");
}

fn emit_csr_setup(w: &mut W, fmt_value: u32) {
    w.l(&format!("li x31, {fmt_value:#x}"));
    w.l("csrrw x0, 0x7c0, x31");
    w.l("li x31, 4"); // controller reuse count: 4 dot products per slice
    w.l("csrrw x0, 0x7c1, x31");
    w.l("csrrwi x0, 0x7c2, 0");
}

fn emit_per_core_base(w: &mut W, reg: &str, base: u32, stride: u32) {
    w.l(&format!("li {reg}, {base:#x}"));
    w.l(&format!("li x1, {stride}"));
    w.l("mul x1, x1, x28");
    w.l(&format!("add {reg}, {reg}, x1"));
}

fn emit_phase_enter(w: &mut W, mode: Mode) {
    w.l("barrier");
    match mode {
        Mode::Vlem => w.l("vlem.on"),
        Mode::Mimd => w.l("nop"),
    }
}

fn emit_phase_exit(w: &mut W, mode: Mode) {
    match mode {
        Mode::Vlem => w.l("vlem.off"),
        Mode::Mimd => w.l("nop"),
    }
    w.l("barrier");
}

fn emit_halt(w: &mut W) {
    w.l("barrier");
    w.label("prog_end");
    w.l("j prog_end");
}

// ---------------------------------------------------------------------
// im2col emission

fn emit_im2col_px(w: &mut W, plan: &ConvPlan, lpx: u32, style: Im2colStyle) {
    let k = plan.spec.k as u32;
    // pixel coordinates: x5 = global pixel, x9 -> source, x10 -> dest
    w.l(&format!("addi x5, x26, {lpx}"));
    w.l(&format!("li x6, {}", plan.spec.w));
    w.l("div x9, x5, x6");
    w.l("rem x10, x5, x6");
    w.l(&format!("li x6, {}", plan.wp));
    w.l("mul x9, x9, x6");
    w.l("add x9, x9, x10");
    w.l(&format!("li x6, {}", plan.line_bytes));
    w.l("mul x9, x9, x6");
    w.l(&format!("li x6, {:#x}", plan.in_base));
    w.l("add x9, x9, x6");
    w.l(&format!("addi x10, x29, {}", lpx * plan.row_bytes));
    let row_gap = (plan.wp - k) * plan.line_bytes;
    for r in 0..k {
        match style {
            Im2colStyle::Word if plan.im2col_bits == plan.spec.act.bits() => {
                let words = plan.seg_bytes / 4;
                let end = w.fresh("seg");
                w.l(&format!("li x11, {words}"));
                w.l(&format!("lp.setup 0, x11, {end}"));
                w.l("p.lw x12, 4(x9!)");
                w.l("p.sw x12, 4(x10!)");
                w.label(&end);
            }
            Im2colStyle::Byte if plan.im2col_bits == plan.spec.act.bits() => {
                let end = w.fresh("seg");
                w.l(&format!("li x11, {}", plan.seg_bytes));
                w.l(&format!("lp.setup 0, x11, {end}"));
                w.l("lbu x12, 0(x9)");
                w.l("sb x12, 0(x10)");
                w.l("addi x9, x9, 1");
                w.l("addi x10, x10, 1");
                w.label(&end);
            }
            // software path on sub-byte activations: copy + lift to 8-bit
            _ => {
                let pa = plan.spec.act.bits();
                let ext = extract_mnemonic(sign_of_act(plan.spec.sign));
                let words = plan.seg_bytes / 4;
                let end = w.fresh("seg");
                w.l(&format!("li x11, {words}"));
                w.l(&format!("lp.setup 0, x11, {end}"));
                w.l("p.lw x13, 4(x9!)");
                let groups = (32 / pa) / 4;
                for g in 0..groups {
                    w.l(&format!("{ext} x12, x13, {pa}, {}", 4 * g));
                    w.l(&format!("{ext} x14, x13, {pa}, {}", 4 * g + 1));
                    w.l("pv.packlo.b x31, x12, x14");
                    w.l(&format!("{ext} x12, x13, {pa}, {}", 4 * g + 2));
                    w.l(&format!("{ext} x14, x13, {pa}, {}", 4 * g + 3));
                    w.l("pv.packhi.b x31, x12, x14");
                    w.l("p.sw x31, 4(x10!)");
                }
                w.label(&end);
            }
        }
        if r + 1 < k {
            w.l(&format!("li x6, {row_gap}"));
            w.l("add x9, x9, x6");
        }
    }
}

// ---------------------------------------------------------------------
// matmul kernel emission

fn emit_uniform_block(w: &mut W, plan: &ConvPlan, prefix: &str) {
    let sd = sdotp_mnemonic(plan.spec.sign);
    let outrow = plan.spec.c_out as u32 * 4;
    w.l(&format!("li x2, {}", plan.spec.c_out / 4));
    w.l(&format!("li x7, {:#x}", plan.wgt_base));
    w.l("mv x3, x4");
    let ocg = format!("{prefix}_ocg");
    w.label(&ocg);
    for acc in 14..=21 {
        w.l(&format!("li x{acc}, 0"));
    }
    w.l("mv x5, x29");
    w.l(&format!("addi x6, x29, {}", plan.row_bytes));
    let kend = w.fresh(&format!("{prefix}_k"));
    w.l(&format!("li x1, {}", plan.n_chunks));
    w.l(&format!("lp.setup 0, x1, {kend}"));
    w.l("p.lw x12, 4(x5!)");
    w.l("p.lw x13, 4(x6!)");
    for wreg in 8..=11 {
        w.l(&format!("p.lw x{wreg}, 4(x7!)"));
    }
    for j in 0..4u32 {
        w.l(&format!("{sd} x{}, x12, x{}", 14 + 2 * j, 8 + j));
        w.l(&format!("{sd} x{}, x13, x{}", 15 + 2 * j, 8 + j));
    }
    w.label(&kend);
    for j in 0..4u32 {
        w.l(&format!("sw x{}, {}(x3)", 14 + 2 * j, 4 * j));
    }
    for j in 0..4u32 {
        w.l(&format!("sw x{}, {}(x3)", 15 + 2 * j, outrow + 4 * j));
    }
    w.l("addi x3, x3, 16");
    w.l("addi x2, x2, -1");
    w.l(&format!("bne x2, x0, {ocg}"));
}

fn emit_mixed_block(w: &mut W, plan: &ConvPlan, prefix: &str) {
    let sd = sdotp_mnemonic(plan.spec.sign);
    let outrow = plan.spec.c_out as u32 * 4;
    for lpx in 0..2u32 {
        w.l(&format!("li x2, {}", plan.spec.c_out / 4));
        w.l(&format!("li x7, {:#x}", plan.wgt_base));
        if lpx == 0 {
            w.l("mv x3, x4");
        } else {
            w.l(&format!("addi x3, x4, {outrow}"));
        }
        let ocg = format!("{prefix}_ocg_px{lpx}");
        w.label(&ocg);
        for acc in 14..=17 {
            w.l(&format!("li x{acc}, 0"));
        }
        w.l(&format!("addi x5, x29, {}", lpx * plan.row_bytes));
        let kend = w.fresh(&format!("{prefix}_k{lpx}"));
        w.l(&format!("li x1, {}", plan.n_chunks));
        w.l(&format!("lp.setup 0, x1, {kend}"));
        match plan.kind {
            KernelKind::MixedHw { slices } => {
                for a in 0..slices {
                    w.l(&format!("p.lw x{}, 4(x5!)", 18 + a));
                }
                for wreg in 8..=11 {
                    w.l(&format!("p.lw x{wreg}, 4(x7!)"));
                }
                // slice-major: the mixed-precision controller walks the
                // B sub-groups, 4 issues (one per channel) per slice
                for slice in 0..slices {
                    for j in 0..4u32 {
                        w.l(&format!("{sd} x{}, x{}, x{}", 14 + j, 18 + slice, 8 + j));
                    }
                }
            }
            KernelKind::MixedSw { subwords, wgt_bits } => {
                let ext = extract_mnemonic(sign_of_wgt(plan.spec.sign));
                for a in 0..subwords {
                    w.l(&format!("p.lw x{}, 4(x5!)", 18 + a));
                }
                for wreg in 8..=11 {
                    w.l(&format!("p.lw x{wreg}, 4(x7!)"));
                }
                for j in 0..4u32 {
                    for sub in 0..subwords {
                        let lane0 = 4 * sub;
                        w.l(&format!("{ext} x12, x{}, {wgt_bits}, {lane0}", 8 + j));
                        w.l(&format!("{ext} x13, x{}, {wgt_bits}, {}", 8 + j, lane0 + 1));
                        w.l("pv.packlo.b x31, x12, x13");
                        w.l(&format!("{ext} x12, x{}, {wgt_bits}, {}", 8 + j, lane0 + 2));
                        w.l(&format!("{ext} x13, x{}, {wgt_bits}, {}", 8 + j, lane0 + 3));
                        w.l("pv.packhi.b x31, x12, x13");
                        w.l(&format!("{sd} x{}, x{}, x31", 14 + j, 18 + sub));
                    }
                }
            }
            KernelKind::Uniform { .. } => unreachable!(),
        }
        w.label(&kend);
        for j in 0..4u32 {
            w.l(&format!("sw x{}, {}(x3)", 14 + j, 4 * j));
        }
        w.l("addi x3, x3, 16");
        w.l("addi x2, x2, -1");
        w.l(&format!("bne x2, x0, {ocg}"));
    }
}

/// One convolution layer: per-pixel-block im2col (MIMD) + matmul
/// (VLEM when requested), with the phase switches around the matmul.
fn emit_conv_layer(w: &mut W, plan: &ConvPlan, prefix: &str, mode: Mode, style: Im2colStyle) {
    emit_per_core_base(w, "x29", plan.im2col_base, plan.im2col_stride);
    emit_per_core_base(w, "x30", plan.out_base, plan.out_stride);
    w.l("mv x4, x30");
    w.l(&format!("li x26, {}", plan.ppc));
    w.l("mul x26, x26, x28");
    w.l(&format!("li x27, {}", plan.blocks));
    let blk = format!("{prefix}_block");
    w.label(&blk);
    emit_im2col_px(w, plan, 0, style);
    emit_im2col_px(w, plan, 1, style);
    emit_phase_enter(w, mode);
    match plan.kind {
        KernelKind::Uniform { .. } => emit_uniform_block(w, plan, prefix),
        _ => emit_mixed_block(w, plan, prefix),
    }
    emit_phase_exit(w, mode);
    w.l(&format!("addi x4, x4, {}", 2 * plan.spec.c_out * 4));
    w.l("addi x26, x26, 2");
    w.l("addi x27, x27, -1");
    w.l(&format!("bne x27, x0, {blk}"));
}

// ---------------------------------------------------------------------
// public generators

#[derive(Debug, Clone)]
pub struct ConvBench {
    pub spec: ConvSpec,
    pub mode: Mode,
    pub path: MixedPath,
    pub alloc: AllocPolicy,
    pub im2col: Im2colStyle,
    pub seed: u64,
}

/// A complete convolution benchmark program, verified against the direct
/// golden model.
pub fn gen_conv(bench: &ConvBench, cfg: &ClusterConfig) -> Result<GeneratedProgram, GenError> {
    let mut l1 = L1Allocator::new(cfg);
    let plan = plan_conv(&bench.spec, bench.path, bench.alloc, &mut l1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(bench.seed);
    let data = conv_data(&bench.spec, &mut rng);

    let mut w = W::new();
    w.raw(&format!(".text {:#x}", crate::asm::DEFAULT_TEXT_BASE));
    w.label("_start");
    emit_core_id(&mut w);
    emit_csr_setup(&mut w, plan.fmt_value);
    emit_conv_layer(&mut w, &plan, "l0", bench.mode, bench.im2col);
    emit_halt(&mut w);

    emit_data_section(&mut w, plan.in_base, &padded_input_bytes(&plan, &data.input));
    emit_data_section(
        &mut w,
        plan.wgt_base,
        &interleaved_weight_bytes(&plan, &data.weights),
    );
    emit_space(&mut w, plan.im2col_base, plan.im2col_stride * 15 + 2 * plan.row_bytes);
    emit_space(
        &mut w,
        plan.out_base,
        plan.out_stride * 15 + plan.ppc * plan.spec.c_out as u32 * 4,
    );

    let expected = golden::golden_conv2d(&data.input, &data.weights, &bench.spec);
    let macs = plan.n_sdotp()
        * match plan.kind {
            KernelKind::Uniform { elem_bits } => (32 / elem_bits) as u64,
            KernelKind::MixedHw { .. } => plan.spec.act.lanes() as u64,
            KernelKind::MixedSw { .. } => 4,
        };
    Ok(GeneratedProgram {
        asm: w.buf,
        out: PerCoreRegion {
            base: plan.out_base,
            stride: plan.out_stride,
            bytes_per_core: plan.ppc * plan.spec.c_out as u32 * 4,
        },
        rows_per_core: plan.ppc as usize,
        cols: plan.spec.c_out,
        expected,
        n_sdotp: plan.n_sdotp(),
        macs,
    })
}

/// A chain of convolution layers; each layer's accumulators are cast to
/// 8-bit activations (low byte) and written into the next layer's padded
/// input. The expected output is the golden chain's final layer.
pub fn gen_cnn(
    specs: &[ConvSpec],
    mode: Mode,
    path: MixedPath,
    cfg: &ClusterConfig,
    seed: u64,
) -> Result<GeneratedProgram, GenError> {
    assert!(!specs.is_empty());
    for s in specs {
        if s.act != Precision::B8 {
            return Err(GenError::Unsupported(
                "layer chaining casts to 8-bit activations".into(),
            ));
        }
    }
    let mut l1 = L1Allocator::new(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // plan all layers first so every address is known
    let mut plans = Vec::new();
    for s in specs {
        plans.push(plan_conv(s, path, AllocPolicy::Misaligned, &mut l1)?);
    }

    let mut w = W::new();
    w.raw(&format!(".text {:#x}", crate::asm::DEFAULT_TEXT_BASE));
    w.label("_start");
    emit_core_id(&mut w);
    emit_csr_setup(&mut w, plans[0].fmt_value);

    let mut total_sdotp = 0u64;
    let mut total_macs = 0u64;
    for (i, plan) in plans.iter().enumerate() {
        if i > 0 && plans[i].fmt_value != plans[i - 1].fmt_value {
            emit_csr_setup(&mut w, plan.fmt_value);
        }
        emit_conv_layer(&mut w, plan, &format!("l{i}"), mode, Im2colStyle::Word);
        total_sdotp += plan.n_sdotp();
        total_macs += plan.n_sdotp()
            * match plan.kind {
                KernelKind::Uniform { elem_bits } => (32 / elem_bits) as u64,
                KernelKind::MixedHw { .. } => plan.spec.act.lanes() as u64,
                KernelKind::MixedSw { .. } => 4,
            };
        // cast phase: accumulators -> next layer's padded input bytes
        if i + 1 < plans.len() {
            let next = &plans[i + 1];
            let prefix = format!("cast{i}");
            w.l(&format!("li x26, {}", plan.ppc));
            w.l("mul x26, x26, x28");
            w.l(&format!("li x27, {}", plan.ppc));
            w.l("mv x5, x30");
            w.label(&format!("{prefix}_px"));
            w.l(&format!("li x6, {}", plan.spec.w));
            w.l("div x9, x26, x6");
            w.l("rem x10, x26, x6");
            w.l(&format!("addi x9, x9, {}", next.pad));
            w.l(&format!("addi x10, x10, {}", next.pad));
            w.l(&format!("li x6, {}", next.wp));
            w.l("mul x9, x9, x6");
            w.l("add x9, x9, x10");
            w.l(&format!("li x6, {}", next.line_bytes));
            w.l("mul x9, x9, x6");
            w.l(&format!("li x6, {:#x}", next.in_base));
            w.l("add x9, x9, x6");
            let cend = w.fresh(&format!("{prefix}_c"));
            w.l(&format!("li x1, {}", plan.spec.c_out));
            w.l(&format!("lp.setup 0, x1, {cend}"));
            w.l("p.lw x12, 4(x5!)");
            w.l("sb x12, 0(x9)");
            w.l("addi x9, x9, 1");
            w.label(&cend);
            w.l("addi x26, x26, 1");
            w.l("addi x27, x27, -1");
            w.l(&format!("bne x27, x0, {prefix}_px"));
            w.l("barrier");
        }
    }
    emit_halt(&mut w);

    // golden chain, generating layer data as we go
    let mut inputs = Vec::new();
    let mut weight_sets = Vec::new();
    let mut current = random_elems(
        &mut rng,
        specs[0].h * specs[0].w * specs[0].c_in,
        specs[0].act,
        sign_of_act(specs[0].sign),
    );
    let mut expected = Vec::new();
    for (i, s) in specs.iter().enumerate() {
        let weights: Vec<Vec<i32>> = (0..s.c_out)
            .map(|_| random_elems(&mut rng, s.k * s.k * s.c_in, s.wgt, sign_of_wgt(s.sign)))
            .collect();
        let out = golden::golden_conv2d(&current, &weights, s);
        inputs.push(current.clone());
        weight_sets.push(weights);
        if i + 1 < specs.len() {
            current = out
                .iter()
                .flatten()
                .map(|&acc| golden::cast_accumulator(acc, Precision::B8, sign_of_act(s.sign)))
                .collect();
        }
        expected = out;
    }

    for (i, plan) in plans.iter().enumerate() {
        if i == 0 {
            emit_data_section(&mut w, plan.in_base, &padded_input_bytes(plan, &inputs[0]));
        } else {
            // later inputs are produced at run time; reserve zeroed space
            let hp = plan.spec.h as u32 + 2 * plan.pad;
            emit_space(&mut w, plan.in_base, hp * plan.wp * plan.line_bytes);
        }
        emit_data_section(
            &mut w,
            plan.wgt_base,
            &interleaved_weight_bytes(plan, &weight_sets[i]),
        );
        emit_space(&mut w, plan.im2col_base, plan.im2col_stride * 15 + 2 * plan.row_bytes);
        emit_space(
            &mut w,
            plan.out_base,
            plan.out_stride * 15 + plan.ppc * plan.spec.c_out as u32 * 4,
        );
    }

    let last = plans.last().unwrap();
    Ok(GeneratedProgram {
        asm: w.buf,
        out: PerCoreRegion {
            base: last.out_base,
            stride: last.out_stride,
            bytes_per_core: last.ppc * last.spec.c_out as u32 * 4,
        },
        rows_per_core: last.ppc as usize,
        cols: last.spec.c_out,
        expected,
        n_sdotp: total_sdotp,
        macs: total_macs,
    })
}

/// Plain parallel matmul used for energy calibration: per-core activation
/// rows (misaligned), shared weights (broadcast-friendly), 32-bit
/// accumulator outputs.
#[derive(Debug, Clone, Copy)]
pub struct MatmulBench {
    pub rows: usize,
    pub inner: usize,
    pub cols: usize,
    pub mode: Mode,
    pub seed: u64,
}

impl Default for MatmulBench {
    fn default() -> Self {
        MatmulBench {
            rows: 32,
            inner: 256,
            cols: 16,
            mode: Mode::Mimd,
            seed: 0xCAB1,
        }
    }
}

pub fn gen_matmul(b: &MatmulBench, cfg: &ClusterConfig) -> Result<GeneratedProgram, GenError> {
    if b.rows != 32 {
        return Err(GenError::Invalid("matmul runs 2 rows per core (32 rows)".into()));
    }
    if b.cols % 4 != 0 || b.inner % 4 != 0 {
        return Err(GenError::Invalid("matmul needs cols % 4 == 0, inner % 4 == 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(b.seed);
    let spec = ConvSpec {
        h: 0,
        w: 0,
        c_in: 0,
        c_out: b.cols,
        k: 0,
        act: Precision::B8,
        wgt: Precision::B8,
        sign: SignMode::US,
        hwc: true,
    };
    let a_rows: Vec<Vec<i32>> = (0..b.rows)
        .map(|_| random_elems(&mut rng, b.inner, Precision::B8, false))
        .collect();
    let wgt_rows: Vec<Vec<i32>> = (0..b.cols)
        .map(|_| random_elems(&mut rng, b.inner, Precision::B8, true))
        .collect();

    let mut l1 = L1Allocator::new(cfg);
    let row_bytes = b.inner as u32;
    let act_per_core = 2 * row_bytes;
    let out_per_core = 2 * b.cols as u32 * 4;
    let n_chunks = (b.inner / 4) as u32;
    let (act_base, act_stride) = alloc_per_core(&mut l1, act_per_core, AllocPolicy::Misaligned)?;
    let wgt_base = l1.alloc((b.cols * b.inner) as u32, 128)?;
    let (out_base, out_stride) = alloc_per_core(&mut l1, out_per_core, AllocPolicy::Misaligned)?;

    // reuse the uniform conv kernel emitter via a synthetic plan
    let plan = ConvPlan {
        spec: spec.clone(),
        kind: KernelKind::Uniform { elem_bits: 8 },
        pad: 0,
        wp: 0,
        ppc: 2,
        blocks: 1,

        line_bytes: 0,
        row_bytes,
        seg_bytes: 0,
        im2col_bits: 8,
        n_chunks,
        fmt_value: fmt_csr_value(Precision::B8, Precision::B8, SignMode::US),
        in_base: 0,
        wgt_base,
        im2col_base: act_base,
        im2col_stride: act_stride,
        out_base,
        out_stride,
    };

    let mut w = W::new();
    w.raw(&format!(".text {:#x}", crate::asm::DEFAULT_TEXT_BASE));
    w.label("_start");
    emit_core_id(&mut w);
    emit_csr_setup(&mut w, plan.fmt_value);
    emit_per_core_base(&mut w, "x29", act_base, act_stride);
    emit_per_core_base(&mut w, "x30", out_base, out_stride);
    w.l("mv x4, x30");
    emit_phase_enter(&mut w, b.mode);
    emit_uniform_block(&mut w, &plan, "mm");
    emit_phase_exit(&mut w, b.mode);
    emit_halt(&mut w);

    // per-core activation rows
    for core in 0..16usize {
        let mut bytes = Vec::new();
        for r in 0..2 {
            bytes.extend(pack_elems(&a_rows[2 * core + r], Precision::B8));
        }
        emit_data_section(&mut w, act_base + core as u32 * act_stride, &bytes);
    }
    // interleaved weights
    let mut wbytes = Vec::new();
    for ocg in 0..b.cols / 4 {
        for chunk in 0..n_chunks as usize {
            for j in 0..4 {
                wbytes.extend(pack_elems(
                    &wgt_rows[ocg * 4 + j][chunk * 4..chunk * 4 + 4],
                    Precision::B8,
                ));
            }
        }
    }
    emit_data_section(&mut w, wgt_base, &wbytes);
    emit_space(&mut w, out_base, out_stride * 15 + out_per_core);

    let expected = golden_matmul(&a_rows, &wgt_rows);
    let n_sdotp = (b.rows * b.cols * b.inner / 4 / 4) as u64 * 4;
    Ok(GeneratedProgram {
        asm: w.buf,
        out: PerCoreRegion {
            base: out_base,
            stride: out_stride,
            bytes_per_core: out_per_core,
        },
        rows_per_core: 2,
        cols: b.cols,
        expected,
        n_sdotp,
        macs: n_sdotp * 4,
    })
}

/// Element-wise vector addition with a configurable chunk size, the
/// bank-conflict study kernel.
#[derive(Debug, Clone, Copy)]
pub struct VecaddBench {
    /// Elements per chunk handed to one core per round.
    pub chunk: u32,
    /// Element size in bytes.
    pub elem_bytes: u32,
    /// Chunk rounds (total elements = 16 * chunk * groups).
    pub groups: u32,
    pub mode: Mode,
    pub seed: u64,
}

pub struct VecaddProgram {
    pub asm: String,
    pub c_base: u32,
    pub n_bytes: u32,
    pub expected: Vec<u8>,
}

pub fn gen_vecadd(b: &VecaddBench, cfg: &ClusterConfig) -> Result<VecaddProgram, GenError> {
    if !matches!(b.elem_bytes, 1 | 2 | 4) {
        return Err(GenError::Invalid("element size must be 1, 2 or 4".into()));
    }
    let n = 16 * b.chunk * b.groups;
    let n_bytes = n * b.elem_bytes;
    let mut l1 = L1Allocator::new(cfg);
    let a_base = l1.alloc(n_bytes, 128)?;
    let b_base = l1.alloc(n_bytes, 128)?;
    let c_base = l1.alloc(n_bytes, 128)?;

    let mut rng = ChaCha8Rng::seed_from_u64(b.seed);
    let a_bytes: Vec<u8> = (0..n_bytes).map(|_| rng.gen::<u8>()).collect();
    let b_bytes: Vec<u8> = (0..n_bytes).map(|_| rng.gen::<u8>()).collect();

    let mut w = W::new();
    w.raw(&format!(".text {:#x}", crate::asm::DEFAULT_TEXT_BASE));
    w.label("_start");
    emit_core_id(&mut w);
    let chunk_bytes = b.chunk * b.elem_bytes;
    w.l(&format!("li x1, {chunk_bytes}"));
    w.l("mul x1, x1, x28");
    w.l(&format!("li x5, {a_base:#x}"));
    w.l(&format!("li x6, {b_base:#x}"));
    w.l(&format!("li x7, {c_base:#x}"));
    w.l("add x5, x5, x1");
    w.l("add x6, x6, x1");
    w.l("add x7, x7, x1");
    w.l(&format!("li x27, {}", b.groups));
    emit_phase_enter(&mut w, b.mode);
    w.label("vloop");
    let vend = "vend";
    w.l(&format!("li x1, {}", b.chunk));
    w.l(&format!("lp.setup 0, x1, {vend}"));
    match b.elem_bytes {
        4 => {
            w.l("p.lw x10, 4(x5!)");
            w.l("p.lw x11, 4(x6!)");
            w.l("add x12, x10, x11");
            w.l("p.sw x12, 4(x7!)");
        }
        2 => {
            w.l("lhu x10, 0(x5)");
            w.l("lhu x11, 0(x6)");
            w.l("add x12, x10, x11");
            w.l("sh x12, 0(x7)");
            w.l("addi x5, x5, 2");
            w.l("addi x6, x6, 2");
            w.l("addi x7, x7, 2");
        }
        _ => {
            w.l("lbu x10, 0(x5)");
            w.l("lbu x11, 0(x6)");
            w.l("add x12, x10, x11");
            w.l("sb x12, 0(x7)");
            w.l("addi x5, x5, 1");
            w.l("addi x6, x6, 1");
            w.l("addi x7, x7, 1");
        }
    }
    w.label(vend);
    w.l(&format!("li x1, {}", 15 * chunk_bytes));
    w.l("add x5, x5, x1");
    w.l("add x6, x6, x1");
    w.l("add x7, x7, x1");
    w.l("addi x27, x27, -1");
    w.l("bne x27, x0, vloop");
    emit_phase_exit(&mut w, b.mode);
    emit_halt(&mut w);

    emit_data_section(&mut w, a_base, &a_bytes);
    emit_data_section(&mut w, b_base, &b_bytes);
    emit_space(&mut w, c_base, n_bytes);

    // element-wise wrapping add at the element width
    let mut expected = vec![0u8; n_bytes as usize];
    for i in 0..n as usize {
        let eb = b.elem_bytes as usize;
        let off = i * eb;
        let mut av = 0u64;
        let mut bv = 0u64;
        for k in 0..eb {
            av |= (a_bytes[off + k] as u64) << (8 * k);
            bv |= (b_bytes[off + k] as u64) << (8 * k);
        }
        let sum = (av + bv) & ((1u64 << (8 * eb)) - 1);
        for k in 0..eb {
            expected[off + k] = (sum >> (8 * k)) as u8;
        }
    }

    Ok(VecaddProgram {
        asm: w.buf,
        c_base,
        n_bytes,
        expected,
    })
}
