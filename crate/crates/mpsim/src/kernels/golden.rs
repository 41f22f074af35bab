//! Golden scalar models for the quantized kernels: im2col, matmul and
//! direct convolution, plus the element packing helpers shared with the
//! program generators. All tensors use the HWC layout (channels
//! innermost); accumulators are wrapping 32-bit.

use rand::Rng;

use crate::simd::{Precision, SignMode};

use super::ConvSpec;

/// Inclusive-exclusive value range of one element.
pub fn value_range(p: Precision, signed: bool) -> (i32, i32) {
    let b = p.bits();
    if signed {
        (-(1 << (b - 1)), 1 << (b - 1))
    } else {
        (0, 1 << b)
    }
}

pub fn random_elems<R: Rng>(rng: &mut R, n: usize, p: Precision, signed: bool) -> Vec<i32> {
    let (lo, hi) = value_range(p, signed);
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

/// Packs extended element values into a little-endian byte stream, lane 0
/// in the least-significant bits of the first word.
pub fn pack_elems(values: &[i32], p: Precision) -> Vec<u8> {
    let bits = p.bits() as usize;
    let mut out = vec![0u8; (values.len() * bits + 7) / 8];
    for (j, &v) in values.iter().enumerate() {
        let mask = (1u64 << bits) - 1;
        let field = (v as u32 as u64) & mask;
        let bitpos = j * bits;
        let byte = bitpos / 8;
        let shift = bitpos % 8;
        let merged = field << shift;
        let span = 3.min(out.len() - byte);
        for (k, slot) in out[byte..].iter_mut().take(span).enumerate() {
            *slot |= (merged >> (8 * k)) as u8;
        }
    }
    out
}

/// Inverse of [`pack_elems`] for verification paths.
pub fn unpack_elems(bytes: &[u8], n: usize, p: Precision, signed: bool) -> Vec<i32> {
    let bits = p.bits() as usize;
    (0..n)
        .map(|j| {
            let bitpos = j * bits;
            let byte = bitpos / 8;
            let shift = bitpos % 8;
            let mut raw: u64 = 0;
            for k in 0..3usize {
                if byte + k < bytes.len() {
                    raw |= (bytes[byte + k] as u64) << (8 * k);
                }
            }
            let v = ((raw >> shift) & ((1 << bits) - 1)) as u32;
            if signed {
                ((v << (32 - bits)) as i32) >> (32 - bits)
            } else {
                v as i32
            }
        })
        .collect()
}

/// Reorders an H x W x C input into im2col rows: one row per output
/// pixel holding its K x K x C receptive field (zero padding), laid out
/// row-major then channel-innermost, matching the kernels' walk order.
pub fn im2col_ref(input: &[i32], spec: &ConvSpec) -> Vec<Vec<i32>> {
    let (h, w, c, k) = (
        spec.h as i64,
        spec.w as i64,
        spec.c_in as i64,
        spec.k as i64,
    );
    let pad = (k - 1) / 2;
    let mut rows = Vec::with_capacity((h * w) as usize);
    for y in 0..h {
        for x in 0..w {
            let mut row = Vec::with_capacity((k * k * c) as usize);
            for ky in 0..k {
                for kx in 0..k {
                    let (sy, sx) = (y + ky - pad, x + kx - pad);
                    for ci in 0..c {
                        let v = if sy < 0 || sy >= h || sx < 0 || sx >= w {
                            0
                        } else {
                            input[((sy * w + sx) * c + ci) as usize]
                        };
                        row.push(v);
                    }
                }
            }
            rows.push(row);
        }
    }
    rows
}

/// `out[m][n] = sum_k a[m][k] * b[n][k]`, accumulated without bound and
/// reduced to wrapping 32-bit at the end.
pub fn golden_matmul(a: &[Vec<i32>], b_rows: &[Vec<i32>]) -> Vec<Vec<i32>> {
    a.iter()
        .map(|row| {
            b_rows
                .iter()
                .map(|col| {
                    assert_eq!(row.len(), col.len(), "inner dimensions differ");
                    let s: i64 = row.iter().zip(col).map(|(&x, &y)| x as i64 * y as i64).sum();
                    s as u32 as i32
                })
                .collect()
        })
        .collect()
}

/// Direct convolution over the HWC input, independent of the
/// im2col/matmul path. 3x3-style zero padding keeps output H x W.
pub fn golden_conv2d(input: &[i32], weights: &[Vec<i32>], spec: &ConvSpec) -> Vec<Vec<i32>> {
    let (h, w, c, k) = (
        spec.h as i64,
        spec.w as i64,
        spec.c_in as i64,
        spec.k as i64,
    );
    let pad = (k - 1) / 2;
    let mut out = Vec::with_capacity((h * w) as usize);
    for y in 0..h {
        for x in 0..w {
            let mut px = Vec::with_capacity(spec.c_out);
            for wrow in weights {
                let mut acc: i64 = 0;
                for ky in 0..k {
                    for kx in 0..k {
                        let (sy, sx) = (y + ky - pad, x + kx - pad);
                        if sy < 0 || sy >= h || sx < 0 || sx >= w {
                            continue;
                        }
                        for ci in 0..c {
                            let iv = input[((sy * w + sx) * c + ci) as usize] as i64;
                            let wv = wrow[((ky * k + kx) * c + ci) as usize] as i64;
                            acc += iv * wv;
                        }
                    }
                }
                px.push(acc as u32 as i32);
            }
            out.push(px);
        }
    }
    out
}

/// Truncating re-cast of an accumulator into the activation domain of
/// the next layer (stand-in for requantization, which is out of scope).
pub fn cast_accumulator(acc: i32, p: Precision, signed: bool) -> i32 {
    let bits = p.bits();
    let v = (acc as u32) & ((1u64 << bits) - 1) as u32;
    if signed {
        ((v << (32 - bits)) as i32) >> (32 - bits)
    } else {
        v as i32
    }
}

pub fn sign_of_act(sign: SignMode) -> bool {
    sign.a_signed()
}

pub fn sign_of_wgt(sign: SignMode) -> bool {
    sign.b_signed()
}
