//! Bit-exact semantics of the mixed-precision SIMD dot-product datapath
//! and of the packing/extraction instructions used by the
//! software-emulated baseline.
//!
//! All vectors live in 32-bit words. Lane 0 occupies the least-significant
//! bits; lane `i` of precision `p` occupies bits `[i*p, (i+1)*p)`. Operand
//! B is never wider than operand A; when it is narrower, one B word holds
//! `slice_count` groups ("slices") of `lanes(a)` elements each, and a
//! dot-product consumes exactly one slice.

use std::fmt;

/// Lane width of a SIMD operand. Lanes always fill a 32-bit word.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Precision {
    B16,
    B8,
    B4,
    B2,
}

impl Precision {
    pub const ALL: [Precision; 4] = [Precision::B16, Precision::B8, Precision::B4, Precision::B2];

    pub fn bits(self) -> u32 {
        match self {
            Precision::B16 => 16,
            Precision::B8 => 8,
            Precision::B4 => 4,
            Precision::B2 => 2,
        }
    }

    pub fn from_bits(bits: u32) -> Option<Precision> {
        match bits {
            16 => Some(Precision::B16),
            8 => Some(Precision::B8),
            4 => Some(Precision::B4),
            2 => Some(Precision::B2),
            _ => None,
        }
    }

    /// Number of lanes in a 32-bit word.
    pub fn lanes(self) -> u32 {
        32 / self.bits()
    }

    /// Two-bit CSR code: 00 -> 16b, 01 -> 8b, 10 -> 4b, 11 -> 2b.
    pub fn code(self) -> u32 {
        match self {
            Precision::B16 => 0b00,
            Precision::B8 => 0b01,
            Precision::B4 => 0b10,
            Precision::B2 => 0b11,
        }
    }

    pub fn from_code(code: u32) -> Option<Precision> {
        match code & 0b11 {
            0b00 => Some(Precision::B16),
            0b01 => Some(Precision::B8),
            0b10 => Some(Precision::B4),
            0b11 => Some(Precision::B2),
            _ => unreachable!(),
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.bits())
    }
}

impl serde::Serialize for Precision {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u32(self.bits())
    }
}

/// Signedness of the two operands of a dot-product.
///
/// `US` means A unsigned, B signed: QNN kernels use unsigned activations
/// (operand A) against signed weights (operand B, the narrow one).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SignMode {
    /// Both operands signed.
    SS,
    /// Both operands unsigned.
    UU,
    /// A unsigned, B signed.
    US,
}

impl SignMode {
    pub const ALL: [SignMode; 3] = [SignMode::SS, SignMode::UU, SignMode::US];

    pub fn a_signed(self) -> bool {
        matches!(self, SignMode::SS)
    }

    pub fn b_signed(self) -> bool {
        matches!(self, SignMode::SS | SignMode::US)
    }

    /// Two-bit CSR code.
    pub fn code(self) -> u32 {
        match self {
            SignMode::SS => 0,
            SignMode::UU => 1,
            SignMode::US => 2,
        }
    }

    pub fn from_code(code: u32) -> Option<SignMode> {
        match code {
            0 => Some(SignMode::SS),
            1 => Some(SignMode::UU),
            2 => Some(SignMode::US),
            _ => None,
        }
    }
}

impl fmt::Display for SignMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SignMode::SS => "ss",
            SignMode::UU => "uu",
            SignMode::US => "us",
        };
        write!(f, "{s}")
    }
}

impl serde::Serialize for SignMode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

/// The (precision-A, precision-B, signedness) triple governing a virtual
/// SIMD dot-product. Operand B is never wider than operand A.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SimdFormat {
    pub a: Precision,
    pub b: Precision,
    pub sign: SignMode,
}

impl SimdFormat {
    /// Builds a format, rejecting `b` wider than `a`.
    pub fn new(a: Precision, b: Precision, sign: SignMode) -> Option<SimdFormat> {
        if b.bits() > a.bits() {
            return None;
        }
        Some(SimdFormat { a, b, sign })
    }

    /// How many A-sized groups one B word holds: `a.bits / b.bits`.
    pub fn slice_count(self) -> u32 {
        self.a.bits() / self.b.bits()
    }

    pub fn is_mixed(self) -> bool {
        self.a != self.b
    }

    /// The ten (a, b) pairs with `b <= a`, widest first.
    pub fn all_pairs() -> impl Iterator<Item = (Precision, Precision)> {
        Precision::ALL.into_iter().flat_map(|a| {
            Precision::ALL
                .into_iter()
                .filter(move |b| b.bits() <= a.bits())
                .map(move |b| (a, b))
        })
    }
}

impl fmt::Display for SimdFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}{}", self.a, self.b, self.sign)
    }
}

/// A 32-bit word viewed as packed lanes, lane 0 in the least-significant
/// bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SimdWord(pub u32);

impl SimdWord {
    /// Lane `index` extended to 32 bits. Panics if `index >= lanes(p)`.
    pub fn lane(self, p: Precision, index: u32, signed: bool) -> i32 {
        assert!(
            index < p.lanes(),
            "lane index {index} out of range for {p}-bit lanes"
        );
        let bits = p.bits();
        let shifted = self.0 << (32 - (index + 1) * bits);
        if signed {
            (shifted as i32) >> (32 - bits)
        } else {
            (shifted >> (32 - bits)) as i32
        }
    }

    /// All lanes of the word at precision `p`.
    pub fn lanes(self, p: Precision, signed: bool) -> Vec<i32> {
        (0..p.lanes()).map(|i| self.lane(p, i, signed)).collect()
    }

    /// Packs lane values (low `p.bits()` of each) back into a word.
    /// Panics unless exactly `lanes(p)` values are given.
    pub fn from_lanes(p: Precision, values: &[i32]) -> SimdWord {
        assert_eq!(values.len() as u32, p.lanes(), "lane count mismatch");
        let bits = p.bits();
        let mask = if bits == 32 { u32::MAX } else { (1u32 << bits) - 1 };
        let mut raw = 0u32;
        for (i, &v) in values.iter().enumerate() {
            raw |= ((v as u32) & mask) << (i as u32 * bits);
        }
        SimdWord(raw)
    }
}

/// Number of lanes a 32-bit register holds at precision `p`.
pub fn lanes(p: Precision) -> u32 {
    p.lanes()
}

/// Slices operand B and widens one slice to A-sized lanes.
///
/// Element `j` of the result is B-lane `slice_idx * lanes(a) + j`,
/// sign-extended when B is signed under the format's sign mode and
/// zero-extended otherwise. Panics when `slice_idx` is out of range.
pub fn slice_extend(b_word: SimdWord, fmt: SimdFormat, slice_idx: u32) -> Vec<i32> {
    assert!(
        slice_idx < fmt.slice_count(),
        "slice index {slice_idx} out of range for format {fmt}"
    );
    let n = fmt.a.lanes();
    let b_signed = fmt.sign.b_signed();
    (0..n)
        .map(|j| b_word.lane(fmt.b, slice_idx * n + j, b_signed))
        .collect()
}

/// SIMD dot-product of one A word against one slice of a B word,
/// accumulated in wrapping two's-complement 32-bit arithmetic.
pub fn dotp(a_word: SimdWord, b_word: SimdWord, fmt: SimdFormat, slice_idx: u32) -> i32 {
    let a_signed = fmt.sign.a_signed();
    let b = slice_extend(b_word, fmt, slice_idx);
    let mut acc = 0i32;
    for (j, &bv) in b.iter().enumerate() {
        let av = a_word.lane(fmt.a, j as u32, a_signed);
        acc = acc.wrapping_add(av.wrapping_mul(bv));
    }
    acc
}

/// Sum-of-dot-product: `acc + dotp(..)`, wrapping.
pub fn sdotp(a_word: SimdWord, b_word: SimdWord, fmt: SimdFormat, slice_idx: u32, acc: i32) -> i32 {
    acc.wrapping_add(dotp(a_word, b_word, fmt, slice_idx))
}

/// Extracts lane `index` of `word` at precision `p`, sign- or
/// zero-extended to 32 bits. Panics when the index is out of range.
pub fn extract(word: u32, p: Precision, index: u32, signed: bool) -> u32 {
    SimdWord(word).lane(p, index, signed) as u32
}

/// Which half of the destination `pack_byte` fills.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PackHalf {
    Lo,
    Hi,
}

/// Packs the low bytes of `rs1` and `rs2` into the selected 16-bit half
/// of `dest`, preserving the other half (read-modify-write).
pub fn pack_byte(dest: u32, rs1: u32, rs2: u32, half: PackHalf) -> u32 {
    let pair = (rs1 & 0xFF) | ((rs2 & 0xFF) << 8);
    match half {
        PackHalf::Lo => (dest & 0xFFFF_0000) | pair,
        PackHalf::Hi => (dest & 0x0000_FFFF) | (pair << 16),
    }
}

/// Independent brute-force reference for the dot-product family.
///
/// Takes already-extended lane values, accumulates in unbounded integers
/// and reduces modulo 2^32 at the end. Shares no code with the datapath
/// above. Panics on length mismatch.
pub fn oracle_dotp(a_lanes: &[i64], b_lanes: &[i64], acc: i64) -> i32 {
    assert_eq!(
        a_lanes.len(),
        b_lanes.len(),
        "oracle operand lane lists differ in length"
    );
    let mut sum = acc as i128;
    for (&a, &b) in a_lanes.iter().zip(b_lanes) {
        sum += a as i128 * b as i128;
    }
    (sum.rem_euclid(1 << 32)) as u32 as i32
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Test-side lane expansion, deliberately written differently from
    /// `SimdWord::lane` (mask-and-subtract instead of shift pairs).
    fn expand(word: u32, bits: u32, index: u32, signed: bool) -> i64 {
        let mask = (1u64 << bits) - 1;
        let v = ((word as u64) >> (index * bits)) & mask;
        if signed && v >= (1 << (bits - 1)) {
            v as i64 - (1i64 << bits)
        } else {
            v as i64
        }
    }

    fn expand_a(word: u32, fmt: SimdFormat) -> Vec<i64> {
        (0..fmt.a.lanes())
            .map(|i| expand(word, fmt.a.bits(), i, fmt.sign.a_signed()))
            .collect()
    }

    fn expand_b_slice(word: u32, fmt: SimdFormat, slice: u32) -> Vec<i64> {
        let n = fmt.a.lanes();
        (0..n)
            .map(|j| expand(word, fmt.b.bits(), slice * n + j, fmt.sign.b_signed()))
            .collect()
    }

    #[test]
    fn lane_counts() {
        assert_eq!(lanes(Precision::B8), 4);
        assert_eq!(lanes(Precision::B2), 16);
        assert_eq!(lanes(Precision::B16), 2);
        assert_eq!(lanes(Precision::B4), 8);
    }

    #[test]
    fn slice_extend_nibbles() {
        // 0x000000F1 as 4-bit signed: nibble0 = 1, nibble1 = -1, rest 0.
        let fmt = SimdFormat::new(Precision::B8, Precision::B4, SignMode::SS).unwrap();
        assert_eq!(slice_extend(SimdWord(0x0000_00F1), fmt, 0), vec![1, -1, 0, 0]);
    }

    #[test]
    fn slice_extend_uniform_is_identity() {
        let fmt = SimdFormat::new(Precision::B8, Precision::B8, SignMode::SS).unwrap();
        let w = SimdWord(0xA1B2_C3D4);
        assert_eq!(slice_extend(w, fmt, 0), w.lanes(Precision::B8, true));
    }

    #[test]
    fn slice_extend_two_bit_all_minus_two() {
        // 0xAAAAAAAA: every 2-bit lane is 0b10 = -2 signed.
        let fmt = SimdFormat::new(Precision::B8, Precision::B2, SignMode::SS).unwrap();
        assert_eq!(
            slice_extend(SimdWord(0xAAAA_AAAA), fmt, 3),
            vec![-2, -2, -2, -2]
        );
    }

    #[test]
    #[should_panic(expected = "slice index")]
    fn slice_extend_rejects_bad_index() {
        let fmt = SimdFormat::new(Precision::B8, Precision::B4, SignMode::SS).unwrap();
        slice_extend(SimdWord(0), fmt, 2);
    }

    #[test]
    fn dotp_mixed_example() {
        // A = bytes [1,2,3,4], B nibbles [1,1,1,1,-1,-1,-1,-1].
        let fmt = SimdFormat::new(Precision::B8, Precision::B4, SignMode::SS).unwrap();
        let a = SimdWord::from_lanes(Precision::B8, &[1, 2, 3, 4]);
        let b = SimdWord::from_lanes(Precision::B4, &[1, 1, 1, 1, -1, -1, -1, -1]);
        assert_eq!(dotp(a, b, fmt, 0), 10);
        assert_eq!(dotp(a, b, fmt, 1), -10);
    }

    #[test]
    fn dotp_zero_operand() {
        let fmt = SimdFormat::new(Precision::B16, Precision::B4, SignMode::SS).unwrap();
        assert_eq!(dotp(SimdWord(0xDEAD_BEEF), SimdWord(0), fmt, 2), 0);
    }

    #[test]
    fn dotp_uniform_unsigned() {
        let fmt = SimdFormat::new(Precision::B8, Precision::B8, SignMode::UU).unwrap();
        assert_eq!(dotp(SimdWord(0x0101_0101), SimdWord(0x0101_0101), fmt, 0), 4);
    }

    #[test]
    fn sdotp_examples() {
        let fmt = SimdFormat::new(Precision::B8, Precision::B4, SignMode::SS).unwrap();
        let b = SimdWord::from_lanes(Precision::B4, &[1, 1, 1, 1, 0, 0, 0, 0]);
        assert_eq!(sdotp(SimdWord(0), b, fmt, 0, 77), 77);
        let a = SimdWord::from_lanes(Precision::B8, &[1, 2, 3, 4]);
        assert_eq!(sdotp(a, b, fmt, 0, 100), 110);
        // Wraparound, no trap.
        let one_fmt = SimdFormat::new(Precision::B8, Precision::B8, SignMode::SS).unwrap();
        let a1 = SimdWord::from_lanes(Precision::B8, &[1, 0, 0, 0]);
        assert_eq!(sdotp(a1, a1, one_fmt, 0, i32::MAX), i32::MIN);
    }

    #[test]
    fn extract_examples() {
        assert_eq!(extract(0x0000_000F, Precision::B4, 0, true), 0xFFFF_FFFF);
        assert_eq!(extract(0x0000_000F, Precision::B4, 0, false), 0x0000_000F);
        assert_eq!(extract(0xABCD_1234, Precision::B8, 2, false), 0x0000_00CD);
    }

    #[test]
    fn pack_byte_examples() {
        assert_eq!(pack_byte(0, 0xAB, 0xCD, PackHalf::Lo), 0x0000_CDAB);
        assert_eq!(pack_byte(0xFFFF_0000, 0xAB, 0xCD, PackHalf::Lo), 0xFFFF_CDAB);
        assert_eq!(pack_byte(0x0000_BEEF, 0x12, 0x34, PackHalf::Hi), 0x3412_BEEF);
    }

    #[test]
    fn oracle_basics() {
        assert_eq!(oracle_dotp(&[1, 2], &[3, 4], 0), 11);
        assert_eq!(oracle_dotp(&[], &[], 5), 5);
    }

    #[test]
    fn sdotp_matches_oracle_all_formats() {
        let mut rng = ChaCha8Rng::seed_from_u64(0x51D0);
        for (a, b) in SimdFormat::all_pairs() {
            for sign in SignMode::ALL {
                let fmt = SimdFormat::new(a, b, sign).unwrap();
                for _ in 0..1000 {
                    let aw = SimdWord(rng.gen());
                    let bw = SimdWord(rng.gen());
                    let slice = rng.gen_range(0..fmt.slice_count());
                    let acc: i32 = rng.gen();
                    let got = sdotp(aw, bw, fmt, slice, acc);
                    let want = oracle_dotp(
                        &expand_a(aw.0, fmt),
                        &expand_b_slice(bw.0, fmt, slice),
                        acc as i64,
                    );
                    assert_eq!(got, want, "format {fmt} slice {slice}");
                }
            }
        }
    }

    #[test]
    fn extract_pack_round_trip() {
        // Unpacking a word into byte lanes and repacking via pack_byte
        // reproduces the half-words exactly.
        let w = 0x1234_ABCDu32;
        let b0 = extract(w, Precision::B8, 0, false);
        let b1 = extract(w, Precision::B8, 1, false);
        let b2 = extract(w, Precision::B8, 2, false);
        let b3 = extract(w, Precision::B8, 3, false);
        let lo = pack_byte(0, b0, b1, PackHalf::Lo);
        let full = pack_byte(lo, b2, b3, PackHalf::Hi);
        assert_eq!(full, w);
    }

    proptest! {
        #[test]
        fn lane_decomposition_lossless(raw: u32, p_idx in 0usize..4) {
            let p = Precision::ALL[p_idx];
            let w = SimdWord(raw);
            let back = SimdWord::from_lanes(p, &w.lanes(p, true));
            prop_assert_eq!(back, w);
            let back_u = SimdWord::from_lanes(p, &w.lanes(p, false));
            prop_assert_eq!(back_u, w);
        }

        #[test]
        fn uniform_dotp_commutes_ss(a: u32, b: u32, p_idx in 0usize..4) {
            let p = Precision::ALL[p_idx];
            let fmt = SimdFormat::new(p, p, SignMode::SS).unwrap();
            prop_assert_eq!(
                dotp(SimdWord(a), SimdWord(b), fmt, 0),
                dotp(SimdWord(b), SimdWord(a), fmt, 0)
            );
        }

        #[test]
        fn dotp_negation_is_linear_ss(a: u32, b: u32, p_idx in 0usize..4) {
            // Negating every B lane negates the result, lanes at the
            // asymmetric minimum excluded.
            let p = Precision::ALL[p_idx];
            let fmt = SimdFormat::new(p, p, SignMode::SS).unwrap();
            let min = -(1i32 << (p.bits() - 1));
            let lanes_b = SimdWord(b).lanes(p, true);
            prop_assume!(lanes_b.iter().all(|&v| v != min));
            let neg: Vec<i32> = lanes_b.iter().map(|&v| -v).collect();
            let nb = SimdWord::from_lanes(p, &neg);
            prop_assert_eq!(
                dotp(SimdWord(a), nb, fmt, 0),
                dotp(SimdWord(a), SimdWord(b), fmt, 0).wrapping_neg()
            );
        }

        #[test]
        fn mixed_sdotp_matches_oracle(a: u32, b: u32, acc: i32,
                                      pair_idx in 0usize..10, sign_idx in 0usize..3,
                                      slice_seed: u32) {
            let (pa, pb) = SimdFormat::all_pairs().nth(pair_idx).unwrap();
            let fmt = SimdFormat::new(pa, pb, SignMode::ALL[sign_idx]).unwrap();
            let slice = slice_seed % fmt.slice_count();
            let got = sdotp(SimdWord(a), SimdWord(b), fmt, slice, acc);
            let want = oracle_dotp(&expand_a(a, fmt), &expand_b_slice(b, fmt, slice), acc as i64);
            prop_assert_eq!(got, want);
        }
    }
}
