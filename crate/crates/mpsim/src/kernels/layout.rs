//! Memory-layout HAL: chunk-size bounds for conflict-free strided loops
//! and the misaligned-allocation formulas that put each core's buffer
//! base on its own bank.

use crate::cluster::ClusterConfig;

/// Architecture parameters the layout formulas depend on.
#[derive(Debug, Clone, Copy)]
pub struct LayoutParams {
    /// Element size in bytes.
    pub s: u32,
    pub word: u32,
    pub n_cores: u32,
    pub n_banks: u32,
}

impl LayoutParams {
    pub fn new(s: u32) -> Self {
        assert!(matches!(s, 1 | 2 | 4), "element size must be 1, 2 or 4 bytes");
        LayoutParams {
            s,
            word: 4,
            n_cores: 16,
            n_banks: 32,
        }
    }
}

/// Smallest chunk size (elements) that avoids bank conflicts: `w / s`.
pub fn min_chunk(p: LayoutParams) -> u32 {
    p.word / p.s
}

/// Largest conflict-free chunk size: `(n_B / n_C) * (w / s)`.
pub fn max_chunk(p: LayoutParams) -> u32 {
    (p.n_banks / p.n_cores) * (p.word / p.s)
}

/// Padded per-core sub-buffer size for a request of `n` bytes per core:
/// `ceil((n + n_C*w) / (n_B*w)) * (n_B*w)`.
pub fn misaligned_sub_buffer_size(n: u32) -> u32 {
    let p = LayoutParams::new(1);
    let row = p.n_banks * p.word;
    (n + p.n_cores * p.word).div_ceil(row) * row
}

/// Total bytes a statically allocated misaligned buffer needs:
/// `n_C * sub_buffer_size`.
pub fn misaligned_total(n: u32) -> u32 {
    LayoutParams::new(1).n_cores * misaligned_sub_buffer_size(n)
}

/// Byte offset of `core_id`'s sub-buffer:
/// `core_id * sub_buffer_size + core_id * w`.
pub fn misaligned_offset(core_id: u32, n: u32) -> u32 {
    core_id * misaligned_sub_buffer_size(n) + core_id * 4
}

/// Rounding slack per sub-buffer beyond the data and the per-core word
/// shifts; at most `n_B*w - 1` bytes.
pub fn misaligned_padding(n: u32) -> u32 {
    misaligned_sub_buffer_size(n) - n - LayoutParams::new(1).n_cores * 4
}

#[derive(Debug, thiserror::Error)]
#[error("L1 allocator out of memory: need {need} bytes, {left} left")]
pub struct OutOfMemory {
    pub need: u32,
    pub left: u32,
}

/// Bump allocator over the TCDM address range, used by the kernel
/// generators to lay data out at assembly time.
#[derive(Debug, Clone)]
pub struct L1Allocator {
    base: u32,
    limit: u32,
    next: u32,
}

impl L1Allocator {
    pub fn new(cfg: &ClusterConfig) -> Self {
        L1Allocator {
            base: cfg.tcdm_base,
            limit: cfg.tcdm_base + cfg.tcdm_bytes,
            next: cfg.tcdm_base,
        }
    }

    pub fn used(&self) -> u32 {
        self.next - self.base
    }

    /// Plain allocation at the given alignment (power of two).
    pub fn alloc(&mut self, bytes: u32, align: u32) -> Result<u32, OutOfMemory> {
        debug_assert!(align.is_power_of_two());
        let start = (self.next + align - 1) & !(align - 1);
        let end = start.checked_add(bytes).ok_or(OutOfMemory {
            need: bytes,
            left: self.limit - self.next,
        })?;
        if end > self.limit {
            return Err(OutOfMemory {
                need: bytes,
                left: self.limit - self.next,
            });
        }
        self.next = end;
        Ok(start)
    }

    /// Misaligned multi-core allocation: returns a 128-byte-aligned base
    /// such that core `id`'s sub-buffer at `misaligned_offset(id, n)`
    /// starts on bank `id`.
    pub fn alloc_misaligned(&mut self, n_per_core: u32) -> Result<u32, OutOfMemory> {
        self.alloc(misaligned_total(n_per_core), 128)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::{bank_of, ClusterConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn chunk_bounds() {
        assert_eq!(min_chunk(LayoutParams::new(4)), 1);
        assert_eq!(max_chunk(LayoutParams::new(4)), 2);
        assert_eq!(min_chunk(LayoutParams::new(1)), 4);
        assert_eq!(max_chunk(LayoutParams::new(1)), 8);
        assert_eq!(min_chunk(LayoutParams::new(2)), 2);
        assert_eq!(max_chunk(LayoutParams::new(2)), 4);
    }

    #[test]
    fn misaligned_formula_conv_example() {
        // 3x3 filter, 16 input channels: 288 bytes per core
        assert_eq!(misaligned_sub_buffer_size(288), 384);
        assert_eq!(misaligned_total(288), 6144);
        assert_eq!(16 * 288, 4608); // unpadded size for contrast
    }

    #[test]
    fn misaligned_single_byte() {
        assert_eq!(misaligned_sub_buffer_size(1), 128);
        assert_eq!(misaligned_total(1), 2048);
        assert_eq!(misaligned_offset(0, 1), 0);
        assert_eq!(misaligned_offset(1, 1), 132);
        assert_eq!(misaligned_offset(2, 1), 264);
    }

    #[test]
    fn offsets_land_on_distinct_banks() {
        let cfg = ClusterConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..1000 {
            let n = rng.gen_range(1..=8192);
            let base = cfg.tcdm_base; // any 128-aligned base
            let mut banks: Vec<u32> = (0..16)
                .map(|id| bank_of(&cfg, base + misaligned_offset(id, n)))
                .collect();
            banks.sort_unstable();
            banks.dedup();
            assert_eq!(banks.len(), 16, "n = {n}");
            assert_eq!(
                banks,
                (0..16).collect::<Vec<_>>(),
                "core id must land on bank id (n = {n})"
            );
            assert!(misaligned_padding(n) <= 127, "n = {n}");
        }
    }

    #[test]
    fn allocator_basics() {
        let cfg = ClusterConfig::default();
        let mut a = L1Allocator::new(&cfg);
        let x = a.alloc(100, 4).unwrap();
        let y = a.alloc(100, 4).unwrap();
        assert!(y >= x + 100, "allocations must not overlap");
        let m = a.alloc_misaligned(288).unwrap();
        assert_eq!(m % 128, 0);
        for id in 0..16 {
            assert_eq!(bank_of(&cfg, m + misaligned_offset(id, 288)), id);
        }
    }

    #[test]
    fn allocator_oom_leaves_state_unchanged() {
        let cfg = ClusterConfig::default();
        let mut a = L1Allocator::new(&cfg);
        let before = a.used();
        let err = a.alloc(cfg.tcdm_bytes + 4, 4);
        assert!(err.is_err());
        assert_eq!(a.used(), before);
    }
}
