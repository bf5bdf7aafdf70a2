//! Per-bank range base / range mask registers.

use super::MemoryError;

/// Host-port filter for one bank. An offset `a` is protected iff
/// `a & mask == base`; both registers at zero turn the filter off.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct AccessRange {
    base: u64,
    mask: u64,
}

impl AccessRange {
    pub const DISABLED: AccessRange = AccessRange { base: 0, mask: 0 };

    /// Fails when `base` has bits outside `mask`, which no offset could match.
    pub fn new(base: u64, mask: u64) -> Result<Self, MemoryError> {
        if base & !mask != 0 {
            return Err(MemoryError::InvalidRange { base, mask });
        }
        Ok(AccessRange { base, mask })
    }

    /// The range covering exactly `[offset, offset + size)` inside a bank of
    /// `bank_size` bytes. Requires a power-of-two size and size alignment.
    pub fn for_region(offset: u64, size: u64, bank_size: u64) -> Result<Self, MemoryError> {
        if size == 0 || !size.is_power_of_two() || !offset.is_multiple_of(size) || size > bank_size {
            return Err(MemoryError::Unalignable { offset, size });
        }
        let mask = (bank_size - 1) & !(size - 1);
        Ok(AccessRange { base: offset, mask })
    }

    pub fn base(&self) -> u64 {
        self.base
    }

    pub fn mask(&self) -> u64 {
        self.mask
    }

    pub fn is_disabled(&self) -> bool {
        self.base == 0 && self.mask == 0
    }

    pub fn covers(&self, offset: u64) -> bool {
        !self.is_disabled() && offset & self.mask == self.base
    }

    /// Whether any byte of `[offset, offset + len)` is covered.
    pub fn intersects(&self, offset: u64, len: u64) -> bool {
        if self.is_disabled() || len == 0 {
            return false;
        }
        // The covered set is a union of aligned blocks of size 2^tz(mask),
        // so it is enough to test one offset per block.
        let block = if self.mask == 0 {
            u64::MAX
        } else {
            1u64 << self.mask.trailing_zeros()
        };
        let mut a = offset;
        let end = offset + len;
        while a < end {
            if self.covers(a) {
                return true;
            }
            a = match (a / block).checked_add(1).and_then(|b| b.checked_mul(block)) {
                Some(next) => next,
                None => break,
            };
        }
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_disables() {
        let r = AccessRange::new(0, 0).unwrap();
        assert!(r.is_disabled());
        assert!(!r.covers(0));
        assert!(!r.intersects(0, 1 << 20));
    }

    #[test]
    fn page_range() {
        let r = AccessRange::new(0x100, 0xF00).unwrap();
        assert!(!r.covers(0x0FF));
        assert!(r.covers(0x100));
        assert!(r.covers(0x1FF));
        assert!(!r.covers(0x200));
        assert!(r.intersects(0x0F0, 0x20));
        assert!(!r.intersects(0x200, 0x100));
    }

    #[test]
    fn full_bank() {
        let r = AccessRange::new(0, 0xFFF_FFFF).unwrap();
        assert!(r.covers(0));
        assert!(!r.covers(1));
        let whole = AccessRange::for_region(0, 64 << 20, 64 << 20).unwrap();
        assert!(!whole.is_disabled() || whole.mask() == 0);
    }

    #[test]
    fn region_alignment() {
        let r = AccessRange::for_region(1 << 20, 1 << 20, 64 << 20).unwrap();
        assert_eq!(r.mask(), 0x3F0_0000);
        assert!(r.covers(1 << 20));
        assert!(r.covers((2 << 20) - 1));
        assert!(!r.covers(2 << 20));
        assert!(AccessRange::for_region(0, 3 << 20, 64 << 20).is_err());
        assert!(AccessRange::for_region(4096, 8192, 64 << 20).is_err());
    }

    #[test]
    fn stray_base_bits_rejected() {
        assert!(AccessRange::new(0x1, 0xF0).is_err());
    }

    #[test]
    fn intersects_matches_bytewise() {
        let r = AccessRange::new(0x40, 0xC0).unwrap();
        for off in 0..0x200u64 {
            for len in [1u64, 7, 32, 100] {
                let brute = (off..off + len).any(|a| r.covers(a));
                assert_eq!(r.intersects(off, len), brute, "off={off} len={len}");
            }
        }
    }
}
