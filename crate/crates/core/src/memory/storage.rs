//! Sparse byte-addressable storage.

use alloc::boxed::Box;
use alloc::collections::BTreeMap;

const PAGE_SHIFT: u32 = 12;
const PAGE_BYTES: usize = 1 << PAGE_SHIFT;

/// A zero-initialised byte array of fixed capacity that only materialises
/// pages once they are written.
#[derive(Debug, Clone)]
pub struct SparseMemory {
    capacity: u64,
    pages: BTreeMap<u64, Box<[u8; PAGE_BYTES]>>,
}

impl SparseMemory {
    pub fn new(capacity: u64) -> Self {
        SparseMemory {
            capacity,
            pages: BTreeMap::new(),
        }
    }

    pub fn capacity(&self) -> u64 {
        self.capacity
    }

    pub fn contains(&self, offset: u64, len: u64) -> bool {
        offset
            .checked_add(len)
            .is_some_and(|end| end <= self.capacity)
    }

    /// Copies `buf.len()` bytes starting at `offset`. Caller checks bounds.
    pub fn read(&self, offset: u64, buf: &mut [u8]) {
        debug_assert!(self.contains(offset, buf.len() as u64));
        let mut done = 0usize;
        while done < buf.len() {
            let addr = offset + done as u64;
            let page = addr >> PAGE_SHIFT;
            let in_page = (addr as usize) & (PAGE_BYTES - 1);
            let n = (PAGE_BYTES - in_page).min(buf.len() - done);
            match self.pages.get(&page) {
                Some(p) => buf[done..done + n].copy_from_slice(&p[in_page..in_page + n]),
                None => buf[done..done + n].fill(0),
            }
            done += n;
        }
    }

    pub fn write(&mut self, offset: u64, data: &[u8]) {
        debug_assert!(self.contains(offset, data.len() as u64));
        let mut done = 0usize;
        while done < data.len() {
            let addr = offset + done as u64;
            let page = addr >> PAGE_SHIFT;
            let in_page = (addr as usize) & (PAGE_BYTES - 1);
            let n = (PAGE_BYTES - in_page).min(data.len() - done);
            let p = self
                .pages
                .entry(page)
                .or_insert_with(|| Box::new([0u8; PAGE_BYTES]));
            p[in_page..in_page + n].copy_from_slice(&data[done..done + n]);
            done += n;
        }
    }

    pub fn fill(&mut self, offset: u64, len: u64, value: u8) {
        debug_assert!(self.contains(offset, len));
        let mut done = 0u64;
        while done < len {
            let addr = offset + done;
            let page = addr >> PAGE_SHIFT;
            let in_page = (addr as usize) & (PAGE_BYTES - 1);
            let n = ((PAGE_BYTES - in_page) as u64).min(len - done) as usize;
            if value == 0 {
                if let Some(p) = self.pages.get_mut(&page) {
                    p[in_page..in_page + n].fill(0);
                }
            } else {
                let p = self
                    .pages
                    .entry(page)
                    .or_insert_with(|| Box::new([0u8; PAGE_BYTES]));
                p[in_page..in_page + n].fill(value);
            }
            done += n as u64;
        }
    }

    /// Overwrites every materialised page with zeros, then drops it.
    pub fn zeroize(&mut self) {
        for page in self.pages.values_mut() {
            zeroize::Zeroize::zeroize(&mut page[..]);
        }
        self.pages.clear();
    }

    pub fn is_all_zero(&self) -> bool {
        self.pages.values().all(|p| p.iter().all(|&b| b == 0))
    }

    /// Materialised pages as `(offset, bytes)` in address order.
    pub fn pages(&self) -> impl Iterator<Item = (u64, &[u8])> + '_ {
        self.pages
            .iter()
            .map(|(&idx, p)| (idx << PAGE_SHIFT, &p[..]))
    }
}
