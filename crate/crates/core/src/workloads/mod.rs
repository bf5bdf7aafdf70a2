//! The experiment workloads: secure k-means, the hash-table lookup used for
//! the bus-trace experiment, and the DMA microbenchmark.

pub mod bench;
pub mod hashtable;
pub mod kmeans;

use alloc::sync::Arc;

use crate::pim::{Kernel, KernelContext, KernelRegistry, KernelTrap};

/// Whether data at rest and in transit through the DMA engine is
/// encrypted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Crypto {
    Plain,
    Aead,
}

impl Crypto {
    pub fn as_str(self) -> &'static str {
        match self {
            Crypto::Plain => "plain",
            Crypto::Aead => "aead",
        }
    }
}

/// Burns the number of PIM cycles given as a little-endian u64 parameter
/// and returns nothing.
#[derive(Debug, Clone, Copy, Default)]
pub struct SpinKernel;

impl Kernel for SpinKernel {
    fn run(&self, ctx: &mut KernelContext<'_>) -> Result<(), KernelTrap> {
        let p = ctx.params();
        let n = if p.is_empty() {
            0
        } else {
            let b: [u8; 8] = p
                .get(..8)
                .and_then(|s| s.try_into().ok())
                .ok_or(KernelTrap::BadParams("spin takes a u64"))?;
            u64::from_le_bytes(b)
        };
        ctx.consume_cycles(n);
        Ok(())
    }
}

pub fn builtin_registry() -> KernelRegistry {
    let mut r = KernelRegistry::new();
    r.register(kmeans::KERNEL_NAME, Arc::new(kmeans::KMeansKernel));
    r.register(hashtable::KERNEL_NAME, Arc::new(hashtable::HashTableKernel));
    r.register("spin", Arc::new(SpinKernel));
    r
}

/// MurmurHash3, x86 32-bit variant.
pub fn murmur3_32(data: &[u8], seed: u32) -> u32 {
    const C1: u32 = 0xcc9e_2d51;
    const C2: u32 = 0x1b87_3593;
    let mut h = seed;
    let mut blocks = data.chunks_exact(4);
    for b in &mut blocks {
        let mut k = u32::from_le_bytes([b[0], b[1], b[2], b[3]]);
        k = k.wrapping_mul(C1).rotate_left(15).wrapping_mul(C2);
        h ^= k;
        h = h.rotate_left(13).wrapping_mul(5).wrapping_add(0xe654_6b64);
    }
    let tail = blocks.remainder();
    if !tail.is_empty() {
        let mut k = 0u32;
        for (i, &b) in tail.iter().enumerate() {
            k |= (b as u32) << (8 * i);
        }
        h ^= k.wrapping_mul(C1).rotate_left(15).wrapping_mul(C2);
    }
    h ^= data.len() as u32;
    h ^= h >> 16;
    h = h.wrapping_mul(0x85eb_ca6b);
    h ^= h >> 13;
    h = h.wrapping_mul(0xc2b2_ae35);
    h ^ (h >> 16)
}
