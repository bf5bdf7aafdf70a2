//! DMA microbenchmark: mean latency and throughput of one bank's DMA engine
//! over a grid of access patterns, directions, sizes and crypto modes.
//!
//! Each request targets its own row-aligned slot inside a 16 MiB region, so
//! sequential and random patterns differ only in slot order. Encrypted
//! reads are served from slots sealed beforehand; row buffers are closed
//! before measuring.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::Crypto;
use crate::config::SimConfig;
use crate::crypto::SymmetricKey;
use crate::dma::{CryptoMode, DmaEngine, DmaError, DmaRequest, KeySlot, Privilege};
use crate::memory::{MemoryModule, SparseMemory};
use crate::time::{SimTime, TICKS_PER_SEC};

pub const REGION_BYTES: u64 = 16 << 20;
pub const DEFAULT_SIZES: [u64; 4] = [1 << 10, 4 << 10, 8 << 10, 64 << 10];
pub const DEFAULT_ITERATIONS: u64 = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Pattern {
    Seq,
    Rand,
}

impl Pattern {
    pub fn as_str(self) -> &'static str {
        match self {
            Pattern::Seq => "seq",
            Pattern::Rand => "rand",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BenchOp {
    Read,
    Write,
}

impl BenchOp {
    pub fn as_str(self) -> &'static str {
        match self {
            BenchOp::Read => "read",
            BenchOp::Write => "write",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BenchSpec {
    pub patterns: Vec<Pattern>,
    pub ops: Vec<BenchOp>,
    pub sizes: Vec<u64>,
    pub cryptos: Vec<Crypto>,
    pub iterations: u64,
}

impl Default for BenchSpec {
    fn default() -> Self {
        BenchSpec {
            patterns: vec![Pattern::Seq, Pattern::Rand],
            ops: vec![BenchOp::Read, BenchOp::Write],
            sizes: DEFAULT_SIZES.to_vec(),
            cryptos: vec![Crypto::Plain, Crypto::Aead],
            iterations: DEFAULT_ITERATIONS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BenchRecord {
    pub pattern: Pattern,
    pub op: BenchOp,
    pub block_size: u64,
    pub crypto: Crypto,
    pub iterations: u64,
    /// Sum of the request latencies.
    pub total: SimTime,
    /// AES-stage part of `total`.
    pub aes: SimTime,
}

impl BenchRecord {
    pub fn scenario(&self) -> String {
        format!("{}-{}", self.pattern.as_str(), self.op.as_str())
    }

    pub fn bytes(&self) -> u64 {
        self.block_size * self.iterations
    }

    pub fn mean_latency_ns(&self) -> f64 {
        self.total.as_ns_f64() / self.iterations as f64
    }

    /// Plaintext bytes per second, floored.
    pub fn throughput_bps(&self) -> u64 {
        if self.total == SimTime::ZERO {
            return 0;
        }
        (self.bytes() as u128 * TICKS_PER_SEC as u128 / self.total.ticks() as u128) as u64
    }
}

/// Slot indices visited by `iterations` requests.
pub fn slot_sequence(pattern: Pattern, n_slots: u64, iterations: u64, rng: &mut ChaCha20Rng) -> Vec<u64> {
    (0..iterations)
        .map(|i| match pattern {
            Pattern::Seq => i % n_slots,
            Pattern::Rand => rng.next_u64() % n_slots,
        })
        .collect()
}

/// Bank-side footprint of one slot.
pub fn slot_stride(cfg: &SimConfig, size: u64, crypto: Crypto) -> u64 {
    let wire = match crypto {
        Crypto::Plain => size,
        Crypto::Aead => size + crate::dma::BLOCK_OVERHEAD,
    };
    wire.next_multiple_of(cfg.row_buffer_bytes)
}

/// One cell of the grid.
pub fn bench_one(
    cfg: &SimConfig,
    pattern: Pattern,
    op: BenchOp,
    size: u64,
    crypto: Crypto,
    iterations: u64,
) -> Result<BenchRecord, DmaError> {
    let mut cfg = cfg.clone();
    cfg.tracing = false;
    cfg.n_banks = 1;
    cfg.bank_size_bytes = cfg.bank_size_bytes.max(REGION_BYTES);
    let mut mem = MemoryModule::new(&cfg);
    let mut local = SparseMemory::new(cfg.local_mem_bytes);
    let mut engine = DmaEngine::new(&cfg, 0);
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    engine.program_key(Privilege::Runtime, KeySlot::Data, SymmetricKey::generate(&mut rng))?;
    if size > cfg.local_mem_bytes {
        return Err(DmaError::LocalBounds { offset: 0, len: size });
    }
    let stride = slot_stride(&cfg, size, crypto);
    let n_slots = (REGION_BYTES / stride).max(1);
    let slots = slot_sequence(pattern, n_slots, iterations, &mut rng);
    let (bank, timing) = mem.bank_and_timing(0).expect("bank 0 exists");
    if crypto == Crypto::Aead && op == BenchOp::Read {
        let mut sealed = vec![false; n_slots as usize];
        for &s in &slots {
            if !core::mem::replace(&mut sealed[s as usize], true) {
                engine.transfer(bank, timing, &mut local, &DmaRequest::write(s * stride, 0, size, CryptoMode::Encrypt))?;
            }
        }
    }
    bank.reset_row_buffer();
    let mode = match (crypto, op) {
        (Crypto::Plain, _) => CryptoMode::Plain,
        (Crypto::Aead, BenchOp::Read) => CryptoMode::Decrypt,
        (Crypto::Aead, BenchOp::Write) => CryptoMode::Encrypt,
    };
    let mut total = SimTime::ZERO;
    let mut aes = SimTime::ZERO;
    for &s in &slots {
        let req = match op {
            BenchOp::Read => DmaRequest::read(s * stride, 0, size, mode),
            BenchOp::Write => DmaRequest::write(s * stride, 0, size, mode),
        };
        let t = engine.transfer(bank, timing, &mut local, &req)?;
        total += t.total();
        aes += t.aes;
    }
    Ok(BenchRecord {
        pattern,
        op,
        block_size: size,
        crypto,
        iterations,
        total,
        aes,
    })
}

/// Every cell of `spec`, in pattern, op, size, crypto order.
pub fn dma_bench(cfg: &SimConfig, spec: &BenchSpec) -> Result<Vec<BenchRecord>, DmaError> {
    let mut out = Vec::new();
    for &pattern in &spec.patterns {
        for &op in &spec.ops {
            for &size in &spec.sizes {
                for &crypto in &spec.cryptos {
                    out.push(bench_one(cfg, pattern, op, size, crypto, spec.iterations)?);
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seq_and_rand_match_when_plain() {
        let cfg = SimConfig::default();
        for op in [BenchOp::Read, BenchOp::Write] {
            let a = bench_one(&cfg, Pattern::Seq, op, 4096, Crypto::Plain, 200).unwrap();
            let b = bench_one(&cfg, Pattern::Rand, op, 4096, Crypto::Plain, 200).unwrap();
            assert_eq!(a.total, b.total);
        }
    }

    #[test]
    fn deterministic() {
        let cfg = SimConfig::default();
        let spec = BenchSpec {
            iterations: 50,
            ..BenchSpec::default()
        };
        assert_eq!(dma_bench(&cfg, &spec).unwrap(), dma_bench(&cfg, &spec).unwrap());
    }

    #[test]
    fn throughput_is_exact() {
        let r = BenchRecord {
            pattern: Pattern::Seq,
            op: BenchOp::Read,
            block_size: 1000,
            crypto: Crypto::Plain,
            iterations: 3,
            total: SimTime::from_ns(1000),
            aes: SimTime::ZERO,
        };
        assert_eq!(r.throughput_bps(), 3_000_000_000);
        assert_eq!(r.scenario(), "seq-read");
    }
}
