//! The in-bank processor: kernel images, the kernel registry and the ABI a
//! running kernel sees.
//!
//! Kernel behavior is native code looked up by name; the serialized image is
//! what travels over the channel, gets measured and is size-checked.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;

use thiserror::Error;

use crate::config::KernelCostTable;
use crate::dma::{DmaEngine, DmaError, DmaRequest};
use crate::memory::{AccessRange, MemoryError, MemoryModule, Requester, SparseMemory};
use crate::time::SimTime;

pub const KERNEL_MAGIC: [u8; 4] = *b"PIMK";
/// Local memory kept for the device runtime, below the kernel image.
pub const RUNTIME_RESERVED: u64 = 64 * 1024;
/// Granularity of a local-memory access; each word touched is one access.
pub const LOCAL_WORD: u64 = 4;
/// Upper bound on what one execution may post back to the host.
pub const MAX_RESULT_BYTES: usize = 64 * 1024;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ImageError {
    #[error("bad kernel image magic")]
    Magic,
    #[error("kernel image truncated")]
    Truncated,
    #[error("kernel name is not valid UTF-8")]
    Name,
    #[error("no kernel named `{0}` is registered")]
    UnknownKernel(String),
    #[error("kernel image of {size} bytes exceeds the {limit} available")]
    TooLarge { size: u64, limit: u64 },
}

/// Serialized kernel: `PIMK`, u16 name length, name, u32 version, payload.
/// Integers are little-endian.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KernelImage {
    pub name: String,
    pub version: u32,
    pub payload: Vec<u8>,
}

impl KernelImage {
    pub fn new(name: &str, version: u32, payload: Vec<u8>) -> Self {
        KernelImage {
            name: name.into(),
            version,
            payload,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let name = self.name.as_bytes();
        let mut out = Vec::with_capacity(10 + name.len() + self.payload.len());
        out.extend_from_slice(&KERNEL_MAGIC);
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn parse(bytes: &[u8]) -> Result<Self, ImageError> {
        if bytes.len() < 4 {
            return Err(ImageError::Truncated);
        }
        if bytes[..4] != KERNEL_MAGIC {
            return Err(ImageError::Magic);
        }
        let len_bytes = bytes.get(4..6).ok_or(ImageError::Truncated)?;
        let name_len = u16::from_le_bytes([len_bytes[0], len_bytes[1]]) as usize;
        let name = bytes.get(6..6 + name_len).ok_or(ImageError::Truncated)?;
        let name = core::str::from_utf8(name).map_err(|_| ImageError::Name)?;
        let v = bytes
            .get(6 + name_len..10 + name_len)
            .ok_or(ImageError::Truncated)?;
        Ok(KernelImage {
            name: name.into(),
            version: u32::from_le_bytes([v[0], v[1], v[2], v[3]]),
            payload: bytes[10 + name_len..].to_vec(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KernelTrap {
    #[error("DMA fault: {0}")]
    Dma(#[from] DmaError),
    #[error("local access {offset:#x}+{len} outside the kernel's window")]
    LocalBounds { offset: u64, len: u64 },
    #[error("malformed parameters: {0}")]
    BadParams(&'static str),
    #[error("access range rejected: {0}")]
    Protect(#[from] MemoryError),
    #[error("result exceeds {MAX_RESULT_BYTES} bytes")]
    ResultTooLarge,
}

/// A kernel implementation. It may only act through its context.
pub trait Kernel: Send + Sync {
    fn run(&self, ctx: &mut KernelContext<'_>) -> Result<(), KernelTrap>;
}

#[derive(Clone, Default)]
pub struct KernelRegistry {
    kernels: BTreeMap<String, Arc<dyn Kernel>>,
}

impl fmt::Debug for KernelRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.kernels.keys()).finish()
    }
}

impl KernelRegistry {
    pub fn new() -> Self {
        KernelRegistry::default()
    }

    pub fn register(&mut self, name: &str, kernel: Arc<dyn Kernel>) {
        self.kernels.insert(name.into(), kernel);
    }

    pub fn get(&self, name: &str) -> Option<Arc<dyn Kernel>> {
        self.kernels.get(name).cloned()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.kernels.keys().map(String::as_str)
    }
}

/// Where one execution spent its time.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct KernelStats {
    pub compute_cycles: u64,
    pub compute: SimTime,
    /// All DMA time, AES stage included.
    pub dma: SimTime,
    /// The AES-stage part of `dma`.
    pub aes: SimTime,
    pub local: SimTime,
    pub local_accesses: u64,
    pub dma_requests: u64,
}

impl KernelStats {
    pub fn total(&self) -> SimTime {
        self.compute + self.dma + self.local
    }
}

/// The device ABI handed to a running kernel. It reaches the kernel's own
/// bank, its window of local memory and the DMA engine's key slots by
/// reference only; nothing else is reachable.
pub struct KernelContext<'a> {
    bank: u32,
    memory: &'a mut MemoryModule,
    dma: &'a mut DmaEngine,
    local: &'a mut SparseMemory,
    window: (u64, u64),
    params: &'a [u8],
    costs: &'a KernelCostTable,
    pim_cycle: SimTime,
    local_latency: SimTime,
    stats: KernelStats,
    result: Vec<u8>,
}

impl<'a> KernelContext<'a> {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn new(
        bank: u32,
        memory: &'a mut MemoryModule,
        dma: &'a mut DmaEngine,
        local: &'a mut SparseMemory,
        window: (u64, u64),
        params: &'a [u8],
        costs: &'a KernelCostTable,
        pim_cycle: SimTime,
        local_latency: SimTime,
    ) -> Self {
        KernelContext {
            bank,
            memory,
            dma,
            local,
            window,
            params,
            costs,
            pim_cycle,
            local_latency,
            stats: KernelStats::default(),
            result: Vec::new(),
        }
    }

    pub fn params(&self) -> &[u8] {
        self.params
    }

    pub fn costs(&self) -> &KernelCostTable {
        self.costs
    }

    /// Start and end of the local memory the kernel may use.
    pub fn local_window(&self) -> (u64, u64) {
        self.window
    }

    pub fn stats(&self) -> KernelStats {
        self.stats
    }

    pub fn consume_cycles(&mut self, n: u64) {
        self.stats.compute_cycles += n;
        self.stats.compute = self
            .pim_cycle
            .times(self.stats.compute_cycles)
            .expect("simulated time overflow");
    }

    fn check_local(&self, offset: u64, len: u64) -> Result<(), KernelTrap> {
        let (lo, hi) = self.window;
        let end = offset.checked_add(len);
        if offset < lo || end.is_none_or(|e| e > hi) {
            return Err(KernelTrap::LocalBounds { offset, len });
        }
        Ok(())
    }

    fn charge_local(&mut self, len: u64) {
        let n = len.div_ceil(LOCAL_WORD);
        self.stats.local_accesses += n;
        self.stats.local += self.local_latency.times(n).expect("simulated time overflow");
    }

    pub fn local_read(&mut self, offset: u64, buf: &mut [u8]) -> Result<(), KernelTrap> {
        self.check_local(offset, buf.len() as u64)?;
        self.local.read(offset, buf);
        self.charge_local(buf.len() as u64);
        Ok(())
    }

    pub fn local_write(&mut self, offset: u64, data: &[u8]) -> Result<(), KernelTrap> {
        self.check_local(offset, data.len() as u64)?;
        self.local.write(offset, data);
        self.charge_local(data.len() as u64);
        Ok(())
    }

    /// One DMA request between the kernel's bank and its local window. The
    /// issue cost is charged in PIM cycles; the transfer itself, AES included,
    /// runs on the engine.
    pub fn dma(&mut self, req: DmaRequest) -> Result<(), KernelTrap> {
        self.check_local(req.local_offset, req.size)?;
        self.consume_cycles(self.costs.dma_issue);
        let (bank, timing) = self.memory.bank_and_timing(self.bank)?;
        let t = self.dma.transfer(bank, timing, self.local, &req)?;
        self.stats.dma += t.total();
        self.stats.aes += t.aes;
        self.stats.dma_requests += 1;
        Ok(())
    }

    /// Blocks host access to `range` of this bank.
    pub fn set_protect(&mut self, range: AccessRange) -> Result<(), KernelTrap> {
        self.memory
            .set_access_range(Requester::PimCore(self.bank), self.bank, range)?;
        Ok(())
    }

    pub fn clear_protect(&mut self) -> Result<(), KernelTrap> {
        self.set_protect(AccessRange::DISABLED)
    }

    pub fn post_result(&mut self, bytes: &[u8]) -> Result<(), KernelTrap> {
        if self.result.len() + bytes.len() > MAX_RESULT_BYTES {
            return Err(KernelTrap::ResultTooLarge);
        }
        self.result.extend_from_slice(bytes);
        Ok(())
    }

    pub(crate) fn finish(self) -> (KernelStats, Vec<u8>) {
        (self.stats, self.result)
    }
}
