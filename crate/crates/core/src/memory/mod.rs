//! The memory module: banks, their row buffers and access-control registers,
//! the host-visible port and the bus tracer.

mod access;
mod dram;
mod storage;
mod trace;

pub use access::AccessRange;
pub use dram::{DramTiming, RowBuffer};
pub use storage::SparseMemory;
pub use trace::{AccessOp, TraceEvent, Tracer};

use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::config::SimConfig;
use crate::time::SimTime;

/// Address space reserved per bank for its memory-mapped control registers,
/// placed directly after the last bank.
pub const MMIO_WINDOW_BYTES: u64 = 0x1000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MemoryError {
    #[error("address {0:#x} is outside the memory module")]
    OutOfRange(u64),
    #[error("access at {addr:#x} of {size} bytes crosses a bank boundary")]
    CrossesBank { addr: u64, size: u64 },
    #[error("bank {0} does not exist")]
    NoSuchBank(u32),
    #[error("range base {base:#x} has bits outside mask {mask:#x}")]
    InvalidRange { base: u64, mask: u64 },
    #[error("region at {offset:#x} of {size} bytes is not a size-aligned power of two")]
    Unalignable { offset: u64, size: u64 },
    #[error("only the bank's own PIM core may program its access range")]
    Unauthorized,
    #[error("write payload length {got} does not match access size {size}")]
    PayloadSize { got: usize, size: u64 },
}

/// Bank-relative location of a host physical address.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BankAddress {
    pub bank: u32,
    pub offset: u64,
}

/// Who is asking to reprogram an access range.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Requester {
    Host,
    PimCore(u32),
}

/// Memory-mapped control registers of one bank's PIM core.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Register {
    Command,
    Parameter,
    Status,
    Response,
}

impl Register {
    fn offset(self) -> u64 {
        match self {
            Register::Command => 0x000,
            Register::Parameter => 0x400,
            Register::Status => 0x800,
            Register::Response => 0xC00,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Bank {
    storage: SparseMemory,
    row_buffer: RowBuffer,
    range: AccessRange,
}

impl Bank {
    fn new(size: u64) -> Self {
        Bank {
            storage: SparseMemory::new(size),
            row_buffer: RowBuffer::default(),
            range: AccessRange::DISABLED,
        }
    }

    pub fn size(&self) -> u64 {
        self.storage.capacity()
    }

    pub fn contains(&self, offset: u64, len: u64) -> bool {
        self.storage.contains(offset, len)
    }

    pub fn access_range(&self) -> AccessRange {
        self.range
    }

    pub fn row_buffer(&self) -> RowBuffer {
        self.row_buffer
    }

    pub fn storage(&self) -> &SparseMemory {
        &self.storage
    }

    /// Unfiltered read from the in-package side; bounds are the caller's job.
    pub fn pim_read(&mut self, timing: &DramTiming, offset: u64, buf: &mut [u8]) -> SimTime {
        self.storage.read(offset, buf);
        timing.access(&mut self.row_buffer, offset, buf.len() as u64)
    }

    pub fn pim_write(&mut self, timing: &DramTiming, offset: u64, data: &[u8]) -> SimTime {
        self.storage.write(offset, data);
        timing.access(&mut self.row_buffer, offset, data.len() as u64)
    }

    pub(crate) fn set_range(&mut self, range: AccessRange) {
        self.range = range;
    }

    pub(crate) fn reset_row_buffer(&mut self) {
        self.row_buffer.close();
    }
}

/// Result of one host-port access.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HostAccess {
    /// Bytes returned to the host; empty for writes.
    pub data: Vec<u8>,
    pub latency: SimTime,
    /// Whether any byte was filtered by the access range.
    pub blocked: bool,
}

#[derive(Debug, Clone)]
pub struct MemoryModule {
    base: u64,
    bank_size: u64,
    banks: Vec<Bank>,
    timing: DramTiming,
    tracer: Tracer,
}

impl MemoryModule {
    pub fn new(cfg: &SimConfig) -> Self {
        MemoryModule {
            base: cfg.module_base,
            bank_size: cfg.bank_size_bytes,
            banks: (0..cfg.n_banks).map(|_| Bank::new(cfg.bank_size_bytes)).collect(),
            timing: DramTiming::from_config(cfg),
            tracer: Tracer::new(cfg.tracing),
        }
    }

    pub fn n_banks(&self) -> u32 {
        self.banks.len() as u32
    }

    pub fn bank_size(&self) -> u64 {
        self.bank_size
    }

    pub fn base(&self) -> u64 {
        self.base
    }

    pub fn timing(&self) -> &DramTiming {
        &self.timing
    }

    pub fn bank(&self, bank: u32) -> Result<&Bank, MemoryError> {
        self.banks.get(bank as usize).ok_or(MemoryError::NoSuchBank(bank))
    }

    pub(crate) fn bank_mut(&mut self, bank: u32) -> Result<&mut Bank, MemoryError> {
        self.banks
            .get_mut(bank as usize)
            .ok_or(MemoryError::NoSuchBank(bank))
    }

    pub(crate) fn bank_and_timing(
        &mut self,
        bank: u32,
    ) -> Result<(&mut Bank, &DramTiming), MemoryError> {
        let timing = &self.timing;
        let b = self
            .banks
            .get_mut(bank as usize)
            .ok_or(MemoryError::NoSuchBank(bank))?;
        Ok((b, timing))
    }

    pub fn tracer(&self) -> &Tracer {
        &self.tracer
    }

    pub fn tracer_mut(&mut self) -> &mut Tracer {
        &mut self.tracer
    }

    fn span(&self) -> u64 {
        self.bank_size * self.banks.len() as u64
    }

    pub fn translate(&self, host_addr: u64) -> Result<BankAddress, MemoryError> {
        let rel = host_addr
            .checked_sub(self.base)
            .filter(|&r| r < self.span())
            .ok_or(MemoryError::OutOfRange(host_addr))?;
        Ok(BankAddress {
            bank: (rel / self.bank_size) as u32,
            offset: rel % self.bank_size,
        })
    }

    pub fn host_address(&self, at: BankAddress) -> Result<u64, MemoryError> {
        if at.bank as usize >= self.banks.len() {
            return Err(MemoryError::NoSuchBank(at.bank));
        }
        if at.offset >= self.bank_size {
            return Err(MemoryError::OutOfRange(at.offset));
        }
        Ok(self.base + at.bank as u64 * self.bank_size + at.offset)
    }

    pub fn register_address(&self, bank: u32, reg: Register) -> Result<u64, MemoryError> {
        if bank as usize >= self.banks.len() {
            return Err(MemoryError::NoSuchBank(bank));
        }
        Ok(self.base + self.span() + bank as u64 * MMIO_WINDOW_BYTES + reg.offset())
    }

    /// A host-bus access to bank memory starting at simulated time `now`.
    ///
    /// The access is split at row-buffer boundaries; each piece is one bus
    /// transaction in the trace. Protected bytes read back as zero and
    /// protected writes are dropped. A piece with any protected byte leaves
    /// the row buffer alone but is charged the latency it would have had.
    pub fn host_access(
        &mut self,
        now: SimTime,
        op: AccessOp,
        addr: u64,
        size: u64,
        payload: Option<&[u8]>,
    ) -> Result<HostAccess, MemoryError> {
        let at = self.translate(addr)?;
        if size == 0 || at.offset + size > self.bank_size {
            return Err(MemoryError::CrossesBank { addr, size });
        }
        if op == AccessOp::Write {
            let got = payload.map_or(0, |p| p.len());
            if got as u64 != size {
                return Err(MemoryError::PayloadSize { got, size });
            }
        }
        let row = self.timing.row_buffer_bytes;
        let timing = self.timing;
        let bank = &mut self.banks[at.bank as usize];
        let mut data = if op == AccessOp::Read {
            vec![0u8; size as usize]
        } else {
            Vec::new()
        };
        let mut latency = SimTime::ZERO;
        let mut any_blocked = false;
        let mut done = 0u64;
        while done < size {
            let offset = at.offset + done;
            let piece = (row - offset % row).min(size - done);
            let blocked = bank.range.intersects(offset, piece);
            let range = bank.range;
            let lo = done as usize;
            let hi = (done + piece) as usize;
            match op {
                AccessOp::Read => {
                    bank.storage.read(offset, &mut data[lo..hi]);
                    if blocked {
                        for (i, byte) in data[lo..hi].iter_mut().enumerate() {
                            if range.covers(offset + i as u64) {
                                *byte = 0;
                            }
                        }
                    }
                }
                AccessOp::Write => {
                    let src = &payload.expect("checked above")[lo..hi];
                    if blocked {
                        for (i, &byte) in src.iter().enumerate() {
                            let a = offset + i as u64;
                            if !range.covers(a) {
                                bank.storage.write(a, &[byte]);
                            }
                        }
                    } else {
                        bank.storage.write(offset, src);
                    }
                }
            }
            let cost = if blocked {
                timing.peek(&bank.row_buffer, offset, piece)
            } else {
                timing.access(&mut bank.row_buffer, offset, piece)
            };
            self.tracer.record(TraceEvent {
                timestamp: now + latency,
                op,
                address: addr + done,
                size: piece,
                blocked,
            });
            latency += cost;
            any_blocked |= blocked;
            done += piece;
        }
        Ok(HostAccess {
            data,
            latency,
            blocked: any_blocked,
        })
    }

    /// A host-bus transfer to one of a bank's control registers. Registers
    /// have no row buffer; each transfer costs one full DRAM access.
    pub fn register_access(
        &mut self,
        now: SimTime,
        op: AccessOp,
        bank: u32,
        reg: Register,
        size: u64,
    ) -> Result<SimTime, MemoryError> {
        let address = self.register_address(bank, reg)?;
        self.tracer.record(TraceEvent {
            timestamp: now,
            op,
            address,
            size,
            blocked: false,
        });
        Ok(self.timing.register_access(size))
    }

    pub fn set_access_range(
        &mut self,
        requester: Requester,
        bank: u32,
        range: AccessRange,
    ) -> Result<(), MemoryError> {
        match requester {
            Requester::PimCore(owner) if owner == bank => {
                self.bank_mut(bank)?.set_range(range);
                Ok(())
            }
            _ => Err(MemoryError::Unauthorized),
        }
    }

    /// Latency of an access without performing it.
    pub fn dram_latency(&self, bank: u32, offset: u64, size: u64) -> Result<SimTime, MemoryError> {
        let b = self.bank(bank)?;
        Ok(self.timing.peek(&b.row_buffer, offset, size))
    }
}
