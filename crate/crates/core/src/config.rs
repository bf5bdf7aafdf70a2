//! System configuration and its defaults.

use thiserror::Error;

use crate::time::{Bandwidth, SimTime};

const MIB: u64 = 1024 * 1024;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("invalid value for `{key}`: {reason}")]
    Invalid { key: &'static str, reason: &'static str },
}

fn invalid(key: &'static str, reason: &'static str) -> ConfigError {
    ConfigError::Invalid { key, reason }
}

/// PIM-core cycle costs charged by the kernels and the device runtime.
///
/// None of these are measured figures; they are the calibration of the
/// compute model and every reported timing follows from them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KernelCostTable {
    /// One object-to-centroid squared distance over all dimensions.
    pub distance_eval: u64,
    /// Argmin bookkeeping and membership compare/store, per object.
    pub membership_update: u64,
    /// Folding one object into its cluster's partial sums.
    pub accumulate: u64,
    /// Pointer arithmetic and loop control per batch.
    pub batch_setup: u64,
    /// Programming the DMA registers for one request.
    pub dma_issue: u64,
    /// Murmur3 per input byte.
    pub hash_per_byte: u64,
    /// One hash-table slot compare.
    pub probe: u64,
    /// Runtime work to accept and route one command frame.
    pub command_dispatch: u64,
}

impl Default for KernelCostTable {
    fn default() -> Self {
        KernelCostTable {
            distance_eval: 14,
            membership_update: 8,
            accumulate: 16,
            batch_setup: 200,
            dma_issue: 20,
            hash_per_byte: 4,
            probe: 12,
            command_dispatch: 100,
        }
    }
}

/// Host-cycle costs for work done inside the host enclave.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HostCostTable {
    /// Sealing or opening one command frame.
    pub frame_crypto: u64,
    /// Adding one partial-sum coordinate during aggregation.
    pub aggregate_add: u64,
    /// Dividing one centroid coordinate by its count.
    pub centroid_divide: u64,
    /// Host-only k-means: one distance evaluation.
    pub distance_eval: u64,
    /// Host-only k-means: per-object bookkeeping.
    pub membership_update: u64,
}

impl Default for HostCostTable {
    fn default() -> Self {
        HostCostTable {
            frame_crypto: 400,
            aggregate_add: 2,
            centroid_divide: 20,
            distance_eval: 8,
            membership_update: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimConfig {
    pub host_clock_hz: u64,
    pub pim_clock_hz: u64,
    pub aes_clock_hz: u64,
    pub n_banks: u32,
    pub bank_size_bytes: u64,
    pub local_mem_bytes: u64,
    pub local_mem_latency: SimTime,
    pub row_buffer_bytes: u64,
    pub burst_bytes: u64,
    pub t_rp: SimTime,
    pub t_rcd: SimTime,
    pub t_cl: SimTime,
    pub t_burst: SimTime,
    pub dma_raw_bandwidth: Bandwidth,
    /// Host physical address of bank 0, offset 0.
    pub module_base: u64,
    pub tracing: bool,
    /// Seed for every pseudo-random choice (keys, nonces, access patterns).
    pub seed: u64,
    pub kernel_costs: KernelCostTable,
    pub host_costs: HostCostTable,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            host_clock_hz: 4_000_000_000,
            pim_clock_hz: 1_000_000_000,
            aes_clock_hz: 300_000_000,
            n_banks: 8,
            bank_size_bytes: 64 * MIB,
            local_mem_bytes: 4 * MIB,
            local_mem_latency: SimTime::from_ps(10),
            row_buffer_bytes: 256,
            burst_bytes: 32,
            t_rp: SimTime::from_ps(13_750),
            t_rcd: SimTime::from_ps(13_750),
            t_cl: SimTime::from_ps(13_750),
            t_burst: SimTime::from_ps(3_200),
            dma_raw_bandwidth: Bandwidth::from_micro_bytes_per_ns(1_250_000),
            module_base: 0x1_0000_0000,
            tracing: true,
            seed: 0x5eed,
            kernel_costs: KernelCostTable::default(),
            host_costs: HostCostTable::default(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        for (key, hz) in [
            ("host_clock_hz", self.host_clock_hz),
            ("pim_clock_hz", self.pim_clock_hz),
            ("aes_clock_hz", self.aes_clock_hz),
        ] {
            if hz == 0 {
                return Err(invalid(key, "must be positive"));
            }
            if SimTime::period_of(hz).is_none() {
                return Err(invalid(key, "period is not a whole number of 1/3 ps ticks"));
            }
        }
        if self.n_banks == 0 {
            return Err(invalid("n_banks", "must be positive"));
        }
        if self.bank_size_bytes == 0 || !self.bank_size_bytes.is_power_of_two() {
            return Err(invalid("bank_size_bytes", "must be a power of two"));
        }
        if self.local_mem_bytes == 0 {
            return Err(invalid("local_mem_bytes", "must be positive"));
        }
        if self.local_mem_bytes >= self.bank_size_bytes {
            return Err(invalid("local_mem_bytes", "must be smaller than bank_size_bytes"));
        }
        if self.local_mem_latency == SimTime::ZERO {
            return Err(invalid("local_mem_latency_ns", "must be positive"));
        }
        if self.burst_bytes == 0 || !self.burst_bytes.is_power_of_two() {
            return Err(invalid("burst_bytes", "must be a power of two"));
        }
        if self.row_buffer_bytes == 0
            || !self.row_buffer_bytes.is_power_of_two()
            || self.row_buffer_bytes < self.burst_bytes
        {
            return Err(invalid(
                "row_buffer_bytes",
                "must be a power of two no smaller than burst_bytes",
            ));
        }
        if self.row_buffer_bytes > self.bank_size_bytes {
            return Err(invalid("row_buffer_bytes", "must not exceed bank_size_bytes"));
        }
        for (key, t) in [
            ("tRP_ns", self.t_rp),
            ("tRCD_ns", self.t_rcd),
            ("tCL_ns", self.t_cl),
            ("tBURST_ns", self.t_burst),
        ] {
            if t == SimTime::ZERO {
                return Err(invalid(key, "must be positive"));
            }
        }
        if self.dma_raw_bandwidth.micro_bytes_per_ns() == 0 {
            return Err(invalid("dma_raw_bandwidth_bytes_per_ns", "must be positive"));
        }
        let span = (self.n_banks as u64)
            .checked_mul(self.bank_size_bytes)
            .and_then(|s| s.checked_add(crate::memory::MMIO_WINDOW_BYTES * self.n_banks as u64))
            .and_then(|s| s.checked_add(self.module_base));
        if span.is_none() {
            return Err(invalid("module_base", "module does not fit the address space"));
        }
        Ok(())
    }

    pub fn host_cycle(&self) -> SimTime {
        SimTime::period_of(self.host_clock_hz).expect("validated clock")
    }

    pub fn pim_cycle(&self) -> SimTime {
        SimTime::period_of(self.pim_clock_hz).expect("validated clock")
    }

    pub fn aes_cycle(&self) -> SimTime {
        SimTime::period_of(self.aes_clock_hz).expect("validated clock")
    }

    pub fn host_cycles(&self, n: u64) -> SimTime {
        self.host_cycle().times(n).expect("simulated time overflow")
    }

    pub fn pim_cycles(&self, n: u64) -> SimTime {
        self.pim_cycle().times(n).expect("simulated time overflow")
    }
}
