//! TOML configuration files.
//!
//! Every key is optional and falls back to the built-in default, so an empty
//! file is the default configuration. Durations are decimal nanoseconds and
//! must land on a whole number of 1/3 ps ticks.

use pim_enclave::config::{ConfigError, HostCostTable, KernelCostTable, SimConfig};
use pim_enclave::time::{Bandwidth, SimTime, TICKS_PER_NS};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigFileError {
    #[error("{0}")]
    Parse(String),
    #[error("invalid value for `{key}`: {reason}")]
    Value { key: &'static str, reason: &'static str },
    #[error(transparent)]
    Invalid(#[from] ConfigError),
}

impl ConfigFileError {
    /// The offending key, when the error can be pinned to one.
    pub fn key(&self) -> Option<&str> {
        match self {
            ConfigFileError::Value { key, .. } => Some(key),
            ConfigFileError::Invalid(ConfigError::Invalid { key, .. }) => Some(key),
            ConfigFileError::Parse(_) => None,
        }
    }
}

#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    host_clock_hz: Option<u64>,
    pim_clock_hz: Option<u64>,
    aes_clock_hz: Option<u64>,
    n_banks: Option<u32>,
    bank_size_bytes: Option<u64>,
    local_mem_bytes: Option<u64>,
    local_mem_latency_ns: Option<f64>,
    row_buffer_bytes: Option<u64>,
    burst_bytes: Option<u64>,
    #[serde(rename = "tRP_ns")]
    t_rp_ns: Option<f64>,
    #[serde(rename = "tRCD_ns")]
    t_rcd_ns: Option<f64>,
    #[serde(rename = "tCL_ns")]
    t_cl_ns: Option<f64>,
    #[serde(rename = "tBURST_ns")]
    t_burst_ns: Option<f64>,
    dma_raw_bandwidth_bytes_per_ns: Option<f64>,
    module_base: Option<u64>,
    tracing: Option<bool>,
    seed: Option<u64>,
    kernel_cost_table: Option<KernelCosts>,
    host_cost_table: Option<HostCosts>,
}

#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct KernelCosts {
    distance_eval: Option<u64>,
    membership_update: Option<u64>,
    accumulate: Option<u64>,
    batch_setup: Option<u64>,
    dma_issue: Option<u64>,
    hash_per_byte: Option<u64>,
    probe: Option<u64>,
    command_dispatch: Option<u64>,
}

#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct HostCosts {
    frame_crypto: Option<u64>,
    aggregate_add: Option<u64>,
    centroid_divide: Option<u64>,
    distance_eval: Option<u64>,
    membership_update: Option<u64>,
}

/// Nanoseconds to ticks, refusing values between ticks.
fn ns_to_time(key: &'static str, ns: f64) -> Result<SimTime, ConfigFileError> {
    let bad = |reason| ConfigFileError::Value { key, reason };
    if !ns.is_finite() || ns < 0.0 {
        return Err(bad("must be a non-negative number of nanoseconds"));
    }
    let ticks = ns * TICKS_PER_NS as f64;
    if ticks > u64::MAX as f64 / 2.0 {
        return Err(bad("too large"));
    }
    let whole = ticks.round();
    if (ticks - whole).abs() > 1e-6 * whole.max(1.0) {
        return Err(bad("not a whole number of 1/3 ps ticks"));
    }
    Ok(SimTime::from_ticks(whole as u64))
}

fn time_to_ns(t: SimTime) -> f64 {
    t.ticks() as f64 / TICKS_PER_NS as f64
}

fn bandwidth(key: &'static str, bytes_per_ns: f64) -> Result<Bandwidth, ConfigFileError> {
    let bad = |reason| ConfigFileError::Value { key, reason };
    if !bytes_per_ns.is_finite() || bytes_per_ns <= 0.0 {
        return Err(bad("must be a positive number of bytes per ns"));
    }
    let micro = (bytes_per_ns * 1e6).round();
    if micro < 1.0 || micro > u64::MAX as f64 / 2.0 {
        return Err(bad("out of range"));
    }
    Ok(Bandwidth::from_micro_bytes_per_ns(micro as u64))
}

/// Parses a TOML document into a validated configuration.
pub fn parse(text: &str) -> Result<SimConfig, ConfigFileError> {
    let f: FileConfig = toml::from_str(text).map_err(|e| ConfigFileError::Parse(e.to_string().trim_end().to_string()))?;
    let mut c = SimConfig::default();
    macro_rules! set {
        ($field:ident, $src:expr) => {
            if let Some(v) = $src {
                c.$field = v;
            }
        };
    }
    set!(host_clock_hz, f.host_clock_hz);
    set!(pim_clock_hz, f.pim_clock_hz);
    set!(aes_clock_hz, f.aes_clock_hz);
    set!(n_banks, f.n_banks);
    set!(bank_size_bytes, f.bank_size_bytes);
    set!(local_mem_bytes, f.local_mem_bytes);
    set!(row_buffer_bytes, f.row_buffer_bytes);
    set!(burst_bytes, f.burst_bytes);
    set!(module_base, f.module_base);
    set!(tracing, f.tracing);
    set!(seed, f.seed);
    for (key, src, dst) in [
        ("local_mem_latency_ns", f.local_mem_latency_ns, &mut c.local_mem_latency),
        ("tRP_ns", f.t_rp_ns, &mut c.t_rp),
        ("tRCD_ns", f.t_rcd_ns, &mut c.t_rcd),
        ("tCL_ns", f.t_cl_ns, &mut c.t_cl),
        ("tBURST_ns", f.t_burst_ns, &mut c.t_burst),
    ] {
        if let Some(ns) = src {
            *dst = ns_to_time(key, ns)?;
        }
    }
    if let Some(bw) = f.dma_raw_bandwidth_bytes_per_ns {
        c.dma_raw_bandwidth = bandwidth("dma_raw_bandwidth_bytes_per_ns", bw)?;
    }
    if let Some(k) = f.kernel_cost_table {
        let t = &mut c.kernel_costs;
        macro_rules! cost {
            ($($field:ident),*) => { $( if let Some(v) = k.$field { t.$field = v; } )* };
        }
        cost!(distance_eval, membership_update, accumulate, batch_setup, dma_issue, hash_per_byte, probe, command_dispatch);
    }
    if let Some(h) = f.host_cost_table {
        let t = &mut c.host_costs;
        macro_rules! cost {
            ($($field:ident),*) => { $( if let Some(v) = h.$field { t.$field = v; } )* };
        }
        cost!(frame_crypto, aggregate_add, centroid_divide, distance_eval, membership_update);
    }
    c.validate()?;
    Ok(c)
}

/// Renders a configuration as a TOML document that [`parse`] reads back.
/// TOML integers are signed, so values above `i64::MAX` cannot be written.
pub fn render(c: &SimConfig) -> Result<String, ConfigFileError> {
    let KernelCostTable {
        distance_eval,
        membership_update,
        accumulate,
        batch_setup,
        dma_issue,
        hash_per_byte,
        probe,
        command_dispatch,
    } = c.kernel_costs;
    let HostCostTable {
        frame_crypto,
        aggregate_add,
        centroid_divide,
        distance_eval: host_distance_eval,
        membership_update: host_membership_update,
    } = c.host_costs;
    let f = FileConfig {
        host_clock_hz: Some(c.host_clock_hz),
        pim_clock_hz: Some(c.pim_clock_hz),
        aes_clock_hz: Some(c.aes_clock_hz),
        n_banks: Some(c.n_banks),
        bank_size_bytes: Some(c.bank_size_bytes),
        local_mem_bytes: Some(c.local_mem_bytes),
        local_mem_latency_ns: Some(time_to_ns(c.local_mem_latency)),
        row_buffer_bytes: Some(c.row_buffer_bytes),
        burst_bytes: Some(c.burst_bytes),
        t_rp_ns: Some(time_to_ns(c.t_rp)),
        t_rcd_ns: Some(time_to_ns(c.t_rcd)),
        t_cl_ns: Some(time_to_ns(c.t_cl)),
        t_burst_ns: Some(time_to_ns(c.t_burst)),
        dma_raw_bandwidth_bytes_per_ns: Some(c.dma_raw_bandwidth.bytes_per_ns_f64()),
        module_base: Some(c.module_base),
        tracing: Some(c.tracing),
        seed: Some(c.seed),
        kernel_cost_table: Some(KernelCosts {
            distance_eval: Some(distance_eval),
            membership_update: Some(membership_update),
            accumulate: Some(accumulate),
            batch_setup: Some(batch_setup),
            dma_issue: Some(dma_issue),
            hash_per_byte: Some(hash_per_byte),
            probe: Some(probe),
            command_dispatch: Some(command_dispatch),
        }),
        host_cost_table: Some(HostCosts {
            frame_crypto: Some(frame_crypto),
            aggregate_add: Some(aggregate_add),
            centroid_divide: Some(centroid_divide),
            distance_eval: Some(host_distance_eval),
            membership_update: Some(host_membership_update),
        }),
    };
    toml::to_string(&f).map_err(|e| ConfigFileError::Parse(e.to_string()))
}
