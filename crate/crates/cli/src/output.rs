//! CSV writers for the experiment outputs.
//!
//! Times are printed from exact tick counts with four decimals, so the same
//! run always produces the same bytes.

use std::io::{self, Write};

use pim_enclave::memory::TraceEvent;
use pim_enclave::time::{SimTime, TICKS_PER_NS};
use pim_enclave::workloads::bench::BenchRecord;
use pim_enclave::workloads::hashtable::QueryTrace;
use pim_enclave::workloads::kmeans::{HostOnlyReport, KMeansReport, DIMS};
use pim_enclave::workloads::Crypto;

use crate::commands::KMeansJob;

pub const TRACE_HEADER: [&str; 5] = ["timestamp_ns", "op", "address_hex", "size", "blocked"];
pub const BENCH_HEADER: [&str; 5] = ["scenario", "block_size", "crypto", "mean_latency_ns", "throughput_Bps"];
pub const KMEANS_HEADER: [&str; 7] = ["round", "changed", "elapsed_ns", "kernel_ns", "compute_ns", "dma_ns", "aes_ns"];
pub const KMEANS_SUMMARY_HEADER: [&str; 11] = [
    "experiment",
    "crypto",
    "banks",
    "objects",
    "k",
    "rounds",
    "total_ns",
    "setup_ns",
    "compute_ns",
    "dma_ns",
    "aes_ns",
];
pub const TRACE_INDEX_HEADER: [&str; 5] = ["query_index", "query", "result", "first_event", "events"];

/// `num / den` ticks in nanoseconds, rounded half up to four decimals.
pub fn fmt_ns_ratio(num: u128, den: u128) -> String {
    let scaled = (num * 10_000 * 2 + den * TICKS_PER_NS as u128) / (den * TICKS_PER_NS as u128 * 2);
    format!("{}.{:04}", scaled / 10_000, scaled % 10_000)
}

pub fn fmt_ns(t: SimTime) -> String {
    fmt_ns_ratio(t.ticks() as u128, 1)
}

fn writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w)
}

fn into_io(e: csv::Error) -> io::Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => e,
        other => io::Error::other(format!("{other:?}")),
    }
}

pub fn write_trace<W: Write>(w: W, events: &[TraceEvent]) -> io::Result<()> {
    let mut out = writer(w);
    out.write_record(TRACE_HEADER).map_err(into_io)?;
    for e in events {
        out.write_record([
            fmt_ns(e.timestamp),
            e.op.as_str().to_string(),
            format!("{:016x}", e.address),
            e.size.to_string(),
            u8::from(e.blocked).to_string(),
        ])
        .map_err(into_io)?;
    }
    out.flush()
}

/// All segments back to back; [`write_trace_index`] says where each starts.
pub fn write_query_traces<W: Write>(w: W, traces: &[QueryTrace]) -> io::Result<()> {
    let all: Vec<TraceEvent> = traces.iter().flat_map(|t| t.events.iter().copied()).collect();
    write_trace(w, &all)
}

pub fn write_trace_index<W: Write>(w: W, traces: &[QueryTrace]) -> io::Result<()> {
    let mut out = writer(w);
    out.write_record(TRACE_INDEX_HEADER).map_err(into_io)?;
    let mut first = 0usize;
    for (i, t) in traces.iter().enumerate() {
        let result = t.result.map_or_else(|| "none".to_string(), |v| v.to_string());
        out.write_record([
            i.to_string(),
            t.query.clone(),
            result,
            first.to_string(),
            t.events.len().to_string(),
        ])
        .map_err(into_io)?;
        first += t.events.len();
    }
    out.flush()
}

pub fn write_bench<W: Write>(w: W, records: &[BenchRecord]) -> io::Result<()> {
    let mut out = writer(w);
    out.write_record(BENCH_HEADER).map_err(into_io)?;
    for r in records {
        out.write_record([
            r.scenario(),
            r.block_size.to_string(),
            r.crypto.as_str().to_string(),
            fmt_ns_ratio(r.total.ticks() as u128, r.iterations.max(1) as u128),
            r.throughput_bps().to_string(),
        ])
        .map_err(into_io)?;
    }
    out.flush()
}

pub fn write_kmeans_rounds<W: Write>(w: W, report: &KMeansReport) -> io::Result<()> {
    let mut out = writer(w);
    out.write_record(KMEANS_HEADER).map_err(into_io)?;
    for (i, r) in report.rounds.iter().enumerate() {
        out.write_record([
            (i + 1).to_string(),
            r.changed.to_string(),
            fmt_ns(r.elapsed),
            fmt_ns(r.kernel),
            fmt_ns(r.compute),
            fmt_ns(r.dma),
            fmt_ns(r.aes),
        ])
        .map_err(into_io)?;
    }
    out.flush()
}

/// One k-means run in the summary table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KMeansRow {
    pub experiment: String,
    pub crypto: Crypto,
    pub banks: u32,
    pub objects: usize,
    pub k: usize,
    pub rounds: usize,
    pub total: SimTime,
    pub setup: SimTime,
    pub compute: SimTime,
    pub dma: SimTime,
    pub aes: SimTime,
}

impl KMeansRow {
    pub fn new(experiment: &str, job: &KMeansJob, r: &KMeansReport) -> Self {
        KMeansRow {
            experiment: experiment.to_string(),
            crypto: job.kmeans.crypto,
            banks: job.kmeans.banks,
            objects: job.objects,
            k: job.kmeans.k,
            rounds: r.rounds.len(),
            total: r.total,
            setup: r.setup,
            compute: r.compute(),
            dma: r.dma(),
            aes: r.aes(),
        }
    }
}

/// The runs, then optionally the host-only baseline as a row with zero
/// banks.
pub fn write_kmeans_summary<W: Write>(
    w: W,
    rows: &[KMeansRow],
    host_only: Option<(usize, &HostOnlyReport)>,
) -> io::Result<()> {
    let mut out = writer(w);
    out.write_record(KMEANS_SUMMARY_HEADER).map_err(into_io)?;
    for r in rows {
        out.write_record([
            r.experiment.clone(),
            r.crypto.as_str().to_string(),
            r.banks.to_string(),
            r.objects.to_string(),
            r.k.to_string(),
            r.rounds.to_string(),
            fmt_ns(r.total),
            fmt_ns(r.setup),
            fmt_ns(r.compute),
            fmt_ns(r.dma),
            fmt_ns(r.aes),
        ])
        .map_err(into_io)?;
    }
    if let Some((objects, h)) = host_only {
        let k = h.centroids.len() / DIMS;
        out.write_record([
            "host_only".to_string(),
            Crypto::Plain.as_str().to_string(),
            "0".to_string(),
            objects.to_string(),
            k.to_string(),
            h.rounds.to_string(),
            fmt_ns(h.total),
            fmt_ns(SimTime::ZERO),
            String::new(),
            String::new(),
            fmt_ns(SimTime::ZERO),
        ])
        .map_err(into_io)?;
    }
    out.flush()
}
