//! The experiments behind each subcommand, returning their results so that
//! tests and the suite can drive them without a process boundary.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::Path;

use pim_enclave::channel::AttestationToken;
use pim_enclave::config::SimConfig;
use pim_enclave::crypto::SymmetricKey;
use pim_enclave::host::{HostError, PimHandle};
use pim_enclave::pim::KernelImage;
use pim_enclave::system::System;
use pim_enclave::workloads::bench::{self, BenchRecord, BenchSpec};
use pim_enclave::workloads::hashtable::{self, HashTable, LookupMode, QueryTrace};
use pim_enclave::workloads::kmeans::{self, Dataset, HostOnlyReport, KMeansConfig, KMeansReport};
use pim_enclave::workloads::Crypto;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::error::CliError;
use crate::output::{self, fmt_ns};
use crate::peds::PedsFile;

pub fn dma_bench(cfg: &SimConfig, spec: &BenchSpec) -> Result<Vec<BenchRecord>, CliError> {
    if spec.iterations == 0 {
        return Err(CliError::Usage("iterations must be positive".into()));
    }
    Ok(bench::dma_bench(cfg, spec)?)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KMeansJob {
    pub objects: usize,
    /// Cluster centres in the synthetic data.
    pub clusters: usize,
    pub data_seed: u64,
    pub kmeans: KMeansConfig,
}

impl KMeansJob {
    pub fn new(objects: usize, k: usize, banks: u32, crypto: Crypto, data_seed: u64) -> Self {
        KMeansJob {
            objects,
            clusters: k,
            data_seed,
            kmeans: KMeansConfig {
                k,
                banks,
                crypto,
                ..KMeansConfig::default()
            },
        }
    }

    pub fn dataset(&self) -> Dataset {
        Dataset::synthetic(self.data_seed, self.objects, self.clusters)
    }
}

pub fn kmeans(cfg: &SimConfig, job: &KMeansJob) -> Result<KMeansReport, CliError> {
    if job.objects == 0 {
        return Err(CliError::Usage("objects must be positive".into()));
    }
    if job.kmeans.rounds == 0 {
        return Err(CliError::Usage("rounds must be positive".into()));
    }
    let data = job.dataset();
    let initial = data.first_k(job.kmeans.k);
    Ok(kmeans::run(cfg, &data, job.kmeans.clone(), &initial)?)
}

pub fn kmeans_host_only(cfg: &SimConfig, job: &KMeansJob) -> Result<HostOnlyReport, CliError> {
    let data = job.dataset();
    let initial = data.first_k(job.kmeans.k);
    Ok(kmeans::host_only(cfg, &data, job.kmeans.k, job.kmeans.rounds, &initial)?)
}

/// Human-readable totals of one run.
pub fn kmeans_summary(job: &KMeansJob, r: &KMeansReport, baseline: Option<&HostOnlyReport>) -> String {
    let mut s = String::new();
    let c = &job.kmeans;
    let _ = writeln!(
        s,
        "objects={} k={} banks={} crypto={} rounds={}",
        job.objects,
        c.k,
        c.banks,
        c.crypto.as_str(),
        r.rounds.len()
    );
    let _ = writeln!(s, "total_ns={}", fmt_ns(r.total));
    let _ = writeln!(s, "setup_ns={}", fmt_ns(r.setup));
    let _ = writeln!(s, "compute_ns={}", fmt_ns(r.compute()));
    let _ = writeln!(s, "dma_ns={}", fmt_ns(r.dma()));
    let _ = writeln!(s, "aes_ns={}", fmt_ns(r.aes()));
    if let Some(b) = baseline {
        let _ = writeln!(s, "host_only_total_ns={}", fmt_ns(b.total));
    }
    s
}

/// Table and queries of the bus-trace experiment.
#[derive(Debug, Clone)]
pub struct TraceJob {
    pub words: Vec<String>,
    pub queries: Vec<String>,
}

impl TraceJob {
    /// `n_words` dictionary words, with every seventh one queried.
    pub fn dictionary(seed: u64, n_words: usize, n_queries: usize) -> Self {
        let words = hashtable::dictionary(seed, n_words);
        let queries = (0..n_queries).map(|i| words[(i * 7) % words.len()].clone()).collect();
        TraceJob { words, queries }
    }

    /// Parses a query file: one query per line, blank lines and lines
    /// starting with `#` ignored.
    pub fn parse_queries(text: &str) -> Vec<String> {
        text.lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(String::from)
            .collect()
    }
}

pub fn trace_hashtable(cfg: &SimConfig, job: &TraceJob, mode: LookupMode) -> Result<Vec<QueryTrace>, CliError> {
    let table = HashTable::from_words(&job.words)?;
    Ok(hashtable::trace_experiment(cfg, &table, mode, &job.queries)?)
}

fn hex(b: &[u8]) -> String {
    b.iter().map(|x| format!("{x:02x}")).collect()
}

/// Walks one bank through attestation, session setup, a kernel run and
/// teardown, including the checks a host enclave makes along the way.
pub fn attest_demo(cfg: &SimConfig, bank: u32) -> Result<String, CliError> {
    let mut sys = System::new(cfg.clone()).map_err(HostError::from)?;
    let trusted = sys.trusted_ek();
    let mut out = String::new();
    let mut h = PimHandle::init(&mut sys, bank)?;
    let token = h.attest(&mut sys, &trusted)?;
    let _ = writeln!(out, "attest: ok");
    let _ = writeln!(out, "  device_id={}", hex(&token.device_id.0));
    let _ = writeln!(out, "  bank={} rom_version={} epoch={}", token.bank, token.rom_version, token.epoch);
    let _ = writeln!(out, "  nonce={}", hex(&token.nonce));
    let _ = writeln!(out, "  challenge={}", hex(&token.challenge));

    let mut forged = token.to_bytes();
    forged[20] ^= 1;
    let forged = AttestationToken::from_bytes(&forged).map_err(HostError::from)?;
    match forged.verify(&trusted, bank, &token.nonce) {
        Err(e) => {
            let _ = writeln!(out, "forged token: rejected ({e})");
        }
        Ok(()) => return Err(CliError::Usage("forged token verified".into())),
    }
    if let Err(e) = token.verify(&trusted, bank, &[0u8; 32]) {
        let _ = writeln!(out, "stale nonce: rejected ({e})");
    }

    h.establish_session(&mut sys, &trusted)?;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    h.set_data_key(&mut sys, SymmetricKey::generate(&mut rng))?;
    let _ = writeln!(out, "session: established, phase={:?}", h.phase());
    match PimHandle::init(&mut sys, bank) {
        Err(e) => {
            let _ = writeln!(out, "second client: refused ({e})");
        }
        Ok(_) => return Err(CliError::Usage("second client accepted".into())),
    }

    let staging = h.alloc(&sys, 4096)?;
    let image = KernelImage::new("spin", 1, Vec::new());
    let digest = h.load_kernel(&mut sys, &staging, &image)?;
    let _ = writeln!(out, "kernel: loaded, measurement={}", hex(&digest.0));
    let before = sys.now();
    h.offload_and_execute(&mut sys, &10_000u64.to_le_bytes())?;
    let _ = writeln!(out, "execute: 10000 cycles, host waited {} ns", fmt_ns(sys.now() - before));

    h.destroy(&mut sys)?;
    let _ = writeln!(out, "destroy: phase={:?}", h.phase());
    let again = h.attest(&mut sys, &trusted)?;
    let _ = writeln!(out, "re-attest: epoch={}", again.epoch);
    let _ = writeln!(out, "simulated_time_ns={}", fmt_ns(sys.now()));
    h.release(&mut sys);
    Ok(out)
}

/// A synthetic dataset encrypted under a key drawn from `seed`.
pub fn gen_dataset(objects: usize, clusters: usize, seed: u64) -> Result<(PedsFile, SymmetricKey), CliError> {
    if objects == 0 {
        return Err(CliError::Usage("objects must be positive".into()));
    }
    let data = Dataset::synthetic(seed, objects, clusters);
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x4b45_5953);
    let key = SymmetricKey::generate(&mut rng);
    Ok((PedsFile::from_dataset(&data, &key)?, key))
}

pub fn key_hex(key: &SymmetricKey) -> String {
    hex(key.expose())
}

/// Writes through a buffered file, mapping failures to the path.
pub fn write_file(path: &Path, f: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> Result<(), CliError> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(file);
    f(&mut w).and_then(|_| w.flush()).map_err(|e| CliError::io(path, e))
}

/// Sizes of the full experiment suite.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuiteSpec {
    pub bench: BenchSpec,
    pub kmeans_objects: usize,
    pub kmeans_k: usize,
    pub kmeans_rounds: usize,
    pub bank_counts: Vec<u32>,
    pub scaling_objects: Vec<usize>,
    pub trace_words: usize,
    pub trace_queries: usize,
}

impl Default for SuiteSpec {
    fn default() -> Self {
        SuiteSpec {
            bench: BenchSpec::default(),
            kmeans_objects: 20_000,
            kmeans_k: 26,
            kmeans_rounds: 20,
            bank_counts: vec![1, 2, 4, 6, 7, 8],
            scaling_objects: vec![2_500, 5_000, 10_000, 20_000],
            trace_words: 256,
            trace_queries: 20,
        }
    }
}

impl SuiteSpec {
    /// A scaled-down suite that still exercises every experiment.
    pub fn quick() -> Self {
        SuiteSpec {
            bench: BenchSpec {
                iterations: 50,
                ..BenchSpec::default()
            },
            kmeans_objects: 1_000,
            kmeans_k: 4,
            kmeans_rounds: 3,
            bank_counts: vec![1, 2],
            scaling_objects: vec![500, 1_000],
            trace_words: 64,
            trace_queries: 6,
        }
    }
}

/// Runs every experiment and writes its outputs into `dir`. Returns the
/// file names written, in order.
pub fn suite(cfg: &SimConfig, spec: &SuiteSpec, dir: &Path) -> Result<Vec<String>, CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut written = Vec::new();
    let mut emit = |name: &str, f: &dyn Fn(&mut dyn Write) -> io::Result<()>| -> Result<(), CliError> {
        write_file(&dir.join(name), f)?;
        written.push(name.to_string());
        Ok(())
    };

    let records = dma_bench(cfg, &spec.bench)?;
    emit("bench_dma.csv", &|w| output::write_bench(w, &records))?;

    let mut rows = Vec::new();
    let job = |objects, banks, crypto| {
        let mut j = KMeansJob::new(objects, spec.kmeans_k, banks, crypto, cfg.seed);
        j.kmeans.rounds = spec.kmeans_rounds;
        j
    };
    for crypto in [Crypto::Plain, Crypto::Aead] {
        let j = job(spec.kmeans_objects, 1, crypto);
        let r = kmeans(cfg, &j)?;
        emit(&format!("kmeans_rounds_{}.csv", crypto.as_str()), &|w| output::write_kmeans_rounds(w, &r))?;
        rows.push(output::KMeansRow::new("crypto", &j, &r));
    }
    for &banks in &spec.bank_counts {
        let j = job(spec.kmeans_objects, banks, Crypto::Aead);
        rows.push(output::KMeansRow::new("banks", &j, &kmeans(cfg, &j)?));
    }
    for &objects in &spec.scaling_objects {
        let j = job(objects, 1, Crypto::Aead);
        rows.push(output::KMeansRow::new("size", &j, &kmeans(cfg, &j)?));
    }
    let host = kmeans_host_only(cfg, &job(spec.kmeans_objects, 1, Crypto::Plain))?;
    emit("kmeans.csv", &|w| output::write_kmeans_summary(w, &rows, Some((spec.kmeans_objects, &host))))?;

    let tj = TraceJob::dictionary(cfg.seed, spec.trace_words, spec.trace_queries);
    for (mode, name) in [(LookupMode::HostOnly, "host"), (LookupMode::PimAssisted, "pim")] {
        let traces = trace_hashtable(cfg, &tj, mode)?;
        emit(&format!("trace_{name}.csv"), &|w| output::write_query_traces(w, &traces))?;
        emit(&format!("trace_{name}_index.csv"), &|w| output::write_trace_index(w, &traces))?;
    }

    let demo = attest_demo(cfg, 0)?;
    emit("attest.txt", &|w| w.write_all(demo.as_bytes()))?;

    let (peds, key) = gen_dataset(spec.kmeans_objects, spec.kmeans_k, cfg.seed)?;
    let bytes = peds.to_bytes();
    emit("dataset.peds", &|w| w.write_all(&bytes))?;
    let key = key_hex(&key);
    emit("dataset.key", &|w| writeln!(w, "{key}"))?;
    Ok(written)
}
