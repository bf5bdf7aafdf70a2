use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use pim_enclave::config::SimConfig;
use pim_enclave::workloads::bench::{BenchOp, BenchSpec, Pattern, DEFAULT_ITERATIONS};
use pim_enclave::workloads::hashtable::LookupMode;
use pim_enclave::workloads::Crypto;
use pim_enclave_cli::commands::{self, KMeansJob, SuiteSpec, TraceJob};
use pim_enclave_cli::{config, output, CliError};

#[derive(Parser)]
#[command(name = "pim-enclave", version, about = "PIM enclave simulator experiments")]
struct Cli {
    /// TOML configuration; missing keys take their defaults.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum PatternArg {
    Seq,
    Rand,
}

#[derive(Clone, Copy, ValueEnum)]
enum OpArg {
    Read,
    Write,
}

#[derive(Clone, Copy, ValueEnum)]
enum CryptoArg {
    Plain,
    Aead,
}

impl From<CryptoArg> for Crypto {
    fn from(c: CryptoArg) -> Self {
        match c {
            CryptoArg::Plain => Crypto::Plain,
            CryptoArg::Aead => Crypto::Aead,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Host,
    Pim,
}

#[derive(Subcommand)]
enum Command {
    /// DMA access latency and throughput over a grid of request shapes.
    BenchDma {
        #[arg(long, value_delimiter = ',', default_values = ["seq", "rand"])]
        pattern: Vec<PatternArg>,
        #[arg(long, value_delimiter = ',', default_values = ["read", "write"])]
        op: Vec<OpArg>,
        /// Request sizes, e.g. `1K,4K,8K,64K`.
        #[arg(long, value_delimiter = ',', value_parser = parse_size, default_values = ["1K", "4K", "8K", "64K"])]
        sizes: Vec<u64>,
        #[arg(long, value_delimiter = ',', default_values = ["plain", "aead"])]
        crypto: Vec<CryptoArg>,
        #[arg(long, default_value_t = DEFAULT_ITERATIONS)]
        iters: u64,
        /// Overrides the configured seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_name = "CSV")]
        out: Option<PathBuf>,
    },
    /// Secure k-means over a synthetic dataset.
    Kmeans {
        #[arg(long, default_value_t = 1)]
        banks: u32,
        #[arg(long, default_value_t = 26)]
        k: usize,
        #[arg(long, default_value_t = 20)]
        rounds: usize,
        #[arg(long, default_value_t = 20_000)]
        objects: usize,
        #[arg(long, value_enum, default_value = "aead")]
        crypto: CryptoArg,
        /// Seed of the synthetic data; defaults to the configured seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Stop once a round changes no membership.
        #[arg(long)]
        stop_when_stable: bool,
        /// Also time the same run done entirely by the host.
        #[arg(long)]
        host_baseline: bool,
        /// Per-round timings.
        #[arg(long, value_name = "CSV")]
        out: Option<PathBuf>,
    },
    /// Bus traces of hash-table lookups done by the host or by a bank.
    TraceHashtable {
        #[arg(long, value_enum)]
        mode: ModeArg,
        /// One query per line; defaults to 20 words from the table.
        #[arg(long, value_name = "FILE")]
        queries: Option<PathBuf>,
        /// Words in the table.
        #[arg(long, default_value_t = 256)]
        words: usize,
        #[arg(long, value_name = "CSV")]
        out: Option<PathBuf>,
        /// Where each query's segment starts in the trace.
        #[arg(long, value_name = "CSV")]
        index: Option<PathBuf>,
    },
    /// Attestation, session setup, a kernel run and teardown on one bank.
    AttestDemo {
        #[arg(long, default_value_t = 0)]
        bank: u32,
    },
    /// Writes an encrypted synthetic dataset.
    GenDataset {
        #[arg(long, default_value_t = 20_000)]
        objects: usize,
        #[arg(long, default_value_t = 26)]
        clusters: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_name = "PEDS")]
        out: PathBuf,
        /// Where to write the data key, as hex.
        #[arg(long, value_name = "FILE")]
        key_out: Option<PathBuf>,
    },
    /// Runs every experiment, writing all outputs into one directory.
    Suite {
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Smaller sizes, for a fast smoke run.
        #[arg(long)]
        quick: bool,
    },
    /// Prints the effective configuration as TOML.
    ShowConfig,
}

fn parse_size(s: &str) -> Result<u64, String> {
    let s = s.trim();
    let (digits, mult) = match s.char_indices().find(|(_, c)| !c.is_ascii_digit()) {
        None => (s, 1),
        Some((i, _)) => {
            let mult = match s[i..].to_ascii_uppercase().as_str() {
                "K" | "KB" | "KIB" => 1 << 10,
                "M" | "MB" | "MIB" => 1 << 20,
                "B" => 1,
                other => return Err(format!("unknown size suffix `{other}`")),
            };
            (&s[..i], mult)
        }
    };
    let n: u64 = digits.parse().map_err(|_| format!("`{s}` is not a size"))?;
    n.checked_mul(mult)
        .filter(|&b| b > 0)
        .ok_or_else(|| format!("`{s}` is out of range"))
}

fn load_config(path: Option<&Path>) -> Result<SimConfig, CliError> {
    match path {
        None => Ok(SimConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            Ok(config::parse(&text)?)
        }
    }
}

/// Writes to `path`, or to stdout without one.
fn emit(path: Option<&Path>, f: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> Result<(), CliError> {
    match path {
        Some(p) => commands::write_file(p, f),
        None => {
            let mut out = io::stdout().lock();
            f(&mut out).and_then(|_| out.flush()).map_err(|e| CliError::io("<stdout>", e))
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::BenchDma {
            pattern,
            op,
            sizes,
            crypto,
            iters,
            seed,
            out,
        } => {
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let spec = BenchSpec {
                patterns: pattern
                    .into_iter()
                    .map(|p| match p {
                        PatternArg::Seq => Pattern::Seq,
                        PatternArg::Rand => Pattern::Rand,
                    })
                    .collect(),
                ops: op
                    .into_iter()
                    .map(|o| match o {
                        OpArg::Read => BenchOp::Read,
                        OpArg::Write => BenchOp::Write,
                    })
                    .collect(),
                sizes,
                cryptos: crypto.into_iter().map(Crypto::from).collect(),
                iterations: iters,
            };
            let records = commands::dma_bench(&cfg, &spec)?;
            emit(out.as_deref(), |w| output::write_bench(w, &records))
        }
        Command::Kmeans {
            banks,
            k,
            rounds,
            objects,
            crypto,
            seed,
            stop_when_stable,
            host_baseline,
            out,
        } => {
            let mut job = KMeansJob::new(objects, k, banks, crypto.into(), seed.unwrap_or(cfg.seed));
            job.kmeans.rounds = rounds;
            job.kmeans.stop_when_stable = stop_when_stable;
            let report = commands::kmeans(&cfg, &job)?;
            let baseline = if host_baseline {
                Some(commands::kmeans_host_only(&cfg, &job)?)
            } else {
                None
            };
            if let Some(p) = out.as_deref() {
                commands::write_file(p, |w| output::write_kmeans_rounds(w, &report))?;
            }
            let summary = commands::kmeans_summary(&job, &report, baseline.as_ref());
            emit(None, |w| w.write_all(summary.as_bytes()))
        }
        Command::TraceHashtable {
            mode,
            queries,
            words,
            out,
            index,
        } => {
            if words == 0 {
                return Err(CliError::Usage("the table needs at least one word".into()));
            }
            let mut job = TraceJob::dictionary(cfg.seed, words, 20);
            if let Some(p) = queries {
                let text = fs::read_to_string(&p).map_err(|e| CliError::io(&p, e))?;
                job.queries = TraceJob::parse_queries(&text);
            }
            let mode = match mode {
                ModeArg::Host => LookupMode::HostOnly,
                ModeArg::Pim => LookupMode::PimAssisted,
            };
            let traces = commands::trace_hashtable(&cfg, &job, mode)?;
            if let Some(p) = index.as_deref() {
                commands::write_file(p, |w| output::write_trace_index(w, &traces))?;
            }
            emit(out.as_deref(), |w| output::write_query_traces(w, &traces))
        }
        Command::AttestDemo { bank } => {
            let text = commands::attest_demo(&cfg, bank)?;
            emit(None, |w| w.write_all(text.as_bytes()))
        }
        Command::GenDataset {
            objects,
            clusters,
            seed,
            out,
            key_out,
        } => {
            let (file, key) = commands::gen_dataset(objects, clusters, seed.unwrap_or(cfg.seed))?;
            let bytes = file.to_bytes();
            commands::write_file(&out, |w| w.write_all(&bytes))?;
            let key = commands::key_hex(&key);
            emit(key_out.as_deref(), |w| writeln!(w, "{key}"))
        }
        Command::Suite { out, quick } => {
            let spec = if quick { SuiteSpec::quick() } else { SuiteSpec::default() };
            let files = commands::suite(&cfg, &spec, &out)?;
            emit(None, |w| {
                for f in &files {
                    writeln!(w, "{}", out.join(f).display())?;
                }
                Ok(())
            })
        }
        Command::ShowConfig => {
            let text = config::render(&cfg)?;
            emit(None, |w| w.write_all(text.as_bytes()))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            let msg = e.render().to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            eprintln!("{}", CliError::Usage(first.trim_start_matches("error: ").to_string()).machine_line());
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.machine_line());
            ExitCode::FAILURE
        }
    }
}
