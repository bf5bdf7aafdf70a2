//! End-to-end acceptance checks. Prints one PASS or FAIL line per
//! criterion and exits nonzero if any fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::{quiet_system, RawHost};
use pim_enclave::channel::{CommandId, ExecState, Phase, FRAME_LEN};
use pim_enclave::config::SimConfig;
use pim_enclave::crypto::{aead_decrypt, aead_encrypt, Iv, SymmetricKey, Tag};
use pim_enclave::dma::{EncryptedBlock, IvCounter, BLOCK_OVERHEAD};
use pim_enclave::memory::{AccessOp, AccessRange, MemoryModule, Requester};
use pim_enclave::system::System;
use pim_enclave::time::SimTime;
use pim_enclave::workloads::bench::{self, BenchSpec, Pattern};
use pim_enclave::workloads::hashtable::{self, HashTable, LookupMode};
use pim_enclave::workloads::kmeans::{
    self, Dataset, KMeansConfig, KMeansReport, KMeansRun, DIMS, OBJECTS_PER_BLOCK, OBJECT_BLOCK_BYTES,
};
use pim_enclave::workloads::Crypto;
use pim_enclave_cli::commands::{self, SuiteSpec};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

type Check = fn() -> Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($fmt)+));
        }
    };
}

fn within(limit: Duration, took: Duration, what: &str) -> Result<(), String> {
    ensure!(took < limit, "{what} took {:.2} s, limit {:.0} s", took.as_secs_f64(), limit.as_secs_f64());
    Ok(())
}

fn hex(s: &str) -> Vec<u8> {
    (0..s.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(&s[i..i + 2], 16).expect("hex"))
        .collect()
}

// ---------------------------------------------------------------------------
// 1. AES-128-GCM conformance

/// (key, iv, plaintext, aad, ciphertext, tag). NIST CAVP
/// gcmEncryptExtIV128 entries for 96-bit IVs and 128-bit tags, plus GCM
/// test case 4 for a partial final block with AAD.
const GCM_VECTORS: &[(&str, &str, &str, &str, &str, &str)] = &[
    (
        "11754cd72aec309bf52f7687212e8957",
        "3c819d9a9bed087615030b65",
        "",
        "",
        "",
        "250327c674aaf477aef2675748cf6971",
    ),
    (
        "ca47248ac0b6f8372a97ac43508308ed",
        "ffd2b598feabc9019262d2be",
        "",
        "",
        "",
        "60d20404af527d248d893ae495707d1a",
    ),
    (
        "77be63708971c4e240d1cb79e8d77feb",
        "e0e00f19fed7ba0136a797f3",
        "",
        "7a43ec1d9c0a5a78a0b16533a6213cab",
        "",
        "209fcc8d3675ed938e9c7166709dd946",
    ),
    (
        "7fddb57453c241d03efbed3ac44e371c",
        "ee283a3fc75575e33efd4887",
        "d5de42b461646c255c87bd2962d3b9a2",
        "",
        "2ccda4a5415cb91e135c2a0f78c9b2fd",
        "b36d1df9b9d5e596f83e8b7f52971cb3",
    ),
    (
        "c939cc13397c1d37de6ae0e1cb7c423c",
        "b3d8cc017cbb89b39e0f67e2",
        "c3b3c41f113a31b73d9a5cd432103069",
        "24825602bd12a984e0092d3e448eda5f",
        "93fe7d9e9bfd10348a5606e5cafa7354",
        "0032a1dc85f1c9786925a2e71d8272dd",
    ),
    (
        "feffe9928665731c6d6a8f9467308308",
        "cafebabefacedbaddecaf888",
        "d9313225f88406e5a55909c5aff5269a86a7a9531534f7da2e4c303d8a318a721c3c0c95956809532fcf0e2449a6b525b16aedf5aa0de657ba637b39",
        "feedfacedeadbeeffeedfacedeadbeefabaddad2",
        "42831ec2217774244b7221b784d0d49ce3aa212f2c02a4e035c17e2329aca12e21d514b25466931c7d8f6a5aac84aa051ba30b396a0aac973d58e091",
        "5bc94fbc3221a5db94fae95ae7121a47",
    ),
];

fn crypto_conformance() -> Result<String, String> {
    let start = Instant::now();
    let mut mutations = 0usize;
    for (n, &(k, iv, pt, aad, ct, tag)) in GCM_VECTORS.iter().enumerate() {
        let key = SymmetricKey::from_bytes(hex(k).try_into().expect("16 bytes"));
        let iv: [u8; 12] = hex(iv).try_into().expect("12 bytes");
        let (pt, aad, ct) = (hex(pt), hex(aad), hex(ct));
        let tag: [u8; 16] = hex(tag).try_into().expect("16 bytes");
        let (c, t) = aead_encrypt(&key, &Iv(iv), &pt, &aad);
        ensure!(c == ct && t == Tag(tag), "vector {n}: encryption differs");
        let p = aead_decrypt(&key, &Iv(iv), &ct, &Tag(tag), &aad).map_err(|e| format!("vector {n}: {e}"))?;
        ensure!(p == pt, "vector {n}: decryption differs");

        let fails = |iv: &[u8; 12], ct: &[u8], tag: &[u8; 16], aad: &[u8]| aead_decrypt(&key, &Iv(*iv), ct, &Tag(*tag), aad).is_err();
        for bit in 0..ct.len() * 8 {
            let mut c = ct.clone();
            c[bit / 8] ^= 1 << (bit % 8);
            ensure!(fails(&iv, &c, &tag, &aad), "vector {n}: ciphertext bit {bit} flip accepted");
            mutations += 1;
        }
        for bit in 0..128 {
            let mut t = tag;
            t[bit / 8] ^= 1 << (bit % 8);
            ensure!(fails(&iv, &ct, &t, &aad), "vector {n}: tag bit {bit} flip accepted");
            mutations += 1;
        }
        for bit in 0..aad.len() * 8 {
            let mut a = aad.clone();
            a[bit / 8] ^= 1 << (bit % 8);
            ensure!(fails(&iv, &ct, &tag, &a), "vector {n}: aad bit {bit} flip accepted");
            mutations += 1;
        }
        for bit in 0..96 {
            let mut v = iv;
            v[bit / 8] ^= 1 << (bit % 8);
            ensure!(fails(&v, &ct, &tag, &aad), "vector {n}: iv bit {bit} flip accepted");
            mutations += 1;
        }
    }
    let took = start.elapsed();
    within(Duration::from_secs(1), took, "conformance")?;
    Ok(format!(
        "{} vectors, {mutations} single-bit mutations rejected, {:.3} s",
        GCM_VECTORS.len(),
        took.as_secs_f64()
    ))
}

// ---------------------------------------------------------------------------
// 2-3. Encrypted DMA

/// Request latency terms in ticks for a cold, row-aligned request of `len`
/// bank-side bytes under the default configuration: link at 1.25 B/ns,
/// one full row cycle per 256-byte row plus one 3.2 ns burst per 32 bytes,
/// and one 10/3 ns AES cycle per 16 bytes.
fn link_ticks(len: u64) -> u64 {
    (len * 3_000 * 1_000_000).div_ceil(1_250_000)
}

fn dram_ticks(len: u64) -> u64 {
    len.div_ceil(256) * 3 * 13_750 * 3 + len.div_ceil(32) * 3 * 3_200
}

fn aes_ticks(wire: u64) -> u64 {
    wire.div_ceil(16) * 10_000
}

fn dma_overhead() -> Result<String, String> {
    let start = Instant::now();
    let cfg = SimConfig::default();
    let recs = bench::dma_bench(&cfg, &BenchSpec::default()).map_err(|e| e.to_string())?;
    ensure!(recs.len() == 32, "expected 32 grid cells, got {}", recs.len());
    let mut increases = Vec::new();
    for p in recs.iter().filter(|r| r.crypto == Crypto::Plain) {
        let e = recs
            .iter()
            .find(|r| r.crypto == Crypto::Aead && (r.pattern, r.op, r.block_size) == (p.pattern, p.op, p.block_size))
            .ok_or("missing encrypted cell")?;
        ensure!(p.iterations == 1000 && e.iterations == 1000, "iterations are not 1000");
        increases.push(e.total.ticks() as f64 / p.total.ticks() as f64 - 1.0);

        let size = p.block_size;
        let wire = size + BLOCK_OVERHEAD;
        ensure!(p.aes == SimTime::ZERO, "plain {} has an AES term", p.scenario());
        ensure!(
            e.aes.ticks() == 1000 * aes_ticks(wire),
            "{} {size}: AES stage {} ticks, formula {}",
            e.scenario(),
            e.aes.ticks(),
            1000 * aes_ticks(wire)
        );
        if p.pattern == Pattern::Seq {
            let plain = link_ticks(size) + dram_ticks(size);
            let enc = link_ticks(wire) + dram_ticks(wire) + aes_ticks(wire);
            ensure!(p.total.ticks() == 1000 * plain, "{} {size} plain: {} vs {}", p.scenario(), p.total.ticks(), 1000 * plain);
            ensure!(e.total.ticks() == 1000 * enc, "{} {size} aead: {} vs {}", e.scenario(), e.total.ticks(), 1000 * enc);
            let per_request = (e.total.ticks() - p.total.ticks()) / 1000;
            let formula = aes_ticks(wire) + (link_ticks(wire) - link_ticks(size)) + (dram_ticks(wire) - dram_ticks(size));
            ensure!(per_request == formula, "{} {size}: overhead {per_request} vs {formula}", p.scenario());
        }
    }
    let mean = increases.iter().sum::<f64>() / increases.len() as f64;
    let took = start.elapsed();
    within(Duration::from_secs(60), took, "sweep")?;
    ensure!((0.15..=0.25).contains(&mean), "mean increase {:.2}% outside [15%, 25%]", mean * 100.0);
    Ok(format!(
        "mean increase {:.2}% over 16 cells; per-request terms exact; {:.1} s",
        mean * 100.0,
        took.as_secs_f64()
    ))
}

fn dma_throughput() -> Result<String, String> {
    let cfg = SimConfig::default();
    let recs = bench::dma_bench(&cfg, &BenchSpec::default()).map_err(|e| e.to_string())?;
    let mean = |c: Crypto| {
        let v: Vec<f64> = recs.iter().filter(|r| r.crypto == c).map(|r| r.throughput_bps() as f64).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let plain = mean(Crypto::Plain) / 1e9;
    let enc = mean(Crypto::Aead) / 1e9;
    let ratio = enc / plain;
    let detail = format!("plain {plain:.3} GB/s, encrypted {enc:.3} GB/s, ratio {ratio:.3}");
    ensure!((3.3..=3.7).contains(&plain), "{detail}; plain outside [3.3, 3.7] GB/s");
    ensure!((0.77..=0.87).contains(&ratio), "{detail}; ratio outside [0.77, 0.87]");
    Ok(detail)
}

// ---------------------------------------------------------------------------
// 4-5. Memory module

struct RowReference {
    open: Option<u64>,
}

impl RowReference {
    fn access_ps(&mut self, offset: u64, size: u64) -> u64 {
        let mut ps = 0;
        for chunk in offset / 32..=(offset + size - 1) / 32 {
            let row = chunk / 8;
            ps += if self.open == Some(row) { 3_200 } else { 3 * 13_750 + 3_200 };
            self.open = Some(row);
        }
        ps
    }
}

fn single_bank() -> (SimConfig, MemoryModule) {
    let cfg = SimConfig {
        tracing: false,
        n_banks: 1,
        ..SimConfig::default()
    };
    let m = MemoryModule::new(&cfg);
    (cfg, m)
}

fn dram_timing() -> Result<String, String> {
    let (cfg, mut m) = single_bank();
    let first = m
        .host_access(SimTime::ZERO, AccessOp::Read, cfg.module_base, 32, None)
        .map_err(|e| e.to_string())?
        .latency;
    ensure!(first == SimTime::from_ps(44_450), "first-touch 32 B access took {first}");

    let mut rng = ChaCha20Rng::seed_from_u64(0xD5A3);
    let mut accesses = 0;
    for seq in 0..100 {
        let (cfg, mut m) = single_bank();
        let mut reference = RowReference { open: None };
        let mut model = SimTime::ZERO;
        let mut want_ps = 0;
        for _ in 0..1 + rng.next_u32() % 64 {
            let offset = (rng.next_u32() % (1 << 16)) as u64;
            let size = (1 + rng.next_u32() as u64 % 700).min((1 << 16) - offset);
            let addr = cfg.module_base + offset;
            let r = if rng.next_u32() % 2 == 0 {
                m.host_access(model, AccessOp::Write, addr, size, Some(&vec![0x5A; size as usize]))
            } else {
                m.host_access(model, AccessOp::Read, addr, size, None)
            }
            .map_err(|e| e.to_string())?;
            model += r.latency;
            want_ps += reference.access_ps(offset, size);
            accesses += 1;
        }
        ensure!(model == SimTime::from_ps(want_ps), "sequence {seq}: model {model}, reference {want_ps} ps");
    }
    Ok(format!("first touch 44.45 ns; 100 sequences, {accesses} accesses match the reference"))
}

fn access_control() -> Result<String, String> {
    let mut rng = ChaCha20Rng::seed_from_u64(0xACC5);
    for pair in 0..50 {
        let (mask, base) = loop {
            let mask = rng.next_u64() & 0xFFF;
            if mask != 0 {
                break (mask, rng.next_u64() & mask);
            }
        };
        let range = AccessRange::new(base, mask).map_err(|e| e.to_string())?;
        let (cfg, mut m) = single_bank();
        let at = cfg.module_base;
        let pattern: Vec<u8> = (0..4096u32).map(|a| (a % 251) as u8 + 1).collect();
        let io = |e: pim_enclave::memory::MemoryError| e.to_string();
        m.host_access(SimTime::ZERO, AccessOp::Write, at, 4096, Some(&pattern)).map_err(io)?;
        m.set_access_range(Requester::PimCore(0), 0, range).map_err(io)?;
        let seen = m.host_access(SimTime::ZERO, AccessOp::Read, at, 4096, None).map_err(io)?.data;
        for a in 0..4096u64 {
            let inside = a & mask == base;
            let want = if inside { 0 } else { pattern[a as usize] };
            ensure!(seen[a as usize] == want, "pair {pair} ({base:#x}, {mask:#x}): read of {a:#x} returned {}", seen[a as usize]);
        }
        m.host_access(SimTime::ZERO, AccessOp::Write, at, 4096, Some(&[0xEE; 4096])).map_err(io)?;
        m.set_access_range(Requester::PimCore(0), 0, AccessRange::DISABLED).map_err(io)?;
        let after = m.host_access(SimTime::ZERO, AccessOp::Read, at, 4096, None).map_err(io)?.data;
        for a in 0..4096u64 {
            let inside = a & mask == base;
            let want = if inside { pattern[a as usize] } else { 0xEE };
            ensure!(after[a as usize] == want, "pair {pair}: write to {a:#x} was not filtered correctly");
        }
    }
    let (cfg, mut m) = single_bank();
    m.host_access(SimTime::ZERO, AccessOp::Write, cfg.module_base, 64, Some(&[7; 64]))
        .map_err(|e| e.to_string())?;
    m.set_access_range(Requester::PimCore(0), 0, AccessRange::new(0, 0).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let r = m
        .host_access(SimTime::ZERO, AccessOp::Read, cfg.module_base, 64, None)
        .map_err(|e| e.to_string())?;
    ensure!(r.data == [7; 64] && !r.blocked, "mask = base = 0 still filters");
    Ok("50 ranges exhaustive over 4096 offsets; base = mask = 0 disables".into())
}

// ---------------------------------------------------------------------------
// 6. Protocol state machine

fn reference_transition(phase: Phase, cmd: CommandId) -> (bool, Phase) {
    use CommandId::*;
    use Phase::*;
    match (phase, cmd) {
        (Idle | Destroyed | Faulted, GetToken) => (true, Attested),
        (Idle | Destroyed | Faulted, _) => (false, phase),
        (Attested, GetToken) => (true, Attested),
        (Attested, SetSessionKey) => (true, SessionEstablished),
        (Attested, _) => (false, Attested),
        (SessionEstablished, Execute) => (false, SessionEstablished),
        (SessionEstablished, OffloadKernel) => (true, KernelLoaded),
        (SessionEstablished, Destroy) => (true, Destroyed),
        (SessionEstablished, _) => (true, SessionEstablished),
        (KernelLoaded, Destroy) => (true, Destroyed),
        (KernelLoaded, _) => (true, KernelLoaded),
        (Executing, _) => (false, Executing),
    }
}

#[derive(Default)]
struct Walk {
    sequences: usize,
    commands: usize,
    replays: usize,
}

fn replay_rejected(sys: &System, cmd: CommandId, frame: &pim_enclave::channel::CommandFrame) -> Result<(), String> {
    let mut s = sys.clone();
    let phase = s.phase(0).map_err(|e| e.to_string())?;
    s.post_command(0, frame).map_err(|e| e.to_string())?;
    if cmd == CommandId::Execute {
        let st = s.read_status(0).map_err(|e| e.to_string())?;
        ensure!(st.state == ExecState::Failed, "replayed EXECUTE ran");
    }
    let resp = s.read_response(0).map_err(|e| e.to_string())?;
    ensure!(resp.to_bytes().len() == FRAME_LEN, "response is {} bytes", resp.to_bytes().len());
    ensure!(resp.is_error(), "replayed {cmd:?} accepted");
    ensure!(s.phase(0).map_err(|e| e.to_string())? == phase, "replayed {cmd:?} changed the phase");
    Ok(())
}

fn dfs(sys: &System, host: &RawHost, phase: Phase, path: &mut Vec<CommandId>, depth: usize, w: &mut Walk) -> Result<(), String> {
    w.sequences += 1;
    if depth == 0 {
        return Ok(());
    }
    for cmd in CommandId::ALL {
        let mut s = sys.clone();
        let mut h = host.clone();
        path.push(cmd);
        let frame = h.frame_for(&mut s, cmd);
        ensure!(frame.to_bytes().len() == FRAME_LEN, "{path:?}: frame is {} bytes", frame.to_bytes().len());
        let accepted = h.send(&mut s, cmd, frame);
        w.commands += 1;
        let got = s.phase(0).map_err(|e| e.to_string())?;
        let want = reference_transition(phase, cmd);
        ensure!((accepted, got) == want, "{path:?}: got {:?}, reference {want:?}", (accepted, got));
        if accepted {
            replay_rejected(&s, cmd, &frame).map_err(|e| format!("{path:?}: {e}"))?;
            w.replays += 1;
        }
        if cmd == CommandId::Destroy && accepted {
            let d = s.device(0).map_err(|e| e.to_string())?;
            ensure!(d.key_slots_empty(), "{path:?}: key slots survive DESTROY");
            ensure!(d.local_memory().is_all_zero(), "{path:?}: local memory survives DESTROY");
        }
        dfs(&s, &h, got, path, depth - 1, w)?;
        path.pop();
    }
    Ok(())
}

fn state_machine() -> Result<String, String> {
    let mut w = Walk::default();
    dfs(&quiet_system(), &RawHost::new(0x5EED), Phase::Idle, &mut Vec::new(), 5, &mut w)?;
    ensure!(w.sequences == 19_608, "walked {} sequences", w.sequences);
    Ok(format!(
        "{} sequences, {} commands match the table; {} accepted frames replayed and refused; frames {FRAME_LEN} B",
        w.sequences, w.commands, w.replays
    ))
}

// ---------------------------------------------------------------------------
// 7. Bus traces

fn side_channel() -> Result<String, String> {
    let start = Instant::now();
    let cfg = SimConfig::default();
    let words = hashtable::dictionary(0xD1C7, 256);
    let table = HashTable::from_words(&words).map_err(|e| e.to_string())?;
    let mut rng = ChaCha20Rng::seed_from_u64(0x0E1E);
    let queries: Vec<&str> = (0..20).map(|_| words[rng.next_u32() as usize % words.len()].as_str()).collect();

    let pim = hashtable::trace_experiment(&cfg, &table, LookupMode::PimAssisted, &queries).map_err(|e| e.to_string())?;
    let shape = |t: &hashtable::QueryTrace| t.events.iter().map(|e| e.shape()).collect::<Vec<_>>();
    let first = shape(&pim[0]);
    ensure!(!first.is_empty(), "no PIM bus traffic recorded");
    for (i, t) in pim.iter().enumerate() {
        ensure!(shape(t) == first, "PIM trace of query {i} ({}) differs", t.query);
    }

    let host = hashtable::trace_experiment(&cfg, &table, LookupMode::HostOnly, &queries).map_err(|e| e.to_string())?;
    let sets: Vec<BTreeSet<u64>> = host.iter().map(|t| t.events.iter().map(|e| e.address).collect()).collect();
    let distinct = sets.iter().collect::<BTreeSet<_>>().len();
    ensure!(distinct > 1, "every host-only query touched the same addresses");
    for (q, t) in queries.iter().zip(&host) {
        ensure!(t.result == table.get(q.as_bytes()), "host lookup of {q} returned {:?}", t.result);
    }
    let took = start.elapsed();
    within(Duration::from_secs(30), took, "trace experiment")?;
    Ok(format!(
        "20 PIM traces identical ({} events each); host-only: {distinct} distinct address sets; {:.2} s",
        first.len(),
        took.as_secs_f64()
    ))
}

// ---------------------------------------------------------------------------
// 8-10, 12. k-means

/// Plain Lloyd iterations: squared distance in i128, lowest index wins
/// ties, floor division for means, empty clusters keep their centroid.
fn oracle(coords: &[i32], k: usize, rounds: usize) -> (Vec<i32>, Vec<u32>) {
    let n = coords.len() / DIMS;
    let mut c: Vec<i32> = coords[..k * DIMS].to_vec();
    let mut members = vec![u32::MAX; n];
    for _ in 0..rounds {
        let mut sums = vec![0i128; k * DIMS];
        let mut counts = vec![0i128; k];
        for i in 0..n {
            let x = &coords[i * DIMS..(i + 1) * DIMS];
            let mut best = (i128::MAX, 0usize);
            for j in 0..k {
                let d: i128 = (0..DIMS)
                    .map(|t| {
                        let v = x[t] as i128 - c[j * DIMS + t] as i128;
                        v * v
                    })
                    .sum();
                if d < best.0 {
                    best = (d, j);
                }
            }
            members[i] = best.1 as u32;
            counts[best.1] += 1;
            for t in 0..DIMS {
                sums[best.1 * DIMS + t] += x[t] as i128;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                for t in 0..DIMS {
                    c[j * DIMS + t] = sums[j * DIMS + t].div_euclid(counts[j]) as i32;
                }
            }
        }
    }
    (c, members)
}

fn run_kmeans(data: &Dataset, k: usize, rounds: usize, banks: u32, crypto: Crypto) -> Result<KMeansReport, String> {
    let cfg = KMeansConfig {
        k,
        rounds,
        banks,
        crypto,
        stop_when_stable: false,
    };
    kmeans::run(&SimConfig::default(), data, cfg, &data.first_k(k)).map_err(|e| e.to_string())
}

fn kmeans_correctness() -> Result<String, String> {
    let mut done = Vec::new();
    for (seed, n, k, banks) in [(101u64, 1_000usize, 4usize, 1u32), (202, 7_000, 10, 3), (303, 20_000, 26, 8)] {
        let data = Dataset::synthetic(seed, n, k);
        let (want_c, want_m) = oracle(data.coords(), k, 20);
        for crypto in [Crypto::Plain, Crypto::Aead] {
            let r = run_kmeans(&data, k, 20, banks, crypto)?;
            ensure!(r.rounds.len() == 20, "{n}/{k}: ran {} rounds", r.rounds.len());
            ensure!(r.memberships == want_m, "{n} objects, k={k}, {}: memberships differ", crypto.as_str());
            ensure!(r.centroids == want_c, "{n} objects, k={k}, {}: centroids differ", crypto.as_str());
        }
        done.push(format!("{n}/k={k}/{banks} banks"));
    }
    Ok(format!("plain and encrypted equal the oracle on {}", done.join(", ")))
}

fn kmeans_overhead() -> Result<String, String> {
    let data = Dataset::synthetic(404, 20_000, 26);
    let plain = run_kmeans(&data, 26, 20, 1, Crypto::Plain)?;
    let enc = run_kmeans(&data, 26, 20, 1, Crypto::Aead)?;
    let measured = enc.total.ticks() as f64 / plain.total.ticks() as f64 - 1.0;
    let predicted = enc.aes().ticks() as f64 / enc.total.ticks() as f64;
    let gap = (measured - predicted).abs();
    let detail = format!(
        "overhead {:.3}%, AES share of total {:.3}%, gap {:.3} points",
        measured * 100.0,
        predicted * 100.0,
        gap * 100.0
    );
    ensure!(measured <= 0.10, "{detail}; above 10%");
    ensure!(gap <= 0.01, "{detail}; prediction off by more than 1 point");
    Ok(detail)
}

fn kmeans_scaling() -> Result<String, String> {
    // 64-byte objects: 0.16, 0.32, 0.64 and 1.28 MB
    let sizes = [2_500usize, 5_000, 10_000, 20_000];
    let mut pts = Vec::new();
    for &n in &sizes {
        let r = run_kmeans(&Dataset::synthetic(505, n, 26), 26, 20, 1, Crypto::Aead)?;
        pts.push(((n * DIMS * 4) as f64, r.total.ticks() as f64));
    }
    let m = pts.len() as f64;
    let (sx, sy) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
    let (mx, my) = (sx / m, sy / m);
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let icept = my - slope * mx;
    let worst = pts
        .iter()
        .map(|p| ((p.1 - (icept + slope * p.0)) / p.1).abs())
        .fold(0.0f64, f64::max);
    ensure!(worst < 0.005, "worst relative residual {:.4}%", worst * 100.0);

    // 160 blocks split evenly over 8 banks
    let n = 160 * OBJECTS_PER_BLOCK;
    let data = Dataset::synthetic(606, n, 26);
    let one = run_kmeans(&data, 26, 20, 1, Crypto::Aead)?;
    let eight = run_kmeans(&data, 26, 20, 8, Crypto::Aead)?;
    ensure!(
        one.compute().ticks() == 8 * eight.compute().ticks(),
        "compute {} vs 8 x {}",
        one.compute(),
        eight.compute()
    );
    Ok(format!(
        "worst residual {:.4}% over 0.16-1.28 MB; {n} objects: compute {} ns on 1 bank = 8 x {} ns on 8",
        worst * 100.0,
        one.compute(),
        eight.compute()
    ))
}

/// Bank contents from a snapshot, as runs of contiguous pages.
fn contiguous_runs(pages: Vec<(u64, Vec<u8>)>) -> BTreeMap<u64, Vec<u8>> {
    let mut runs: BTreeMap<u64, Vec<u8>> = BTreeMap::new();
    for (off, bytes) in pages {
        match runs.iter_mut().next_back() {
            Some((start, run)) if start + run.len() as u64 == off => run.extend_from_slice(&bytes),
            _ => {
                runs.insert(off, bytes);
            }
        }
    }
    runs
}

fn read_at(runs: &BTreeMap<u64, Vec<u8>>, off: u64, len: u64) -> Option<&[u8]> {
    let (start, run) = runs.range(..=off).next_back()?;
    let lo = (off - start) as usize;
    run.get(lo..lo + len as usize)
}

/// Every pair of adjacent coordinates of every object, as the eight bytes
/// they would occupy in a plaintext block.
fn coordinate_pairs(data: &Dataset) -> HashSet<[u8; 8]> {
    let mut set = HashSet::new();
    for i in 0..data.n_objects() {
        for w in data.object(i).windows(2) {
            let mut b = [0u8; 8];
            b[..4].copy_from_slice(&w[0].to_le_bytes());
            b[4..].copy_from_slice(&w[1].to_le_bytes());
            set.insert(b);
        }
    }
    set
}

fn plaintext_hits(runs: &BTreeMap<u64, Vec<u8>>, pairs: &HashSet<[u8; 8]>) -> usize {
    runs.values()
        .flat_map(|r| r.windows(8))
        .filter(|w| pairs.contains(<&[u8; 8]>::try_from(*w).expect("8 bytes")))
        .count()
}

fn snapshot_run(data: &Dataset, crypto: Crypto, mut inspect: impl FnMut(&System, &KMeansRun) -> Result<(), String>) -> Result<usize, String> {
    let mut sys = System::new(SimConfig {
        tracing: false,
        ..SimConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let cfg = KMeansConfig {
        k: 10,
        rounds: 3,
        banks: 2,
        crypto,
        stop_when_stable: false,
    };
    let mut run = KMeansRun::setup(&mut sys, data, cfg, &data.first_k(10)).map_err(|e| e.to_string())?;
    let mut snapshots = 0;
    inspect(&sys, &run)?;
    snapshots += 1;
    for _ in 0..3 {
        run.step(&mut sys).map_err(|e| e.to_string())?;
        inspect(&sys, &run)?;
        snapshots += 1;
    }
    run.finish(&mut sys).map_err(|e| e.to_string())?;
    Ok(snapshots)
}

fn confidentiality_at_rest() -> Result<String, String> {
    let data = Dataset::synthetic(707, 5_000, 10);
    let pairs = coordinate_pairs(&data);

    // the scanner does find coordinates when they are stored in the clear
    let mut plain_hits = 0;
    snapshot_run(&data, Crypto::Plain, |sys, _| {
        for bank in 0..2 {
            plain_hits += plaintext_hits(&contiguous_runs(sys.bank_snapshot(bank).map_err(|e| e.to_string())?), &pairs);
        }
        Ok(())
    })?;
    ensure!(plain_hits > 0, "scanner found nothing in a plaintext run");

    let mut rng = ChaCha20Rng::seed_from_u64(0xC01D);
    let guesses: Vec<SymmetricKey> = (0..8).map(|_| SymmetricKey::generate(&mut rng)).collect();
    let members_wire = OBJECTS_PER_BLOCK as u64 * 4 + BLOCK_OVERHEAD;
    let mut blocks_checked = 0usize;
    let snapshots = snapshot_run(&data, Crypto::Aead, |sys, run| {
        for p in run.placements() {
            let runs = contiguous_runs(sys.bank_snapshot(p.bank).map_err(|e| e.to_string())?);
            let hits = plaintext_hits(&runs, &pairs);
            ensure!(hits == 0, "bank {}: {hits} plaintext coordinate pairs at rest", p.bank);
            let origins = [IvCounter::HOST, IvCounter::dma_origin(p.bank)];
            let blocks = (0..p.n_blocks)
                .map(|i| (p.region.offset + i * p.objects_stride, OBJECT_BLOCK_BYTES + BLOCK_OVERHEAD))
                .chain((0..p.n_blocks).map(|i| (p.region.offset + p.members_offset + i * p.members_stride, members_wire)));
            for (off, len) in blocks {
                let wire = read_at(&runs, off, len).ok_or_else(|| format!("bank {}: no block at {off:#x}", p.bank))?;
                let b = EncryptedBlock::from_bytes(wire).map_err(|e| e.to_string())?;
                let origin = u32::from_be_bytes(b.iv.0[..4].try_into().expect("4 bytes"));
                ensure!(origins.contains(&origin), "bank {}: block at {off:#x} has a foreign IV", p.bank);
                for g in &guesses {
                    ensure!(b.open(g).is_err(), "bank {}: block at {off:#x} opened without the data key", p.bank);
                }
                blocks_checked += 1;
            }
        }
        Ok(())
    })?;
    Ok(format!(
        "{snapshots} snapshots: 0 plaintext pairs (plaintext control: {plain_hits}); {blocks_checked} blocks refuse {} wrong keys",
        guesses.len()
    ))
}

// ---------------------------------------------------------------------------
// 11. Determinism

fn determinism() -> Result<String, String> {
    let cfg = SimConfig::default();
    let spec = SuiteSpec::default();
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let fa = commands::suite(&cfg, &spec, a.path()).map_err(|e| e.to_string())?;
    let fb = commands::suite(&cfg, &spec, b.path()).map_err(|e| e.to_string())?;
    ensure!(fa == fb, "the runs wrote different file lists");
    let mut bytes = 0;
    for f in &fa {
        let x = std::fs::read(a.path().join(f)).map_err(|e| e.to_string())?;
        let y = std::fs::read(b.path().join(f)).map_err(|e| e.to_string())?;
        ensure!(x == y, "{f} differs between runs");
        bytes += x.len();
    }
    Ok(format!("{} files, {bytes} bytes identical across two full runs", fa.len()))
}

fn main() -> ExitCode {
    let checks: [(u32, &str, Check); 12] = [
        (1, "crypto conformance", crypto_conformance),
        (2, "encrypted DMA overhead", dma_overhead),
        (3, "DMA throughput", dma_throughput),
        (4, "DRAM timing", dram_timing),
        (5, "access control", access_control),
        (6, "protocol state machine", state_machine),
        (7, "bus-trace side channel", side_channel),
        (8, "k-means correctness", kmeans_correctness),
        (9, "k-means encrypted overhead", kmeans_overhead),
        (10, "k-means scaling", kmeans_scaling),
        (11, "determinism", determinism),
        (12, "confidentiality at rest", confidentiality_at_rest),
    ];
    let default_hook = panic::take_hook();
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (n, name, check) in checks {
        let t = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(format!("panic: {msg}"))
        });
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {n:>2} {name} [{secs:.1} s]: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {n:>2} {name} [{secs:.1} s]: {detail}");
            }
        }
    }
    panic::set_hook(default_hook);
    println!("acceptance: {} passed, {failed} failed", checks.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
