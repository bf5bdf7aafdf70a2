//! An open-addressing hash table looked up either directly by the host or
//! by a PIM kernel over an encrypted copy, for comparing what each leaves
//! on the host memory bus.
//!
//! Entries are a 28-byte zero-padded key and an i32 value, 32 bytes in all;
//! a value of -1 marks an empty slot. Probing is linear from
//! `murmur3(key) % slots`.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use super::{murmur3_32, Crypto};
use crate::config::SimConfig;
use crate::dma::{BlockLayout, CryptoMode, DmaRequest, BLOCK_OVERHEAD};
use crate::host::{BankAllocation, HostError, PimHandle};
use crate::memory::TraceEvent;
use crate::pim::{Kernel, KernelContext, KernelImage, KernelTrap};
use crate::system::System;

pub const KERNEL_NAME: &str = "hashtable";
pub const KEY_BYTES: usize = 28;
pub const ENTRY_BYTES: usize = 32;
pub const EMPTY_VALUE: i32 = -1;
/// Entries per stored block; one block is one DRAM row of plaintext.
pub const ENTRIES_PER_BLOCK: usize = 8;
const BLOCK_BYTES: u64 = (ENTRIES_PER_BLOCK * ENTRY_BYTES) as u64;
const SEED: u32 = 0;
const HEADER_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HashError {
    #[error("keys must be 1 to {KEY_BYTES} bytes, got {0}")]
    KeyLength(usize),
    #[error("value -1 is reserved for empty slots")]
    ReservedValue,
    #[error("table is full")]
    Full,
    #[error("table needs a positive multiple of {ENTRIES_PER_BLOCK} slots")]
    BadSize,
    #[error("kernel result is malformed")]
    BadResult,
    #[error(transparent)]
    Host(#[from] HostError),
}

fn padded_key(key: &[u8]) -> Result<[u8; KEY_BYTES], HashError> {
    if key.is_empty() || key.len() > KEY_BYTES {
        return Err(HashError::KeyLength(key.len()));
    }
    let mut k = [0u8; KEY_BYTES];
    k[..key.len()].copy_from_slice(key);
    Ok(k)
}

/// Slot probed first for `key`.
pub fn home_slot(key: &[u8], n_slots: usize) -> usize {
    murmur3_32(key, SEED) as usize % n_slots
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HashTable {
    keys: Vec<[u8; KEY_BYTES]>,
    values: Vec<i32>,
}

impl HashTable {
    pub fn with_slots(n_slots: usize) -> Result<Self, HashError> {
        if n_slots == 0 || !n_slots.is_multiple_of(ENTRIES_PER_BLOCK) {
            return Err(HashError::BadSize);
        }
        Ok(HashTable {
            keys: vec![[0; KEY_BYTES]; n_slots],
            values: vec![EMPTY_VALUE; n_slots],
        })
    }

    /// A table at most half full holding `words[i] -> i`.
    pub fn from_words<S: AsRef<str>>(words: &[S]) -> Result<Self, HashError> {
        let n = (words.len() * 2).max(ENTRIES_PER_BLOCK).next_multiple_of(ENTRIES_PER_BLOCK);
        let mut t = Self::with_slots(n)?;
        for (i, w) in words.iter().enumerate() {
            t.insert(w.as_ref().as_bytes(), i as i32)?;
        }
        Ok(t)
    }

    pub fn n_slots(&self) -> usize {
        self.keys.len()
    }

    pub fn n_blocks(&self) -> usize {
        self.n_slots() / ENTRIES_PER_BLOCK
    }

    /// Inserts or overwrites.
    pub fn insert(&mut self, key: &[u8], value: i32) -> Result<(), HashError> {
        if value == EMPTY_VALUE {
            return Err(HashError::ReservedValue);
        }
        let k = padded_key(key)?;
        let n = self.n_slots();
        let home = home_slot(key, n);
        for i in 0..n {
            let s = (home + i) % n;
            if self.values[s] == EMPTY_VALUE || self.keys[s] == k {
                self.keys[s] = k;
                self.values[s] = value;
                return Ok(());
            }
        }
        Err(HashError::Full)
    }

    /// Looks `key` up, returning the slots probed along the way.
    pub fn probe(&self, key: &[u8]) -> (Option<i32>, Vec<usize>) {
        let Ok(k) = padded_key(key) else {
            return (None, Vec::new());
        };
        let n = self.n_slots();
        let home = home_slot(key, n);
        let mut seen = Vec::new();
        for i in 0..n {
            let s = (home + i) % n;
            seen.push(s);
            if self.values[s] == EMPTY_VALUE {
                return (None, seen);
            }
            if self.keys[s] == k {
                return (Some(self.values[s]), seen);
            }
        }
        (None, seen)
    }

    pub fn get(&self, key: &[u8]) -> Option<i32> {
        self.probe(key).0
    }

    pub fn entry_bytes(&self, slot: usize) -> [u8; ENTRY_BYTES] {
        let mut e = [0u8; ENTRY_BYTES];
        e[..KEY_BYTES].copy_from_slice(&self.keys[slot]);
        e[KEY_BYTES..].copy_from_slice(&self.values[slot].to_le_bytes());
        e
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        (0..self.n_slots()).flat_map(|s| self.entry_bytes(s)).collect()
    }
}

/// `n` distinct pronounceable words.
pub fn dictionary(seed: u64, n: usize) -> Vec<String> {
    const ONSETS: &[&str] = &["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "st", "tr"];
    const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ai", "ou"];
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut out: Vec<String> = Vec::with_capacity(n);
    let mut seen = alloc::collections::BTreeSet::new();
    while out.len() < n {
        let syllables = 1 + rng.next_u32() as usize % 4;
        let mut w = String::new();
        for _ in 0..syllables {
            w.push_str(ONSETS[rng.next_u32() as usize % ONSETS.len()]);
            w.push_str(VOWELS[rng.next_u32() as usize % VOWELS.len()]);
        }
        if seen.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

/// Lookup parameters. Little-endian: table offset and block stride (u64),
/// slot count and entries per block (u32), crypto flag, key length, then
/// the key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LookupParams {
    pub table_offset: u64,
    pub block_stride: u64,
    pub n_slots: u32,
    pub entries_per_block: u32,
    pub crypto: Crypto,
    pub key: Vec<u8>,
}

impl LookupParams {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::with_capacity(HEADER_LEN + self.key.len());
        b.extend_from_slice(&self.table_offset.to_le_bytes());
        b.extend_from_slice(&self.block_stride.to_le_bytes());
        b.extend_from_slice(&self.n_slots.to_le_bytes());
        b.extend_from_slice(&self.entries_per_block.to_le_bytes());
        b.push(matches!(self.crypto, Crypto::Aead) as u8);
        b.push(self.key.len() as u8);
        b.resize(HEADER_LEN, 0);
        b.extend_from_slice(&self.key);
        b
    }

    pub fn parse(b: &[u8]) -> Result<Self, KernelTrap> {
        let bad = KernelTrap::BadParams;
        if b.len() < HEADER_LEN || b.len() != HEADER_LEN + b[25] as usize {
            return Err(bad("lookup parameters truncated"));
        }
        let crypto = match b[24] {
            0 => Crypto::Plain,
            1 => Crypto::Aead,
            _ => return Err(bad("lookup crypto flag")),
        };
        Ok(LookupParams {
            table_offset: u64::from_le_bytes(b[0..8].try_into().expect("8")),
            block_stride: u64::from_le_bytes(b[8..16].try_into().expect("8")),
            n_slots: u32::from_le_bytes(b[16..20].try_into().expect("4")),
            entries_per_block: u32::from_le_bytes(b[20..24].try_into().expect("4")),
            crypto,
            key: b[HEADER_LEN..].to_vec(),
        })
    }
}

/// Encodes a lookup result: a found flag and the value.
fn encode_result(found: Option<i32>) -> [u8; 5] {
    let mut r = [0u8; 5];
    r[0] = found.is_some() as u8;
    r[1..].copy_from_slice(&found.unwrap_or(EMPTY_VALUE).to_le_bytes());
    r
}

pub fn decode_result(b: &[u8]) -> Option<Option<i32>> {
    if b.len() != 5 || b[0] > 1 {
        return None;
    }
    let v = i32::from_le_bytes(b[1..5].try_into().expect("4"));
    Some((b[0] == 1).then_some(v))
}

#[derive(Debug, Clone, Copy, Default)]
pub struct HashTableKernel;

impl Kernel for HashTableKernel {
    fn run(&self, ctx: &mut KernelContext<'_>) -> Result<(), KernelTrap> {
        let p = LookupParams::parse(ctx.params())?;
        let costs = ctx.costs().clone();
        let k = padded_key(&p.key).map_err(|_| KernelTrap::BadParams("lookup key length"))?;
        let (n, epb) = (p.n_slots as usize, p.entries_per_block as usize);
        if n == 0 || epb == 0 || n % epb != 0 {
            return Err(KernelTrap::BadParams("lookup table geometry"));
        }
        let block_bytes = (epb * ENTRY_BYTES) as u64;
        let mode = match p.crypto {
            Crypto::Plain => CryptoMode::Plain,
            Crypto::Aead => CryptoMode::Decrypt,
        };
        ctx.consume_cycles(costs.hash_per_byte * p.key.len() as u64);
        let home = home_slot(&p.key, n);
        let (buf, _) = ctx.local_window();
        let mut cached = None;
        let mut entry = [0u8; ENTRY_BYTES];
        let mut found = None;
        for i in 0..n {
            let s = (home + i) % n;
            let block = s / epb;
            if cached != Some(block) {
                let at = p.table_offset + block as u64 * p.block_stride;
                ctx.dma(DmaRequest::read(at, buf, block_bytes, mode))?;
                cached = Some(block);
            }
            ctx.local_read(buf + ((s % epb) * ENTRY_BYTES) as u64, &mut entry)?;
            ctx.consume_cycles(costs.probe);
            let v = i32::from_le_bytes(entry[KEY_BYTES..].try_into().expect("4"));
            if v == EMPTY_VALUE {
                break;
            }
            if entry[..KEY_BYTES] == k {
                found = Some(v);
                break;
            }
        }
        ctx.post_result(&encode_result(found))
    }
}

pub fn kernel_image() -> KernelImage {
    KernelImage::new(KERNEL_NAME, 1, b"linear-probe-lookup".to_vec())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LookupMode {
    /// The host reads the plaintext table slot by slot.
    HostOnly,
    /// A kernel in the bank looks the key up in the encrypted table.
    PimAssisted,
}

impl LookupMode {
    pub fn as_str(self) -> &'static str {
        match self {
            LookupMode::HostOnly => "HOST_ONLY",
            LookupMode::PimAssisted => "PIM_ASSISTED",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryTrace {
    pub query: String,
    pub result: Option<i32>,
    pub events: Vec<TraceEvent>,
}

/// A table placed in bank 0 of a system, ready for traced lookups.
pub struct TracedTable {
    mode: LookupMode,
    handle: PimHandle,
    region: BankAllocation,
    n_slots: usize,
    stride: u64,
}

impl TracedTable {
    pub fn place(sys: &mut System, table: &HashTable, mode: LookupMode) -> Result<Self, HashError> {
        let mut h = PimHandle::init(sys, 0)?;
        let row = sys.config().row_buffer_bytes;
        let (region, stride) = match mode {
            LookupMode::HostOnly => {
                let bytes = table.to_bytes();
                let region = h.alloc(sys, bytes.len() as u64)?;
                h.write_raw(sys, &region, 0, &bytes)?;
                (region, BLOCK_BYTES)
            }
            LookupMode::PimAssisted => {
                let trusted = sys.trusted_ek();
                h.attest_and_establish(sys, &trusted)?;
                let image = kernel_image();
                let staging = h.alloc(sys, image.to_bytes().len() as u64 + BLOCK_OVERHEAD)?;
                h.load_kernel(sys, &staging, &image)?;
                let layout = BlockLayout::with_block_size(BLOCK_BYTES, table.to_bytes().len() as u64).map_err(HostError::from)?;
                let stride = layout.wire_size().next_multiple_of(row);
                let region = h.alloc(sys, stride * layout.n_blocks)?;
                h.load_data_strided(sys, &region, &table.to_bytes(), &layout, stride)?;
                (region, stride)
            }
        };
        Ok(TracedTable {
            mode,
            handle: h,
            region,
            n_slots: table.n_slots(),
            stride,
        })
    }

    pub fn lookup(&mut self, sys: &mut System, key: &[u8]) -> Result<Option<i32>, HashError> {
        let k = padded_key(key)?;
        match self.mode {
            LookupMode::HostOnly => {
                let n = self.n_slots;
                let home = home_slot(key, n);
                for i in 0..n {
                    let s = (home + i) % n;
                    let e = self.handle.read_raw(sys, &self.region, (s * ENTRY_BYTES) as u64, ENTRY_BYTES as u64)?;
                    let v = i32::from_le_bytes(e[KEY_BYTES..].try_into().expect("4"));
                    if v == EMPTY_VALUE {
                        return Ok(None);
                    }
                    if e[..KEY_BYTES] == k {
                        return Ok(Some(v));
                    }
                }
                Ok(None)
            }
            LookupMode::PimAssisted => {
                let p = LookupParams {
                    table_offset: self.region.offset,
                    block_stride: self.stride,
                    n_slots: self.n_slots as u32,
                    entries_per_block: ENTRIES_PER_BLOCK as u32,
                    crypto: Crypto::Aead,
                    key: key.to_vec(),
                };
                let r = self.handle.offload_and_execute(sys, &p.to_bytes())?;
                decode_result(&r).ok_or(HashError::BadResult)
            }
        }
    }
}

/// Places `table` in a fresh system and records the bus transactions of each
/// query.
pub fn trace_experiment<S: AsRef<str>>(
    cfg: &SimConfig,
    table: &HashTable,
    mode: LookupMode,
    queries: &[S],
) -> Result<Vec<QueryTrace>, HashError> {
    let mut cfg = cfg.clone();
    cfg.tracing = true;
    let mut sys = System::new(cfg).map_err(HostError::from)?;
    let mut t = TracedTable::place(&mut sys, table, mode)?;
    sys.tracer_mut().clear();
    let mut out = Vec::with_capacity(queries.len());
    for q in queries {
        let q = q.as_ref();
        let mark = sys.tracer_mut().mark();
        let result = t.lookup(&mut sys, q.as_bytes())?;
        out.push(QueryTrace {
            query: String::from(q),
            result,
            events: sys.tracer_mut().since(mark).to_vec(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn insert_and_probe() {
        let mut t = HashTable::with_slots(8).unwrap();
        t.insert(b"alpha", 1).unwrap();
        t.insert(b"beta", 2).unwrap();
        t.insert(b"alpha", 3).unwrap();
        assert_eq!(t.get(b"alpha"), Some(3));
        assert_eq!(t.get(b"beta"), Some(2));
        assert_eq!(t.get(b"gamma"), None);
        assert_eq!(t.insert(b"x", -1), Err(HashError::ReservedValue));
        assert_eq!(t.insert(&[b'a'; 29], 0), Err(HashError::KeyLength(29)));
    }

    #[test]
    fn full_table() {
        let mut t = HashTable::with_slots(8).unwrap();
        for i in 0..8 {
            t.insert(alloc::format!("k{i}").as_bytes(), i).unwrap();
        }
        assert_eq!(t.insert(b"k9", 9), Err(HashError::Full));
        assert_eq!(t.probe(b"k9").1.len(), 8);
    }

    #[test]
    fn entry_layout() {
        let mut t = HashTable::with_slots(8).unwrap();
        t.insert(b"abc", 0x0102_0304).unwrap();
        let s = home_slot(b"abc", 8);
        let e = t.entry_bytes(s);
        assert_eq!(&e[..3], b"abc");
        assert!(e[3..28].iter().all(|&b| b == 0));
        assert_eq!(&e[28..], &[4, 3, 2, 1]);
        let empty = t.entry_bytes((s + 1) % 8);
        assert_eq!(&empty[28..], &[0xFF; 4]);
    }

    #[test]
    fn params_and_result_round_trip() {
        let p = LookupParams {
            table_offset: 4096,
            block_stride: 512,
            n_slots: 64,
            entries_per_block: 8,
            crypto: Crypto::Aead,
            key: b"hello".to_vec(),
        };
        assert_eq!(LookupParams::parse(&p.to_bytes()).unwrap(), p);
        assert_eq!(decode_result(&encode_result(Some(7))), Some(Some(7)));
        assert_eq!(decode_result(&encode_result(None)), Some(None));
    }

    #[test]
    fn dictionary_is_distinct_and_short() {
        let d = dictionary(3, 500);
        let set: alloc::collections::BTreeSet<_> = d.iter().collect();
        assert_eq!(set.len(), 500);
        assert!(d.iter().all(|w| !w.is_empty() && w.len() <= KEY_BYTES));
        assert_eq!(d, dictionary(3, 500));
    }
}
