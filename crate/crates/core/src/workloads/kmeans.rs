//! Secure k-means with each bank's PIM core doing assignment and partial
//! sums over its share of the encrypted dataset, and the host enclave
//! aggregating and dividing.
//!
//! Objects are `dims` signed 32-bit coordinates, packed `objects_per_block`
//! to a block; each object block has a companion block holding the
//! objects' current cluster indices. Block `g` lives on bank `g % banks`.

use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use super::Crypto;
use crate::config::SimConfig;
use crate::dma::{BlockLayout, CryptoMode, DmaRequest, BLOCK_OVERHEAD};
use crate::host::{BankAllocation, HostError, PimHandle};
use crate::memory::{AccessRange, DramTiming, RowBuffer};
use crate::pim::{Kernel, KernelContext, KernelImage, KernelTrap};
use crate::system::System;
use crate::time::SimTime;

pub const KERNEL_NAME: &str = "kmeans";
pub const DIMS: usize = 16;
/// Bytes in one object block's plaintext.
pub const OBJECT_BLOCK_BYTES: u64 = 8192;
/// One object's worth of room is left free in each block.
pub const OBJECTS_PER_BLOCK: usize = OBJECT_BLOCK_BYTES as usize / (DIMS * 4) - 1;
/// Coordinates must satisfy `|x| < COORD_LIMIT` so that distances fit a u64.
pub const COORD_LIMIT: i32 = 1 << 24;
/// Membership of an object not yet assigned.
pub const UNASSIGNED: u32 = u32::MAX;
const HEADER_LEN: usize = 80;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KMeansError {
    #[error("k must be between 1 and the number of objects, got {0}")]
    BadK(usize),
    #[error("need at least one bank, and no more than the system has")]
    BadBanks,
    #[error("dataset is empty or its objects are not {DIMS}-dimensional")]
    BadDataset,
    #[error("coordinate {0} out of range")]
    Coordinate(i64),
    #[error("initial centroids must be k * dims values")]
    BadCentroids,
    #[error("kernel result is malformed")]
    BadResult,
    #[error(transparent)]
    Host(#[from] HostError),
}

/// A dataset of `dims`-dimensional integer points in row-major order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    dims: usize,
    coords: Vec<i32>,
}

impl Dataset {
    pub fn new(dims: usize, coords: Vec<i32>) -> Result<Self, KMeansError> {
        if dims == 0 || coords.is_empty() || !coords.len().is_multiple_of(dims) {
            return Err(KMeansError::BadDataset);
        }
        if let Some(&c) = coords.iter().find(|c| c.unsigned_abs() >= COORD_LIMIT as u32) {
            return Err(KMeansError::Coordinate(c as i64));
        }
        Ok(Dataset { dims, coords })
    }

    /// Points scattered around `clusters` random centres.
    pub fn synthetic(seed: u64, n_objects: usize, clusters: usize) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut uniform = |half: u32| (rng.next_u32() % (2 * half)) as i64 - half as i64;
        let centres: Vec<i64> = (0..clusters.max(1) * DIMS).map(|_| uniform(1 << 20)).collect();
        let mut coords = Vec::with_capacity(n_objects * DIMS);
        for i in 0..n_objects {
            let c = i % clusters.max(1);
            for d in 0..DIMS {
                coords.push((centres[c * DIMS + d] + uniform(1 << 17)) as i32);
            }
        }
        Dataset { dims: DIMS, coords }
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn n_objects(&self) -> usize {
        self.coords.len() / self.dims
    }

    pub fn coords(&self) -> &[i32] {
        &self.coords
    }

    pub fn object(&self, i: usize) -> &[i32] {
        &self.coords[i * self.dims..(i + 1) * self.dims]
    }

    pub fn n_blocks(&self) -> usize {
        self.n_objects().div_ceil(OBJECTS_PER_BLOCK)
    }

    /// The first `k` objects, a deterministic initialisation.
    pub fn first_k(&self, k: usize) -> Vec<i32> {
        self.coords[..k.min(self.n_objects()) * self.dims].to_vec()
    }

    /// Plaintext of object block `g`, zero-padded.
    pub fn block_bytes(&self, g: usize) -> Vec<u8> {
        let mut out = vec![0u8; OBJECT_BLOCK_BYTES as usize];
        let lo = g * OBJECTS_PER_BLOCK;
        let hi = (lo + OBJECTS_PER_BLOCK).min(self.n_objects());
        for (j, c) in self.coords[lo * self.dims..hi * self.dims].iter().enumerate() {
            out[j * 4..j * 4 + 4].copy_from_slice(&c.to_le_bytes());
        }
        out
    }

    /// Every object block back to back.
    pub fn encode(&self) -> Vec<u8> {
        (0..self.n_blocks()).flat_map(|g| self.block_bytes(g)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KMeansConfig {
    pub k: usize,
    pub rounds: usize,
    pub banks: u32,
    pub crypto: Crypto,
    /// Stop early once a round changes no membership.
    pub stop_when_stable: bool,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        KMeansConfig {
            k: 26,
            rounds: 20,
            banks: 1,
            crypto: Crypto::Aead,
            stop_when_stable: false,
        }
    }
}

/// Per-bank kernel parameters. Encoded little-endian:
/// `k, dims, n_blocks, n_objects, objects_per_block, object_block_bytes` as
/// u32, the four block
/// offsets and strides and the protect range as u64, a crypto flag, then
/// the centroids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KernelParams {
    pub k: u32,
    pub dims: u32,
    pub n_blocks: u32,
    pub n_objects: u32,
    pub objects_per_block: u32,
    /// Plaintext bytes of one object block, at least `objects_per_block * dims * 4`.
    pub object_block_bytes: u32,
    pub objects_offset: u64,
    pub objects_stride: u64,
    pub members_offset: u64,
    pub members_stride: u64,
    pub protect: AccessRange,
    pub crypto: Crypto,
    pub centroids: Vec<i32>,
}

impl KernelParams {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::with_capacity(HEADER_LEN + self.centroids.len() * 4);
        for v in [
            self.k,
            self.dims,
            self.n_blocks,
            self.n_objects,
            self.objects_per_block,
            self.object_block_bytes,
        ] {
            b.extend_from_slice(&v.to_le_bytes());
        }
        for v in [
            self.objects_offset,
            self.objects_stride,
            self.members_offset,
            self.members_stride,
            self.protect.base(),
            self.protect.mask(),
        ] {
            b.extend_from_slice(&v.to_le_bytes());
        }
        b.push(matches!(self.crypto, Crypto::Aead) as u8);
        b.resize(HEADER_LEN, 0);
        for c in &self.centroids {
            b.extend_from_slice(&c.to_le_bytes());
        }
        b
    }

    pub fn parse(b: &[u8]) -> Result<Self, KernelTrap> {
        let bad = KernelTrap::BadParams;
        if b.len() < HEADER_LEN {
            return Err(bad("kmeans header truncated"));
        }
        let u32_at = |i: usize| u32::from_le_bytes(b[i..i + 4].try_into().expect("4"));
        let u64_at = |i: usize| u64::from_le_bytes(b[i..i + 8].try_into().expect("8"));
        let (k, dims) = (u32_at(0), u32_at(4));
        let crypto = match b[72] {
            0 => Crypto::Plain,
            1 => Crypto::Aead,
            _ => return Err(bad("kmeans crypto flag")),
        };
        let n = (k as usize)
            .checked_mul(dims as usize)
            .filter(|&n| k > 0 && dims > 0 && b.len() == HEADER_LEN + 4 * n)
            .ok_or(bad("kmeans centroid count"))?;
        let protect = AccessRange::new(u64_at(56), u64_at(64)).map_err(|_| bad("kmeans protect range"))?;
        Ok(KernelParams {
            k,
            dims,
            n_blocks: u32_at(8),
            n_objects: u32_at(12),
            objects_per_block: u32_at(16),
            object_block_bytes: u32_at(20),
            objects_offset: u64_at(24),
            objects_stride: u64_at(32),
            members_offset: u64_at(40),
            members_stride: u64_at(48),
            protect,
            crypto,
            centroids: (0..n)
                .map(|i| i32::from_le_bytes(b[HEADER_LEN + 4 * i..HEADER_LEN + 4 * i + 4].try_into().expect("4")))
                .collect(),
        })
    }
}

/// Partial results of one bank for one round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partial {
    pub counts: Vec<u64>,
    pub sums: Vec<i64>,
    pub changed: u64,
}

impl Partial {
    pub fn zero(k: usize, dims: usize) -> Self {
        Partial {
            counts: vec![0; k],
            sums: vec![0; k * dims],
            changed: 0,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::with_capacity(8 * (self.counts.len() + self.sums.len() + 1));
        self.counts.iter().for_each(|c| b.extend_from_slice(&c.to_le_bytes()));
        self.sums.iter().for_each(|s| b.extend_from_slice(&s.to_le_bytes()));
        b.extend_from_slice(&self.changed.to_le_bytes());
        b
    }

    pub fn parse(b: &[u8], k: usize, dims: usize) -> Option<Self> {
        if b.len() != 8 * (k + k * dims + 1) {
            return None;
        }
        let w = |i: usize| u64::from_le_bytes(b[8 * i..8 * i + 8].try_into().expect("8"));
        Some(Partial {
            counts: (0..k).map(w).collect(),
            sums: (k..k + k * dims).map(|i| w(i) as i64).collect(),
            changed: w(k + k * dims),
        })
    }

    fn absorb(&mut self, other: &Partial) {
        self.counts.iter_mut().zip(&other.counts).for_each(|(a, b)| *a += b);
        self.sums.iter_mut().zip(&other.sums).for_each(|(a, b)| *a += b);
        self.changed += other.changed;
    }
}

fn squared_distance(x: &[i32], c: &[i32]) -> u64 {
    x.iter()
        .zip(c)
        .map(|(&a, &b)| {
            let d = a as i64 - b as i64;
            (d * d) as u64
        })
        .sum()
}

/// Index of the nearest centroid; ties go to the lowest index.
pub fn nearest(x: &[i32], centroids: &[i32], dims: usize) -> u32 {
    let mut best = (u64::MAX, 0u32);
    for (i, c) in centroids.chunks_exact(dims).enumerate() {
        let d = squared_distance(x, c);
        if d < best.0 {
            best = (d, i as u32);
        }
    }
    best.1
}

/// New centroids from aggregated sums; an empty cluster keeps its centroid.
pub fn update_centroids(old: &[i32], total: &Partial, dims: usize) -> Vec<i32> {
    let mut out = old.to_vec();
    for (c, &n) in total.counts.iter().enumerate() {
        if n > 0 {
            for d in 0..dims {
                out[c * dims + d] = total.sums[c * dims + d].div_euclid(n as i64) as i32;
            }
        }
    }
    out
}

/// The device-side kernel.
#[derive(Debug, Clone, Copy, Default)]
pub struct KMeansKernel;

impl Kernel for KMeansKernel {
    fn run(&self, ctx: &mut KernelContext<'_>) -> Result<(), KernelTrap> {
        let p = KernelParams::parse(ctx.params())?;
        let (k, dims, opb) = (p.k as usize, p.dims as usize, p.objects_per_block as usize);
        let obj_bytes = p.object_block_bytes as u64;
        let mem_bytes = (opb * 4) as u64;
        if opb == 0 || obj_bytes < (opb * dims * 4) as u64 || p.n_objects as u64 > p.n_blocks as u64 * opb as u64 {
            return Err(KernelTrap::BadParams("kmeans block geometry"));
        }
        let (mode_in, mode_out) = match p.crypto {
            Crypto::Plain => (CryptoMode::Plain, CryptoMode::Plain),
            Crypto::Aead => (CryptoMode::Decrypt, CryptoMode::Encrypt),
        };
        let (lo, _) = ctx.local_window();
        let obj_buf = lo;
        let mem_buf = lo + obj_bytes.next_multiple_of(64);
        let costs = ctx.costs().clone();
        if !p.protect.is_disabled() {
            ctx.set_protect(p.protect)?;
        }
        let mut acc = Partial::zero(k, dims);
        let mut x = vec![0i32; dims];
        let mut raw = vec![0u8; dims * 4];
        for b in 0..p.n_blocks as u64 {
            ctx.consume_cycles(costs.batch_setup);
            let first = b as usize * opb;
            let n_in = opb.min(p.n_objects as usize - first.min(p.n_objects as usize));
            let obj_at = p.objects_offset + b * p.objects_stride;
            let mem_at = p.members_offset + b * p.members_stride;
            ctx.dma(DmaRequest::read(obj_at, obj_buf, obj_bytes, mode_in))?;
            ctx.dma(DmaRequest::read(mem_at, mem_buf, mem_bytes, mode_in))?;
            for j in 0..n_in {
                ctx.local_read(obj_buf + (j * dims * 4) as u64, &mut raw)?;
                for (d, v) in x.iter_mut().enumerate() {
                    *v = i32::from_le_bytes(raw[4 * d..4 * d + 4].try_into().expect("4"));
                }
                let mut m = [0u8; 4];
                let slot = mem_buf + 4 * j as u64;
                ctx.local_read(slot, &mut m)?;
                let best = nearest(&x, &p.centroids, dims);
                ctx.consume_cycles(k as u64 * costs.distance_eval + costs.membership_update + costs.accumulate);
                if u32::from_le_bytes(m) != best {
                    acc.changed += 1;
                }
                ctx.local_write(slot, &best.to_le_bytes())?;
                acc.counts[best as usize] += 1;
                for (s, &v) in acc.sums[best as usize * dims..][..dims].iter_mut().zip(&x) {
                    *s += v as i64;
                }
            }
            ctx.dma(DmaRequest::write(mem_at, mem_buf, mem_bytes, mode_out))?;
        }
        if !p.protect.is_disabled() {
            ctx.clear_protect()?;
        }
        ctx.post_result(&acc.to_bytes())
    }
}

pub fn kernel_image() -> KernelImage {
    KernelImage::new(KERNEL_NAME, 1, b"assign-and-accumulate".to_vec())
}

/// Time spent in one round.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoundReport {
    pub changed: u64,
    pub elapsed: SimTime,
    /// The slowest bank's kernel time and its parts.
    pub kernel: SimTime,
    pub compute: SimTime,
    pub dma: SimTime,
    pub aes: SimTime,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KMeansReport {
    pub centroids: Vec<i32>,
    pub memberships: Vec<u32>,
    pub rounds: Vec<RoundReport>,
    /// Host time from the first round's parameters to the last round's
    /// centroid update.
    pub total: SimTime,
    /// Host time spent setting the banks up.
    pub setup: SimTime,
}

impl KMeansReport {
    pub fn compute(&self) -> SimTime {
        self.rounds.iter().map(|r| r.compute).sum()
    }

    pub fn dma(&self) -> SimTime {
        self.rounds.iter().map(|r| r.dma).sum()
    }

    pub fn aes(&self) -> SimTime {
        self.rounds.iter().map(|r| r.aes).sum()
    }
}

struct BankState {
    handle: PimHandle,
    region: BankAllocation,
    n_blocks: u64,
    n_objects: u64,
    objects_stride: u64,
    members_offset: u64,
    members_stride: u64,
}

/// Where one bank's share of a run lives. Offsets are relative to the
/// region; the blocks of each kind sit at fixed strides.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Placement {
    pub bank: u32,
    pub region: BankAllocation,
    pub n_blocks: u64,
    pub objects_stride: u64,
    pub members_offset: u64,
    pub members_stride: u64,
}

/// A k-means run spread over the first `banks` banks of a system.
pub struct KMeansRun {
    cfg: KMeansConfig,
    n_objects: usize,
    dims: usize,
    centroids: Vec<i32>,
    banks: Vec<BankState>,
    rounds: Vec<RoundReport>,
    setup: SimTime,
    started: SimTime,
    bank_size: u64,
}

fn members_block_bytes() -> u64 {
    OBJECTS_PER_BLOCK as u64 * 4
}

/// Bank-side footprint of one block in each mode, rounded to whole rows.
fn strides(crypto: Crypto, row: u64) -> (u64, u64) {
    let extra = match crypto {
        Crypto::Plain => 0,
        Crypto::Aead => BLOCK_OVERHEAD,
    };
    (
        (OBJECT_BLOCK_BYTES + extra).next_multiple_of(row),
        (members_block_bytes() + extra).next_multiple_of(row),
    )
}

impl KMeansRun {
    /// Claims, attests and keys each bank, offloads the kernel and places
    /// that bank's share of the dataset and the initial memberships.
    pub fn setup(sys: &mut System, data: &Dataset, cfg: KMeansConfig, initial: &[i32]) -> Result<Self, KMeansError> {
        if data.dims() != DIMS {
            return Err(KMeansError::BadDataset);
        }
        if cfg.k == 0 || cfg.k > data.n_objects() {
            return Err(KMeansError::BadK(cfg.k));
        }
        if cfg.banks == 0 || cfg.banks > sys.n_banks() {
            return Err(KMeansError::BadBanks);
        }
        if initial.len() != cfg.k * DIMS {
            return Err(KMeansError::BadCentroids);
        }
        let start = sys.now();
        let trusted = sys.trusted_ek();
        let row = sys.config().row_buffer_bytes;
        let (os, ms) = strides(cfg.crypto, row);
        let n_blocks = data.n_blocks() as u64;
        let layout_obj = BlockLayout::with_block_size(OBJECT_BLOCK_BYTES, OBJECT_BLOCK_BYTES).map_err(HostError::from)?;
        let layout_mem = BlockLayout::with_block_size(members_block_bytes(), members_block_bytes()).map_err(HostError::from)?;
        let unassigned: Vec<u8> = (0..OBJECTS_PER_BLOCK).flat_map(|_| UNASSIGNED.to_le_bytes()).collect();
        let mut banks = Vec::with_capacity(cfg.banks as usize);
        for bank in 0..cfg.banks {
            let mine: Vec<u64> = (bank as u64..n_blocks).step_by(cfg.banks as usize).collect();
            let nb = mine.len() as u64;
            let n_obj: u64 = mine
                .iter()
                .map(|&g| (data.n_objects() as u64 - g * OBJECTS_PER_BLOCK as u64).min(OBJECTS_PER_BLOCK as u64))
                .sum();
            let mut h = PimHandle::init(sys, bank)?;
            h.attest_and_establish(sys, &trusted)?;
            let image = kernel_image();
            let staging = h.alloc(sys, image.to_bytes().len() as u64 + BLOCK_OVERHEAD)?;
            h.load_kernel(sys, &staging, &image)?;
            let members_offset = (nb * os).next_multiple_of(row);
            let region_size = (members_offset + nb * ms).max(1).next_power_of_two();
            let region = h.alloc_protectable(sys, region_size)?;
            for (i, &g) in mine.iter().enumerate() {
                let i = i as u64;
                let block = data.block_bytes(g as usize);
                match cfg.crypto {
                    Crypto::Plain => {
                        h.write_raw(sys, &region, i * os, &block)?;
                        h.write_raw(sys, &region, members_offset + i * ms, &unassigned)?;
                    }
                    Crypto::Aead => {
                        let view = sub_region(&region, i * os, layout_obj.wire_size());
                        h.load_data(sys, &view, &block, &layout_obj)?;
                        let view = sub_region(&region, members_offset + i * ms, layout_mem.wire_size());
                        h.load_data(sys, &view, &unassigned, &layout_mem)?;
                    }
                }
            }
            banks.push(BankState {
                handle: h,
                region,
                n_blocks: nb,
                n_objects: n_obj,
                objects_stride: os,
                members_offset,
                members_stride: ms,
            });
        }
        let now = sys.now();
        Ok(KMeansRun {
            cfg,
            n_objects: data.n_objects(),
            dims: data.dims(),
            centroids: initial.to_vec(),
            banks,
            rounds: Vec::new(),
            setup: now - start,
            started: now,
            bank_size: sys.config().bank_size_bytes,
        })
    }

    pub fn centroids(&self) -> &[i32] {
        &self.centroids
    }

    pub fn rounds(&self) -> &[RoundReport] {
        &self.rounds
    }

    pub fn placements(&self) -> Vec<Placement> {
        self.banks
            .iter()
            .map(|b| Placement {
                bank: b.handle.bank(),
                region: b.region,
                n_blocks: b.n_blocks,
                objects_stride: b.objects_stride,
                members_offset: b.members_offset,
                members_stride: b.members_stride,
            })
            .collect()
    }

    fn params_for(&self, b: &BankState) -> Result<KernelParams, KMeansError> {
        let protect = match self.cfg.crypto {
            Crypto::Plain => AccessRange::DISABLED,
            Crypto::Aead => AccessRange::for_region(b.region.offset, b.region.size, self.bank_size)
                .map_err(HostError::from)?,
        };
        Ok(KernelParams {
            k: self.cfg.k as u32,
            dims: self.dims as u32,
            n_blocks: b.n_blocks as u32,
            n_objects: b.n_objects as u32,
            objects_per_block: OBJECTS_PER_BLOCK as u32,
            object_block_bytes: OBJECT_BLOCK_BYTES as u32,
            objects_offset: b.region.offset,
            objects_stride: b.objects_stride,
            members_offset: b.region.offset + b.members_offset,
            members_stride: b.members_stride,
            protect,
            crypto: self.cfg.crypto,
            centroids: self.centroids.clone(),
        })
    }

    /// One assignment and update round.
    pub fn step(&mut self, sys: &mut System) -> Result<RoundReport, KMeansError> {
        let t0 = sys.now();
        for i in 0..self.banks.len() {
            let params = self.params_for(&self.banks[i])?.to_bytes();
            let h = &mut self.banks[i].handle;
            h.offload_params_long(sys, &params)?;
            h.execute(sys)?;
        }
        let (k, dims) = (self.cfg.k, self.dims);
        let mut total = Partial::zero(k, dims);
        let mut slowest = (SimTime::ZERO, crate::pim::KernelStats::default());
        let costs = sys.config().host_costs.clone();
        for b in &mut self.banks {
            let res = b.handle.wait(sys)?;
            let part = Partial::parse(&res, k, dims).ok_or(KMeansError::BadResult)?;
            sys.host_cycles(costs.aggregate_add * (k + k * dims) as u64);
            total.absorb(&part);
            let st = sys.last_kernel_stats(b.handle.bank()).map_err(HostError::from)?.unwrap_or_default();
            if st.total() >= slowest.0 {
                slowest = (st.total(), st);
            }
        }
        sys.host_cycles(costs.centroid_divide * (k * dims) as u64);
        self.centroids = update_centroids(&self.centroids, &total, dims);
        let r = RoundReport {
            changed: total.changed,
            elapsed: sys.now() - t0,
            kernel: slowest.0,
            compute: slowest.1.compute,
            dma: slowest.1.dma,
            aes: slowest.1.aes,
        };
        self.rounds.push(r);
        Ok(r)
    }

    /// Runs the configured number of rounds.
    pub fn run(&mut self, sys: &mut System) -> Result<(), KMeansError> {
        while self.rounds.len() < self.cfg.rounds {
            let r = self.step(sys)?;
            if self.cfg.stop_when_stable && r.changed == 0 {
                break;
            }
        }
        Ok(())
    }

    /// Reads the final memberships back, destroys the sessions and
    /// releases the banks.
    pub fn finish(self, sys: &mut System) -> Result<KMeansReport, KMeansError> {
        let total = sys.now() - self.started;
        let n_blocks = self.n_objects.div_ceil(OBJECTS_PER_BLOCK);
        let mut per_bank = Vec::with_capacity(self.banks.len());
        let layout = BlockLayout::with_block_size(members_block_bytes(), members_block_bytes()).map_err(HostError::from)?;
        for mut b in self.banks {
            let mut blocks = Vec::with_capacity(b.n_blocks as usize);
            for i in 0..b.n_blocks {
                let at = b.members_offset + i * b.members_stride;
                let bytes = match self.cfg.crypto {
                    Crypto::Plain => b.handle.read_raw(sys, &b.region, at, members_block_bytes())?,
                    Crypto::Aead => {
                        let view = sub_region(&b.region, at, layout.wire_size());
                        b.handle.get_output(sys, &view, &layout, layout.wire_size())?
                    }
                };
                blocks.push(bytes);
            }
            b.handle.destroy(sys)?;
            b.handle.release(sys);
            per_bank.push(blocks);
        }
        let n_banks = per_bank.len();
        let mut memberships = Vec::with_capacity(self.n_objects);
        for g in 0..n_blocks {
            let block = &per_bank[g % n_banks][g / n_banks];
            let n_in = OBJECTS_PER_BLOCK.min(self.n_objects - g * OBJECTS_PER_BLOCK);
            memberships.extend((0..n_in).map(|j| u32::from_le_bytes(block[4 * j..4 * j + 4].try_into().expect("4"))));
        }
        Ok(KMeansReport {
            centroids: self.centroids,
            memberships,
            rounds: self.rounds,
            total,
            setup: self.setup,
        })
    }
}

fn sub_region(a: &BankAllocation, at: u64, size: u64) -> BankAllocation {
    BankAllocation {
        host_addr: a.host_addr + at,
        offset: a.offset + at,
        size,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HostOnlyReport {
    pub centroids: Vec<i32>,
    pub memberships: Vec<u32>,
    pub rounds: usize,
    pub total: SimTime,
}

/// The same algorithm run entirely by the host, streaming the plaintext
/// dataset and memberships from one bank's DRAM each round.
pub fn host_only(cfg: &SimConfig, data: &Dataset, k: usize, rounds: usize, initial: &[i32]) -> Result<HostOnlyReport, KMeansError> {
    let dims = data.dims();
    if k == 0 || k > data.n_objects() {
        return Err(KMeansError::BadK(k));
    }
    if initial.len() != k * dims {
        return Err(KMeansError::BadCentroids);
    }
    let timing = DramTiming::from_config(cfg);
    let costs = &cfg.host_costs;
    let n_blocks = data.n_blocks() as u64;
    let members_base = n_blocks * OBJECT_BLOCK_BYTES;
    let mut centroids = initial.to_vec();
    let mut memberships = vec![UNASSIGNED; data.n_objects()];
    let mut total = SimTime::ZERO;
    for _ in 0..rounds {
        let mut rb = RowBuffer::default();
        let mut acc = Partial::zero(k, dims);
        for b in 0..n_blocks {
            total += timing.access(&mut rb, b * OBJECT_BLOCK_BYTES, OBJECT_BLOCK_BYTES);
            let m_at = members_base + b * members_block_bytes();
            total += timing.access(&mut rb, m_at, members_block_bytes());
            total += timing.access(&mut rb, m_at, members_block_bytes());
        }
        for (i, m) in memberships.iter_mut().enumerate() {
            let x = data.object(i);
            let best = nearest(x, &centroids, dims);
            if *m != best {
                acc.changed += 1;
            }
            *m = best;
            acc.counts[best as usize] += 1;
            for (s, &v) in acc.sums[best as usize * dims..][..dims].iter_mut().zip(x) {
                *s += v as i64;
            }
        }
        let cycles = data.n_objects() as u64
            * (k as u64 * costs.distance_eval + costs.membership_update + dims as u64 * costs.aggregate_add)
            + (k * dims) as u64 * costs.centroid_divide;
        total += cfg.host_cycles(cycles);
        centroids = update_centroids(&centroids, &acc, dims);
    }
    Ok(HostOnlyReport {
        centroids,
        memberships,
        rounds,
        total,
    })
}

/// Runs k-means on a fresh system built from `sys_cfg`.
pub fn run(sys_cfg: &SimConfig, data: &Dataset, cfg: KMeansConfig, initial: &[i32]) -> Result<KMeansReport, KMeansError> {
    let mut sys = System::new(sys_cfg.clone()).map_err(HostError::from)?;
    let mut r = KMeansRun::setup(&mut sys, data, cfg, initial)?;
    r.run(&mut sys)?;
    r.finish(&mut sys)
}
