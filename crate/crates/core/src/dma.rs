//! The AES-capable DMA engine and the encrypted block format.
//!
//! A block at rest is `iv ‖ ciphertext ‖ tag`, 28 bytes longer than its
//! payload. The engine moves data between its bank and the PIM core's local
//! memory, optionally opening or sealing blocks on the way. Its latency is
//! the serial sum of the link transfer, the bank-side DRAM accesses and one
//! AES cycle per 16 wire bytes.

use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;
use zeroize::Zeroize;

use crate::config::SimConfig;
use crate::crypto::{
    aead_decrypt_in_place, aead_encrypt_in_place, Iv, SymmetricKey, Tag, IV_LEN, TAG_LEN,
};
use crate::memory::{Bank, DramTiming, SparseMemory};
use crate::time::{Bandwidth, SimTime};

/// Bytes an encrypted block adds to its payload.
pub const BLOCK_OVERHEAD: u64 = (IV_LEN + TAG_LEN) as u64;
/// Bytes the AES engine consumes per cycle.
pub const AES_CHUNK: u64 = 16;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DmaError {
    #[error("invalid block layout: {0}")]
    Layout(&'static str),
    #[error("block authentication failed")]
    Authentication,
    #[error("key slot {0:?} is empty")]
    KeySlotEmpty(KeySlot),
    #[error("crypto mode {0:?} is not valid for direction {1:?}")]
    ModeMismatch(CryptoMode, DmaDirection),
    #[error("bank range {offset:#x}+{len} is out of bounds")]
    BankBounds { offset: u64, len: u64 },
    #[error("local range {offset:#x}+{len} is out of bounds")]
    LocalBounds { offset: u64, len: u64 },
    #[error("only the privileged runtime may program key slots")]
    Unauthorized,
    #[error("block of {got} bytes does not match wire size {expected}")]
    WireSize { got: usize, expected: u64 },
}

/// Partitioning of a dataset into independently encrypted blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockLayout {
    pub size_available: u64,
    pub n_split: u64,
    pub size_block: u64,
    pub size_data: u64,
    pub n_blocks: u64,
}

impl BlockLayout {
    /// Splits `size_available` bytes of local memory into `n_split` equal
    /// windows, each holding one block with its IV and tag. A remainder is
    /// left unused.
    pub fn from_local_memory(
        size_available: u64,
        n_split: u64,
        size_data: u64,
    ) -> Result<Self, DmaError> {
        if n_split == 0 {
            return Err(DmaError::Layout("n_split must be positive"));
        }
        let overhead = n_split
            .checked_mul(BLOCK_OVERHEAD)
            .ok_or(DmaError::Layout("n_split too large"))?;
        let size_block = size_available
            .checked_sub(overhead)
            .map(|free| free / n_split)
            .filter(|&b| b > 0)
            .ok_or(DmaError::Layout("no room for payload after IV and tag"))?;
        Ok(BlockLayout {
            size_available,
            n_split,
            size_block,
            size_data,
            n_blocks: size_data.div_ceil(size_block),
        })
    }

    /// A layout with a chosen payload size, one block per window.
    pub fn with_block_size(size_block: u64, size_data: u64) -> Result<Self, DmaError> {
        if size_block == 0 {
            return Err(DmaError::Layout("size_block must be positive"));
        }
        Ok(BlockLayout {
            size_available: size_block + BLOCK_OVERHEAD,
            n_split: 1,
            size_block,
            size_data,
            n_blocks: size_data.div_ceil(size_block),
        })
    }

    pub fn wire_size(&self) -> u64 {
        self.size_block + BLOCK_OVERHEAD
    }

    pub fn encoded_size(&self) -> u64 {
        self.n_blocks * self.wire_size()
    }

    /// Payload bytes of block `i` that carry data; the rest is padding.
    pub fn data_in_block(&self, i: u64) -> u64 {
        let start = i * self.size_block;
        self.size_data.saturating_sub(start).min(self.size_block)
    }
}

/// One block as stored in bank memory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncryptedBlock {
    pub iv: Iv,
    pub ciphertext: Vec<u8>,
    pub tag: Tag,
}

impl EncryptedBlock {
    pub fn wire_size(&self) -> u64 {
        self.ciphertext.len() as u64 + BLOCK_OVERHEAD
    }

    pub fn seal(key: &SymmetricKey, iv: Iv, plaintext: &[u8]) -> Self {
        let mut ciphertext = plaintext.to_vec();
        let tag = aead_encrypt_in_place(key, &iv, &mut ciphertext, &[]);
        EncryptedBlock {
            iv,
            ciphertext,
            tag,
        }
    }

    pub fn open(&self, key: &SymmetricKey) -> Result<Vec<u8>, DmaError> {
        let mut pt = self.ciphertext.clone();
        aead_decrypt_in_place(key, &self.iv, &mut pt, &self.tag, &[])
            .map_err(|_| DmaError::Authentication)?;
        Ok(pt)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.wire_size() as usize);
        out.extend_from_slice(&self.iv.0);
        out.extend_from_slice(&self.ciphertext);
        out.extend_from_slice(&self.tag.0);
        out
    }

    pub fn from_bytes(wire: &[u8]) -> Result<Self, DmaError> {
        if wire.len() < BLOCK_OVERHEAD as usize {
            return Err(DmaError::WireSize {
                got: wire.len(),
                expected: BLOCK_OVERHEAD,
            });
        }
        let (iv, rest) = wire.split_at(IV_LEN);
        let (ct, tag) = rest.split_at(rest.len() - TAG_LEN);
        Ok(EncryptedBlock {
            iv: Iv(iv.try_into().expect("split at IV_LEN")),
            ciphertext: ct.to_vec(),
            tag: Tag(tag.try_into().expect("split at TAG_LEN")),
        })
    }
}

/// Issuer of unique IVs under one key: a 4-byte origin followed by a
/// big-endian 64-bit counter. Distinct writers of the same key use distinct
/// origins.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IvCounter {
    origin: u32,
    next: u64,
}

impl IvCounter {
    /// Origin used by the host enclave.
    pub const HOST: u32 = 0;
    /// Origin used when datasets are encrypted ahead of time.
    pub const PREPROCESS: u32 = 0xFFFF_FFFF;

    pub fn new(origin: u32) -> Self {
        IvCounter { origin, next: 0 }
    }

    /// Origin of the DMA engine of `bank`.
    pub fn dma_origin(bank: u32) -> u32 {
        0x8000_0000 | bank
    }

    pub fn next_iv(&mut self) -> Iv {
        let mut iv = [0u8; IV_LEN];
        iv[..4].copy_from_slice(&self.origin.to_be_bytes());
        iv[4..].copy_from_slice(&self.next.to_be_bytes());
        self.next = self.next.checked_add(1).expect("IV space exhausted");
        Iv(iv)
    }

    pub fn issued(&self) -> u64 {
        self.next
    }
}

/// Encrypts `data` block by block; the last block is zero-padded to the
/// full payload size so every block has the same wire size.
pub fn encode_blocks(
    data: &[u8],
    layout: &BlockLayout,
    key: &SymmetricKey,
    ivs: &mut IvCounter,
) -> Result<Vec<EncryptedBlock>, DmaError> {
    if layout.size_block == 0 {
        return Err(DmaError::Layout("size_block must be positive"));
    }
    if data.len() as u64 != layout.size_data {
        return Err(DmaError::Layout("data length differs from size_data"));
    }
    let bs = layout.size_block as usize;
    let mut buf = vec![0u8; bs];
    let blocks = data
        .chunks(bs)
        .map(|chunk| {
            buf[..chunk.len()].copy_from_slice(chunk);
            buf[chunk.len()..].fill(0);
            EncryptedBlock::seal(key, ivs.next_iv(), &buf)
        })
        .collect();
    buf.zeroize();
    Ok(blocks)
}

/// Inverse of [`encode_blocks`], stripping the padding.
pub fn decode_blocks(
    blocks: &[EncryptedBlock],
    layout: &BlockLayout,
    key: &SymmetricKey,
) -> Result<Vec<u8>, DmaError> {
    if blocks.len() as u64 != layout.n_blocks {
        return Err(DmaError::Layout("block count differs from layout"));
    }
    let mut out = Vec::with_capacity(layout.size_data as usize);
    for (i, b) in blocks.iter().enumerate() {
        if b.ciphertext.len() as u64 != layout.size_block {
            return Err(DmaError::WireSize {
                got: b.wire_size() as usize,
                expected: layout.wire_size(),
            });
        }
        let pt = b.open(key)?;
        out.extend_from_slice(&pt[..layout.data_in_block(i as u64) as usize]);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DmaDirection {
    /// Bank memory to local memory.
    BankRead,
    /// Local memory to bank memory.
    BankWrite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CryptoMode {
    Plain,
    Decrypt,
    Encrypt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KeySlot {
    Session,
    Data,
}

/// Who is programming a key slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Privilege {
    Runtime,
    Kernel,
}

/// One transfer. `size` is the plaintext length; in a crypto mode the bank
/// side spans `size + 28` bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DmaRequest {
    pub bank_offset: u64,
    pub local_offset: u64,
    pub size: u64,
    pub direction: DmaDirection,
    pub crypto: CryptoMode,
    pub key_slot: KeySlot,
}

impl DmaRequest {
    pub fn read(bank_offset: u64, local_offset: u64, size: u64, crypto: CryptoMode) -> Self {
        DmaRequest {
            bank_offset,
            local_offset,
            size,
            direction: DmaDirection::BankRead,
            crypto,
            key_slot: KeySlot::Data,
        }
    }

    pub fn write(bank_offset: u64, local_offset: u64, size: u64, crypto: CryptoMode) -> Self {
        DmaRequest {
            bank_offset,
            local_offset,
            size,
            direction: DmaDirection::BankWrite,
            crypto,
            key_slot: KeySlot::Data,
        }
    }

    pub fn wire_size(&self) -> u64 {
        match self.crypto {
            CryptoMode::Plain => self.size,
            CryptoMode::Decrypt | CryptoMode::Encrypt => self.size + BLOCK_OVERHEAD,
        }
    }

    fn validate(&self) -> Result<(), DmaError> {
        match (self.crypto, self.direction) {
            (CryptoMode::Decrypt, DmaDirection::BankWrite)
            | (CryptoMode::Encrypt, DmaDirection::BankRead) => {
                Err(DmaError::ModeMismatch(self.crypto, self.direction))
            }
            _ => Ok(()),
        }
    }
}

/// Latency of one transfer, split into its terms.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DmaTiming {
    pub link: SimTime,
    pub dram: SimTime,
    pub aes: SimTime,
}

impl DmaTiming {
    pub fn total(&self) -> SimTime {
        self.link + self.dram + self.aes
    }
}

#[derive(Debug, Clone)]
pub struct DmaEngine {
    session: Option<SymmetricKey>,
    data: Option<SymmetricKey>,
    ivs: IvCounter,
    aes_period: SimTime,
    bandwidth: Bandwidth,
}

impl DmaEngine {
    pub fn new(cfg: &SimConfig, bank: u32) -> Self {
        DmaEngine {
            session: None,
            data: None,
            ivs: IvCounter::new(IvCounter::dma_origin(bank)),
            aes_period: cfg.aes_cycle(),
            bandwidth: cfg.dma_raw_bandwidth,
        }
    }

    pub fn program_key(
        &mut self,
        who: Privilege,
        slot: KeySlot,
        key: SymmetricKey,
    ) -> Result<(), DmaError> {
        if who != Privilege::Runtime {
            return Err(DmaError::Unauthorized);
        }
        *self.slot_mut(slot) = Some(key);
        Ok(())
    }

    /// Empties both slots; the keys are zeroized on drop.
    pub fn clear_keys(&mut self) {
        self.session = None;
        self.data = None;
    }

    pub fn has_key(&self, slot: KeySlot) -> bool {
        self.slot(slot).is_some()
    }

    pub(crate) fn slot(&self, slot: KeySlot) -> Option<&SymmetricKey> {
        match slot {
            KeySlot::Session => self.session.as_ref(),
            KeySlot::Data => self.data.as_ref(),
        }
    }

    fn slot_mut(&mut self, slot: KeySlot) -> &mut Option<SymmetricKey> {
        match slot {
            KeySlot::Session => &mut self.session,
            KeySlot::Data => &mut self.data,
        }
    }

    pub fn aes_time(&self, wire_bytes: u64) -> SimTime {
        self.aes_period
            .times(wire_bytes.div_ceil(AES_CHUNK))
            .expect("simulated time overflow")
    }

    /// Link and AES terms of a request; the DRAM term depends on bank state.
    pub fn fixed_terms(&self, req: &DmaRequest) -> (SimTime, SimTime) {
        let wire = req.wire_size();
        let aes = match req.crypto {
            CryptoMode::Plain => SimTime::ZERO,
            _ => self.aes_time(wire),
        };
        (self.bandwidth.transfer_time(wire), aes)
    }

    /// Performs `req`. On an authentication failure the local destination is
    /// zeroed and nothing else changes except the row buffer touched by the
    /// bank read.
    pub fn transfer(
        &mut self,
        bank: &mut Bank,
        timing: &DramTiming,
        local: &mut SparseMemory,
        req: &DmaRequest,
    ) -> Result<DmaTiming, DmaError> {
        req.validate()?;
        let wire = req.wire_size();
        if !bank.contains(req.bank_offset, wire) {
            return Err(DmaError::BankBounds {
                offset: req.bank_offset,
                len: wire,
            });
        }
        if !local.contains(req.local_offset, req.size) {
            return Err(DmaError::LocalBounds {
                offset: req.local_offset,
                len: req.size,
            });
        }
        if req.crypto != CryptoMode::Plain && !self.has_key(req.key_slot) {
            return Err(DmaError::KeySlotEmpty(req.key_slot));
        }
        let (link, aes) = self.fixed_terms(req);
        let size = req.size as usize;
        let dram = match (req.direction, req.crypto) {
            (DmaDirection::BankRead, CryptoMode::Plain) => {
                let mut buf = vec![0u8; size];
                let t = bank.pim_read(timing, req.bank_offset, &mut buf);
                local.write(req.local_offset, &buf);
                t
            }
            (DmaDirection::BankRead, _) => {
                let mut buf = vec![0u8; wire as usize];
                let t = bank.pim_read(timing, req.bank_offset, &mut buf);
                let block = EncryptedBlock::from_bytes(&buf)?;
                let key = self.slot(req.key_slot).expect("checked above");
                match block.open(key) {
                    Ok(mut pt) => {
                        local.write(req.local_offset, &pt);
                        pt.zeroize();
                    }
                    Err(e) => {
                        local.fill(req.local_offset, req.size, 0);
                        return Err(e);
                    }
                }
                t
            }
            (DmaDirection::BankWrite, CryptoMode::Plain) => {
                let mut buf = vec![0u8; size];
                local.read(req.local_offset, &mut buf);
                bank.pim_write(timing, req.bank_offset, &buf)
            }
            (DmaDirection::BankWrite, _) => {
                let mut buf = vec![0u8; size];
                local.read(req.local_offset, &mut buf);
                let iv = self.ivs.next_iv();
                let key = self.slot(req.key_slot).expect("checked above");
                let block = EncryptedBlock::seal(key, iv, &buf);
                buf.zeroize();
                bank.pim_write(timing, req.bank_offset, &block.to_bytes())
            }
        };
        Ok(DmaTiming { link, dram, aes })
    }

    /// Reads and opens one block from the bank without touching local
    /// memory, for staging that must not disturb it on failure.
    pub fn fetch_block(
        &mut self,
        bank: &mut Bank,
        timing: &DramTiming,
        bank_offset: u64,
        wire_len: u64,
        slot: KeySlot,
    ) -> Result<(Vec<u8>, DmaTiming), DmaError> {
        if wire_len < BLOCK_OVERHEAD {
            return Err(DmaError::WireSize {
                got: wire_len as usize,
                expected: BLOCK_OVERHEAD,
            });
        }
        if !bank.contains(bank_offset, wire_len) {
            return Err(DmaError::BankBounds {
                offset: bank_offset,
                len: wire_len,
            });
        }
        let key = self.slot(slot).ok_or(DmaError::KeySlotEmpty(slot))?;
        let mut buf = vec![0u8; wire_len as usize];
        let dram = bank.pim_read(timing, bank_offset, &mut buf);
        let pt = EncryptedBlock::from_bytes(&buf)?.open(key)?;
        let timing = DmaTiming {
            link: self.bandwidth.transfer_time(wire_len),
            dram,
            aes: self.aes_time(wire_len),
        };
        Ok((pt, timing))
    }
}
