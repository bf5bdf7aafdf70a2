//! Preprocessed encrypted dataset files.
//!
//! A 40-byte little-endian header followed by the blocks' wire bytes
//! (`iv ‖ ciphertext ‖ tag` each), back to back:
//!
//! | offset | size | field |
//! |---|---|---|
//! | 0 | 4 | magic `PEDS` |
//! | 4 | 2 | format version (1) |
//! | 6 | 2 | dimensions per object, 0 for opaque data |
//! | 8 | 4 | payload bytes per block (`size_block`) |
//! | 12 | 4 | objects per block |
//! | 16 | 8 | plaintext bytes (`size_data`) |
//! | 24 | 8 | object count |
//! | 32 | 4 | block count |
//! | 36 | 4 | reserved, zero |
//!
//! The header is not authenticated; a reader cross-checks it against the
//! block sizes and each block is authenticated separately on decryption.

use pim_enclave::crypto::SymmetricKey;
use pim_enclave::dma::{self, BlockLayout, DmaError, EncryptedBlock, IvCounter};
use pim_enclave::workloads::kmeans::{Dataset, KMeansError, OBJECTS_PER_BLOCK, OBJECT_BLOCK_BYTES};
use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"PEDS";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 40;

#[derive(Debug, Error)]
pub enum PedsError {
    #[error("not a PEDS file")]
    Magic,
    #[error("unsupported PEDS version {0}")]
    Version(u16),
    #[error("file is truncated")]
    Truncated,
    #[error("header is inconsistent: {0}")]
    Header(&'static str),
    #[error(transparent)]
    Dma(#[from] DmaError),
    #[error(transparent)]
    Dataset(#[from] KMeansError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PedsHeader {
    pub version: u16,
    pub dims: u16,
    pub size_block: u32,
    pub objects_per_block: u32,
    pub size_data: u64,
    pub n_objects: u64,
    pub n_blocks: u32,
}

impl PedsHeader {
    pub fn to_bytes(&self) -> [u8; HEADER_LEN] {
        let mut h = [0u8; HEADER_LEN];
        h[0..4].copy_from_slice(&MAGIC);
        h[4..6].copy_from_slice(&self.version.to_le_bytes());
        h[6..8].copy_from_slice(&self.dims.to_le_bytes());
        h[8..12].copy_from_slice(&self.size_block.to_le_bytes());
        h[12..16].copy_from_slice(&self.objects_per_block.to_le_bytes());
        h[16..24].copy_from_slice(&self.size_data.to_le_bytes());
        h[24..32].copy_from_slice(&self.n_objects.to_le_bytes());
        h[32..36].copy_from_slice(&self.n_blocks.to_le_bytes());
        h
    }

    pub fn parse(b: &[u8]) -> Result<Self, PedsError> {
        let h = b.get(..HEADER_LEN).ok_or(PedsError::Truncated)?;
        if h[0..4] != MAGIC {
            return Err(PedsError::Magic);
        }
        let u16_at = |i: usize| u16::from_le_bytes([h[i], h[i + 1]]);
        let u32_at = |i: usize| u32::from_le_bytes(h[i..i + 4].try_into().expect("4 bytes"));
        let u64_at = |i: usize| u64::from_le_bytes(h[i..i + 8].try_into().expect("8 bytes"));
        let version = u16_at(4);
        if version != VERSION {
            return Err(PedsError::Version(version));
        }
        if u32_at(36) != 0 {
            return Err(PedsError::Header("reserved field is not zero"));
        }
        Ok(PedsHeader {
            version,
            dims: u16_at(6),
            size_block: u32_at(8),
            objects_per_block: u32_at(12),
            size_data: u64_at(16),
            n_objects: u64_at(24),
            n_blocks: u32_at(32),
        })
    }

    pub fn layout(&self) -> Result<BlockLayout, PedsError> {
        let layout = BlockLayout::with_block_size(self.size_block as u64, self.size_data)?;
        if layout.n_blocks != self.n_blocks as u64 {
            return Err(PedsError::Header("block count does not match size_data"));
        }
        Ok(layout)
    }
}

/// A parsed file: its header and still-encrypted blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PedsFile {
    pub header: PedsHeader,
    pub blocks: Vec<EncryptedBlock>,
}

impl PedsFile {
    /// Encrypts a k-means dataset, one object block per encrypted block,
    /// with IVs from the preprocessing origin.
    pub fn from_dataset(data: &Dataset, key: &SymmetricKey) -> Result<Self, PedsError> {
        let plain = data.encode();
        let layout = BlockLayout::with_block_size(OBJECT_BLOCK_BYTES, plain.len() as u64)?;
        let mut ivs = IvCounter::new(IvCounter::PREPROCESS);
        let blocks = dma::encode_blocks(&plain, &layout, key, &mut ivs)?;
        let header = PedsHeader {
            version: VERSION,
            dims: u16::try_from(data.dims()).map_err(|_| PedsError::Header("too many dimensions"))?,
            size_block: OBJECT_BLOCK_BYTES as u32,
            objects_per_block: OBJECTS_PER_BLOCK as u32,
            size_data: layout.size_data,
            n_objects: data.n_objects() as u64,
            n_blocks: u32::try_from(blocks.len()).map_err(|_| PedsError::Header("too many blocks"))?,
        };
        Ok(PedsFile { header, blocks })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.header.to_bytes().to_vec();
        for b in &self.blocks {
            out.extend_from_slice(&b.to_bytes());
        }
        out
    }

    pub fn parse(bytes: &[u8]) -> Result<Self, PedsError> {
        let header = PedsHeader::parse(bytes)?;
        let layout = header.layout()?;
        let wire = layout.wire_size() as usize;
        let body = &bytes[HEADER_LEN..];
        let expected = wire
            .checked_mul(header.n_blocks as usize)
            .ok_or(PedsError::Header("block count overflows"))?;
        if body.len() < expected {
            return Err(PedsError::Truncated);
        }
        if body.len() > expected {
            return Err(PedsError::Header("trailing bytes after the last block"));
        }
        let blocks = body
            .chunks_exact(wire)
            .map(EncryptedBlock::from_bytes)
            .collect::<Result<_, _>>()?;
        Ok(PedsFile { header, blocks })
    }

    /// Decrypts every block and strips the padding.
    pub fn decrypt(&self, key: &SymmetricKey) -> Result<Vec<u8>, PedsError> {
        Ok(dma::decode_blocks(&self.blocks, &self.header.layout()?, key)?)
    }

    /// Decrypts a file written by [`from_dataset`](Self::from_dataset).
    pub fn decrypt_dataset(&self, key: &SymmetricKey) -> Result<Dataset, PedsError> {
        let h = &self.header;
        let dims = h.dims as usize;
        let opb = h.objects_per_block as usize;
        if dims == 0 || opb == 0 || opb * dims * 4 > h.size_block as usize {
            return Err(PedsError::Header("not an object dataset"));
        }
        if (h.n_objects as usize).div_ceil(opb) != h.n_blocks as usize {
            return Err(PedsError::Header("object count does not match block count"));
        }
        let plain = self.decrypt(key)?;
        let mut coords = Vec::with_capacity(h.n_objects as usize * dims);
        let mut left = h.n_objects as usize;
        for block in plain.chunks(h.size_block as usize) {
            let here = left.min(opb);
            coords.extend(
                block[..here * dims * 4]
                    .chunks_exact(4)
                    .map(|c| i32::from_le_bytes(c.try_into().expect("4 bytes"))),
            );
            left -= here;
        }
        Ok(Dataset::new(dims, coords)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key(b: u8) -> SymmetricKey {
        SymmetricKey::from_bytes([b; 16])
    }

    #[test]
    fn round_trip() {
        let data = Dataset::synthetic(3, 300, 4);
        let f = PedsFile::from_dataset(&data, &key(7)).unwrap();
        assert_eq!(f.header.n_blocks, 3);
        let bytes = f.to_bytes();
        assert_eq!(&bytes[..4], b"PEDS");
        assert_eq!(bytes.len(), HEADER_LEN + 3 * (8192 + 28));
        let back = PedsFile::parse(&bytes).unwrap();
        assert_eq!(back, f);
        assert_eq!(back.decrypt_dataset(&key(7)).unwrap(), data);
        assert!(matches!(back.decrypt_dataset(&key(8)), Err(PedsError::Dma(DmaError::Authentication))));
    }

    #[test]
    fn rejects_malformed() {
        let data = Dataset::synthetic(3, 200, 4);
        let bytes = PedsFile::from_dataset(&data, &key(1)).unwrap().to_bytes();
        assert!(matches!(PedsFile::parse(&bytes[..30]), Err(PedsError::Truncated)));
        assert!(matches!(PedsFile::parse(&bytes[..bytes.len() - 1]), Err(PedsError::Truncated)));
        let mut b = bytes.clone();
        b[0] = b'X';
        assert!(matches!(PedsFile::parse(&b), Err(PedsError::Magic)));
        let mut b = bytes.clone();
        b[4] = 9;
        assert!(matches!(PedsFile::parse(&b), Err(PedsError::Version(9))));
        let mut b = bytes.clone();
        b[32] = 5;
        assert!(matches!(PedsFile::parse(&b), Err(PedsError::Header(_))));
        let mut b = bytes;
        b.push(0);
        assert!(matches!(PedsFile::parse(&b), Err(PedsError::Header(_))));
    }

    #[test]
    fn ciphertext_differs_from_plaintext() {
        let data = Dataset::synthetic(5, 127, 2);
        let f = PedsFile::from_dataset(&data, &key(2)).unwrap();
        assert_ne!(f.blocks[0].ciphertext, data.encode());
        assert_eq!(&f.blocks[0].iv.0[..4], &IvCounter::PREPROCESS.to_be_bytes());
    }
}
