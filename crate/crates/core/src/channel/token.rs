//! Attestation tokens.
//!
//! A token binds the device identity, the bank, the key-encapsulation public
//! key, the ROM version, the host's nonce, a fresh device challenge and the
//! session epoch under one endorsement-key signature. The challenge and epoch
//! go into the associated data of the next session-key wrap, so a wrap is
//! only accepted once, by the device that issued the token.

use alloc::vec::Vec;

use thiserror::Error;

use crate::crypto::{ek_verify, DeviceId, EndorsementPublic, Signature, SIGNATURE_LEN};

pub const NONCE_LEN: usize = 32;
pub const TOKEN_LEN: usize = 16 + 4 + 32 + 4 + NONCE_LEN + 32 + 8 + SIGNATURE_LEN;
const DOMAIN: &[u8] = b"pim-enclave attestation token v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum TokenError {
    #[error("token is from a different device")]
    DeviceMismatch,
    #[error("token does not echo our nonce")]
    NonceMismatch,
    #[error("token names bank {got}, expected {expected}")]
    BankMismatch { got: u32, expected: u32 },
    #[error("token signature is invalid")]
    Signature,
    #[error("token is truncated")]
    Truncated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttestationToken {
    pub device_id: DeviceId,
    pub bank: u32,
    pub kem_public: [u8; 32],
    pub rom_version: u32,
    pub nonce: [u8; NONCE_LEN],
    pub challenge: [u8; 32],
    pub epoch: u64,
    pub signature: Signature,
}

impl AttestationToken {
    pub(crate) fn signed_message(&self) -> Vec<u8> {
        let mut m = Vec::with_capacity(DOMAIN.len() + TOKEN_LEN - SIGNATURE_LEN);
        m.extend_from_slice(DOMAIN);
        m.extend_from_slice(&self.to_bytes()[..TOKEN_LEN - SIGNATURE_LEN]);
        m
    }

    pub fn to_bytes(&self) -> [u8; TOKEN_LEN] {
        let mut out = [0u8; TOKEN_LEN];
        let mut at = 0;
        for part in [
            &self.device_id.0[..],
            &self.bank.to_le_bytes(),
            &self.kem_public,
            &self.rom_version.to_le_bytes(),
            &self.nonce,
            &self.challenge,
            &self.epoch.to_le_bytes(),
            &self.signature.0,
        ] {
            out[at..at + part.len()].copy_from_slice(part);
            at += part.len();
        }
        out
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self, TokenError> {
        if b.len() < TOKEN_LEN {
            return Err(TokenError::Truncated);
        }
        let arr = |lo: usize, hi: usize| &b[lo..hi];
        Ok(AttestationToken {
            device_id: DeviceId(arr(0, 16).try_into().expect("16")),
            bank: u32::from_le_bytes(arr(16, 20).try_into().expect("4")),
            kem_public: arr(20, 52).try_into().expect("32"),
            rom_version: u32::from_le_bytes(arr(52, 56).try_into().expect("4")),
            nonce: arr(56, 88).try_into().expect("32"),
            challenge: arr(88, 120).try_into().expect("32"),
            epoch: u64::from_le_bytes(arr(120, 128).try_into().expect("8")),
            signature: Signature(arr(128, 192).try_into().expect("64")),
        })
    }

    /// Checks the token against the out-of-band endorsement key, the bank we
    /// addressed and the nonce we sent.
    pub fn verify(
        &self,
        trusted: &EndorsementPublic,
        bank: u32,
        nonce: &[u8; NONCE_LEN],
    ) -> Result<(), TokenError> {
        if !ek_verify(trusted, &self.signed_message(), &self.signature) {
            return Err(TokenError::Signature);
        }
        if self.device_id != trusted.device_id || self.kem_public != trusted.kem_public {
            return Err(TokenError::DeviceMismatch);
        }
        if self.bank != bank {
            return Err(TokenError::BankMismatch {
                got: self.bank,
                expected: bank,
            });
        }
        if &self.nonce != nonce {
            return Err(TokenError::NonceMismatch);
        }
        Ok(())
    }

    /// Associated data the next session-key wrap must carry.
    pub fn wrap_context(&self) -> Vec<u8> {
        wrap_context(&self.device_id, self.bank, &self.challenge, self.epoch)
    }
}

pub(crate) fn wrap_context(device: &DeviceId, bank: u32, challenge: &[u8; 32], epoch: u64) -> Vec<u8> {
    let mut v = Vec::with_capacity(16 + 4 + 32 + 8 + 16);
    v.extend_from_slice(b"session key wrap");
    v.extend_from_slice(&device.0);
    v.extend_from_slice(&bank.to_le_bytes());
    v.extend_from_slice(challenge);
    v.extend_from_slice(&epoch.to_le_bytes());
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{ek_sign, EndorsementKeyPair};
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn signed(ek: &EndorsementKeyPair, nonce: [u8; 32]) -> AttestationToken {
        let p = ek.public();
        let mut t = AttestationToken {
            device_id: p.device_id,
            bank: 3,
            kem_public: p.kem_public,
            rom_version: 1,
            nonce,
            challenge: [5; 32],
            epoch: 2,
            signature: Signature([0; 64]),
        };
        t.signature = ek_sign(ek, &t.signed_message());
        t
    }

    #[test]
    fn verify_round_trip() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let ek = EndorsementKeyPair::generate(&mut rng, DeviceId([1; 16]));
        let t = signed(&ek, [9; 32]);
        assert_eq!(AttestationToken::from_bytes(&t.to_bytes()).unwrap(), t);
        t.verify(&ek.public(), 3, &[9; 32]).unwrap();
        assert_eq!(t.verify(&ek.public(), 3, &[8; 32]), Err(TokenError::NonceMismatch));
        assert!(matches!(
            t.verify(&ek.public(), 4, &[9; 32]),
            Err(TokenError::BankMismatch { .. })
        ));
        let other = EndorsementKeyPair::generate(&mut rng, DeviceId([1; 16]));
        assert_eq!(t.verify(&other.public(), 3, &[9; 32]), Err(TokenError::Signature));
    }

    #[test]
    fn any_field_change_breaks_signature() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let ek = EndorsementKeyPair::generate(&mut rng, DeviceId([1; 16]));
        let t = signed(&ek, [9; 32]);
        let bytes = t.to_bytes();
        for i in 0..TOKEN_LEN {
            let mut b = bytes;
            b[i] ^= 0x01;
            let m = AttestationToken::from_bytes(&b).unwrap();
            assert!(m.verify(&ek.public(), 3, &[9; 32]).is_err(), "byte {i}");
        }
    }
}
