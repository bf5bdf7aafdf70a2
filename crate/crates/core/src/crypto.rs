//! Cryptographic primitives of the device and the host enclave.
//!
//! * AES-128-GCM with 12-byte IVs and 16-byte tags for every channel and
//!   every block at rest.
//! * SHA-256 for kernel measurement.
//! * Ed25519 for the endorsement key's attestation signatures.
//! * X25519 + HKDF-SHA256 + AES-128-GCM to transport session keys to the
//!   device.
//!
//! The endorsement private key is only reachable through crate-private
//! functions; the attestation path in [`crate::channel`] is the sole caller.

use core::fmt;

use aes_gcm::aead::AeadInPlace;
use aes_gcm::{Aes128Gcm, KeyInit, Nonce, Tag as GcmTag};
use alloc::vec::Vec;
use ed25519_dalek::{Signer, SigningKey, VerifyingKey};
use hkdf::Hkdf;
use rand_core::CryptoRngCore;
use sha2::{Digest as _, Sha256};
use thiserror::Error;
use x25519_dalek::{EphemeralSecret, PublicKey as KemPublic, StaticSecret};
use zeroize::{Zeroize, ZeroizeOnDrop};

pub const KEY_LEN: usize = 16;
pub const IV_LEN: usize = 12;
pub const TAG_LEN: usize = 16;
pub const DIGEST_LEN: usize = 32;
pub const SIGNATURE_LEN: usize = 64;
/// Ephemeral public key, encrypted key and tag.
pub const WRAPPED_KEY_LEN: usize = 32 + KEY_LEN + TAG_LEN;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum CryptoError {
    #[error("authentication failed")]
    Authentication,
    #[error("malformed key material")]
    Malformed,
}

/// AES-128 key. Zeroized on drop.
#[derive(Clone, PartialEq, Eq, Zeroize, ZeroizeOnDrop)]
pub struct SymmetricKey([u8; KEY_LEN]);

impl SymmetricKey {
    pub fn from_bytes(bytes: [u8; KEY_LEN]) -> Self {
        SymmetricKey(bytes)
    }

    pub fn generate(rng: &mut impl CryptoRngCore) -> Self {
        let mut k = [0u8; KEY_LEN];
        rng.fill_bytes(&mut k);
        SymmetricKey(k)
    }

    /// Raw key bytes, for placing the key inside an encrypted payload.
    pub fn expose(&self) -> &[u8; KEY_LEN] {
        &self.0
    }

    fn cipher(&self) -> Aes128Gcm {
        Aes128Gcm::new_from_slice(&self.0).expect("16-byte key")
    }
}

impl fmt::Debug for SymmetricKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SymmetricKey(..)")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Iv(pub [u8; IV_LEN]);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Tag(pub [u8; TAG_LEN]);

pub fn aead_encrypt(key: &SymmetricKey, iv: &Iv, plaintext: &[u8], aad: &[u8]) -> (Vec<u8>, Tag) {
    let mut buf = plaintext.to_vec();
    let tag = aead_encrypt_in_place(key, iv, &mut buf, aad);
    (buf, tag)
}

pub fn aead_encrypt_in_place(key: &SymmetricKey, iv: &Iv, buf: &mut [u8], aad: &[u8]) -> Tag {
    let tag = key
        .cipher()
        .encrypt_in_place_detached(Nonce::from_slice(&iv.0), aad, buf)
        .expect("GCM input within length limits");
    Tag(tag.into())
}

pub fn aead_decrypt(
    key: &SymmetricKey,
    iv: &Iv,
    ciphertext: &[u8],
    tag: &Tag,
    aad: &[u8],
) -> Result<Vec<u8>, CryptoError> {
    let mut buf = ciphertext.to_vec();
    aead_decrypt_in_place(key, iv, &mut buf, tag, aad)?;
    Ok(buf)
}

/// On failure the buffer is zeroed rather than left holding unverified
/// plaintext.
pub fn aead_decrypt_in_place(
    key: &SymmetricKey,
    iv: &Iv,
    buf: &mut [u8],
    tag: &Tag,
    aad: &[u8],
) -> Result<(), CryptoError> {
    let res = key.cipher().decrypt_in_place_detached(
        Nonce::from_slice(&iv.0),
        aad,
        buf,
        GcmTag::from_slice(&tag.0),
    );
    if res.is_err() {
        buf.zeroize();
        return Err(CryptoError::Authentication);
    }
    Ok(())
}

/// SHA-256 measurement of a byte string.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Digest(pub [u8; DIGEST_LEN]);

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Digest(")?;
        for b in &self.0 {
            write!(f, "{b:02x}")?;
        }
        f.write_str(")")
    }
}

pub fn measure(blob: &[u8]) -> Digest {
    Digest(Sha256::digest(blob).into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DeviceId(pub [u8; 16]);

#[derive(Clone, Copy, PartialEq, Eq)]
pub struct Signature(pub [u8; SIGNATURE_LEN]);

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Signature(..)")
    }
}

/// The public half of a module's endorsement key, distributed out of band.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EndorsementPublic {
    pub device_id: DeviceId,
    pub verifying_key: [u8; 32],
    pub kem_public: [u8; 32],
}

/// Root endorsement key held in the module's key storage.
#[derive(Clone)]
pub struct EndorsementKeyPair {
    device_id: DeviceId,
    signing: SigningKey,
    kem: StaticSecret,
}

impl fmt::Debug for EndorsementKeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EndorsementKeyPair")
            .field("device_id", &self.device_id)
            .finish_non_exhaustive()
    }
}

impl EndorsementKeyPair {
    pub fn generate(rng: &mut impl CryptoRngCore, device_id: DeviceId) -> Self {
        EndorsementKeyPair {
            device_id,
            signing: SigningKey::generate(rng),
            kem: StaticSecret::random_from_rng(&mut *rng),
        }
    }

    pub fn device_id(&self) -> DeviceId {
        self.device_id
    }

    pub fn public(&self) -> EndorsementPublic {
        EndorsementPublic {
            device_id: self.device_id,
            verifying_key: self.signing.verifying_key().to_bytes(),
            kem_public: KemPublic::from(&self.kem).to_bytes(),
        }
    }
}

pub(crate) fn ek_sign(ek: &EndorsementKeyPair, message: &[u8]) -> Signature {
    Signature(ek.signing.sign(message).to_bytes())
}

pub fn ek_verify(public: &EndorsementPublic, message: &[u8], signature: &Signature) -> bool {
    let Ok(vk) = VerifyingKey::from_bytes(&public.verifying_key) else {
        return false;
    };
    let sig = ed25519_dalek::Signature::from_bytes(&signature.0);
    vk.verify_strict(message, &sig).is_ok()
}

/// Session key sealed to a device's key-encapsulation public key.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct WrappedKey(pub [u8; WRAPPED_KEY_LEN]);

impl fmt::Debug for WrappedKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("WrappedKey(..)")
    }
}

fn key_encryption_key(shared: &[u8; 32], eph: &[u8; 32], recipient: &[u8; 32]) -> (SymmetricKey, Iv) {
    let mut salt = [0u8; 64];
    salt[..32].copy_from_slice(eph);
    salt[32..].copy_from_slice(recipient);
    let hk = Hkdf::<Sha256>::new(Some(&salt), shared);
    let mut okm = [0u8; KEY_LEN + IV_LEN];
    hk.expand(b"pim-enclave session key wrap", &mut okm)
        .expect("okm length is valid");
    let mut k = [0u8; KEY_LEN];
    let mut iv = [0u8; IV_LEN];
    k.copy_from_slice(&okm[..KEY_LEN]);
    iv.copy_from_slice(&okm[KEY_LEN..]);
    okm.zeroize();
    (SymmetricKey(k), Iv(iv))
}

/// Seals `key` to `recipient` with a fresh ephemeral X25519 key; `aad` is
/// bound into the tag.
pub fn wrap_session_key(
    rng: &mut impl CryptoRngCore,
    recipient: &EndorsementPublic,
    key: &SymmetricKey,
    aad: &[u8],
) -> WrappedKey {
    let eph = EphemeralSecret::random_from_rng(&mut *rng);
    let eph_pub = KemPublic::from(&eph).to_bytes();
    let shared = eph.diffie_hellman(&KemPublic::from(recipient.kem_public));
    let (kek, iv) = key_encryption_key(shared.as_bytes(), &eph_pub, &recipient.kem_public);
    let mut ct = *key.expose();
    let tag = aead_encrypt_in_place(&kek, &iv, &mut ct, aad);
    let mut out = [0u8; WRAPPED_KEY_LEN];
    out[..32].copy_from_slice(&eph_pub);
    out[32..32 + KEY_LEN].copy_from_slice(&ct);
    out[32 + KEY_LEN..].copy_from_slice(&tag.0);
    WrappedKey(out)
}

pub(crate) fn unwrap_session_key(
    ek: &EndorsementKeyPair,
    wrapped: &WrappedKey,
    aad: &[u8],
) -> Result<SymmetricKey, CryptoError> {
    let mut eph_pub = [0u8; 32];
    eph_pub.copy_from_slice(&wrapped.0[..32]);
    let recipient = KemPublic::from(&ek.kem).to_bytes();
    let shared = ek.kem.diffie_hellman(&KemPublic::from(eph_pub));
    if !shared.was_contributory() {
        return Err(CryptoError::Malformed);
    }
    let (kek, iv) = key_encryption_key(shared.as_bytes(), &eph_pub, &recipient);
    let mut k = [0u8; KEY_LEN];
    k.copy_from_slice(&wrapped.0[32..32 + KEY_LEN]);
    let mut tag = [0u8; TAG_LEN];
    tag.copy_from_slice(&wrapped.0[32 + KEY_LEN..]);
    aead_decrypt_in_place(&kek, &iv, &mut k, &Tag(tag), aad)?;
    Ok(SymmetricKey(k))
}
