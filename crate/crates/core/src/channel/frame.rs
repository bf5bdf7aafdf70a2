//! Fixed-size command frames.
//!
//! Wire format, 281 bytes: command id (1) ‖ big-endian sequence number (8) ‖
//! payload (256, zero-padded) ‖ tag (16). Session frames are AES-GCM sealed;
//! the IV is `direction ‖ 24-bit index ‖ sequence` and the AAD is
//! `direction ‖ index ‖ sequence ‖ command id`, so a frame cannot be
//! replayed in another direction, position or slot.

use core::fmt;

use thiserror::Error;

use crate::crypto::{aead_decrypt_in_place, aead_encrypt_in_place, Iv, SymmetricKey, Tag, TAG_LEN};

pub const PAYLOAD_LEN: usize = 256;
pub const FRAME_LEN: usize = 1 + 8 + PAYLOAD_LEN + TAG_LEN;
/// Command byte of the generic error frame.
pub const ERROR_COMMAND: u8 = 0xFF;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum FrameError {
    #[error("frame is {0} bytes, expected {FRAME_LEN}")]
    Length(usize),
    #[error("payload of {0} bytes does not fit a frame")]
    PayloadTooLarge(usize),
    #[error("frame authentication failed")]
    Authentication,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum CommandId {
    GetToken = 1,
    SetSessionKey = 2,
    SetDataKey = 3,
    OffloadKernel = 4,
    Execute = 5,
    Protect = 6,
    Destroy = 7,
}

impl CommandId {
    pub const ALL: [CommandId; 7] = [
        CommandId::GetToken,
        CommandId::SetSessionKey,
        CommandId::SetDataKey,
        CommandId::OffloadKernel,
        CommandId::Execute,
        CommandId::Protect,
        CommandId::Destroy,
    ];

    pub fn from_u8(b: u8) -> Option<Self> {
        CommandId::ALL.into_iter().find(|c| *c as u8 == b)
    }

    /// Commands authenticated by signature or key wrapping rather than by
    /// the session key.
    pub fn is_bootstrap(self) -> bool {
        matches!(self, CommandId::GetToken | CommandId::SetSessionKey)
    }
}

/// Which way a sealed frame travels and what it carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Direction {
    Command = 0,
    Response = 1,
    KeyConfirm = 2,
    Image = 3,
    Parameter = 4,
    Result = 5,
}

/// IV for session-key encryption of frames and kernel images.
pub fn frame_iv(dir: Direction, index: u32, seq: u64) -> Iv {
    debug_assert!(index < 1 << 24);
    let mut iv = [0u8; 12];
    iv[0] = dir as u8;
    iv[1..4].copy_from_slice(&index.to_be_bytes()[1..]);
    iv[4..].copy_from_slice(&seq.to_be_bytes());
    Iv(iv)
}

fn aad(dir: Direction, index: u32, seq: u64, command: u8) -> [u8; 13] {
    let mut a = [0u8; 13];
    a[..12].copy_from_slice(&frame_iv(dir, index, seq).0);
    a[12] = command;
    a
}

#[derive(Clone, Copy, PartialEq, Eq)]
pub struct CommandFrame {
    pub command: u8,
    pub seq: u64,
    pub payload: [u8; PAYLOAD_LEN],
    pub tag: [u8; TAG_LEN],
}

impl fmt::Debug for CommandFrame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CommandFrame")
            .field("command", &self.command)
            .field("seq", &self.seq)
            .finish_non_exhaustive()
    }
}

fn padded(payload: &[u8]) -> Result<[u8; PAYLOAD_LEN], FrameError> {
    if payload.len() > PAYLOAD_LEN {
        return Err(FrameError::PayloadTooLarge(payload.len()));
    }
    let mut p = [0u8; PAYLOAD_LEN];
    p[..payload.len()].copy_from_slice(payload);
    Ok(p)
}

impl CommandFrame {
    /// The one frame every failure produces.
    pub const ERROR: CommandFrame = CommandFrame {
        command: ERROR_COMMAND,
        seq: 0,
        payload: [0; PAYLOAD_LEN],
        tag: [0; TAG_LEN],
    };

    /// An unsealed frame, for the bootstrap commands.
    pub fn plain(command: u8, seq: u64, payload: &[u8]) -> Result<Self, FrameError> {
        Ok(CommandFrame {
            command,
            seq,
            payload: padded(payload)?,
            tag: [0; TAG_LEN],
        })
    }

    pub fn seal(
        key: &SymmetricKey,
        dir: Direction,
        index: u32,
        command: u8,
        seq: u64,
        payload: &[u8],
    ) -> Result<Self, FrameError> {
        let mut p = padded(payload)?;
        let tag = aead_encrypt_in_place(
            key,
            &frame_iv(dir, index, seq),
            &mut p,
            &aad(dir, index, seq, command),
        );
        Ok(CommandFrame {
            command,
            seq,
            payload: p,
            tag: tag.0,
        })
    }

    pub fn open(
        &self,
        key: &SymmetricKey,
        dir: Direction,
        index: u32,
    ) -> Result<[u8; PAYLOAD_LEN], FrameError> {
        let mut p = self.payload;
        aead_decrypt_in_place(
            key,
            &frame_iv(dir, index, self.seq),
            &mut p,
            &Tag(self.tag),
            &aad(dir, index, self.seq, self.command),
        )
        .map_err(|_| FrameError::Authentication)?;
        Ok(p)
    }

    pub fn is_error(&self) -> bool {
        *self == CommandFrame::ERROR
    }

    pub fn command_id(&self) -> Option<CommandId> {
        CommandId::from_u8(self.command)
    }

    pub fn to_bytes(&self) -> [u8; FRAME_LEN] {
        let mut out = [0u8; FRAME_LEN];
        out[0] = self.command;
        out[1..9].copy_from_slice(&self.seq.to_be_bytes());
        out[9..9 + PAYLOAD_LEN].copy_from_slice(&self.payload);
        out[9 + PAYLOAD_LEN..].copy_from_slice(&self.tag);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FrameError> {
        if bytes.len() != FRAME_LEN {
            return Err(FrameError::Length(bytes.len()));
        }
        let mut payload = [0u8; PAYLOAD_LEN];
        payload.copy_from_slice(&bytes[9..9 + PAYLOAD_LEN]);
        let mut tag = [0u8; TAG_LEN];
        tag.copy_from_slice(&bytes[9 + PAYLOAD_LEN..]);
        Ok(CommandFrame {
            command: bytes[0],
            seq: u64::from_be_bytes(bytes[1..9].try_into().expect("8 bytes")),
            payload,
            tag,
        })
    }
}
