//! The control plane between a host enclave and one bank's PIM core.

mod device;
mod frame;
mod token;

pub use device::{Device, DeviceError, ExecState, Status, ROM_VERSION, STATUS_LEN};
pub(crate) use device::DeviceEnv;
pub use frame::{
    frame_iv, CommandFrame, CommandId, Direction, FrameError, ERROR_COMMAND, FRAME_LEN,
    PAYLOAD_LEN,
};
pub use token::{AttestationToken, TokenError, NONCE_LEN, TOKEN_LEN};

/// Session lifecycle of one bank.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Phase {
    Idle,
    Attested,
    SessionEstablished,
    KernelLoaded,
    /// Only while a kernel runs; commands arriving meanwhile queue behind it.
    Executing,
    Destroyed,
    Faulted,
}

impl Phase {
    pub fn permits(self, cmd: CommandId) -> bool {
        use CommandId::*;
        match self {
            Phase::Idle | Phase::Destroyed | Phase::Faulted => cmd == GetToken,
            Phase::Attested => matches!(cmd, GetToken | SetSessionKey),
            Phase::SessionEstablished => cmd != Execute,
            Phase::KernelLoaded => true,
            Phase::Executing => false,
        }
    }

    /// Phase after `cmd` is accepted.
    pub fn after(self, cmd: CommandId) -> Phase {
        use CommandId::*;
        match (self, cmd) {
            (Phase::Idle | Phase::Destroyed | Phase::Faulted, GetToken) => Phase::Attested,
            (Phase::Attested, SetSessionKey) => Phase::SessionEstablished,
            (Phase::SessionEstablished, OffloadKernel) => Phase::KernelLoaded,
            (_, Destroy) => Phase::Destroyed,
            (p, _) => p,
        }
    }
}
