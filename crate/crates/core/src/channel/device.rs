//! The device side of the channel: one runtime per bank, owning the session,
//! the DMA engine's key slots and the PIM core's local memory.

use alloc::collections::{BTreeSet, VecDeque};
use alloc::sync::Arc;
use alloc::vec::Vec;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use super::frame::{CommandFrame, CommandId, Direction, FrameError, PAYLOAD_LEN};
use super::token::{wrap_context, AttestationToken, NONCE_LEN};
use super::Phase;
use crate::config::{KernelCostTable, SimConfig};
use crate::crypto::{
    ek_sign, measure, unwrap_session_key, Digest, EndorsementKeyPair, Signature, SymmetricKey,
    WrappedKey, KEY_LEN, WRAPPED_KEY_LEN,
};
use crate::dma::{DmaEngine, DmaError, KeySlot, Privilege, BLOCK_OVERHEAD};
use crate::memory::{AccessRange, MemoryError, MemoryModule, Requester, SparseMemory};
use crate::pim::{ImageError, Kernel, KernelContext, KernelImage, KernelRegistry, KernelStats, KernelTrap, RUNTIME_RESERVED};
use crate::time::SimTime;

pub const ROM_VERSION: u32 = 1;
pub const STATUS_LEN: u64 = 8;

/// Why the device refused a frame. Only visible through the trusted local
/// interface; the wire carries the generic error frame for all of them.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DeviceError {
    #[error("malformed frame: {0}")]
    Malformed(FrameError),
    #[error("unknown command id {0:#04x}")]
    UnknownCommand(u8),
    #[error("{command:?} is not permitted in phase {phase:?}")]
    WrongPhase { phase: Phase, command: CommandId },
    #[error("frame authentication failed")]
    Authentication,
    #[error("sequence number {seq} replayed (expected at least {expected})")]
    Replay { seq: u64, expected: u64 },
    #[error("attestation nonce was already used")]
    NonceReused,
    #[error("session key could not be unwrapped")]
    Unwrap,
    #[error("bad payload: {0}")]
    BadPayload(&'static str),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Dma(#[from] DmaError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error("kernel trapped: {0}")]
    Trap(KernelTrap),
    #[error("parameter frame rejected: {0}")]
    Parameter(alloc::boxed::Box<DeviceError>),
}

/// Outcome of the most recent EXECUTE, as read from the status register.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecState {
    Idle = 0,
    Done = 1,
    Failed = 2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Status {
    pub state: ExecState,
    pub result_frames: u32,
}

impl Status {
    pub fn to_bytes(&self) -> [u8; STATUS_LEN as usize] {
        let mut b = [0u8; STATUS_LEN as usize];
        b[0] = self.state as u8;
        b[4..].copy_from_slice(&self.result_frames.to_le_bytes());
        b
    }
}

#[derive(Clone)]
struct LoadedKernel {
    measurement: Digest,
    image_len: u64,
    imp: Arc<dyn Kernel>,
}

#[derive(Clone)]
pub struct Device {
    bank: u32,
    ek: EndorsementKeyPair,
    phase: Phase,
    expected_seq: u64,
    epoch: u64,
    challenge: Option<[u8; 32]>,
    seen_nonces: BTreeSet<[u8; NONCE_LEN]>,
    rng: ChaCha20Rng,
    dma: DmaEngine,
    local: SparseMemory,
    kernel: Option<LoadedKernel>,
    params: Vec<u8>,
    param_error: Option<DeviceError>,
    responses: VecDeque<CommandFrame>,
    status: Status,
    clock: SimTime,
    costs: KernelCostTable,
    pim_cycle: SimTime,
    local_latency: SimTime,
    last_error: Option<DeviceError>,
    last_stats: Option<KernelStats>,
    trap_time: SimTime,
}

/// What the runtime may reach outside its own package.
pub(crate) struct DeviceEnv<'a> {
    pub memory: &'a mut MemoryModule,
    pub registry: &'a KernelRegistry,
}

fn u64_at(p: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(p[at..at + 8].try_into().expect("8 bytes"))
}

fn u32_at(p: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(p[at..at + 4].try_into().expect("4 bytes"))
}

impl Device {
    pub(crate) fn new(cfg: &SimConfig, bank: u32, ek: EndorsementKeyPair) -> Self {
        Device {
            bank,
            ek,
            phase: Phase::Idle,
            expected_seq: 0,
            epoch: 0,
            challenge: None,
            seen_nonces: BTreeSet::new(),
            rng: ChaCha20Rng::seed_from_u64(cfg.seed ^ 0xD0_0000_0000 ^ bank as u64),
            dma: DmaEngine::new(cfg, bank),
            local: SparseMemory::new(cfg.local_mem_bytes),
            kernel: None,
            params: Vec::new(),
            param_error: None,
            responses: VecDeque::new(),
            status: Status {
                state: ExecState::Idle,
                result_frames: 0,
            },
            clock: SimTime::ZERO,
            costs: cfg.kernel_costs.clone(),
            pim_cycle: cfg.pim_cycle(),
            local_latency: cfg.local_mem_latency,
            last_error: None,
            last_stats: None,
            trap_time: SimTime::ZERO,
        }
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn clock(&self) -> SimTime {
        self.clock
    }

    pub fn status(&self) -> Status {
        self.status
    }

    pub fn last_error(&self) -> Option<&DeviceError> {
        self.last_error.as_ref()
    }

    pub fn last_stats(&self) -> Option<KernelStats> {
        self.last_stats
    }

    pub fn measurement(&self) -> Option<Digest> {
        self.kernel.as_ref().map(|k| k.measurement)
    }

    pub fn key_slots_empty(&self) -> bool {
        !self.dma.has_key(KeySlot::Session) && !self.dma.has_key(KeySlot::Data)
    }

    pub fn local_memory(&self) -> &SparseMemory {
        &self.local
    }

    fn dispatch_cost(&self) -> SimTime {
        self.pim_cycle
            .times(self.costs.command_dispatch)
            .expect("simulated time overflow")
    }

    /// Next frame from the response register; the error frame when empty.
    pub(crate) fn pop_response(&mut self) -> CommandFrame {
        self.responses.pop_front().unwrap_or(CommandFrame::ERROR)
    }

    /// A frame written to the command register at `at`. Returns when the
    /// device has finished with it.
    pub(crate) fn receive_command(&mut self, env: DeviceEnv<'_>, at: SimTime, bytes: &[u8]) -> SimTime {
        let start = at.max(self.clock) + self.dispatch_cost();
        self.responses.clear();
        match self.handle(env, bytes) {
            Ok((frames, busy)) => {
                self.responses.extend(frames);
                self.last_error = None;
                self.clock = start + busy;
            }
            Err(e) => {
                if bytes.first() == Some(&(CommandId::Execute as u8)) {
                    self.params.clear();
                    self.param_error = None;
                    self.status = Status {
                        state: ExecState::Failed,
                        result_frames: 0,
                    };
                }
                self.responses.push_back(CommandFrame::ERROR);
                self.last_error = Some(e);
                // a trapped kernel still used the time up to its trap
                self.clock = start + core::mem::take(&mut self.trap_time);
            }
        }
        self.clock
    }

    /// A frame written to the parameter register at `at`. Parameters
    /// accumulate until the next EXECUTE.
    pub(crate) fn receive_parameter(&mut self, at: SimTime, bytes: &[u8]) -> SimTime {
        self.clock = at.max(self.clock) + self.dispatch_cost();
        match self.accept_parameter(bytes) {
            Ok(p) => {
                self.params.extend_from_slice(&p);
                self.last_error = None;
            }
            Err(e) => {
                self.last_error = Some(e.clone());
                self.param_error = Some(DeviceError::Parameter(alloc::boxed::Box::new(e)));
            }
        }
        self.clock
    }

    fn accept_parameter(&mut self, bytes: &[u8]) -> Result<[u8; PAYLOAD_LEN], DeviceError> {
        let frame = CommandFrame::from_bytes(bytes).map_err(DeviceError::Malformed)?;
        if frame.command != CommandId::Execute as u8 {
            return Err(DeviceError::BadPayload("parameter frame must carry EXECUTE"));
        }
        let key = self.dma.slot(KeySlot::Session).ok_or(DeviceError::WrongPhase {
            phase: self.phase,
            command: CommandId::Execute,
        })?;
        let p = frame
            .open(key, Direction::Parameter, 0)
            .map_err(|_| DeviceError::Authentication)?;
        self.check_seq(frame.seq)?;
        Ok(p)
    }

    fn check_seq(&mut self, seq: u64) -> Result<(), DeviceError> {
        if seq < self.expected_seq {
            return Err(DeviceError::Replay {
                seq,
                expected: self.expected_seq,
            });
        }
        self.expected_seq = seq.checked_add(1).ok_or(DeviceError::BadPayload("sequence exhausted"))?;
        Ok(())
    }

    fn handle(
        &mut self,
        env: DeviceEnv<'_>,
        bytes: &[u8],
    ) -> Result<(Vec<CommandFrame>, SimTime), DeviceError> {
        let frame = CommandFrame::from_bytes(bytes).map_err(DeviceError::Malformed)?;
        let cmd = frame
            .command_id()
            .ok_or(DeviceError::UnknownCommand(frame.command))?;
        match cmd {
            CommandId::GetToken => self.get_token(&frame),
            CommandId::SetSessionKey => self.set_session_key(&frame),
            _ => self.sealed(env, cmd, &frame),
        }
    }

    fn require(&self, cmd: CommandId) -> Result<(), DeviceError> {
        if self.phase.permits(cmd) {
            Ok(())
        } else {
            Err(DeviceError::WrongPhase {
                phase: self.phase,
                command: cmd,
            })
        }
    }

    fn get_token(&mut self, frame: &CommandFrame) -> Result<(Vec<CommandFrame>, SimTime), DeviceError> {
        let nonce: [u8; NONCE_LEN] = frame.payload[..NONCE_LEN].try_into().expect("32 bytes");
        if !self.seen_nonces.insert(nonce) {
            return Err(DeviceError::NonceReused);
        }
        let mut challenge = [0u8; 32];
        self.rng.fill_bytes(&mut challenge);
        self.challenge = Some(challenge);
        let public = self.ek.public();
        let mut token = AttestationToken {
            device_id: public.device_id,
            bank: self.bank,
            kem_public: public.kem_public,
            rom_version: ROM_VERSION,
            nonce,
            challenge,
            epoch: self.epoch,
            signature: Signature([0; 64]),
        };
        token.signature = ek_sign(&self.ek, &token.signed_message());
        self.phase = self.phase.after(CommandId::GetToken);
        let reply = CommandFrame::plain(CommandId::GetToken as u8, 0, &token.to_bytes())
            .expect("token fits a frame");
        Ok((alloc::vec![reply], SimTime::ZERO))
    }

    fn set_session_key(&mut self, frame: &CommandFrame) -> Result<(Vec<CommandFrame>, SimTime), DeviceError> {
        self.require(CommandId::SetSessionKey)?;
        let challenge = self.challenge.ok_or(DeviceError::WrongPhase {
            phase: self.phase,
            command: CommandId::SetSessionKey,
        })?;
        let wrapped = WrappedKey(
            frame.payload[..WRAPPED_KEY_LEN]
                .try_into()
                .expect("wrapped key fits"),
        );
        let aad = wrap_context(&self.ek.device_id(), self.bank, &challenge, self.epoch);
        let key = unwrap_session_key(&self.ek, &wrapped, &aad).map_err(|_| DeviceError::Unwrap)?;
        self.epoch += 1;
        let confirm = CommandFrame::seal(
            &key,
            Direction::KeyConfirm,
            0,
            CommandId::SetSessionKey as u8,
            self.epoch,
            &[],
        )
        .expect("empty payload");
        self.dma
            .program_key(Privilege::Runtime, KeySlot::Session, key)
            .expect("runtime is privileged");
        self.expected_seq = 0;
        self.params.clear();
        self.param_error = None;
        self.phase = self.phase.after(CommandId::SetSessionKey);
        Ok((alloc::vec![confirm], SimTime::ZERO))
    }

    fn sealed(
        &mut self,
        env: DeviceEnv<'_>,
        cmd: CommandId,
        frame: &CommandFrame,
    ) -> Result<(Vec<CommandFrame>, SimTime), DeviceError> {
        let key = self
            .dma
            .slot(KeySlot::Session)
            .cloned()
            .ok_or(DeviceError::WrongPhase {
                phase: self.phase,
                command: cmd,
            })?;
        let payload = frame
            .open(&key, Direction::Command, 0)
            .map_err(|_| DeviceError::Authentication)?;
        self.check_seq(frame.seq)?;
        self.require(cmd)?;
        let seal = |dir: Direction, index: u32, body: &[u8]| {
            CommandFrame::seal(&key, dir, index, cmd as u8, frame.seq, body).expect("body fits")
        };
        match cmd {
            CommandId::SetDataKey => {
                let k: [u8; KEY_LEN] = payload[..KEY_LEN].try_into().expect("16 bytes");
                self.dma
                    .program_key(Privilege::Runtime, KeySlot::Data, SymmetricKey::from_bytes(k))
                    .expect("runtime is privileged");
                Ok((alloc::vec![seal(Direction::Response, 0, &[])], SimTime::ZERO))
            }
            CommandId::Protect => {
                let range = AccessRange::new(u64_at(&payload, 0), u64_at(&payload, 8))?;
                env.memory
                    .set_access_range(Requester::PimCore(self.bank), self.bank, range)?;
                Ok((alloc::vec![seal(Direction::Response, 0, &[])], SimTime::ZERO))
            }
            CommandId::OffloadKernel => {
                let (digest, busy) = self.offload(env, u64_at(&payload, 0), u32_at(&payload, 8) as u64)?;
                self.phase = self.phase.after(cmd);
                Ok((alloc::vec![seal(Direction::Response, 0, &digest.0)], busy))
            }
            CommandId::Execute => {
                let declared = u32_at(&payload, 0) as usize;
                let (result, busy) = self.execute(env, declared)?;
                let mut stream = Vec::with_capacity(4 + result.len());
                stream.extend_from_slice(&(result.len() as u32).to_le_bytes());
                stream.extend_from_slice(&result);
                let frames: Vec<CommandFrame> = stream
                    .chunks(PAYLOAD_LEN)
                    .enumerate()
                    .map(|(i, c)| seal(Direction::Result, i as u32, c))
                    .collect();
                self.status = Status {
                    state: ExecState::Done,
                    result_frames: frames.len() as u32,
                };
                Ok((frames, busy))
            }
            CommandId::Destroy => {
                let ack = seal(Direction::Response, 0, &[]);
                self.wipe(env.memory, Phase::Destroyed);
                self.status.state = ExecState::Idle;
                self.status.result_frames = 0;
                Ok((alloc::vec![ack], SimTime::ZERO))
            }
            CommandId::GetToken | CommandId::SetSessionKey => unreachable!("bootstrap commands"),
        }
    }

    fn offload(
        &mut self,
        env: DeviceEnv<'_>,
        offset: u64,
        wire_len: u64,
    ) -> Result<(Digest, SimTime), DeviceError> {
        let limit = self.local.capacity() - RUNTIME_RESERVED;
        let size = wire_len.saturating_sub(BLOCK_OVERHEAD);
        if size > limit {
            return Err(ImageError::TooLarge { size, limit }.into());
        }
        let (bank, timing) = env.memory.bank_and_timing(self.bank)?;
        let (image, t) = self
            .dma
            .fetch_block(bank, timing, offset, wire_len, KeySlot::Session)?;
        let parsed = KernelImage::parse(&image)?;
        let imp = env
            .registry
            .get(&parsed.name)
            .ok_or(ImageError::UnknownKernel(parsed.name.clone()))?;
        if let Some(old) = &self.kernel {
            self.local.fill(RUNTIME_RESERVED, old.image_len, 0);
        }
        self.local.write(RUNTIME_RESERVED, &image);
        let measurement = measure(&image);
        self.kernel = Some(LoadedKernel {
            measurement,
            image_len: image.len() as u64,
            imp,
        });
        Ok((measurement, t.total()))
    }

    fn execute(&mut self, env: DeviceEnv<'_>, declared: usize) -> Result<(Vec<u8>, SimTime), DeviceError> {
        let params = core::mem::take(&mut self.params);
        if let Some(e) = self.param_error.take() {
            return Err(e);
        }
        if params.len() != declared.div_ceil(PAYLOAD_LEN) * PAYLOAD_LEN {
            return Err(DeviceError::BadPayload("parameter length mismatch"));
        }
        let kernel = self.kernel.as_ref().expect("phase implies a kernel");
        let imp = kernel.imp.clone();
        let window_start = (RUNTIME_RESERVED + kernel.image_len).next_multiple_of(4096);
        let window = (window_start, self.local.capacity());
        self.phase = Phase::Executing;
        let mut ctx = KernelContext::new(
            self.bank,
            env.memory,
            &mut self.dma,
            &mut self.local,
            window,
            &params[..declared],
            &self.costs,
            self.pim_cycle,
            self.local_latency,
        );
        let outcome = imp.run(&mut ctx);
        let (stats, result) = ctx.finish();
        self.last_stats = Some(stats);
        match outcome {
            Ok(()) => {
                self.phase = Phase::KernelLoaded;
                Ok((result, stats.total()))
            }
            Err(trap) => {
                self.wipe(env.memory, Phase::Faulted);
                self.trap_time = stats.total();
                Err(DeviceError::Trap(trap))
            }
        }
    }

    /// Zeroizes keys, local memory and the session, and lifts any access
    /// range. Shared by DESTROY and kernel faults.
    fn wipe(&mut self, memory: &mut MemoryModule, phase: Phase) {
        self.dma.clear_keys();
        self.local.zeroize();
        self.kernel = None;
        self.params.clear();
        self.param_error = None;
        self.expected_seq = 0;
        self.challenge = None;
        memory
            .set_access_range(Requester::PimCore(self.bank), self.bank, AccessRange::DISABLED)
            .expect("own bank");
        self.phase = phase;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn status_encoding() {
        let s = Status {
            state: ExecState::Done,
            result_frames: 3,
        };
        assert_eq!(s.to_bytes(), [1, 0, 0, 0, 3, 0, 0, 0]);
    }
}
