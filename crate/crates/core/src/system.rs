//! The simulation engine: the memory module, one device runtime per bank and
//! the host clock.
//!
//! Every operation computes its own latency. The host and each bank have
//! their own clock; a host that waits on a bank jumps to the later of the two.

use alloc::vec::Vec;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::channel::{
    CommandFrame, Device, DeviceEnv, DeviceError, Phase, Status, FRAME_LEN, STATUS_LEN,
};
use crate::config::{ConfigError, SimConfig};
use crate::crypto::{DeviceId, EndorsementKeyPair, EndorsementPublic};
use crate::memory::{AccessOp, HostAccess, MemoryError, MemoryModule, Register};
use crate::pim::{KernelRegistry, KernelStats};
use crate::time::SimTime;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SystemError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error("bank {0} does not exist")]
    NoSuchBank(u32),
}

#[derive(Clone)]
pub struct System {
    cfg: SimConfig,
    memory: MemoryModule,
    devices: Vec<Device>,
    registry: KernelRegistry,
    ek_public: EndorsementPublic,
    host_clock: SimTime,
    claimed: Vec<bool>,
}

impl core::fmt::Debug for System {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("System")
            .field("n_banks", &self.devices.len())
            .field("host_clock", &self.host_clock)
            .field("registry", &self.registry)
            .finish_non_exhaustive()
    }
}

impl System {
    /// A system running the built-in kernels.
    pub fn new(cfg: SimConfig) -> Result<Self, SystemError> {
        Self::with_registry(cfg, crate::workloads::builtin_registry())
    }

    pub fn with_registry(cfg: SimConfig, registry: KernelRegistry) -> Result<Self, SystemError> {
        cfg.validate()?;
        let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
        let mut id = [0u8; 16];
        id[..8].copy_from_slice(b"PIMENCL\0");
        id[8..].copy_from_slice(&cfg.seed.to_be_bytes());
        let ek = EndorsementKeyPair::generate(&mut rng, DeviceId(id));
        let devices = (0..cfg.n_banks)
            .map(|b| Device::new(&cfg, b, ek.clone()))
            .collect();
        Ok(System {
            memory: MemoryModule::new(&cfg),
            devices,
            registry,
            ek_public: ek.public(),
            host_clock: SimTime::ZERO,
            claimed: alloc::vec![false; cfg.n_banks as usize],
            cfg,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn n_banks(&self) -> u32 {
        self.devices.len() as u32
    }

    /// The module's endorsement public key, as distributed out of band.
    pub fn trusted_ek(&self) -> EndorsementPublic {
        self.ek_public
    }

    pub fn memory(&self) -> &MemoryModule {
        &self.memory
    }

    pub fn tracer_mut(&mut self) -> &mut crate::memory::Tracer {
        self.memory.tracer_mut()
    }

    pub fn now(&self) -> SimTime {
        self.host_clock
    }

    /// Host-side work that takes `delta`.
    pub fn advance_host(&mut self, delta: SimTime) {
        self.host_clock += delta;
    }

    pub fn host_cycles(&mut self, n: u64) {
        let d = self.cfg.host_cycles(n);
        self.advance_host(d);
    }

    pub fn device(&self, bank: u32) -> Result<&Device, SystemError> {
        self.devices
            .get(bank as usize)
            .ok_or(SystemError::NoSuchBank(bank))
    }

    fn device_mut(&mut self, bank: u32) -> Result<&mut Device, SystemError> {
        self.devices
            .get_mut(bank as usize)
            .ok_or(SystemError::NoSuchBank(bank))
    }

    pub fn phase(&self, bank: u32) -> Result<Phase, SystemError> {
        Ok(self.device(bank)?.phase())
    }

    /// Failure cause of the last frame a bank refused. This is the trusted
    /// local view; the wire only ever shows the generic error frame.
    pub fn last_error(&self, bank: u32) -> Result<Option<&DeviceError>, SystemError> {
        Ok(self.device(bank)?.last_error())
    }

    pub fn last_kernel_stats(&self, bank: u32) -> Result<Option<KernelStats>, SystemError> {
        Ok(self.device(bank)?.last_stats())
    }

    pub fn bank_clock(&self, bank: u32) -> Result<SimTime, SystemError> {
        Ok(self.device(bank)?.clock())
    }

    pub(crate) fn claim(&mut self, bank: u32) -> Result<bool, SystemError> {
        let slot = self
            .claimed
            .get_mut(bank as usize)
            .ok_or(SystemError::NoSuchBank(bank))?;
        Ok(!core::mem::replace(slot, true))
    }

    pub(crate) fn release(&mut self, bank: u32) {
        if let Some(slot) = self.claimed.get_mut(bank as usize) {
            *slot = false;
        }
    }

    pub fn host_read(&mut self, addr: u64, size: u64) -> Result<HostAccess, SystemError> {
        let r = self
            .memory
            .host_access(self.host_clock, AccessOp::Read, addr, size, None)?;
        self.host_clock += r.latency;
        Ok(r)
    }

    pub fn host_write(&mut self, addr: u64, data: &[u8]) -> Result<HostAccess, SystemError> {
        let r = self.memory.host_access(
            self.host_clock,
            AccessOp::Write,
            addr,
            data.len() as u64,
            Some(data),
        )?;
        self.host_clock += r.latency;
        Ok(r)
    }

    fn register(&mut self, op: AccessOp, bank: u32, reg: Register, size: u64) -> Result<(), SystemError> {
        let t = self
            .memory
            .register_access(self.host_clock, op, bank, reg, size)?;
        self.host_clock += t;
        Ok(())
    }

    /// Writes raw bytes to a bank's command register without waiting.
    pub fn post_command_bytes(&mut self, bank: u32, bytes: &[u8]) -> Result<(), SystemError> {
        self.device(bank)?;
        self.register(AccessOp::Write, bank, Register::Command, bytes.len() as u64)?;
        let at = self.host_clock;
        let Self {
            memory,
            devices,
            registry,
            ..
        } = self;
        devices[bank as usize].receive_command(DeviceEnv { memory, registry }, at, bytes);
        Ok(())
    }

    pub fn post_command(&mut self, bank: u32, frame: &CommandFrame) -> Result<(), SystemError> {
        self.post_command_bytes(bank, &frame.to_bytes())
    }

    /// Writes one frame to a bank's parameter register.
    pub fn post_parameter(&mut self, bank: u32, frame: &CommandFrame) -> Result<(), SystemError> {
        self.device(bank)?;
        self.register(AccessOp::Write, bank, Register::Parameter, FRAME_LEN as u64)?;
        let at = self.host_clock;
        self.device_mut(bank)?.receive_parameter(at, &frame.to_bytes());
        Ok(())
    }

    /// Blocks until the bank is idle, then reads its status register.
    pub fn read_status(&mut self, bank: u32) -> Result<Status, SystemError> {
        let ready = self.bank_clock(bank)?;
        self.host_clock = self.host_clock.max(ready);
        self.register(AccessOp::Read, bank, Register::Status, STATUS_LEN)?;
        Ok(self.device(bank)?.status())
    }

    /// Blocks until the bank is idle, then reads one response frame.
    pub fn read_response(&mut self, bank: u32) -> Result<CommandFrame, SystemError> {
        let ready = self.bank_clock(bank)?;
        self.host_clock = self.host_clock.max(ready);
        self.register(AccessOp::Read, bank, Register::Response, FRAME_LEN as u64)?;
        Ok(self.device_mut(bank)?.pop_response())
    }

    /// A synchronous command: write the frame, wait, read the response.
    pub fn command(&mut self, bank: u32, frame: &CommandFrame) -> Result<CommandFrame, SystemError> {
        self.post_command(bank, frame)?;
        self.read_response(bank)
    }

    /// Snapshot of a bank's raw contents, as a cold-boot attacker would get
    /// it: every byte ever written, bypassing access control.
    pub fn bank_snapshot(&self, bank: u32) -> Result<Vec<(u64, Vec<u8>)>, SystemError> {
        let b = self.memory.bank(bank)?;
        Ok(b.storage().pages().map(|(o, p)| (o, p.to_vec())).collect())
    }

    /// Closes every row buffer, as after an idle period.
    pub fn reset_row_buffers(&mut self) {
        for b in 0..self.n_banks() {
            self.memory.bank_mut(b).expect("bank exists").reset_row_buffer();
        }
    }
}
