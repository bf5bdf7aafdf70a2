//! Host enclave SDK: claim a bank, attest it, establish a session, place
//! encrypted data, offload a kernel, run it and collect the results.

use alloc::vec::Vec;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::channel::{
    frame_iv, AttestationToken, CommandFrame, CommandId, Direction, ExecState, FrameError,
    Phase, TokenError, NONCE_LEN, PAYLOAD_LEN,
};
use crate::crypto::{measure, wrap_session_key, Digest, EndorsementPublic, SymmetricKey};
use crate::dma::{encode_blocks, BlockLayout, DmaError, EncryptedBlock, IvCounter};
use crate::memory::{AccessRange, MemoryError};
use crate::pim::KernelImage;
use crate::system::{System, SystemError};

/// Allocation granularity of the bump allocator.
pub const ALLOC_ALIGN: u64 = 4096;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HostError {
    #[error("bank {0} already has a client")]
    BankBusy(u32),
    #[error("bank {0} does not exist")]
    NoSuchBank(u32),
    #[error("attestation failed: {0}")]
    Token(#[from] TokenError),
    #[error("device rejected {0:?}")]
    Rejected(CommandId),
    #[error("response frame failed authentication")]
    Response,
    #[error("operation needs an established session")]
    NoSession,
    #[error("allocation of {size} bytes does not fit in the bank")]
    OutOfMemory { size: u64 },
    #[error("{need} bytes do not fit an allocation of {have}")]
    AllocationOverflow { need: u64, have: u64 },
    #[error("region at {offset:#x} of {size} bytes cannot be expressed as one access range")]
    Unalignable { offset: u64, size: u64 },
    #[error("parameters of {0} bytes exceed one frame")]
    ParamsTooLarge(usize),
    #[error("device reported a failed execution")]
    ExecutionFailed,
    #[error("stored data failed authentication")]
    Tamper,
    #[error("kernel measurement does not match the image sent")]
    Measurement,
    #[error(transparent)]
    Dma(#[from] DmaError),
    #[error(transparent)]
    System(#[from] SystemError),
}

impl From<MemoryError> for HostError {
    fn from(e: MemoryError) -> Self {
        HostError::System(SystemError::Memory(e))
    }
}

/// A region of one bank handed out by the allocator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BankAllocation {
    pub host_addr: u64,
    pub offset: u64,
    pub size: u64,
}

#[derive(Debug, Clone)]
struct Session {
    key: SymmetricKey,
    next_seq: u64,
}

/// The host enclave's client for one bank.
#[derive(Debug, Clone)]
pub struct PimHandle {
    bank: u32,
    cursor: u64,
    bank_size: u64,
    phase: Phase,
    session: Option<Session>,
    data_key: Option<SymmetricKey>,
    data_ivs: IvCounter,
    images_sent: u64,
    pending_params: usize,
    last_exec_seq: u64,
    token: Option<AttestationToken>,
    epoch: u64,
    measurement: Option<Digest>,
    rng: ChaCha20Rng,
}

impl PimHandle {
    /// Claims `bank` for this client.
    pub fn init(sys: &mut System, bank: u32) -> Result<Self, HostError> {
        if bank >= sys.n_banks() {
            return Err(HostError::NoSuchBank(bank));
        }
        if !sys.claim(bank)? {
            return Err(HostError::BankBusy(bank));
        }
        let seed = sys.config().seed ^ 0x4057_0000_0000 ^ bank as u64;
        Ok(PimHandle {
            bank,
            cursor: 0,
            bank_size: sys.config().bank_size_bytes,
            phase: Phase::Idle,
            session: None,
            data_key: None,
            data_ivs: IvCounter::new(IvCounter::HOST),
            images_sent: 0,
            pending_params: 0,
            last_exec_seq: 0,
            token: None,
            epoch: 0,
            measurement: None,
            rng: ChaCha20Rng::seed_from_u64(seed),
        })
    }

    /// Gives the bank up for another client.
    pub fn release(self, sys: &mut System) {
        sys.release(self.bank);
    }

    pub fn bank(&self) -> u32 {
        self.bank
    }

    /// The host's view of the device phase.
    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn measurement(&self) -> Option<Digest> {
        self.measurement
    }

    /// The data key, for encrypting datasets ahead of time.
    pub fn data_key(&self) -> Option<&SymmetricKey> {
        self.data_key.as_ref()
    }

    pub fn alloc(&mut self, sys: &System, size: u64) -> Result<BankAllocation, HostError> {
        self.alloc_aligned(sys, size, ALLOC_ALIGN)
    }

    /// An allocation that one access range can cover exactly: `size` must be
    /// a power of two and the region is aligned to it.
    pub fn alloc_protectable(&mut self, sys: &System, size: u64) -> Result<BankAllocation, HostError> {
        if !size.is_power_of_two() {
            return Err(HostError::Unalignable {
                offset: self.cursor,
                size,
            });
        }
        self.alloc_aligned(sys, size, size.max(ALLOC_ALIGN))
    }

    fn alloc_aligned(&mut self, sys: &System, size: u64, align: u64) -> Result<BankAllocation, HostError> {
        let offset = self.cursor.next_multiple_of(align);
        let end = offset
            .checked_add(size.max(1))
            .filter(|&e| e <= self.bank_size)
            .ok_or(HostError::OutOfMemory { size })?;
        self.cursor = end.next_multiple_of(ALLOC_ALIGN);
        let host_addr = sys.memory().host_address(crate::memory::BankAddress {
            bank: self.bank,
            offset,
        })?;
        Ok(BankAllocation {
            host_addr,
            offset,
            size,
        })
    }

    fn frame_work(&self, sys: &mut System) {
        sys.host_cycles(sys.config().host_costs.frame_crypto);
    }

    fn next_seq(&mut self) -> Result<u64, HostError> {
        let s = self.session.as_mut().ok_or(HostError::NoSession)?;
        let seq = s.next_seq;
        s.next_seq += 1;
        Ok(seq)
    }

    fn seal(&mut self, sys: &mut System, dir: Direction, cmd: CommandId, payload: &[u8]) -> Result<CommandFrame, HostError> {
        if payload.len() > PAYLOAD_LEN {
            return Err(HostError::ParamsTooLarge(payload.len()));
        }
        let seq = self.next_seq()?;
        self.frame_work(sys);
        let key = &self.session.as_ref().expect("checked by next_seq").key;
        Ok(CommandFrame::seal(key, dir, 0, cmd as u8, seq, payload).expect("length checked"))
    }

    fn open(&self, sys: &mut System, frame: &CommandFrame, dir: Direction, index: u32, cmd: CommandId) -> Result<[u8; PAYLOAD_LEN], HostError> {
        self.frame_work(sys);
        if frame.is_error() {
            return Err(HostError::Rejected(cmd));
        }
        let key = &self.session.as_ref().ok_or(HostError::NoSession)?.key;
        if frame.command != cmd as u8 {
            return Err(HostError::Response);
        }
        frame
            .open(key, dir, index)
            .map_err(|_: FrameError| HostError::Response)
    }

    /// Sends a sealed command and checks its sealed acknowledgement.
    fn call(&mut self, sys: &mut System, cmd: CommandId, payload: &[u8]) -> Result<[u8; PAYLOAD_LEN], HostError> {
        let frame = self.seal(sys, Direction::Command, cmd, payload)?;
        let resp = sys.command(self.bank, &frame)?;
        if !resp.is_error() && resp.seq != frame.seq {
            return Err(HostError::Response);
        }
        self.open(sys, &resp, Direction::Response, 0, cmd)
    }

    /// GET_TOKEN with a fresh nonce; the token must verify under `trusted`.
    pub fn attest(&mut self, sys: &mut System, trusted: &EndorsementPublic) -> Result<AttestationToken, HostError> {
        let mut nonce = [0u8; NONCE_LEN];
        self.rng.fill_bytes(&mut nonce);
        let frame = CommandFrame::plain(CommandId::GetToken as u8, 0, &nonce).expect("nonce fits");
        let resp = sys.command(self.bank, &frame)?;
        self.frame_work(sys);
        if resp.command != CommandId::GetToken as u8 {
            return Err(HostError::Rejected(CommandId::GetToken));
        }
        let token = AttestationToken::from_bytes(&resp.payload)?;
        token.verify(trusted, self.bank, &nonce)?;
        self.epoch = token.epoch;
        self.token = Some(token);
        self.phase = self.phase.after(CommandId::GetToken);
        Ok(token)
    }

    /// Wraps a fresh session key to the attested device (SET_SESSION_KEY).
    /// A repeat call rekeys the session.
    pub fn establish_session(&mut self, sys: &mut System, trusted: &EndorsementPublic) -> Result<(), HostError> {
        let token = self.token.ok_or(HostError::Rejected(CommandId::SetSessionKey))?;
        let key = SymmetricKey::generate(&mut self.rng);
        let aad = AttestationToken {
            epoch: self.epoch,
            ..token
        }
        .wrap_context();
        let wrapped = wrap_session_key(&mut self.rng, trusted, &key, &aad);
        self.frame_work(sys);
        let frame = CommandFrame::plain(CommandId::SetSessionKey as u8, 0, &wrapped.0).expect("wrap fits");
        let resp = sys.command(self.bank, &frame)?;
        self.frame_work(sys);
        if resp.is_error() {
            return Err(HostError::Rejected(CommandId::SetSessionKey));
        }
        resp.open(&key, Direction::KeyConfirm, 0)
            .map_err(|_| HostError::Response)?;
        if resp.seq != self.epoch + 1 {
            return Err(HostError::Response);
        }
        self.epoch += 1;
        self.session = Some(Session { key, next_seq: 0 });
        self.pending_params = 0;
        self.phase = self.phase.after(CommandId::SetSessionKey);
        Ok(())
    }

    /// SET_DATA_KEY.
    pub fn set_data_key(&mut self, sys: &mut System, key: SymmetricKey) -> Result<(), HostError> {
        self.call(sys, CommandId::SetDataKey, key.expose())?;
        self.data_key = Some(key);
        Ok(())
    }

    /// Attestation, session establishment and a fresh data key.
    pub fn attest_and_establish(&mut self, sys: &mut System, trusted: &EndorsementPublic) -> Result<(), HostError> {
        let key = SymmetricKey::generate(&mut self.rng);
        self.attest_and_establish_with_data_key(sys, trusted, key)
    }

    /// As [`attest_and_establish`](Self::attest_and_establish) with a data
    /// key chosen by the caller, for data encrypted ahead of time.
    pub fn attest_and_establish_with_data_key(
        &mut self,
        sys: &mut System,
        trusted: &EndorsementPublic,
        data_key: SymmetricKey,
    ) -> Result<(), HostError> {
        self.attest(sys, trusted)?;
        self.establish_session(sys, trusted)?;
        self.set_data_key(sys, data_key)
    }

    /// Writes raw bytes through the host port.
    pub fn write_raw(&mut self, sys: &mut System, alloc: &BankAllocation, offset: u64, bytes: &[u8]) -> Result<(), HostError> {
        if offset + bytes.len() as u64 > alloc.size {
            return Err(HostError::AllocationOverflow {
                need: offset + bytes.len() as u64,
                have: alloc.size,
            });
        }
        sys.host_write(alloc.host_addr + offset, bytes)?;
        Ok(())
    }

    pub fn read_raw(&mut self, sys: &mut System, alloc: &BankAllocation, offset: u64, len: u64) -> Result<Vec<u8>, HostError> {
        if offset + len > alloc.size {
            return Err(HostError::AllocationOverflow {
                need: offset + len,
                have: alloc.size,
            });
        }
        Ok(sys.host_read(alloc.host_addr + offset, len)?.data)
    }

    /// Encrypts `data` under the data key and writes the blocks back to
    /// back.
    pub fn load_data(&mut self, sys: &mut System, alloc: &BankAllocation, data: &[u8], layout: &BlockLayout) -> Result<(), HostError> {
        self.load_data_strided(sys, alloc, data, layout, layout.wire_size())
    }

    /// As [`load_data`](Self::load_data) with block `i` at `i * stride`.
    pub fn load_data_strided(
        &mut self,
        sys: &mut System,
        alloc: &BankAllocation,
        data: &[u8],
        layout: &BlockLayout,
        stride: u64,
    ) -> Result<(), HostError> {
        let key = self.data_key.as_ref().ok_or(HostError::NoSession)?;
        let need = stride_span(layout.n_blocks, stride, layout.wire_size());
        if need > alloc.size || stride < layout.wire_size() {
            return Err(HostError::AllocationOverflow {
                need,
                have: alloc.size,
            });
        }
        let blocks = encode_blocks(data, layout, key, &mut self.data_ivs)?;
        self.load_blocks(sys, alloc, &blocks, stride)
    }

    /// Writes already encrypted blocks.
    pub fn load_blocks(&mut self, sys: &mut System, alloc: &BankAllocation, blocks: &[EncryptedBlock], stride: u64) -> Result<(), HostError> {
        let wire = blocks.first().map_or(0, |b| b.wire_size());
        let need = stride_span(blocks.len() as u64, stride, wire);
        if need > alloc.size {
            return Err(HostError::AllocationOverflow {
                need,
                have: alloc.size,
            });
        }
        for (i, b) in blocks.iter().enumerate() {
            sys.host_write(alloc.host_addr + i as u64 * stride, &b.to_bytes())?;
        }
        Ok(())
    }

    /// Reads blocks back and opens them with the data key.
    pub fn get_output(&mut self, sys: &mut System, alloc: &BankAllocation, layout: &BlockLayout, stride: u64) -> Result<Vec<u8>, HostError> {
        let key = self.data_key.clone().ok_or(HostError::NoSession)?;
        let need = stride_span(layout.n_blocks, stride, layout.wire_size());
        if need > alloc.size {
            return Err(HostError::AllocationOverflow {
                need,
                have: alloc.size,
            });
        }
        let mut out = Vec::with_capacity(layout.size_data as usize);
        for i in 0..layout.n_blocks {
            let r = sys.host_read(alloc.host_addr + i * stride, layout.wire_size())?;
            let block = EncryptedBlock::from_bytes(&r.data)?;
            let pt = block.open(&key).map_err(|_| HostError::Tamper)?;
            out.extend_from_slice(&pt[..layout.data_in_block(i) as usize]);
        }
        Ok(out)
    }

    /// Seals `image` under the session key, stages it in `staging` and sends
    /// OFFLOAD_KERNEL. The returned measurement is checked against our own.
    pub fn load_kernel(&mut self, sys: &mut System, staging: &BankAllocation, image: &KernelImage) -> Result<Digest, HostError> {
        let bytes = image.to_bytes();
        let key = &self.session.as_ref().ok_or(HostError::NoSession)?.key;
        let iv = frame_iv(Direction::Image, 0, self.images_sent);
        self.images_sent += 1;
        let wire = EncryptedBlock::seal(key, iv, &bytes).to_bytes();
        self.write_raw(sys, staging, 0, &wire)?;
        let mut p = [0u8; 12];
        p[..8].copy_from_slice(&staging.offset.to_le_bytes());
        p[8..].copy_from_slice(&(wire.len() as u32).to_le_bytes());
        let resp = self.call(sys, CommandId::OffloadKernel, &p)?;
        let digest = Digest(resp[..32].try_into().expect("32 bytes"));
        if digest != measure(&bytes) {
            return Err(HostError::Measurement);
        }
        self.measurement = Some(digest);
        self.phase = self.phase.after(CommandId::OffloadKernel);
        Ok(digest)
    }

    /// PROTECT over exactly `alloc`.
    pub fn protect(&mut self, sys: &mut System, alloc: &BankAllocation) -> Result<(), HostError> {
        let range = AccessRange::for_region(alloc.offset, alloc.size, self.bank_size).map_err(|_| HostError::Unalignable {
            offset: alloc.offset,
            size: alloc.size,
        })?;
        self.protect_range(sys, range)
    }

    pub fn unprotect(&mut self, sys: &mut System) -> Result<(), HostError> {
        self.protect_range(sys, AccessRange::DISABLED)
    }

    fn protect_range(&mut self, sys: &mut System, range: AccessRange) -> Result<(), HostError> {
        let mut p = [0u8; 16];
        p[..8].copy_from_slice(&range.base().to_le_bytes());
        p[8..].copy_from_slice(&range.mask().to_le_bytes());
        self.call(sys, CommandId::Protect, &p)?;
        Ok(())
    }

    /// Sends one parameter frame. Parameters hold handles, sizes and
    /// scalars only; several frames may precede one EXECUTE.
    pub fn offload_params(&mut self, sys: &mut System, params: &[u8]) -> Result<(), HostError> {
        if params.len() > PAYLOAD_LEN {
            return Err(HostError::ParamsTooLarge(params.len()));
        }
        let frame = self.seal(sys, Direction::Parameter, CommandId::Execute, params)?;
        sys.post_parameter(self.bank, &frame)?;
        self.pending_params = self.pending_params.next_multiple_of(PAYLOAD_LEN) + params.len();
        Ok(())
    }

    /// Sends `params` split over as many parameter frames as needed.
    pub fn offload_params_long(&mut self, sys: &mut System, params: &[u8]) -> Result<(), HostError> {
        for chunk in params.chunks(PAYLOAD_LEN) {
            self.offload_params(sys, chunk)?;
        }
        Ok(())
    }

    /// Posts EXECUTE without waiting for completion.
    pub fn execute(&mut self, sys: &mut System) -> Result<(), HostError> {
        let declared = core::mem::take(&mut self.pending_params) as u32;
        let frame = self.seal(sys, Direction::Command, CommandId::Execute, &declared.to_le_bytes())?;
        sys.post_command(self.bank, &frame)?;
        self.last_exec_seq = frame.seq;
        Ok(())
    }

    /// Polls the status register, then reads and opens the result frames.
    pub fn wait(&mut self, sys: &mut System) -> Result<Vec<u8>, HostError> {
        let status = sys.read_status(self.bank)?;
        if status.state != ExecState::Done {
            return Err(HostError::ExecutionFailed);
        }
        let mut stream = Vec::with_capacity(status.result_frames as usize * PAYLOAD_LEN);
        for i in 0..status.result_frames {
            let f = sys.read_response(self.bank)?;
            if f.seq != self.last_exec_seq {
                return Err(HostError::Response);
            }
            stream.extend_from_slice(&self.open(sys, &f, Direction::Result, i, CommandId::Execute)?);
        }
        let len = stream
            .get(..4)
            .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
            .filter(|&l| 4 + l <= stream.len())
            .ok_or(HostError::Response)?;
        Ok(stream[4..4 + len].to_vec())
    }

    /// One parameter frame, EXECUTE, and the results.
    pub fn offload_and_execute(&mut self, sys: &mut System, params: &[u8]) -> Result<Vec<u8>, HostError> {
        self.offload_params(sys, params)?;
        self.execute(sys)?;
        self.wait(sys)
    }

    /// DESTROY: the device wipes keys, local memory and its access range.
    pub fn destroy(&mut self, sys: &mut System) -> Result<(), HostError> {
        self.call(sys, CommandId::Destroy, &[])?;
        self.session = None;
        self.data_key = None;
        self.measurement = None;
        self.token = None;
        self.phase = Phase::Destroyed;
        Ok(())
    }
}

fn stride_span(n: u64, stride: u64, wire: u64) -> u64 {
    if n == 0 {
        0
    } else {
        (n - 1) * stride + wire
    }
}
