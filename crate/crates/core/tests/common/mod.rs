//! A hand-rolled host that speaks the raw frame protocol, so tests can send
//! any command in any order.

#![allow(dead_code)]

use pim_enclave::channel::{
    frame_iv, AttestationToken, CommandFrame, CommandId, Direction, ExecState, FRAME_LEN,
};
use pim_enclave::config::SimConfig;
use pim_enclave::crypto::{wrap_session_key, SymmetricKey};
use pim_enclave::dma::EncryptedBlock;
use pim_enclave::memory::BankAddress;
use pim_enclave::pim::KernelImage;
use pim_enclave::system::System;
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

pub const STAGING: u64 = 0x10000;

pub fn quiet_system() -> System {
    let cfg = SimConfig {
        tracing: false,
        n_banks: 1,
        ..SimConfig::default()
    };
    System::new(cfg).unwrap()
}

#[derive(Clone)]
pub struct RawHost {
    pub token: Option<AttestationToken>,
    pub epoch: u64,
    pub session: Option<SymmetricKey>,
    pending_key: Option<SymmetricKey>,
    pub next_seq: u64,
    pub images: u64,
    pub rng: ChaCha20Rng,
    /// Every frame written to the command register, in order.
    pub sent: Vec<CommandFrame>,
}

impl RawHost {
    pub fn new(seed: u64) -> Self {
        RawHost {
            token: None,
            epoch: 0,
            session: None,
            pending_key: None,
            next_seq: 0,
            images: 0,
            rng: ChaCha20Rng::seed_from_u64(seed),
            sent: Vec::new(),
        }
    }

    fn sealed(&mut self, cmd: CommandId, payload: &[u8]) -> CommandFrame {
        let key = self
            .session
            .clone()
            .unwrap_or_else(|| SymmetricKey::generate(&mut self.rng));
        let seq = self.next_seq;
        self.next_seq += 1;
        CommandFrame::seal(&key, Direction::Command, 0, cmd as u8, seq, payload).unwrap()
    }

    /// Builds the frame a cooperative host would send for `cmd` given what
    /// it knows. Without a session, sealed frames use a throwaway key.
    pub fn frame_for(&mut self, sys: &mut System, cmd: CommandId) -> CommandFrame {
        match cmd {
            CommandId::GetToken => {
                let mut nonce = [0u8; 32];
                self.rng.fill_bytes(&mut nonce);
                CommandFrame::plain(cmd as u8, 0, &nonce).unwrap()
            }
            CommandId::SetSessionKey => {
                let key = SymmetricKey::generate(&mut self.rng);
                let aad = match self.token {
                    Some(t) => AttestationToken { epoch: self.epoch, ..t }.wrap_context(),
                    None => b"no token".to_vec(),
                };
                let w = wrap_session_key(&mut self.rng, &sys.trusted_ek(), &key, &aad);
                self.pending_key = Some(key);
                CommandFrame::plain(cmd as u8, 0, &w.0).unwrap()
            }
            CommandId::SetDataKey => {
                let mut k = [0u8; 16];
                self.rng.fill_bytes(&mut k);
                self.sealed(cmd, &k)
            }
            CommandId::Protect => self.sealed(cmd, &[0u8; 16]),
            CommandId::OffloadKernel => {
                let image = KernelImage::new("spin", 1, vec![1, 2, 3]).to_bytes();
                let key = self
                    .session
                    .clone()
                    .unwrap_or_else(|| SymmetricKey::generate(&mut self.rng));
                let wire = EncryptedBlock::seal(&key, frame_iv(Direction::Image, 0, self.images), &image).to_bytes();
                self.images += 1;
                let addr = sys.memory().host_address(BankAddress { bank: 0, offset: STAGING }).unwrap();
                sys.host_write(addr, &wire).unwrap();
                let mut p = [0u8; 12];
                p[..8].copy_from_slice(&STAGING.to_le_bytes());
                p[8..].copy_from_slice(&(wire.len() as u32).to_le_bytes());
                self.sealed(cmd, &p)
            }
            CommandId::Execute => self.sealed(cmd, &0u32.to_le_bytes()),
            CommandId::Destroy => self.sealed(cmd, &[]),
        }
    }

    /// Sends `frame` and reports whether the device accepted it, updating
    /// what the host knows.
    pub fn send(&mut self, sys: &mut System, cmd: CommandId, frame: CommandFrame) -> bool {
        self.sent.push(frame);
        sys.post_command(0, &frame).unwrap();
        let accepted = if cmd == CommandId::Execute {
            let st = sys.read_status(0).unwrap();
            let n = if st.state == ExecState::Done { st.result_frames } else { 1 };
            let mut last = None;
            for _ in 0..n {
                last = Some(sys.read_response(0).unwrap());
            }
            let last = last.unwrap();
            assert_eq!(last.to_bytes().len(), FRAME_LEN);
            st.state == ExecState::Done && !last.is_error()
        } else {
            let resp = sys.read_response(0).unwrap();
            assert_eq!(resp.to_bytes().len(), FRAME_LEN);
            if resp.is_error() {
                false
            } else {
                match cmd {
                    CommandId::GetToken => {
                        let t = AttestationToken::from_bytes(&resp.payload).unwrap();
                        self.epoch = t.epoch;
                        self.token = Some(t);
                    }
                    CommandId::SetSessionKey => {
                        let key = self.pending_key.take().unwrap();
                        resp.open(&key, Direction::KeyConfirm, 0).unwrap();
                        self.epoch += 1;
                        self.session = Some(key);
                        self.next_seq = 0;
                    }
                    CommandId::Destroy => {
                        self.session = None;
                        self.token = None;
                    }
                    _ => {}
                }
                true
            }
        };
        if !accepted && cmd == CommandId::SetSessionKey {
            self.pending_key = None;
        }
        accepted
    }

    pub fn step(&mut self, sys: &mut System, cmd: CommandId) -> bool {
        let f = self.frame_for(sys, cmd);
        self.send(sys, cmd, f)
    }
}
