//! Every command sequence of length up to five against a reference
//! transition table written out by hand.

mod common;

use common::{quiet_system, RawHost};
use pim_enclave::channel::{CommandId, Phase};
use pim_enclave::system::System;

use CommandId::*;

/// Expected (accepted, next phase) for a cooperative host.
fn reference(phase: Phase, cmd: CommandId) -> (bool, Phase) {
    use Phase::*;
    match (phase, cmd) {
        (Idle | Destroyed | Faulted, GetToken) => (true, Attested),
        (Idle | Destroyed | Faulted, _) => (false, phase),

        (Attested, GetToken) => (true, Attested),
        (Attested, SetSessionKey) => (true, SessionEstablished),
        (Attested, _) => (false, Attested),

        (SessionEstablished, Execute) => (false, SessionEstablished),
        (SessionEstablished, OffloadKernel) => (true, KernelLoaded),
        (SessionEstablished, Destroy) => (true, Destroyed),
        (SessionEstablished, _) => (true, SessionEstablished),

        (KernelLoaded, Destroy) => (true, Destroyed),
        (KernelLoaded, _) => (true, KernelLoaded),

        (Executing, _) => unreachable!("never observable between commands"),
    }
}

struct Walk {
    sequences: usize,
    commands: usize,
}

fn dfs(sys: &System, host: &RawHost, phase: Phase, path: &mut Vec<CommandId>, depth: usize, w: &mut Walk) {
    w.sequences += 1;
    if depth == 0 {
        return;
    }
    for cmd in CommandId::ALL {
        let mut s = sys.clone();
        let mut h = host.clone();
        path.push(cmd);
        let accepted = h.step(&mut s, cmd);
        w.commands += 1;
        let (want_ok, want_phase) = reference(phase, cmd);
        let got = s.phase(0).unwrap();
        assert_eq!((accepted, got), (want_ok, want_phase), "sequence {path:?}");
        if cmd == Destroy && accepted {
            let d = s.device(0).unwrap();
            assert!(d.key_slots_empty(), "{path:?}");
            assert!(d.local_memory().is_all_zero(), "{path:?}");
            assert!(s.memory().bank(0).unwrap().access_range().is_disabled());
        }
        dfs(&s, &h, got, path, depth - 1, w);
        path.pop();
    }
}

#[test]
fn all_sequences_up_to_five() {
    let sys = quiet_system();
    let host = RawHost::new(11);
    let mut w = Walk {
        sequences: 0,
        commands: 0,
    };
    dfs(&sys, &host, Phase::Idle, &mut Vec::new(), 5, &mut w);
    // the empty sequence plus 7 + 7^2 + ... + 7^5 non-empty ones
    assert_eq!(w.sequences, 19_608);
    assert_eq!(w.commands, 19_607);
}

#[test]
fn full_path_reaches_kernel_loaded_and_runs() {
    let mut sys = quiet_system();
    let mut h = RawHost::new(3);
    for cmd in [GetToken, SetSessionKey, SetDataKey, OffloadKernel, Execute, Execute, Protect] {
        assert!(h.step(&mut sys, cmd), "{cmd:?}");
    }
    assert_eq!(sys.phase(0).unwrap(), Phase::KernelLoaded);
}

#[test]
fn reattest_after_destroy() {
    let mut sys = quiet_system();
    let mut h = RawHost::new(4);
    for cmd in [GetToken, SetSessionKey, OffloadKernel, Destroy, GetToken, SetSessionKey] {
        assert!(h.step(&mut sys, cmd), "{cmd:?}");
    }
    assert_eq!(sys.phase(0).unwrap(), Phase::SessionEstablished);
    assert!(!h.step(&mut sys, Execute), "kernel must not survive destroy");
}
