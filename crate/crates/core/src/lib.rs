//! Deterministic model of an enclave-capable processing-in-memory module.
//!
//! The crate is `no_std` (with `alloc`) and has no IO. It holds the timing
//! model, the device-side runtime and command channel, the host SDK and the
//! workloads; file formats and the command line live in the companion crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod config;
pub mod crypto;
pub mod memory;
pub mod time;

pub mod channel;
pub mod dma;
pub mod host;
pub mod pim;
pub mod system;
pub mod workloads;
