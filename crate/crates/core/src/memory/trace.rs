//! Host-bus transaction log.

use alloc::vec::Vec;

use crate::time::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AccessOp {
    Read,
    Write,
}

impl AccessOp {
    pub fn as_str(self) -> &'static str {
        match self {
            AccessOp::Read => "READ",
            AccessOp::Write => "WRITE",
        }
    }
}

/// One transaction as seen by a probe on the host memory bus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TraceEvent {
    pub timestamp: SimTime,
    pub op: AccessOp,
    pub address: u64,
    pub size: u64,
    pub blocked: bool,
}

impl TraceEvent {
    /// The part of the event an observer can use to tell queries apart
    /// once timing is discounted.
    pub fn shape(&self) -> (u64, AccessOp, u64) {
        (self.address, self.op, self.size)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Tracer {
    enabled: bool,
    events: Vec<TraceEvent>,
}

impl Tracer {
    pub fn new(enabled: bool) -> Self {
        Tracer {
            enabled,
            events: Vec::new(),
        }
    }

    pub fn is_enabled(&self) -> bool {
        self.enabled
    }

    pub fn set_enabled(&mut self, enabled: bool) {
        self.enabled = enabled;
    }

    pub fn record(&mut self, event: TraceEvent) {
        if !self.enabled {
            return;
        }
        debug_assert!(
            self.events
                .last()
                .is_none_or(|last| last.timestamp <= event.timestamp),
            "trace events out of order"
        );
        self.events.push(event);
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.events
    }

    /// Position to later slice a segment from with [`Tracer::since`].
    pub fn mark(&self) -> usize {
        self.events.len()
    }

    pub fn since(&self, mark: usize) -> &[TraceEvent] {
        &self.events[mark.min(self.events.len())..]
    }

    pub fn clear(&mut self) {
        self.events.clear();
    }
}
