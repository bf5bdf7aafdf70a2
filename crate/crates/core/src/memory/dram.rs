//! Open-page row-buffer timing.
//!
//! Every burst-aligned chunk touched by an access costs `tBURST` when its row
//! is already open and `tRP + tRCD + tCL + tBURST` otherwise, after which that
//! row stays open. Chunks of one access are charged serially.

use crate::config::SimConfig;
use crate::time::SimTime;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RowBuffer {
    open_row: Option<u64>,
}

impl RowBuffer {
    pub fn open_row(&self) -> Option<u64> {
        self.open_row
    }

    pub fn close(&mut self) {
        self.open_row = None;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DramTiming {
    pub row_buffer_bytes: u64,
    pub burst_bytes: u64,
    pub t_rp: SimTime,
    pub t_rcd: SimTime,
    pub t_cl: SimTime,
    pub t_burst: SimTime,
}

impl DramTiming {
    pub fn from_config(cfg: &SimConfig) -> Self {
        DramTiming {
            row_buffer_bytes: cfg.row_buffer_bytes,
            burst_bytes: cfg.burst_bytes,
            t_rp: cfg.t_rp,
            t_rcd: cfg.t_rcd,
            t_cl: cfg.t_cl,
            t_burst: cfg.t_burst,
        }
    }

    pub fn row_miss(&self) -> SimTime {
        self.t_rp + self.t_rcd + self.t_cl + self.t_burst
    }

    /// Latency of an access, updating the row buffer.
    pub fn access(&self, rb: &mut RowBuffer, offset: u64, size: u64) -> SimTime {
        let (latency, last_row) = self.walk(rb.open_row, offset, size);
        if size > 0 {
            rb.open_row = Some(last_row);
        }
        latency
    }

    /// Latency the access would have, leaving the row buffer untouched.
    pub fn peek(&self, rb: &RowBuffer, offset: u64, size: u64) -> SimTime {
        self.walk(rb.open_row, offset, size).0
    }

    /// Latency of one un-buffered register transfer: a full row cycle plus
    /// one burst per chunk.
    pub fn register_access(&self, size: u64) -> SimTime {
        let bursts = size.div_ceil(self.burst_bytes).max(1);
        self.t_rp + self.t_rcd + self.t_cl + self.t_burst.times(bursts).expect("overflow")
    }

    fn walk(&self, mut open: Option<u64>, offset: u64, size: u64) -> (SimTime, u64) {
        if size == 0 {
            return (SimTime::ZERO, 0);
        }
        let first = offset / self.burst_bytes;
        let last = (offset + size - 1) / self.burst_bytes;
        let chunks_per_row = self.row_buffer_bytes / self.burst_bytes;
        let mut latency = SimTime::ZERO;
        let mut chunk = first;
        let mut row = 0;
        while chunk <= last {
            row = chunk / chunks_per_row;
            // chunks left in this row that belong to the access
            let row_end = (row + 1) * chunks_per_row - 1;
            let n = row_end.min(last) - chunk + 1;
            if open == Some(row) {
                latency += self.t_burst.times(n).expect("overflow");
            } else {
                latency += self.row_miss() + self.t_burst.times(n - 1).expect("overflow");
                open = Some(row);
            }
            chunk += n;
        }
        (latency, row)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn timing() -> DramTiming {
        DramTiming::from_config(&SimConfig::default())
    }

    #[test]
    fn closed_bank_first_burst() {
        let t = timing();
        let mut rb = RowBuffer::default();
        assert_eq!(t.access(&mut rb, 0, 32), SimTime::from_ps(44_450));
        assert_eq!(t.access(&mut rb, 32, 32), SimTime::from_ps(3_200));
        assert_eq!(rb.open_row(), Some(0));
    }

    #[test]
    fn full_row_read() {
        let t = timing();
        let mut rb = RowBuffer::default();
        assert_eq!(t.access(&mut rb, 0, 256), SimTime::from_ps(66_850));
    }

    #[test]
    fn unaligned_access_touches_two_bursts() {
        let t = timing();
        let mut rb = RowBuffer::default();
        assert_eq!(t.access(&mut rb, 16, 32), SimTime::from_ps(44_450 + 3_200));
    }

    #[test]
    fn peek_leaves_state() {
        let t = timing();
        let rb = RowBuffer::default();
        assert_eq!(t.peek(&rb, 512, 64), SimTime::from_ps(44_450 + 3_200));
        assert_eq!(rb.open_row(), None);
    }

    #[test]
    fn row_switch_misses() {
        let t = timing();
        let mut rb = RowBuffer::default();
        t.access(&mut rb, 0, 32);
        assert_eq!(t.access(&mut rb, 256, 32), SimTime::from_ps(44_450));
        assert_eq!(t.access(&mut rb, 0, 32), SimTime::from_ps(44_450));
    }
}
