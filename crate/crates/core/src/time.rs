//! Simulated time.
//!
//! Time is an integer count of ticks, one tick being a third of a picosecond.
//! That resolution makes every default latency exact: the 0.01 ns local-memory
//! access (30 ticks), the 13.75 ns DRAM timings, the 250 ps host cycle and the
//! 10/3 ns period of a 300 MHz AES engine (10 000 ticks).

use core::fmt;
use core::iter::Sum;
use core::ops::{Add, AddAssign, Sub};

use thiserror::Error;

/// Ticks in one nanosecond.
pub const TICKS_PER_NS: u64 = 3_000;
/// Ticks in one picosecond.
pub const TICKS_PER_PS: u64 = 3;
/// Ticks in one second.
pub const TICKS_PER_SEC: u64 = TICKS_PER_NS * 1_000_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("simulated time overflow")]
pub struct TimeOverflow;

/// A point in (or span of) simulated time.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SimTime(u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);
    pub const MAX: SimTime = SimTime(u64::MAX);

    pub const fn from_ticks(ticks: u64) -> Self {
        SimTime(ticks)
    }

    pub const fn from_ns(ns: u64) -> Self {
        SimTime(ns * TICKS_PER_NS)
    }

    pub const fn from_ps(ps: u64) -> Self {
        SimTime(ps * TICKS_PER_PS)
    }

    /// Period of a clock running at `hz`, if it is an exact number of ticks.
    pub const fn period_of(hz: u64) -> Option<Self> {
        if hz == 0 || !TICKS_PER_SEC.is_multiple_of(hz) {
            None
        } else {
            Some(SimTime(TICKS_PER_SEC / hz))
        }
    }

    pub const fn ticks(self) -> u64 {
        self.0
    }

    /// Whole picoseconds, rounded down.
    pub const fn as_ps_floor(self) -> u64 {
        self.0 / TICKS_PER_PS
    }

    pub fn as_ns_f64(self) -> f64 {
        self.0 as f64 / TICKS_PER_NS as f64
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / TICKS_PER_SEC as f64
    }

    /// `self + delta`, failing instead of wrapping.
    pub fn advance(self, delta: SimTime) -> Result<SimTime, TimeOverflow> {
        self.0.checked_add(delta.0).map(SimTime).ok_or(TimeOverflow)
    }

    /// `n` repetitions of this span.
    pub fn times(self, n: u64) -> Result<SimTime, TimeOverflow> {
        self.0.checked_mul(n).map(SimTime).ok_or(TimeOverflow)
    }

    pub fn saturating_sub(self, other: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(other.0))
    }

    /// Ratio of two spans as a float, for reporting only.
    pub fn ratio(self, denom: SimTime) -> f64 {
        self.0 as f64 / denom.0 as f64
    }
}

impl Add for SimTime {
    type Output = SimTime;

    fn add(self, rhs: SimTime) -> SimTime {
        self.advance(rhs).expect("simulated time overflow")
    }
}

impl AddAssign for SimTime {
    fn add_assign(&mut self, rhs: SimTime) {
        *self = *self + rhs;
    }
}

impl Sub for SimTime {
    type Output = SimTime;

    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.checked_sub(rhs.0).expect("negative simulated span"))
    }
}

impl Sum for SimTime {
    fn sum<I: Iterator<Item = SimTime>>(iter: I) -> SimTime {
        iter.fold(SimTime::ZERO, |a, b| a + b)
    }
}

/// Nanoseconds with three decimals (picosecond precision, truncated).
impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ps = self.as_ps_floor();
        write!(f, "{}.{:03}", ps / 1000, ps % 1000)
    }
}

/// Transfer rate expressed as bytes per nanosecond, held in millionths so that
/// decimal configuration values map to exact integers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bandwidth {
    micro_bytes_per_ns: u64,
}

impl Bandwidth {
    pub const fn from_micro_bytes_per_ns(micro: u64) -> Self {
        Bandwidth {
            micro_bytes_per_ns: micro,
        }
    }

    pub fn micro_bytes_per_ns(self) -> u64 {
        self.micro_bytes_per_ns
    }

    pub fn bytes_per_ns_f64(self) -> f64 {
        self.micro_bytes_per_ns as f64 / 1e6
    }

    /// Time to move `bytes`, rounded up to the next tick.
    pub fn transfer_time(self, bytes: u64) -> SimTime {
        let num = bytes as u128 * TICKS_PER_NS as u128 * 1_000_000;
        let den = self.micro_bytes_per_ns as u128;
        SimTime::from_ticks(num.div_ceil(den) as u64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    #[test]
    fn advance_exact() {
        let t = SimTime::ZERO.advance(SimTime::from_ps(3200)).unwrap();
        assert_eq!(t.to_string(), "3.200");

        let step = SimTime::from_ps(10);
        let mut t = SimTime::ZERO;
        for _ in 0..100 {
            t = t.advance(step).unwrap();
        }
        assert_eq!(t, SimTime::from_ns(1));
    }

    #[test]
    fn aes_period_round_trips() {
        let period = SimTime::period_of(300_000_000).unwrap();
        assert_eq!(period.ticks(), 10_000);
        // 3 periods are exactly 10 ns
        assert_eq!(period.times(3).unwrap(), SimTime::from_ns(10));
        let mut t = SimTime::ZERO;
        for _ in 0..1_000_000u64 {
            t = t.advance(period).unwrap();
        }
        // 10^6 * 10/3 ns = 10^7/3 ns; times three is an exact integer
        assert_eq!(t.ticks() * 3, 10_000_000 * TICKS_PER_NS);
        assert_eq!(t, period.times(1_000_000).unwrap());
    }

    #[test]
    fn billion_local_accesses_stay_exact() {
        let step = SimTime::from_ps(10);
        assert_eq!(step.times(1_000_000_000).unwrap(), SimTime::from_ns(10_000_000));
    }

    #[test]
    fn overflow_is_reported() {
        assert_eq!(SimTime::MAX.advance(SimTime::from_ticks(1)), Err(TimeOverflow));
        assert!(SimTime::from_ns(1).times(u64::MAX).is_err());
    }

    #[test]
    fn inexact_clock_rejected() {
        assert!(SimTime::period_of(7).is_none());
        assert!(SimTime::period_of(0).is_none());
        assert_eq!(SimTime::period_of(4_000_000_000).unwrap().ticks(), 750);
    }

    #[test]
    fn bandwidth_rounds_up() {
        let bw = Bandwidth::from_micro_bytes_per_ns(1_250_000);
        assert_eq!(bw.transfer_time(1), SimTime::from_ps(800));
        let odd = Bandwidth::from_micro_bytes_per_ns(3_600_000);
        // 1 byte at 3.6 B/ns is 277.77.. ps = 833.33 ticks, rounded up
        assert_eq!(odd.transfer_time(1).ticks(), 834);
        assert_eq!(odd.transfer_time(36).ticks(), 30_000);
    }
}
