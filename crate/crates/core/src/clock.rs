// SPDX-License-Identifier: Apache-2.0

//! Injectable time source. All timestamps are nanoseconds so virtual-time and
//! wall-clock runs share code.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

pub type Nanos = u64;

pub const NANOS_PER_MILLI: u64 = 1_000_000;
pub const NANOS_PER_SEC: u64 = 1_000_000_000;

pub fn from_secs_f64(secs: f64) -> Nanos {
    (secs * NANOS_PER_SEC as f64).round().max(0.0) as Nanos
}

pub fn from_millis_f64(ms: f64) -> Nanos {
    (ms * NANOS_PER_MILLI as f64).round().max(0.0) as Nanos
}

pub fn to_secs_f64(n: Nanos) -> f64 {
    n as f64 / NANOS_PER_SEC as f64
}

pub fn to_millis_f64(n: Nanos) -> f64 {
    n as f64 / NANOS_PER_MILLI as f64
}

pub trait Clock: Send + Sync {
    fn now(&self) -> Nanos;
}

/// Monotonic wall clock measured from construction.
#[derive(Debug)]
pub struct WallClock {
    start: Instant,
}

impl WallClock {
    pub fn new() -> Self {
        Self { start: Instant::now() }
    }
}

impl Default for WallClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for WallClock {
    fn now(&self) -> Nanos {
        self.start.elapsed().as_nanos() as Nanos
    }
}

/// Clock advanced by hand; used by tests and standalone components.
#[derive(Debug, Default)]
pub struct ManualClock {
    now: AtomicU64,
}

impl ManualClock {
    pub fn new(start: Nanos) -> Self {
        Self { now: AtomicU64::new(start) }
    }

    pub fn set(&self, t: Nanos) {
        self.now.store(t, Ordering::SeqCst);
    }

    pub fn advance(&self, dt: Nanos) {
        self.now.fetch_add(dt, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now(&self) -> Nanos {
        self.now.load(Ordering::SeqCst)
    }
}
