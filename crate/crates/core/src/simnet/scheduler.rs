// SPDX-License-Identifier: Apache-2.0

use std::cmp::Ordering as CmpOrdering;
use std::collections::BinaryHeap;
use std::fmt;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Weak};
use std::time::{Duration, Instant};

use parking_lot::Mutex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::clock::{Clock, Nanos};

type Action = Box<dyn FnOnce() + Send>;

struct Scheduled {
    at: Nanos,
    seq: u64,
    action: Action,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        self.at == other.at && self.seq == other.seq
    }
}

impl Eq for Scheduled {}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<CmpOrdering> {
        Some(self.cmp(other))
    }
}

// BinaryHeap is a max-heap; invert so the earliest (time, insertion) pops first.
impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> CmpOrdering {
        other.at.cmp(&self.at).then_with(|| other.seq.cmp(&self.seq))
    }
}

struct SimState {
    now: Nanos,
    next_seq: u64,
    queue: BinaryHeap<Scheduled>,
    rng: ChaCha8Rng,
    processed: u64,
}

/// Cancels a periodic timer when dropped or cancelled explicitly.
#[derive(Debug, Clone)]
pub struct TimerHandle {
    cancelled: Arc<AtomicBool>,
}

impl TimerHandle {
    pub fn cancel(&self) {
        self.cancelled.store(true, Ordering::Release);
    }

    pub fn is_cancelled(&self) -> bool {
        self.cancelled.load(Ordering::Acquire)
    }
}

/// Virtual-time discrete-event scheduler with a seeded random source.
///
/// Events fire in non-decreasing time order; ties go to the earlier insertion.
/// No internal lock is held while an event action runs, so actions may
/// schedule further events.
pub struct Simulator {
    state: Mutex<SimState>,
    trace: Mutex<Option<Vec<String>>>,
}

impl fmt::Debug for Simulator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let st = self.state.lock();
        f.debug_struct("Simulator")
            .field("now", &st.now)
            .field("pending", &st.queue.len())
            .field("processed", &st.processed)
            .finish()
    }
}

impl Simulator {
    pub fn new(seed: u64) -> Arc<Self> {
        Arc::new(Self {
            state: Mutex::new(SimState {
                now: 0,
                next_seq: 0,
                queue: BinaryHeap::new(),
                rng: ChaCha8Rng::seed_from_u64(seed),
                processed: 0,
            }),
            trace: Mutex::new(None),
        })
    }

    pub fn now(&self) -> Nanos {
        self.state.lock().now
    }

    pub fn pending(&self) -> usize {
        self.state.lock().queue.len()
    }

    pub fn processed(&self) -> u64 {
        self.state.lock().processed
    }

    /// Schedules `action` at `at`; times in the past are clamped to now.
    pub fn schedule_at(&self, at: Nanos, action: impl FnOnce() + Send + 'static) {
        let mut st = self.state.lock();
        let at = at.max(st.now);
        let seq = st.next_seq;
        st.next_seq += 1;
        st.queue.push(Scheduled { at, seq, action: Box::new(action) });
    }

    pub fn schedule_in(&self, delay: Nanos, action: impl FnOnce() + Send + 'static) {
        let at = self.now().saturating_add(delay);
        self.schedule_at(at, action);
    }

    /// Runs `action` at `first` and then every `period` until the handle is
    /// cancelled.
    pub fn schedule_every(
        self: &Arc<Self>,
        first: Nanos,
        period: Nanos,
        action: impl Fn() + Send + Sync + 'static,
    ) -> TimerHandle {
        assert!(period > 0, "timer period must be positive");
        let handle = TimerHandle { cancelled: Arc::new(AtomicBool::new(false)) };
        let action: Arc<dyn Fn() + Send + Sync> = Arc::new(action);
        arm(Arc::downgrade(self), first, period, action, handle.clone());
        handle
    }

    pub fn with_rng<R>(&self, f: impl FnOnce(&mut ChaCha8Rng) -> R) -> R {
        f(&mut self.state.lock().rng)
    }

    /// Processes every event with time <= `t_end`, then sets the clock to
    /// `t_end`. Returns the number of events processed.
    pub fn run_until(&self, t_end: Nanos) -> u64 {
        self.run(t_end, None)
    }

    /// Same event order as [`run_until`](Self::run_until), but each event waits
    /// for its wall-clock due time first.
    pub fn run_realtime(&self, t_end: Nanos) -> u64 {
        let origin = (Instant::now(), self.now());
        self.run(t_end, Some(origin))
    }

    fn run(&self, t_end: Nanos, realtime: Option<(Instant, Nanos)>) -> u64 {
        let mut count = 0;
        loop {
            let event = {
                let mut st = self.state.lock();
                match st.queue.peek() {
                    Some(top) if top.at <= t_end => {
                        let ev = st.queue.pop().expect("peeked");
                        st.now = ev.at;
                        st.processed += 1;
                        ev
                    }
                    _ => {
                        if st.now < t_end {
                            st.now = t_end;
                        }
                        break;
                    }
                }
            };
            if let Some((wall0, virt0)) = realtime {
                let due = wall0 + Duration::from_nanos(event.at - virt0);
                let now = Instant::now();
                if due > now {
                    std::thread::sleep(due - now);
                }
            }
            (event.action)();
            count += 1;
        }
        count
    }

    pub fn enable_trace(&self) {
        let mut tr = self.trace.lock();
        if tr.is_none() {
            *tr = Some(Vec::new());
        }
    }

    pub fn tracing(&self) -> bool {
        self.trace.lock().is_some()
    }

    /// Appends `time line` to the trace when tracing is enabled.
    pub fn trace(&self, line: impl FnOnce() -> String) {
        let now = self.now();
        if let Some(tr) = self.trace.lock().as_mut() {
            tr.push(format!("{now} {}", line()));
        }
    }

    pub fn trace_lines(&self) -> Vec<String> {
        self.trace.lock().clone().unwrap_or_default()
    }

    pub fn trace_digest(&self) -> String {
        let mut hasher = Sha256::new();
        for line in self.trace.lock().iter().flatten() {
            hasher.update(line.as_bytes());
            hasher.update(b"\n");
        }
        hex::encode(hasher.finalize())
    }
}

impl Clock for Simulator {
    fn now(&self) -> Nanos {
        Simulator::now(self)
    }
}

fn arm(
    sim: Weak<Simulator>,
    at: Nanos,
    period: Nanos,
    action: Arc<dyn Fn() + Send + Sync>,
    handle: TimerHandle,
) {
    let Some(strong) = sim.upgrade() else { return };
    strong.schedule_at(at, move || {
        if handle.is_cancelled() {
            return;
        }
        action();
        if !handle.is_cancelled() {
            arm(sim, at + period, period, action, handle);
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_queue_advances_clock() {
        let sim = Simulator::new(0);
        assert_eq!(sim.run_until(1_000), 0);
        assert_eq!(sim.now(), 1_000);
    }

    #[test]
    fn events_fire_in_time_order_with_fifo_ties() {
        let sim = Simulator::new(0);
        let log = Arc::new(Mutex::new(Vec::new()));
        for (t, tag) in [(20, "b"), (10, "a"), (20, "c"), (30, "late")] {
            let log = log.clone();
            sim.schedule_at(t, move || log.lock().push(tag));
        }
        assert_eq!(sim.run_until(25), 3);
        assert_eq!(*log.lock(), vec!["a", "b", "c"]);
        assert_eq!(sim.now(), 25);
        assert_eq!(sim.pending(), 1);
    }

    #[test]
    fn actions_can_schedule_more_events() {
        let sim = Simulator::new(0);
        let hits = Arc::new(Mutex::new(Vec::new()));
        let s2 = sim.clone();
        let h = hits.clone();
        sim.schedule_at(5, move || {
            h.lock().push(s2.now());
            let h2 = h.clone();
            let s3 = s2.clone();
            s2.schedule_in(5, move || h2.lock().push(s3.now()));
        });
        sim.run_until(100);
        assert_eq!(*hits.lock(), vec![5, 10]);
    }

    #[test]
    fn periodic_timer_and_cancel() {
        let sim = Simulator::new(0);
        let n = Arc::new(Mutex::new(0));
        let n2 = n.clone();
        let h = sim.schedule_every(0, 10, move || *n2.lock() += 1);
        sim.run_until(45);
        assert_eq!(*n.lock(), 5);
        h.cancel();
        sim.run_until(100);
        assert_eq!(*n.lock(), 5);
    }

    #[test]
    fn same_seed_same_trace() {
        let run = |seed| {
            let sim = Simulator::new(seed);
            sim.enable_trace();
            for i in 0..50u64 {
                let s = sim.clone();
                let at = sim.with_rng(|r| rand::Rng::gen_range(r, 0..1_000u64));
                sim.schedule_at(at, move || s.trace(|| format!("ev {i}")));
            }
            sim.run_until(2_000);
            sim.trace_digest()
        };
        assert_eq!(run(7), run(7));
        assert_ne!(run(7), run(8));
    }
}
