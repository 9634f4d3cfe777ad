//! Deterministic discrete-event engine.
//!
//! Time is an integer count of nanoseconds. Events are ordered by
//! `(fire_at, seq)` where `seq` is a global insertion counter, so two events
//! scheduled for the same instant fire in the order they were scheduled.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};
use std::fmt;
use std::ops::{Add, Sub};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Simulated time in nanoseconds since the start of the run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);
    pub const MAX: SimTime = SimTime(u64::MAX);

    pub fn from_secs_f64(secs: f64) -> Self {
        assert!(secs >= 0.0 && secs.is_finite(), "invalid time {secs}");
        SimTime((secs * 1e9).round() as u64)
    }

    pub const fn from_millis(ms: u64) -> Self {
        SimTime(ms * 1_000_000)
    }

    pub const fn from_micros(us: u64) -> Self {
        SimTime(us * 1_000)
    }

    pub const fn from_secs(s: u64) -> Self {
        SimTime(s * 1_000_000_000)
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1e9
    }

    pub fn nanos(self) -> u64 {
        self.0
    }

    pub fn saturating_sub(self, other: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(other.0))
    }

    pub fn saturating_add(self, other: SimTime) -> SimTime {
        SimTime(self.0.saturating_add(other.0))
    }

    /// Multiplies a duration by a float factor, rounding to the nearest nanosecond.
    pub fn mul_f64(self, factor: f64) -> SimTime {
        SimTime((self.0 as f64 * factor).round().min(u64::MAX as f64) as u64)
    }
}

impl Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl Sub for SimTime {
    type Output = SimTime;
    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 - rhs.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:09}", self.0 / 1_000_000_000, self.0 % 1_000_000_000)
    }
}

pub type NodeId = u32;

/// Handle returned by [`EventQueue::schedule`], usable for cancellation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EventHandle(u64);

#[derive(Debug, Clone)]
pub struct Event<A> {
    pub fire_at: SimTime,
    pub seq: u64,
    pub target: NodeId,
    pub action: A,
}

impl<A> PartialEq for Event<A> {
    fn eq(&self, other: &Self) -> bool {
        self.fire_at == other.fire_at && self.seq == other.seq
    }
}

impl<A> Eq for Event<A> {}

impl<A> PartialOrd for Event<A> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<A> Ord for Event<A> {
    // Reversed: BinaryHeap is a max-heap and we want the earliest event first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .fire_at
            .cmp(&self.fire_at)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunStats {
    pub scheduled: u64,
    pub cancelled: u64,
    pub dispatched: u64,
    pub remaining: u64,
}

/// Time-ordered event queue with lazy cancellation.
#[derive(Debug)]
pub struct EventQueue<A> {
    heap: BinaryHeap<Event<A>>,
    live: HashSet<u64>,
    now: SimTime,
    next_seq: u64,
    scheduled: u64,
    cancelled_count: u64,
    dispatched: u64,
}

impl<A> Default for EventQueue<A> {
    fn default() -> Self {
        Self::new()
    }
}

impl<A> EventQueue<A> {
    pub fn new() -> Self {
        EventQueue {
            heap: BinaryHeap::new(),
            live: HashSet::new(),
            now: SimTime::ZERO,
            next_seq: 0,
            scheduled: 0,
            cancelled_count: 0,
            dispatched: 0,
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    /// Enqueues an action at `fire_at`.
    ///
    /// Panics if `fire_at` lies in the past: that is a logic error in the caller.
    pub fn schedule(&mut self, fire_at: SimTime, target: NodeId, action: A) -> EventHandle {
        assert!(
            fire_at >= self.now,
            "event scheduled in the past: {fire_at} < {}",
            self.now
        );
        let seq = self.next_seq;
        self.next_seq += 1;
        self.scheduled += 1;
        self.live.insert(seq);
        self.heap.push(Event {
            fire_at,
            seq,
            target,
            action,
        });
        EventHandle(seq)
    }

    pub fn schedule_in(&mut self, delay: SimTime, target: NodeId, action: A) -> EventHandle {
        self.schedule(self.now + delay, target, action)
    }

    /// Cancels a pending event. Returns false if it already fired or was cancelled.
    pub fn cancel(&mut self, handle: EventHandle) -> bool {
        if self.live.remove(&handle.0) {
            self.cancelled_count += 1;
            true
        } else {
            false
        }
    }

    /// Pops the next live event with `fire_at <= limit`, advancing the clock.
    pub fn pop_until(&mut self, limit: SimTime) -> Option<Event<A>> {
        while let Some(top) = self.heap.peek() {
            if top.fire_at > limit {
                return None;
            }
            let ev = self.heap.pop().expect("peeked");
            if !self.live.remove(&ev.seq) {
                continue;
            }
            debug_assert!(ev.fire_at >= self.now);
            self.now = ev.fire_at;
            self.dispatched += 1;
            return Some(ev);
        }
        None
    }

    /// Dispatches every event up to `t_end` through `handler`, then sets the clock to `t_end`.
    pub fn run_until<F>(&mut self, t_end: SimTime, mut handler: F) -> RunStats
    where
        F: FnMut(&mut Self, Event<A>),
    {
        while let Some(ev) = self.pop_until(t_end) {
            handler(self, ev);
        }
        if t_end > self.now {
            self.now = t_end;
        }
        self.stats()
    }

    pub fn advance_to(&mut self, t: SimTime) {
        if t > self.now {
            self.now = t;
        }
    }

    pub fn stats(&self) -> RunStats {
        RunStats {
            scheduled: self.scheduled,
            cancelled: self.cancelled_count,
            dispatched: self.dispatched,
            remaining: self.live.len() as u64,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.live.is_empty()
    }
}

/// What a random stream is used for. Part of the stream identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u32)]
pub enum Purpose {
    Placement = 1,
    Mobility = 2,
    MacBackoff = 3,
    Jitter = 4,
    Scenario = 5,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Derives the seed of the `(node, purpose)` substream from the master seed.
///
/// Each stream depends only on its own identity, so adding nodes or purposes
/// never shifts the draws of existing streams.
pub fn stream_seed(master: u64, node: NodeId, purpose: Purpose) -> u64 {
    let a = splitmix64(master);
    let b = splitmix64(a ^ (u64::from(node) << 8) ^ purpose as u64);
    splitmix64(b ^ 0xA076_1D64_78BD_642F)
}

pub fn rng_stream(master: u64, node: NodeId, purpose: Purpose) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(master, node, purpose))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn earlier_events_fire_first() {
        let mut q = EventQueue::new();
        q.schedule(SimTime::from_secs(2), 0, "late");
        q.schedule(SimTime::ZERO, 0, "now");
        let mut order = vec![];
        q.run_until(SimTime::from_secs(10), |_, e| order.push(e.action));
        assert_eq!(order, vec!["now", "late"]);
        assert_eq!(q.now(), SimTime::from_secs(10));
    }

    #[test]
    fn ties_break_by_insertion() {
        let mut q = EventQueue::new();
        let t = SimTime::from_millis(5);
        q.schedule(t, 1, 'a');
        q.schedule(t, 0, 'b');
        let mut order = vec![];
        q.run_until(t, |_, e| order.push(e.action));
        assert_eq!(order, vec!['a', 'b']);
    }

    #[test]
    fn cancelled_event_never_fires() {
        let mut q = EventQueue::new();
        let h = q.schedule(SimTime::from_secs(1), 0, ());
        assert!(q.cancel(h));
        assert!(!q.cancel(h));
        let stats = q.run_until(SimTime::from_secs(5), |_, _| panic!("fired"));
        assert_eq!(stats.dispatched, 0);
        assert_eq!(stats.cancelled, 1);
    }

    #[test]
    fn empty_queue_returns_immediately() {
        let mut q: EventQueue<()> = EventQueue::new();
        let stats = q.run_until(SimTime::from_secs(360), |_, _| {});
        assert_eq!(stats.dispatched, 0);
        assert_eq!(q.now(), SimTime::from_secs(360));
    }

    #[test]
    fn periodic_timers_fire_once_per_second() {
        let mut q = EventQueue::new();
        for node in 0..3 {
            q.schedule(SimTime::from_secs(1), node, ());
        }
        let mut counts = [0u32; 3];
        let stats = q.run_until(SimTime::from_secs(10), |q, e| {
            counts[e.target as usize] += 1;
            q.schedule_in(SimTime::from_secs(1), e.target, ());
        });
        assert_eq!(counts, [10, 10, 10]);
        assert_eq!(stats.dispatched, 30);
        assert_eq!(
            stats.dispatched,
            stats.scheduled - stats.cancelled - stats.remaining
        );
    }

    #[test]
    #[should_panic(expected = "past")]
    fn scheduling_into_the_past_panics() {
        let mut q = EventQueue::new();
        q.schedule(SimTime::from_secs(1), 0, ());
        q.run_until(SimTime::from_secs(2), |_, _| {});
        q.schedule(SimTime::from_secs(1), 0, ());
    }

    #[test]
    fn streams_are_independent_of_each_other() {
        let a: Vec<u32> = (0..4)
            .map(|_| 0)
            .scan(rng_stream(7, 3, Purpose::MacBackoff), |r, _: u32| Some(r.gen()))
            .collect();
        let b: Vec<u32> = (0..4)
            .map(|_| 0)
            .scan(rng_stream(7, 3, Purpose::MacBackoff), |r, _: u32| Some(r.gen()))
            .collect();
        assert_eq!(a, b);
        assert_ne!(
            stream_seed(7, 3, Purpose::MacBackoff),
            stream_seed(7, 4, Purpose::MacBackoff)
        );
        assert_ne!(
            stream_seed(7, 3, Purpose::MacBackoff),
            stream_seed(7, 3, Purpose::Jitter)
        );
    }

    #[test]
    fn time_formatting() {
        assert_eq!(SimTime::from_millis(1500).to_string(), "1.500000000");
        assert_eq!(SimTime::from_secs_f64(0.25), SimTime::from_millis(250));
    }
}
