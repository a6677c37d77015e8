//! Discrete-event kernel: virtual clock, ordered event queue, and seeded
//! named RNG streams.
//!
//! All simulation time is integer microseconds. Events that share a fire
//! time dispatch in the order they were scheduled, so a (scenario, seed)
//! pair always replays the exact same trace.

mod rng;
mod time;

pub use rng::RngStreams;
pub use time::SimTime;

use crate::NodeId;
use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum KernelError {
    #[error("cannot schedule event at {requested} before current time {now}")]
    ScheduleInPast { requested: SimTime, now: SimTime },
    #[error("rng stream `{0}` is not registered")]
    UnknownStream(String),
}

/// What an event is aimed at; purely informational for tracing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventTarget {
    Global,
    Node(NodeId),
}

/// A scheduled action. The payload is opaque to the kernel.
#[derive(Debug, Clone)]
pub struct Event<P> {
    pub fire_time: SimTime,
    pub sequence: u64,
    pub target: EventTarget,
    pub payload: P,
}

/// Token returned by [`Scheduler::schedule`]; lets the caller cancel the
/// event before it fires.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EventHandle(u64);

struct QueueEntry<P> {
    event: Event<P>,
}

impl<P> PartialEq for QueueEntry<P> {
    fn eq(&self, other: &Self) -> bool {
        self.event.sequence == other.event.sequence
    }
}
impl<P> Eq for QueueEntry<P> {}

impl<P> Ord for QueueEntry<P> {
    fn cmp(&self, other: &Self) -> Ordering {
        // BinaryHeap is a max-heap; invert so the earliest (time, sequence)
        // pair pops first.
        (other.event.fire_time, other.event.sequence)
            .cmp(&(self.event.fire_time, self.event.sequence))
    }
}
impl<P> PartialOrd for QueueEntry<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Deterministic event queue with a monotone virtual clock.
pub struct Scheduler<P> {
    now: SimTime,
    next_sequence: u64,
    queue: BinaryHeap<QueueEntry<P>>,
    cancelled: HashSet<u64>,
}

impl<P> Default for Scheduler<P> {
    fn default() -> Self {
        Self::new()
    }
}

impl<P> Scheduler<P> {
    pub fn new() -> Self {
        Scheduler {
            now: SimTime::ZERO,
            next_sequence: 0,
            queue: BinaryHeap::new(),
            cancelled: HashSet::new(),
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    /// Number of live (not yet dispatched or cancelled) events.
    pub fn pending(&self) -> usize {
        self.queue.len() - self.cancelled.len()
    }

    /// Enqueue an event. Rejects fire times in the past; `fire_time == now`
    /// dispatches after the currently executing event completes.
    pub fn schedule(
        &mut self,
        fire_time: SimTime,
        target: EventTarget,
        payload: P,
    ) -> Result<EventHandle, KernelError> {
        if fire_time < self.now {
            return Err(KernelError::ScheduleInPast {
                requested: fire_time,
                now: self.now,
            });
        }
        let sequence = self.next_sequence;
        self.next_sequence += 1;
        self.queue.push(QueueEntry {
            event: Event {
                fire_time,
                sequence,
                target,
                payload,
            },
        });
        Ok(EventHandle(sequence))
    }

    /// Convenience wrapper for `schedule(now + delay, ..)`.
    pub fn schedule_in(
        &mut self,
        delay: SimTime,
        target: EventTarget,
        payload: P,
    ) -> Result<EventHandle, KernelError> {
        self.schedule(self.now + delay, target, payload)
    }

    /// Cancel a pending event. Returns false if it already fired or was
    /// cancelled before.
    pub fn cancel(&mut self, handle: EventHandle) -> bool {
        if handle.0 >= self.next_sequence {
            return false;
        }
        self.cancelled.insert(handle.0)
    }

    /// Pop the next event with `fire_time <= t_end`, advancing the clock to
    /// its fire time. Cancelled events are discarded silently.
    pub fn pop_due(&mut self, t_end: SimTime) -> Option<Event<P>> {
        loop {
            let fire = self.queue.peek()?.event.fire_time;
            if fire > t_end {
                return None;
            }
            let entry = self.queue.pop().expect("peeked entry");
            if self.cancelled.remove(&entry.event.sequence) {
                continue;
            }
            debug_assert!(entry.event.fire_time >= self.now, "clock went backward");
            self.now = entry.event.fire_time;
            return Some(entry.event);
        }
    }

    /// Dispatch every event due at or before `t_end` through `handler`,
    /// then advance the clock to `t_end`. Returns the dispatch count.
    pub fn run_until<F>(&mut self, t_end: SimTime, mut handler: F) -> u64
    where
        F: FnMut(&mut Self, Event<P>),
    {
        let mut dispatched = 0;
        while let Some(event) = self.pop_due(t_end) {
            handler(self, event);
            dispatched += 1;
        }
        if t_end > self.now {
            self.now = t_end;
        }
        dispatched
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sched() -> Scheduler<&'static str> {
        Scheduler::new()
    }

    #[test]
    fn equal_fire_times_dispatch_in_scheduling_order() {
        let mut s = sched();
        let t = SimTime::from_secs(5);
        s.schedule(t, EventTarget::Global, "first").unwrap();
        s.schedule(t, EventTarget::Global, "second").unwrap();
        s.schedule(t, EventTarget::Global, "third").unwrap();
        let mut seen = Vec::new();
        s.run_until(SimTime::from_secs(10), |_, ev| seen.push(ev.payload));
        assert_eq!(seen, vec!["first", "second", "third"]);
    }

    #[test]
    fn zero_delay_event_dispatches_after_current_event() {
        let mut s = sched();
        s.schedule(SimTime::from_secs(1), EventTarget::Global, "outer")
            .unwrap();
        let mut seen = Vec::new();
        s.run_until(SimTime::from_secs(2), |inner, ev| {
            seen.push(ev.payload);
            if ev.payload == "outer" {
                inner
                    .schedule(inner.now(), EventTarget::Global, "nested")
                    .unwrap();
            }
        });
        assert_eq!(seen, vec!["outer", "nested"]);
    }

    #[test]
    fn scheduling_in_the_past_is_rejected() {
        let mut s = sched();
        s.schedule(SimTime::from_secs(2), EventTarget::Global, "x")
            .unwrap();
        s.run_until(SimTime::from_secs(2), |_, _| {});
        let err = s
            .schedule(SimTime::from_micros(1_999_999), EventTarget::Global, "y")
            .unwrap_err();
        assert!(matches!(err, KernelError::ScheduleInPast { .. }));
    }

    #[test]
    fn run_until_on_empty_queue_advances_clock() {
        let mut s = sched();
        let n = s.run_until(SimTime::from_secs(3600), |_, _| {});
        assert_eq!(n, 0);
        assert_eq!(s.now(), SimTime::from_secs(3600));
    }

    #[test]
    fn run_until_filters_on_boundary() {
        let mut s = sched();
        for t in [1u64, 2, 3, 4] {
            s.schedule(SimTime::from_secs(t), EventTarget::Global, "e")
                .unwrap();
        }
        let n = s.run_until(SimTime::from_secs(3), |_, _| {});
        assert_eq!(n, 3);
        assert_eq!(s.pending(), 1);
    }

    #[test]
    fn cancelled_events_do_not_fire_or_count() {
        let mut s = sched();
        let h = s
            .schedule(SimTime::from_secs(1), EventTarget::Global, "dead")
            .unwrap();
        s.schedule(SimTime::from_secs(2), EventTarget::Global, "live")
            .unwrap();
        assert!(s.cancel(h));
        assert!(!s.cancel(h));
        let mut seen = Vec::new();
        let n = s.run_until(SimTime::from_secs(5), |_, ev| seen.push(ev.payload));
        assert_eq!(n, 1);
        assert_eq!(seen, vec!["live"]);
    }

    #[test]
    fn identical_schedules_replay_identically() {
        let trace = || {
            let mut s = sched();
            s.schedule(SimTime::from_millis(10), EventTarget::Node(NodeId(1)), "a")
                .unwrap();
            s.schedule(SimTime::from_millis(10), EventTarget::Node(NodeId(2)), "b")
                .unwrap();
            s.schedule(SimTime::from_millis(5), EventTarget::Global, "c")
                .unwrap();
            let mut log = Vec::new();
            s.run_until(SimTime::from_secs(1), |inner, ev| {
                log.push(format!("{} {} {:?}", ev.fire_time, ev.sequence, ev.target));
                if ev.payload == "c" {
                    inner
                        .schedule_in(SimTime::from_millis(1), EventTarget::Global, "d")
                        .unwrap();
                }
            });
            log
        };
        assert_eq!(trace(), trace());
    }
}
