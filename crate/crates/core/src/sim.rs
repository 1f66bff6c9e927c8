//! Deterministic discrete-event core.
//!
//! Time is an integer number of microseconds. Events scheduled for the same
//! instant are processed in the order they were scheduled (ascending `seq`).
//! Every processed event is appended to the simulation's trace, which can be
//! exported as line-delimited JSON.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashSet};

use serde::Serialize;
use thiserror::Error;

/// Simulated time in microseconds.
pub type Micros = u64;

pub const MICROS_PER_SEC: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("cannot schedule event at {time} us, clock is already at {now} us")]
    SchedulingInPast { time: Micros, now: Micros },
}

/// Handle returned by [`Simulation::schedule`], usable for cancellation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EventHandle(u64);

impl EventHandle {
    pub fn seq(&self) -> u64 {
        self.0
    }
}

/// A processed or pending event.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Event<P> {
    pub time: Micros,
    pub seq: u64,
    #[serde(flatten)]
    pub payload: P,
}

struct Queued<P>(Event<P>);

impl<P> PartialEq for Queued<P> {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}

impl<P> Eq for Queued<P> {}

impl<P> PartialOrd for Queued<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<P> Ord for Queued<P> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key().cmp(&other.key())
    }
}

impl<P> Queued<P> {
    fn key(&self) -> (Micros, u64) {
        (self.0.time, self.0.seq)
    }
}

/// Ordered record of processed events.
#[derive(Debug, Clone, PartialEq)]
pub struct EventTrace<P> {
    events: Vec<Event<P>>,
}

impl<P> Default for EventTrace<P> {
    fn default() -> Self {
        Self { events: Vec::new() }
    }
}

impl<P> EventTrace<P> {
    pub fn events(&self) -> &[Event<P>] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Wraps events that are already in `(time, seq)` order.
    pub fn from_events(events: Vec<Event<P>>) -> Self {
        debug_assert!(events
            .windows(2)
            .all(|w| (w[0].time, w[0].seq) <= (w[1].time, w[1].seq)));
        Self { events }
    }

    pub fn into_events(self) -> Vec<Event<P>> {
        self.events
    }

    fn push(&mut self, event: Event<P>) {
        self.events.push(event);
    }
}

impl<P: Serialize> EventTrace<P> {
    /// One JSON object per line: `time`, `seq`, `kind` and the payload fields.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for event in &self.events {
            out.push_str(&serde_json::to_string(event).expect("trace events serialize"));
            out.push('\n');
        }
        out
    }
}

/// Single-threaded event queue with a virtual clock.
pub struct Simulation<P> {
    now: Micros,
    next_seq: u64,
    queue: BinaryHeap<Reverse<Queued<P>>>,
    cancelled: HashSet<u64>,
    trace: EventTrace<P>,
}

impl<P: Clone> Default for Simulation<P> {
    fn default() -> Self {
        Self::new()
    }
}

impl<P: Clone> Simulation<P> {
    pub fn new() -> Self {
        Self::starting_at(0)
    }

    pub fn starting_at(now: Micros) -> Self {
        Self {
            now,
            next_seq: 0,
            queue: BinaryHeap::new(),
            cancelled: HashSet::new(),
            trace: EventTrace::default(),
        }
    }

    pub fn now(&self) -> Micros {
        self.now
    }

    /// Number of pending, non-cancelled events.
    pub fn pending(&self) -> usize {
        self.queue.len() - self.cancelled.len()
    }

    pub fn schedule(&mut self, time: Micros, payload: P) -> Result<EventHandle, SimError> {
        if time < self.now {
            return Err(SimError::SchedulingInPast {
                time,
                now: self.now,
            });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue
            .push(Reverse(Queued(Event { time, seq, payload })));
        Ok(EventHandle(seq))
    }

    /// Schedules `payload` at `now + delay`. Never fails.
    pub fn schedule_in(&mut self, delay: Micros, payload: P) -> EventHandle {
        let time = self.now.saturating_add(delay);
        self.schedule(time, payload)
            .expect("relative scheduling cannot target the past")
    }

    /// Cancels a pending event. Returns false if it was already processed or
    /// cancelled.
    pub fn cancel(&mut self, handle: EventHandle) -> bool {
        let pending = self.queue.iter().any(|Reverse(q)| q.0.seq == handle.0);
        pending && self.cancelled.insert(handle.0)
    }

    /// Time of the next pending event, if any.
    pub fn peek_time(&mut self) -> Option<Micros> {
        self.skip_cancelled();
        self.queue.peek().map(|Reverse(q)| q.0.time)
    }

    fn skip_cancelled(&mut self) {
        while let Some(Reverse(q)) = self.queue.peek() {
            if self.cancelled.remove(&q.0.seq) {
                self.queue.pop();
            } else {
                break;
            }
        }
    }

    /// Pops the next event with `time <= t_end`, advances the clock to it and
    /// records it in the trace.
    pub fn step(&mut self, t_end: Micros) -> Option<Event<P>> {
        self.skip_cancelled();
        match self.queue.peek() {
            Some(Reverse(q)) if q.0.time <= t_end => {}
            _ => return None,
        }
        let Reverse(Queued(event)) = self.queue.pop()?;
        debug_assert!(event.time >= self.now, "clock must never run backwards");
        self.now = event.time;
        self.trace.push(event.clone());
        Some(event)
    }

    /// Processes every pending event with `time <= t_end` in (time, seq) order
    /// and returns the events processed by this call.
    pub fn run_until(&mut self, t_end: Micros) -> EventTrace<P> {
        let mut processed = EventTrace::default();
        while let Some(event) = self.step(t_end) {
            processed.push(event);
        }
        processed
    }

    /// Like [`run_until`](Self::run_until), but hands each event to `handler`,
    /// which may schedule or cancel further events.
    pub fn run_with<F>(&mut self, t_end: Micros, mut handler: F)
    where
        F: FnMut(&mut Self, &Event<P>),
    {
        while let Some(event) = self.step(t_end) {
            handler(self, &event);
        }
    }

    /// Every event processed since the simulation was created.
    pub fn trace(&self) -> &EventTrace<P> {
        &self.trace
    }

    pub fn into_trace(self) -> EventTrace<P> {
        self.trace
    }
}

/// `ceil(bytes * 10^6 / bytes_per_sec)`, the serialization delay of a payload.
pub fn transfer_micros(bytes: u64, bytes_per_sec: u64) -> Micros {
    assert!(bytes_per_sec > 0, "bandwidth must be positive");
    let num = bytes as u128 * MICROS_PER_SEC as u128;
    let den = bytes_per_sec as u128;
    num.div_ceil(den).try_into().unwrap_or(Micros::MAX)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, Clone, PartialEq, Serialize)]
    #[serde(tag = "kind")]
    enum Ev {
        Tick { id: u32 },
    }

    #[test]
    fn same_time_events_run_in_schedule_order() {
        let mut sim = Simulation::new();
        sim.schedule(100, Ev::Tick { id: 1 }).unwrap();
        sim.schedule(100, Ev::Tick { id: 2 }).unwrap();
        let trace = sim.run_until(1_000);
        let ids: Vec<_> = trace
            .events()
            .iter()
            .map(|e| match e.payload {
                Ev::Tick { id } => id,
            })
            .collect();
        assert_eq!(ids, vec![1, 2]);
    }

    #[test]
    fn event_at_now_runs_before_later_events() {
        let mut sim = Simulation::new();
        sim.schedule(50, Ev::Tick { id: 2 }).unwrap();
        sim.schedule(0, Ev::Tick { id: 1 }).unwrap();
        let trace = sim.run_until(100);
        assert_eq!(trace.events()[0].time, 0);
        assert_eq!(trace.events()[0].payload, Ev::Tick { id: 1 });
    }

    #[test]
    fn scheduling_in_the_past_fails() {
        let mut sim = Simulation::starting_at(10);
        assert_eq!(
            sim.schedule(9, Ev::Tick { id: 0 }),
            Err(SimError::SchedulingInPast { time: 9, now: 10 })
        );
    }

    #[test]
    fn empty_queue_yields_empty_trace() {
        let mut sim: Simulation<Ev> = Simulation::new();
        assert!(sim.run_until(1_000_000).is_empty());
        assert_eq!(sim.now(), 0);
    }

    #[test]
    fn boundary_is_inclusive() {
        let mut sim = Simulation::new();
        for (i, t) in [5, 10, 15].into_iter().enumerate() {
            sim.schedule(t, Ev::Tick { id: i as u32 }).unwrap();
        }
        assert_eq!(sim.run_until(10).len(), 2);
        assert_eq!(sim.now(), 10);
        assert_eq!(sim.pending(), 1);
    }

    #[test]
    fn cancelled_events_are_skipped() {
        let mut sim = Simulation::new();
        let h = sim.schedule(5, Ev::Tick { id: 0 }).unwrap();
        sim.schedule(6, Ev::Tick { id: 1 }).unwrap();
        assert!(sim.cancel(h));
        assert!(!sim.cancel(h));
        let trace = sim.run_until(10);
        assert_eq!(trace.len(), 1);
        assert_eq!(trace.events()[0].payload, Ev::Tick { id: 1 });
    }

    #[test]
    fn handler_can_chain_events() {
        let mut sim = Simulation::new();
        sim.schedule(0, Ev::Tick { id: 0 }).unwrap();
        sim.run_with(100, |sim, ev| {
            let Ev::Tick { id } = ev.payload;
            if id < 3 {
                sim.schedule_in(10, Ev::Tick { id: id + 1 });
            }
        });
        assert_eq!(sim.trace().len(), 4);
        assert_eq!(sim.now(), 30);
    }

    #[test]
    fn jsonl_has_one_line_per_event() {
        let mut sim = Simulation::new();
        sim.schedule(1, Ev::Tick { id: 7 }).unwrap();
        sim.run_until(1);
        assert_eq!(
            sim.trace().to_jsonl(),
            "{\"time\":1,\"seq\":0,\"kind\":\"Tick\",\"id\":7}\n"
        );
    }

    #[test]
    fn transfer_time_rounds_up() {
        assert_eq!(transfer_micros(100, 100), 1_000_000);
        assert_eq!(transfer_micros(1, 3), 333_334);
        assert_eq!(transfer_micros(0, 3), 0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn causality_and_conservation(
                times in proptest::collection::vec(0u64..1_000, 0..60),
                cancel_mask in proptest::collection::vec(any::<bool>(), 60),
                t_end in 0u64..1_200,
            ) {
                let mut sim = Simulation::new();
                let mut expected = 0usize;
                for (i, &t) in times.iter().enumerate() {
                    let h = sim.schedule(t, Ev::Tick { id: i as u32 }).unwrap();
                    if cancel_mask[i] {
                        sim.cancel(h);
                    } else if t <= t_end {
                        expected += 1;
                    }
                }
                let trace = sim.run_until(t_end);
                prop_assert_eq!(trace.len(), expected);
                for pair in trace.events().windows(2) {
                    prop_assert!((pair[0].time, pair[0].seq) < (pair[1].time, pair[1].seq));
                }
                let mut seen: Vec<_> = trace.events().iter().map(|e| e.seq).collect();
                seen.dedup();
                prop_assert_eq!(seen.len(), expected);
            }
        }
    }
}
