//! Time-ordered event queue for the discrete-event core. Events with equal
//! timestamps are delivered in insertion order.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Event {
    /// RLC AM reordering timer for one packet.
    AmReorderingTimer {
        user: usize,
        dir_index: usize,
        packet: u64,
        /// Incarnation guard: stale timers of re-queued packets are ignored.
        incarnation: u32,
    },
}

#[derive(Debug)]
struct Entry {
    time: f64,
    seq: u64,
    event: Event,
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.time == other.time && self.seq == other.seq
    }
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        // BinaryHeap is a max-heap; invert for earliest-first.
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Deterministic event queue: pops in non-decreasing time, FIFO among ties.
#[derive(Debug, Default)]
pub struct EventQueue {
    heap: BinaryHeap<Entry>,
    next_seq: u64,
    last_popped: Option<f64>,
}

impl EventQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, time: f64, event: Event) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Entry { time, seq, event });
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn peek_time(&self) -> Option<f64> {
        self.heap.peek().map(|e| e.time)
    }

    /// Pop the next event if it is due at or before `now`.
    pub fn pop_due(&mut self, now: f64) -> Option<(f64, Event)> {
        if self.peek_time().is_some_and(|t| t <= now) {
            let e = self.heap.pop().expect("peeked");
            debug_assert!(self.last_popped.is_none_or(|t| e.time >= t));
            self.last_popped = Some(e.time);
            Some((e.time, e.event))
        } else {
            None
        }
    }
}
