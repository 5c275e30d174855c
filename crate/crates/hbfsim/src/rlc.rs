//! RLC packet delivery above HARQ: transparent UM (losses vanish, survivor
//! bias preserved) and AM with in-order delivery, a reordering timer, and
//! bounded retransmissions. One packet maps to one RLC SDU; a transport
//! block may carry several whole packets, packed greedily in FIFO order.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::phy::Direction;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RlcMode {
    Um,
    Am,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RlcConfig {
    pub mode: RlcMode,
    pub reordering_timeout: f64,
    pub max_am_retx: u32,
}

impl Default for RlcConfig {
    fn default() -> Self {
        Self {
            mode: RlcMode::Um,
            reordering_timeout: 10e-3,
            max_am_retx: 8,
        }
    }
}

/// Request to arm a reordering timer in the global event queue.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimerArm {
    pub packet: u64,
    pub expiry: f64,
    pub incarnation: u32,
}

/// Result of a reordering timer firing.
#[derive(Debug, Clone, PartialEq)]
pub enum TimerOutcome {
    /// Stale or cancelled timer.
    Ignore,
    /// Packet re-entered the transmit queue head.
    Requeued,
    /// Packet still inside an unresolved HARQ exchange; timer re-armed.
    Rearmed(TimerArm),
    /// Retransmission budget exhausted: packet dropped, and the receiver
    /// window advanced past it, releasing any buffered successors.
    Dropped { packet: u64, flushed: Vec<u64> },
}

/// Per-user per-direction RLC entity: FIFO transmit queue plus, in AM, the
/// sender retransmission state and the receiver reordering window.
#[derive(Debug, Clone)]
pub struct RlcEntity {
    pub user: usize,
    pub direction: Direction,
    config: RlcConfig,
    queue: VecDeque<(u64, u64)>,
    queued_bits: u64,
    in_flight: BTreeSet<u64>,
    bits_of: HashMap<u64, u64>,
    // AM sender state.
    next_sn: u64,
    sn_of: HashMap<u64, u64>,
    timer_incarnation: HashMap<u64, u32>,
    armed: BTreeSet<u64>,
    retx_count: HashMap<u64, u32>,
    // AM receiver state.
    next_deliver_sn: u64,
    rx_buffer: BTreeMap<u64, u64>,
    abandoned: BTreeSet<u64>,
    // Conservation counters.
    pub delivered_packets: u64,
    pub dropped_packets: u64,
}

impl RlcEntity {
    pub fn new(user: usize, direction: Direction, config: RlcConfig) -> Self {
        Self {
            user,
            direction,
            config,
            queue: VecDeque::new(),
            queued_bits: 0,
            in_flight: BTreeSet::new(),
            bits_of: HashMap::new(),
            next_sn: 0,
            sn_of: HashMap::new(),
            timer_incarnation: HashMap::new(),
            armed: BTreeSet::new(),
            retx_count: HashMap::new(),
            next_deliver_sn: 0,
            rx_buffer: BTreeMap::new(),
            abandoned: BTreeSet::new(),
            delivered_packets: 0,
            dropped_packets: 0,
        }
    }

    pub fn mode(&self) -> RlcMode {
        self.config.mode
    }

    pub fn queued_bits(&self) -> u64 {
        self.queued_bits
    }

    pub fn queue_len(&self) -> usize {
        self.queue.len()
    }

    pub fn in_flight_len(&self) -> usize {
        self.in_flight.len()
    }

    pub fn rx_buffered_len(&self) -> usize {
        self.rx_buffer.len()
    }

    pub fn am_retx_of(&self, packet: u64) -> u32 {
        self.retx_count.get(&packet).copied().unwrap_or(0)
    }

    /// Append a fresh packet; the demand becomes visible to the scheduler at
    /// the next slot boundary. Returns the queued bits total.
    pub fn enqueue(&mut self, packet: u64, bits: u64) -> u64 {
        debug_assert!(bits > 0, "packet size must be positive");
        self.queue.push_back((packet, bits));
        self.queued_bits += bits;
        self.bits_of.insert(packet, bits);
        if self.config.mode == RlcMode::Am {
            self.sn_of.entry(packet).or_insert_with(|| {
                let sn = self.next_sn;
                self.next_sn += 1;
                sn
            });
        }
        self.queued_bits
    }

    /// Pack whole packets from the queue head into a transport block of the
    /// given capacity. Packets become in-flight; an empty result means the
    /// head packet does not fit (the block is transmitted as padding).
    pub fn drain_into_tb(&mut self, capacity_bits: u64) -> Vec<u64> {
        let mut used = 0;
        let mut out = Vec::new();
        while let Some(&(pkt, bits)) = self.queue.front() {
            if used + bits > capacity_bits {
                break;
            }
            self.queue.pop_front();
            self.queued_bits -= bits;
            used += bits;
            self.in_flight.insert(pkt);
            out.push(pkt);
        }
        out
    }

    /// Successful block reception. Returns the packets surfaced to the
    /// delivery point (in order for AM, immediately for UM).
    pub fn on_tb_delivered(&mut self, tb_packets: &[u64]) -> Vec<u64> {
        let mut out = Vec::new();
        for &pkt in tb_packets {
            self.in_flight.remove(&pkt);
            self.cancel_timer(pkt);
            match self.config.mode {
                RlcMode::Um => {
                    self.delivered_packets += 1;
                    out.push(pkt);
                }
                RlcMode::Am => {
                    let sn = self.sn_of[&pkt];
                    if sn >= self.next_deliver_sn && !self.abandoned.contains(&sn) {
                        self.rx_buffer.insert(sn, pkt);
                    }
                }
            }
        }
        if self.config.mode == RlcMode::Am {
            out.extend(self.flush_in_order());
        }
        out
    }

    /// One failed transmission attempt (any HARQ attempt). In AM this starts
    /// the reordering timer for packets that do not have one running.
    pub fn on_tb_attempt_failed(&mut self, tb_packets: &[u64], now: f64) -> Vec<TimerArm> {
        if self.config.mode != RlcMode::Am {
            return Vec::new();
        }
        let mut arms = Vec::new();
        for &pkt in tb_packets {
            if self.armed.insert(pkt) {
                let inc = self.bump_incarnation(pkt);
                arms.push(TimerArm {
                    packet: pkt,
                    expiry: now + self.config.reordering_timeout,
                    incarnation: inc,
                });
            }
        }
        arms
    }

    /// Definitive MAC-level loss (HARQ exhausted or disabled). UM packets
    /// vanish; AM packets stay parked until their reordering timer fires.
    pub fn on_tb_lost(&mut self, tb_packets: &[u64]) -> Vec<u64> {
        let mut dropped = Vec::new();
        for &pkt in tb_packets {
            self.in_flight.remove(&pkt);
            if self.config.mode == RlcMode::Um {
                self.dropped_packets += 1;
                dropped.push(pkt);
            }
        }
        dropped
    }

    /// Reordering timer expiry for one packet.
    pub fn on_timer_expiry(&mut self, packet: u64, incarnation: u32, now: f64) -> TimerOutcome {
        if self.timer_incarnation.get(&packet) != Some(&incarnation)
            || !self.armed.contains(&packet)
        {
            return TimerOutcome::Ignore;
        }
        if self.in_flight.contains(&packet) {
            // HARQ exchange still unresolved; check again later.
            let inc = self.bump_incarnation(packet);
            return TimerOutcome::Rearmed(TimerArm {
                packet,
                expiry: now + self.config.reordering_timeout,
                incarnation: inc,
            });
        }
        self.armed.remove(&packet);
        let count = self.retx_count.entry(packet).or_insert(0);
        if *count < self.config.max_am_retx {
            *count += 1;
            let bits = self.bits_of[&packet];
            self.queue.push_front((packet, bits));
            self.queued_bits += bits;
            TimerOutcome::Requeued
        } else {
            self.dropped_packets += 1;
            let sn = self.sn_of[&packet];
            self.abandoned.insert(sn);
            let flushed = self.flush_in_order();
            TimerOutcome::Dropped { packet, flushed }
        }
    }

    fn bump_incarnation(&mut self, packet: u64) -> u32 {
        let inc = self.timer_incarnation.entry(packet).or_insert(0);
        *inc += 1;
        *inc
    }

    fn cancel_timer(&mut self, packet: u64) {
        self.armed.remove(&packet);
        self.bump_incarnation(packet);
    }

    /// Deliver the in-order prefix of the receive buffer, skipping abandoned
    /// sequence numbers.
    fn flush_in_order(&mut self) -> Vec<u64> {
        let mut out = Vec::new();
        loop {
            if let Some(pkt) = self.rx_buffer.remove(&self.next_deliver_sn) {
                self.delivered_packets += 1;
                out.push(pkt);
                self.next_deliver_sn += 1;
            } else if self.abandoned.remove(&self.next_deliver_sn) {
                self.next_deliver_sn += 1;
            } else {
                break;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn am_entity() -> RlcEntity {
        RlcEntity::new(
            0,
            Direction::Dl,
            RlcConfig {
                mode: RlcMode::Am,
                ..RlcConfig::default()
            },
        )
    }

    fn um_entity() -> RlcEntity {
        RlcEntity::new(0, Direction::Dl, RlcConfig::default())
    }

    #[test]
    fn enqueue_accounting() {
        let mut e = um_entity();
        assert_eq!(e.enqueue(0, 12000), 12000);
        assert_eq!(e.enqueue(1, 12000), 24000);
        let tb = e.drain_into_tb(100_000);
        assert_eq!(tb, vec![0, 1], "FIFO order preserved");
        assert_eq!(e.queued_bits(), 0);
    }

    #[test]
    fn drain_respects_capacity_whole_packets_only() {
        let mut e = um_entity();
        e.enqueue(0, 12000);
        e.enqueue(1, 12000);
        assert_eq!(e.drain_into_tb(18000), vec![0]);
        assert_eq!(e.queued_bits(), 12000);
        // Too small for the head packet: padding-only block.
        assert!(e.drain_into_tb(660).is_empty());
    }

    #[test]
    fn um_loss_vanishes() {
        let mut e = um_entity();
        e.enqueue(0, 12000);
        let tb = e.drain_into_tb(12000);
        let dropped = e.on_tb_lost(&tb);
        assert_eq!(dropped, vec![0]);
        assert_eq!(e.dropped_packets, 1);
        assert_eq!(e.delivered_packets, 0);
        assert_eq!(e.in_flight_len(), 0);
    }

    #[test]
    fn um_delivers_immediately_and_once() {
        let mut e = um_entity();
        e.enqueue(0, 12000);
        let tb = e.drain_into_tb(12000);
        assert_eq!(e.on_tb_delivered(&tb), vec![0]);
        assert_eq!(e.delivered_packets, 1);
    }

    #[test]
    fn am_in_order_delivery() {
        let mut e = am_entity();
        for pkt in 0..3 {
            e.enqueue(pkt, 12000);
        }
        let tb0 = e.drain_into_tb(12000);
        let tb1 = e.drain_into_tb(12000);
        let tb2 = e.drain_into_tb(12000);
        // Packet 1 arrives late: 0 delivered, 2 buffered until 1 shows up.
        assert_eq!(e.on_tb_delivered(&tb0), vec![0]);
        assert_eq!(e.on_tb_delivered(&tb2), Vec::<u64>::new());
        assert_eq!(e.rx_buffered_len(), 1);
        assert_eq!(e.on_tb_delivered(&tb1), vec![1, 2]);
        assert_eq!(e.delivered_packets, 3);
    }

    #[test]
    fn am_timer_cancelled_by_harq_recovery() {
        let mut e = am_entity();
        e.enqueue(0, 12000);
        let tb = e.drain_into_tb(12000);
        let arms = e.on_tb_attempt_failed(&tb, 0.001);
        assert_eq!(arms.len(), 1);
        // Second failed attempt does not re-arm.
        assert!(e.on_tb_attempt_failed(&tb, 0.00125).is_empty());
        // HARQ retransmission succeeds before the timer.
        assert_eq!(e.on_tb_delivered(&tb), vec![0]);
        let out = e.on_timer_expiry(0, arms[0].incarnation, arms[0].expiry);
        assert_eq!(out, TimerOutcome::Ignore);
    }

    #[test]
    fn am_timer_requeues_at_head() {
        let mut e = am_entity();
        e.enqueue(0, 12000);
        e.enqueue(1, 12000);
        let tb = e.drain_into_tb(12000);
        assert_eq!(tb, vec![0]);
        let arms = e.on_tb_attempt_failed(&tb, 0.0);
        e.on_tb_lost(&tb);
        let out = e.on_timer_expiry(0, arms[0].incarnation, arms[0].expiry);
        assert_eq!(out, TimerOutcome::Requeued);
        assert_eq!(e.am_retx_of(0), 1);
        // Re-enters at the queue head, ahead of packet 1.
        assert_eq!(e.drain_into_tb(12000), vec![0]);
    }

    #[test]
    fn am_drops_after_max_retx_and_flushes_successors() {
        let mut e = RlcEntity::new(
            0,
            Direction::Ul,
            RlcConfig {
                mode: RlcMode::Am,
                reordering_timeout: 10e-3,
                max_am_retx: 2,
            },
        );
        e.enqueue(0, 12000);
        e.enqueue(1, 12000);
        let tb0 = e.drain_into_tb(12000);
        let tb1 = e.drain_into_tb(12000);
        // Packet 1 arrives fine but must wait for packet 0.
        assert!(e.on_tb_delivered(&tb1).is_empty());
        let mut now = 0.0;
        for round in 0..3 {
            let arms = e.on_tb_attempt_failed(&tb0, now);
            e.on_tb_lost(&tb0);
            now = arms[0].expiry;
            let out = e.on_timer_expiry(0, arms[0].incarnation, now);
            match (round, out) {
                (0 | 1, TimerOutcome::Requeued) => {
                    assert_eq!(e.drain_into_tb(12000), vec![0]);
                }
                (2, TimerOutcome::Dropped { packet: 0, flushed }) => {
                    assert_eq!(flushed, vec![1]);
                }
                (r, o) => panic!("round {r}: unexpected {o:?}"),
            }
        }
        assert_eq!(e.dropped_packets, 1);
        assert_eq!(e.delivered_packets, 1);
    }

    #[test]
    fn conservation_counts() {
        let mut e = am_entity();
        for pkt in 0..5 {
            e.enqueue(pkt, 12000);
        }
        let tb = e.drain_into_tb(24000);
        e.on_tb_delivered(&tb);
        let enqueued = 5;
        let accounted = e.delivered_packets as usize
            + e.dropped_packets as usize
            + e.queue_len()
            + e.in_flight_len()
            + e.rx_buffered_len();
        assert_eq!(enqueued, accounted);
    }
}
