//! Application traffic sources: jitter-free CBR over an unreliable
//! transport, and a full-buffer adaptive source with AIMD window control.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::phy::Direction;

/// End-to-end traceable packet.
#[derive(Debug, Clone, PartialEq)]
pub struct PacketRecord {
    pub id: u64,
    pub user: usize,
    pub direction: Direction,
    pub size_bytes: u32,
    pub created: f64,
    pub first_tx: Option<f64>,
    pub delivered: Option<f64>,
    pub harq_attempts: u32,
    pub am_retx_count: u32,
}

impl PacketRecord {
    pub fn bits(&self) -> u64 {
        u64::from(self.size_bytes) * 8
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrafficKind {
    Cbr,
    Adaptive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlowDirection {
    Dl,
    Ul,
    Both,
}

impl FlowDirection {
    pub fn includes(self, d: Direction) -> bool {
        matches!(
            (self, d),
            (FlowDirection::Both, _)
                | (FlowDirection::Dl, Direction::Dl)
                | (FlowDirection::Ul, Direction::Ul)
        )
    }
}

/// Flow configuration as written in scenario documents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrafficConfig {
    pub kind: TrafficKind,
    pub interval_us: f64,
    pub packet_bytes: u32,
    pub direction: FlowDirection,
}

impl Default for TrafficConfig {
    fn default() -> Self {
        Self {
            kind: TrafficKind::Cbr,
            interval_us: 1500.0,
            packet_bytes: 1500,
            direction: FlowDirection::Both,
        }
    }
}

impl TrafficConfig {
    pub fn cbr_slow() -> Self {
        Self::default()
    }

    pub fn cbr_fast() -> Self {
        Self {
            interval_us: 150.0,
            ..Self::default()
        }
    }

    pub fn adaptive() -> Self {
        Self {
            kind: TrafficKind::Adaptive,
            ..Self::default()
        }
    }
}

/// Constant bit rate source; emissions are jitter-free multiples of the
/// interval.
#[derive(Debug, Clone, PartialEq)]
pub struct CbrSource {
    pub packet_bytes: u32,
    pub interval: f64,
    last_emission: f64,
}

impl CbrSource {
    pub fn new(packet_bytes: u32, interval_s: f64) -> Self {
        assert!(interval_s > 0.0, "interval must be positive");
        Self {
            packet_bytes,
            interval: interval_s,
            last_emission: 0.0,
        }
    }

    /// Creation timestamps of all packets due by `now` (exclusive of the
    /// implicit emission at t = 0).
    pub fn tick(&mut self, now: f64) -> Vec<f64> {
        debug_assert!(now >= self.last_emission);
        let due = ((now - self.last_emission) / self.interval).floor() as u64;
        let mut stamps = Vec::with_capacity(due as usize);
        for _ in 0..due {
            self.last_emission += self.interval;
            stamps.push(self.last_emission);
        }
        stamps
    }
}

/// NewReno-flavoured adaptive source: slow start below the threshold,
/// additive increase above it, multiplicative decrease on loss, window
/// collapse on retransmission timeout. Releases are clocked by deliveries on
/// the reverse path, which are ideal and instantaneous.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveSource {
    pub packet_bytes: u32,
    pub window: f64,
    pub ssthresh: f64,
    pub srtt: Option<f64>,
    in_flight: BTreeSet<u64>,
    /// Time of the last delivery (or start), used for the RTO check.
    last_progress: f64,
    rto_backoff: f64,
}

pub const ADAPTIVE_INITIAL_WINDOW: f64 = 10.0;
pub const ADAPTIVE_MIN_RTO: f64 = 0.2;

impl AdaptiveSource {
    pub fn new(packet_bytes: u32) -> Self {
        Self {
            packet_bytes,
            window: ADAPTIVE_INITIAL_WINDOW,
            ssthresh: f64::INFINITY,
            srtt: None,
            in_flight: BTreeSet::new(),
            last_progress: 0.0,
            rto_backoff: 1.0,
        }
    }

    pub fn in_flight(&self) -> usize {
        self.in_flight.len()
    }

    /// Current retransmission timeout: max(200 ms, 2 * sRTT), backed off
    /// exponentially while no progress is made.
    pub fn rto(&self) -> f64 {
        ADAPTIVE_MIN_RTO.max(2.0 * self.srtt.unwrap_or(0.0)) * self.rto_backoff
    }

    /// Number of packets the window allows to be released now.
    pub fn releasable(&self) -> usize {
        (self.window.floor() as usize).saturating_sub(self.in_flight.len())
    }

    pub fn on_release(&mut self, id: u64) {
        self.in_flight.insert(id);
    }

    /// Delivery of `id` with the observed round-trip sample.
    pub fn on_ack(&mut self, id: u64, rtt_sample: f64, now: f64) {
        if !self.in_flight.remove(&id) {
            // Unknown or duplicate ack: ignore.
            return;
        }
        self.srtt = Some(match self.srtt {
            Some(s) => 0.875 * s + 0.125 * rtt_sample,
            None => rtt_sample,
        });
        if self.window < self.ssthresh {
            self.window += 1.0;
        } else {
            self.window += 1.0 / self.window;
        }
        self.last_progress = now;
        self.rto_backoff = 1.0;
    }

    /// Loss of `id`: multiplicative decrease. Duplicate signals for the same
    /// id are idempotent.
    pub fn on_loss(&mut self, id: u64) {
        if !self.in_flight.remove(&id) {
            return;
        }
        self.ssthresh = (self.window / 2.0).max(1.0);
        self.window = self.ssthresh;
    }

    /// Retransmission timeout check: with data outstanding and no progress
    /// for one RTO, collapse to a one-packet window and re-enter slow start.
    pub fn check_rto(&mut self, now: f64) {
        if self.in_flight.is_empty() {
            self.last_progress = now;
            return;
        }
        if now - self.last_progress >= self.rto() {
            self.ssthresh = (self.window / 2.0).max(1.0);
            self.window = 1.0;
            self.last_progress = now;
            self.rto_backoff = (self.rto_backoff * 2.0).min(64.0);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cbr_aggregate_rates() {
        // Fast profile: 7 flows at 1500 B / 150 us = 560 Mbps aggregate.
        let per_flow: f64 = 1500.0 * 8.0 / 150e-6;
        assert!((7.0 * per_flow - 560e6).abs() < 1e-3);
        // Slow profile: 8 Mbps per flow, 56 Mbps aggregate.
        let slow: f64 = 1500.0 * 8.0 / 1500e-6;
        assert!((slow - 8e6).abs() < 1e-6);
        assert!((7.0 * slow - 56e6).abs() < 1e-3);
    }

    #[test]
    fn cbr_tick_timestamps() {
        let mut src = CbrSource::new(1500, 150e-6);
        assert!(src.tick(0.0).is_empty());
        let stamps = src.tick(250e-6);
        assert_eq!(stamps.len(), 1);
        assert!((stamps[0] - 150e-6).abs() < 1e-12);
        let stamps = src.tick(500e-6);
        assert_eq!(stamps.len(), 2);
        assert!((stamps[0] - 300e-6).abs() < 1e-12);
        assert!((stamps[1] - 450e-6).abs() < 1e-12);
        // now == last emission: nothing due.
        let mut src2 = CbrSource::new(1500, 100e-6);
        src2.tick(100e-6);
        assert!(src2.tick(100e-6).is_empty());
    }

    #[test]
    fn cbr_count_over_horizon() {
        let mut src = CbrSource::new(1500, 1500e-6);
        let mut count = 0;
        let mut t = 0.0;
        while t < 1.0 {
            t += 250e-6;
            count += src.tick(t).len();
        }
        let expected = (1.0f64 / 1500e-6).floor() as i64;
        assert!((count as i64 - expected).abs() <= 1);
    }

    #[test]
    fn adaptive_slow_start_doubles() {
        let mut src = AdaptiveSource::new(1500);
        assert_eq!(src.window, 10.0);
        for id in 0..10 {
            src.on_release(id);
        }
        assert_eq!(src.releasable(), 0);
        for id in 0..10 {
            src.on_ack(id, 0.01, 0.01);
        }
        assert_eq!(src.window, 20.0);
        assert_eq!(src.releasable(), 20);
    }

    #[test]
    fn adaptive_loss_halves() {
        let mut src = AdaptiveSource::new(1500);
        src.window = 16.0;
        src.ssthresh = 4.0;
        src.on_release(0);
        src.on_loss(0);
        assert_eq!(src.ssthresh, 8.0);
        assert_eq!(src.window, 8.0);
        // Duplicate loss for the same id is idempotent.
        src.on_loss(0);
        assert_eq!(src.window, 8.0);
    }

    #[test]
    fn adaptive_congestion_avoidance_increment() {
        let mut src = AdaptiveSource::new(1500);
        src.window = 8.0;
        src.ssthresh = 4.0;
        src.on_release(0);
        src.on_ack(0, 0.01, 0.02);
        assert!((src.window - 8.125).abs() < 1e-12);
    }

    #[test]
    fn adaptive_rto_collapses_window() {
        let mut src = AdaptiveSource::new(1500);
        src.window = 12.0;
        src.on_release(0);
        src.check_rto(0.1);
        assert_eq!(src.window, 12.0, "before the timeout");
        src.check_rto(0.21);
        assert_eq!(src.window, 1.0);
        assert_eq!(src.ssthresh, 6.0);
        // Backoff doubles the next timeout.
        assert!((src.rto() - 0.4).abs() < 1e-12);
    }

    #[test]
    fn adaptive_never_exceeds_window() {
        let mut src = AdaptiveSource::new(1500);
        let mut next_id = 0u64;
        let mut outstanding = Vec::new();
        for round in 0..50 {
            for _ in 0..src.releasable() {
                src.on_release(next_id);
                outstanding.push(next_id);
                next_id += 1;
            }
            assert!(src.in_flight() <= src.window.floor() as usize);
            // Deliver half, lose one occasionally.
            let half = outstanding.len() / 2;
            for id in outstanding.drain(..half) {
                src.on_ack(id, 0.01, round as f64 * 0.01);
            }
            if round % 7 == 3 {
                if let Some(id) = outstanding.pop() {
                    src.on_loss(id);
                }
            }
        }
    }
}
