//! Per-run reports and cross-run aggregation: throughput, delay, SINR and
//! BLER samples, padding waste, and the structural audit counters.
//!
//! Throughput counts bits of packets created inside the measurement window
//! (after warm-up) that were delivered by the end of the run, so delivered
//! never exceeds offered. Delay samples cover delivered packets only.

use crate::phy::Direction;

/// Structural invariant violations accumulated over a run. All fields must
/// stay zero for a conforming scheduler/engine.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Violations {
    /// Two allocations overlapped on the same layer.
    pub layer_overlap: u64,
    /// A PMRS bundle contained allocations with different start symbols.
    pub pmrs_bundle_async: u64,
    /// A PMRS plan produced a non-empty MMSE fallback set.
    pub pmrs_fallback: u64,
    /// An AMRS layer had an idle symbol before its last allocation.
    pub amrs_gap: u64,
    /// A TMRS or AMRS allocation carried padding.
    pub stray_padding: u64,
    /// Round-robin fairness bound violated over a saturated window.
    pub rr_fairness: u64,
    /// An allocation fell outside its direction's symbol region.
    pub region_bounds: u64,
    /// A HARQ retransmission was not transmitted in the slot after its NACK.
    pub retx_latency: u64,
    /// Per-flow packet conservation failed at run end.
    pub conservation: u64,
}

impl Violations {
    pub fn total(&self) -> u64 {
        self.layer_overlap
            + self.pmrs_bundle_async
            + self.pmrs_fallback
            + self.amrs_gap
            + self.stray_padding
            + self.rr_fairness
            + self.region_bounds
            + self.retx_latency
            + self.conservation
    }
}

/// Metrics of a single simulation run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub seed: u64,
    pub duration_s: f64,
    pub warmup_s: f64,
    /// Bits of packets created in the measurement window, per direction.
    pub offered_bits: [u64; 2],
    /// Bits of window packets delivered by run end, per direction.
    pub delivered_bits: [u64; 2],
    pub generated_packets: [u64; 2],
    pub delivered_packets: [u64; 2],
    pub dropped_packets: [u64; 2],
    /// Delay of delivered window packets, seconds.
    pub delay_s: [Vec<f32>; 2],
    /// Wideband SINR per transport block, dB.
    pub sinr_db: [Vec<f32>; 2],
    /// Instantaneous BLER per transport block.
    pub bler: [Vec<f32>; 2],
    pub tb_count: [u64; 2],
    pub tb_failed: [u64; 2],
    pub harq_retransmissions: u64,
    pub padding_symbols: u64,
    pub granted_symbols: u64,
    pub fallback_allocations: u64,
    pub total_allocations: u64,
    pub violations: Violations,
}

impl RunReport {
    pub fn empty(seed: u64, duration_s: f64, warmup_s: f64) -> Self {
        Self {
            seed,
            duration_s,
            warmup_s,
            offered_bits: [0; 2],
            delivered_bits: [0; 2],
            generated_packets: [0; 2],
            delivered_packets: [0; 2],
            dropped_packets: [0; 2],
            delay_s: [Vec::new(), Vec::new()],
            sinr_db: [Vec::new(), Vec::new()],
            bler: [Vec::new(), Vec::new()],
            tb_count: [0; 2],
            tb_failed: [0; 2],
            harq_retransmissions: 0,
            padding_symbols: 0,
            granted_symbols: 0,
            fallback_allocations: 0,
            total_allocations: 0,
            violations: Violations::default(),
        }
    }

    /// Measurement window length in seconds.
    pub fn window_s(&self) -> f64 {
        (self.duration_s - self.warmup_s).max(0.0)
    }

    pub fn throughput_mbps(&self, dir: Direction) -> f64 {
        let w = self.window_s();
        if w <= 0.0 {
            return 0.0;
        }
        self.delivered_bits[dir.index()] as f64 / w / 1e6
    }

    pub fn offered_mbps(&self, dir: Direction) -> f64 {
        let w = self.window_s();
        if w <= 0.0 {
            return 0.0;
        }
        self.offered_bits[dir.index()] as f64 / w / 1e6
    }

    /// Ratio of padding symbols to all granted-plus-padding symbols.
    pub fn padding_ratio(&self) -> f64 {
        let total = self.padding_symbols + self.granted_symbols;
        if total == 0 {
            0.0
        } else {
            self.padding_symbols as f64 / total as f64
        }
    }
}

/// Aggregate over the runs of one configuration: pooled sample CDFs plus
/// run-level means with standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct CampaignSummary {
    pub reports: Vec<RunReport>,
}

fn mean_se(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

impl CampaignSummary {
    pub fn runs(&self) -> usize {
        self.reports.len()
    }

    pub fn pooled_sinr_db(&self, dir: Direction) -> Vec<f32> {
        self.pool(|r| &r.sinr_db[dir.index()])
    }

    pub fn pooled_bler(&self, dir: Direction) -> Vec<f32> {
        self.pool(|r| &r.bler[dir.index()])
    }

    pub fn pooled_delay_s(&self, dir: Direction) -> Vec<f32> {
        self.pool(|r| &r.delay_s[dir.index()])
    }

    fn pool<'a>(&'a self, f: impl Fn(&'a RunReport) -> &'a Vec<f32>) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.reports.iter().map(|r| f(r).len()).sum());
        for r in &self.reports {
            out.extend_from_slice(f(r));
        }
        out
    }

    /// Mean and run-level standard error of the per-run throughput.
    pub fn throughput_mbps(&self, dir: Direction) -> (f64, f64) {
        let v: Vec<f64> = self.reports.iter().map(|r| r.throughput_mbps(dir)).collect();
        mean_se(&v)
    }

    pub fn offered_mbps(&self, dir: Direction) -> (f64, f64) {
        let v: Vec<f64> = self.reports.iter().map(|r| r.offered_mbps(dir)).collect();
        mean_se(&v)
    }

    /// Mean delay over all delivered packets, with run-level SE of the
    /// per-run means.
    pub fn mean_delay_ms(&self, dir: Direction) -> (f64, f64) {
        let pooled = self.pooled_delay_s(dir);
        let pooled_mean = if pooled.is_empty() {
            0.0
        } else {
            pooled.iter().map(|&x| x as f64).sum::<f64>() / pooled.len() as f64 * 1e3
        };
        let per_run: Vec<f64> = self
            .reports
            .iter()
            .filter(|r| !r.delay_s[dir.index()].is_empty())
            .map(|r| {
                let d = &r.delay_s[dir.index()];
                d.iter().map(|&x| x as f64).sum::<f64>() / d.len() as f64 * 1e3
            })
            .collect();
        let (_, se) = mean_se(&per_run);
        (pooled_mean, se)
    }

    pub fn mean_bler(&self, dir: Direction) -> f64 {
        let pooled = self.pooled_bler(dir);
        if pooled.is_empty() {
            0.0
        } else {
            pooled.iter().map(|&x| x as f64).sum::<f64>() / pooled.len() as f64
        }
    }

    pub fn total_violations(&self) -> u64 {
        self.reports.iter().map(|r| r.violations.total()).sum()
    }
}

/// Pool per-run reports into a campaign summary (order preserved).
pub fn aggregate(reports: Vec<RunReport>) -> CampaignSummary {
    assert!(!reports.is_empty(), "aggregate requires at least one report");
    CampaignSummary { reports }
}

/// q-th percentile (q in [0, 1]) of unsorted samples, by the nearest-rank
/// rule. Returns NaN on an empty set.
pub fn percentile(samples: &[f32], q: f64) -> f64 {
    if samples.is_empty() {
        return f64::NAN;
    }
    let mut sorted: Vec<f32> = samples.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1] as f64
}

/// Empirical CDF value at x: fraction of samples <= x.
pub fn cdf_at(samples: &[f32], x: f64) -> f64 {
    if samples.is_empty() {
        return f64::NAN;
    }
    let n = samples.iter().filter(|&&s| (s as f64) <= x).count();
    n as f64 / samples.len() as f64
}
