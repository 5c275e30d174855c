//! NR numerology and frame grid, per-subcarrier SINR evaluation, and the
//! link-to-system abstraction (CQI -> MCS -> BLER -> transport block size).

use serde::{Deserialize, Serialize};

use crate::C64;

/// Link direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    Dl,
    Ul,
}

impl Direction {
    pub const BOTH: [Direction; 2] = [Direction::Dl, Direction::Ul];

    pub fn index(self) -> usize {
        match self {
            Direction::Dl => 0,
            Direction::Ul => 1,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Direction::Dl => "dl",
            Direction::Ul => "ul",
        }
    }
}

/// Radio parameters of the cell. Defaults follow the reference device
/// configuration: 28 GHz carrier, 198 MHz over 275 RBs at numerology 2,
/// 30 dBm transmit power and 5 dB noise figure at both ends.
#[derive(Debug, Clone, PartialEq)]
pub struct PhyConfig {
    pub carrier_ghz: f64,
    pub bandwidth_hz: f64,
    pub numerology: u32,
    pub n_rb: usize,
    pub tx_power_dbm_bs: f64,
    pub tx_power_dbm_ue: f64,
    pub noise_figure_db: f64,
    pub n_layers: usize,
    /// Subcarriers represented by one SINR evaluation point. The channel is
    /// essentially flat within a resource block, so evaluating one point per
    /// chunk is the usual system-level shortcut; 1 recovers the literal
    /// per-subcarrier evaluation.
    pub sinr_chunk: usize,
}

impl Default for PhyConfig {
    fn default() -> Self {
        Self {
            carrier_ghz: 28.0,
            bandwidth_hz: 198e6,
            numerology: 2,
            n_rb: 275,
            tx_power_dbm_bs: 30.0,
            tx_power_dbm_ue: 30.0,
            noise_figure_db: 5.0,
            n_layers: 4,
            sinr_chunk: 60,
        }
    }
}

impl PhyConfig {
    /// Subcarrier spacing 2^mu * 15 kHz.
    pub fn delta_f(&self) -> f64 {
        (1u64 << self.numerology) as f64 * 15e3
    }

    /// Total subcarriers K = 12 per resource block.
    pub fn subcarriers(&self) -> usize {
        self.n_rb * 12
    }

    /// OFDM symbol duration (2^-mu / 14) ms, cyclic prefix included.
    pub fn symbol_duration(&self) -> f64 {
        1e-3 / (1u64 << self.numerology) as f64 / 14.0
    }

    pub fn slot_duration(&self) -> f64 {
        1e-3 / (1u64 << self.numerology) as f64
    }

    /// Thermal noise PSD plus noise figure, mW/Hz.
    pub fn noise_psd_mw_per_hz(&self) -> f64 {
        10f64.powf((-174.0 + self.noise_figure_db) / 10.0)
    }

    /// Noise power in one subcarrier, mW.
    pub fn noise_per_subcarrier_mw(&self) -> f64 {
        self.noise_psd_mw_per_hz() * self.delta_f()
    }

    pub fn bs_power_mw(&self) -> f64 {
        10f64.powf(self.tx_power_dbm_bs / 10.0)
    }

    pub fn ue_power_mw(&self) -> f64 {
        10f64.powf(self.tx_power_dbm_ue / 10.0)
    }

    /// DL transmit power per layer and subcarrier, P/K.
    pub fn dl_power_per_subcarrier_mw(&self) -> f64 {
        self.bs_power_mw() / self.subcarriers() as f64
    }

    /// Baseband frequency of subcarrier `k`, centered on the carrier.
    pub fn baseband_frequency(&self, k: usize) -> f64 {
        (k as f64 - self.subcarriers() as f64 / 2.0) * self.delta_f()
    }

    /// Indices of the SINR evaluation points (chunk centers).
    pub fn eval_subcarriers(&self) -> Vec<usize> {
        let k = self.subcarriers();
        let chunk = self.sinr_chunk.max(1).min(k);
        (0..k / chunk).map(|i| i * chunk + chunk / 2).collect()
    }

    /// Noise-to-transmit-power ratio No*df/P used in the MMSE precoders.
    pub fn noise_over_power(&self, dir: Direction) -> f64 {
        let p = match dir {
            Direction::Dl => self.bs_power_mw(),
            Direction::Ul => self.ue_power_mw(),
        };
        self.noise_per_subcarrier_mw() / p
    }
}

/// Slot layout at a given numerology: 14 symbols, PDCCH in symbol 0, data in
/// symbols 1..=12, UL control in symbol 13.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SlotStructure {
    pub numerology: u32,
}

impl SlotStructure {
    pub const SYMBOLS_PER_SLOT: usize = 14;
    pub const DATA_SYMBOLS: usize = 12;
    pub const FIRST_DATA_SYMBOL: usize = 1;
    pub const LAST_DATA_SYMBOL: usize = 12;
    pub const DL_CONTROL_SYMBOL: usize = 0;
    pub const UL_CONTROL_SYMBOL: usize = 13;

    pub fn new(numerology: u32) -> Self {
        Self { numerology }
    }

    pub fn slots_per_subframe(&self) -> usize {
        1usize << self.numerology
    }

    pub fn slot_duration(&self) -> f64 {
        1e-3 / self.slots_per_subframe() as f64
    }
}

/// One MCS entry: spectral efficiency in hundredths of a bit per subcarrier
/// per symbol (exact integer arithmetic for transport block sizing) and the
/// SINR threshold at which the predicted BLER is 1e-2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McsEntry {
    pub index: usize,
    pub efficiency_centibits: u64,
    pub threshold_db: f64,
}

impl McsEntry {
    pub fn efficiency(&self) -> f64 {
        self.efficiency_centibits as f64 / 100.0
    }
}

/// 15-entry MCS table with a Shannon-gap threshold model and the logistic
/// BLER curve parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct McsTable {
    pub entries: Vec<McsEntry>,
    /// Logistic slope in dB; the curve offset is slope*ln(99) so that
    /// bler(threshold) = 1e-2.
    pub bler_slope_db: f64,
}

impl Default for McsTable {
    fn default() -> Self {
        Self::with_gap_db(3.0, 0.5)
    }
}

impl McsTable {
    /// Gap-model table: threshold_dB = 10*log10(gamma * (2^eff - 1)).
    pub fn with_gap_db(gap_db: f64, bler_slope_db: f64) -> Self {
        const CENTIBITS: [u64; 15] = [
            20, 50, 80, 120, 160, 182, 220, 260, 300, 364, 400, 440, 480, 520, 550,
        ];
        let gamma = 10f64.powf(gap_db / 10.0);
        let entries = CENTIBITS
            .iter()
            .enumerate()
            .map(|(index, &centi)| {
                let eff = centi as f64 / 100.0;
                McsEntry {
                    index,
                    efficiency_centibits: centi,
                    threshold_db: 10.0 * (gamma * (2f64.powf(eff) - 1.0)).log10(),
                }
            })
            .collect();
        Self {
            entries,
            bler_slope_db,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Highest MCS whose threshold does not exceed the reported SINR; index 0
/// below the lowest threshold.
pub fn select_mcs(reported_sinr_db: f64, table: &McsTable) -> usize {
    let mut chosen = 0;
    for e in &table.entries {
        if e.threshold_db <= reported_sinr_db {
            chosen = e.index;
        } else {
            break;
        }
    }
    chosen
}

/// Instantaneous block error probability of `mcs` at the actual SINR.
///
/// Logistic in dB, anchored so that bler(threshold) = 1e-2 and the curve
/// saturates towards 1 a few dB below the threshold (the CQI-outage regime).
pub fn bler(actual_sinr_db: f64, mcs: usize, table: &McsTable) -> f64 {
    let th = table.entries[mcs].threshold_db;
    let slope = table.bler_slope_db;
    let offset = slope * 99f64.ln();
    1.0 / (1.0 + ((actual_sinr_db - th + offset) / slope).exp())
}

/// Bits carried by a transport block of `n_symbols` symbols spanning all `k`
/// subcarriers: floor(efficiency * k * n_symbols), computed exactly.
pub fn transport_block_bits(mcs: usize, n_symbols: usize, k: usize, table: &McsTable) -> u64 {
    table.entries[mcs].efficiency_centibits * k as u64 * n_symbols as u64 / 100
}

/// Per-evaluation-point SINR of one user in one direction, with the wideband
/// value defined as the arithmetic mean of the per-subcarrier linear values.
#[derive(Debug, Clone, PartialEq)]
pub struct SinrSample {
    pub user: usize,
    pub direction: Direction,
    pub per_subcarrier: Vec<f64>,
    pub wideband: f64,
}

impl SinrSample {
    pub fn new(user: usize, direction: Direction, per_subcarrier: Vec<f64>) -> Self {
        let wideband = if per_subcarrier.is_empty() {
            0.0
        } else {
            per_subcarrier.iter().sum::<f64>() / per_subcarrier.len() as f64
        };
        Self {
            user,
            direction,
            per_subcarrier,
            wideband,
        }
    }

    pub fn wideband_db(&self) -> f64 {
        lin_to_db(self.wideband)
    }
}

pub fn lin_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

pub fn db_to_lin(x: f64) -> f64 {
    10f64.powf(x / 10.0)
}

/// DL SINR of the target user at one subcarrier.
///
/// `gains[j]` is the effective scalar gain between the target user's receive
/// chain and the transmit vector of active layer `j`; the target user's own
/// pathloss multiplies every term, desired and interfering alike.
pub fn sinr_dl(
    gains: &[C64],
    target: usize,
    pathloss_gain: f64,
    power_per_layer_sc_mw: f64,
    noise_mw: f64,
) -> f64 {
    assert!(target < gains.len(), "target layer outside the active set");
    let mut interference = 0.0;
    for (j, g) in gains.iter().enumerate() {
        if j != target {
            interference += pathloss_gain * g.norm_sqr() * power_per_layer_sc_mw;
        }
    }
    let signal = pathloss_gain * gains[target].norm_sqr() * power_per_layer_sc_mw;
    signal / (interference + noise_mw)
}

/// UL SINR of the target user at one subcarrier.
///
/// Each interfering term carries the interferer's own pathloss: `others[j]`
/// is `(pathloss_gain, effective gain)` of co-scheduled user j as seen by the
/// target user's receiving layer.
pub fn sinr_ul(
    own_gain: C64,
    own_pathloss_gain: f64,
    others: &[(f64, C64)],
    power_mw: f64,
    noise_mw: f64,
) -> f64 {
    let mut interference = 0.0;
    for (pl, g) in others {
        interference += pl * g.norm_sqr() * power_mw;
    }
    let signal = own_pathloss_gain * own_gain.norm_sqr() * power_mw;
    signal / (interference + noise_mw)
}
