//! Scenario documents: a TOML key-value file mirroring the full simulation
//! configuration. Unknown keys are rejected, all defaults reproduce the
//! reference cell (7 UEs in a 100 m disc, 28 GHz / 198 MHz at numerology 2,
//! 30 dBm and 5 dB noise figure at both ends, 8x8 BS and 4x4 UE arrays).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::array::ArrayConfig;
use crate::beamforming::BfKind;
use crate::channel::ChannelParams;
use crate::phy::PhyConfig;
use crate::rlc::{RlcConfig, RlcMode};
use crate::scheduler::SchedulerKind;
use crate::traffic::TrafficConfig;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario parse error: {0}")]
    Parse(String),
    #[error("scenario constraint violated: {0}")]
    Constraint(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RadioConfig {
    pub carrier_ghz: f64,
    pub bandwidth_mhz: f64,
    pub numerology: u32,
    pub n_rb: usize,
    pub tx_power_dbm_bs: f64,
    pub tx_power_dbm_ue: f64,
    pub noise_figure_db: f64,
    pub bs_array: [usize; 2],
    pub ue_array: [usize; 2],
    /// UPA phase constant. The model's formula uses pi/2 for half-wavelength
    /// spacing (the conventional constant would be pi), so it stays a knob.
    pub phase_factor: f64,
    /// Subcarriers per SINR evaluation point (1 = every subcarrier).
    pub sinr_chunk: usize,
}

impl Default for RadioConfig {
    fn default() -> Self {
        Self {
            carrier_ghz: 28.0,
            bandwidth_mhz: 198.0,
            numerology: 2,
            n_rb: 275,
            tx_power_dbm_bs: 30.0,
            tx_power_dbm_ue: 30.0,
            noise_figure_db: 5.0,
            bs_array: [8, 8],
            ue_array: [4, 4],
            phase_factor: std::f64::consts::FRAC_PI_2,
            sinr_chunk: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelConfig {
    pub cluster_count: usize,
    pub k_factor_db: f64,
    pub azimuth_spread_deg: f64,
    pub elevation_spread_deg: f64,
    pub delay_max_ns: f64,
    pub ue_speed_kmh: f64,
    pub regen_period_ms: f64,
    pub shadow_los_db: f64,
    pub shadow_nlos_db: f64,
    pub pl_exponent_los: f64,
    pub pl_exponent_nlos: f64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        let d = ChannelParams::default();
        Self {
            cluster_count: d.cluster_count,
            k_factor_db: d.k_factor_db,
            azimuth_spread_deg: d.azimuth_spread_deg,
            elevation_spread_deg: d.elevation_spread_deg,
            delay_max_ns: d.delay_max_ns,
            ue_speed_kmh: d.ue_speed_kmh,
            regen_period_ms: d.regen_period_s * 1e3,
            shadow_los_db: d.shadow_los_db,
            shadow_nlos_db: d.shadow_nlos_db,
            pl_exponent_los: d.pl_exponent_los,
            pl_exponent_nlos: d.pl_exponent_nlos,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BeamGridConfig {
    pub bs_azimuth_count: usize,
    pub bs_elevation_count: usize,
    pub ue_azimuth_count: usize,
    pub ue_elevation_count: usize,
    /// Beam re-selection (sweep) period for the codebook schemes.
    pub update_period_ms: f64,
}

impl Default for BeamGridConfig {
    fn default() -> Self {
        Self {
            bs_azimuth_count: 32,
            bs_elevation_count: 8,
            ue_azimuth_count: 8,
            ue_elevation_count: 2,
            update_period_ms: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MacConfig {
    pub harq_max_attempts: u32,
}

impl Default for MacConfig {
    fn default() -> Self {
        Self {
            harq_max_attempts: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RlcKnobs {
    pub reordering_timeout_ms: f64,
    pub max_am_retx: u32,
}

impl Default for RlcKnobs {
    fn default() -> Self {
        Self {
            reordering_timeout_ms: 10.0,
            max_am_retx: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: Option<String>,
    pub preset: Option<String>,
    pub trace_plans: bool,
    pub trace_packets: bool,
    pub trace_channel: bool,
}

/// Complete simulation configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Scenario {
    pub seed: u64,
    pub ue_count: usize,
    pub drop_radius_m: f64,
    pub min_bs_distance_m: f64,
    pub bs_height_m: f64,
    pub ue_height_m: f64,
    pub n_layers: usize,
    pub bf_scheme: BfKind,
    pub scheduler: SchedulerKind,
    pub rlc_mode: RlcMode,
    pub harq: bool,
    pub duration_s: f64,
    pub runs: usize,
    pub warmup_s: f64,
    pub traffic: TrafficConfig,
    pub radio: RadioConfig,
    pub channel: ChannelConfig,
    pub beams: BeamGridConfig,
    pub mac: MacConfig,
    pub rlc: RlcKnobs,
    pub output: OutputConfig,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            seed: 1,
            ue_count: 7,
            drop_radius_m: 100.0,
            min_bs_distance_m: 10.0,
            bs_height_m: 25.0,
            ue_height_m: 1.6,
            n_layers: 4,
            bf_scheme: BfKind::Smbf,
            scheduler: SchedulerKind::Pmrs,
            rlc_mode: RlcMode::Um,
            harq: true,
            duration_s: 2.0,
            runs: 20,
            warmup_s: 0.1,
            traffic: TrafficConfig::default(),
            radio: RadioConfig::default(),
            channel: ChannelConfig::default(),
            beams: BeamGridConfig::default(),
            mac: MacConfig::default(),
            rlc: RlcKnobs::default(),
            output: OutputConfig::default(),
        }
    }
}

impl Scenario {
    pub fn phy(&self) -> PhyConfig {
        PhyConfig {
            carrier_ghz: self.radio.carrier_ghz,
            bandwidth_hz: self.radio.bandwidth_mhz * 1e6,
            numerology: self.radio.numerology,
            n_rb: self.radio.n_rb,
            tx_power_dbm_bs: self.radio.tx_power_dbm_bs,
            tx_power_dbm_ue: self.radio.tx_power_dbm_ue,
            noise_figure_db: self.radio.noise_figure_db,
            n_layers: self.n_layers,
            sinr_chunk: self.radio.sinr_chunk,
        }
    }

    pub fn bs_array(&self) -> ArrayConfig {
        ArrayConfig::new(self.radio.bs_array[0], self.radio.bs_array[1])
            .with_phase_factor(self.radio.phase_factor)
    }

    pub fn ue_array(&self) -> ArrayConfig {
        ArrayConfig::new(self.radio.ue_array[0], self.radio.ue_array[1])
            .with_phase_factor(self.radio.phase_factor)
    }

    pub fn channel_params(&self) -> ChannelParams {
        ChannelParams {
            carrier_ghz: self.radio.carrier_ghz,
            cluster_count: self.channel.cluster_count,
            k_factor_db: self.channel.k_factor_db,
            azimuth_spread_deg: self.channel.azimuth_spread_deg,
            elevation_spread_deg: self.channel.elevation_spread_deg,
            delay_max_ns: self.channel.delay_max_ns,
            ue_speed_kmh: self.channel.ue_speed_kmh,
            regen_period_s: self.channel.regen_period_ms * 1e-3,
            shadow_los_db: self.channel.shadow_los_db,
            shadow_nlos_db: self.channel.shadow_nlos_db,
            pl_exponent_los: self.channel.pl_exponent_los,
            pl_exponent_nlos: self.channel.pl_exponent_nlos,
        }
    }

    pub fn rlc_config(&self) -> RlcConfig {
        RlcConfig {
            mode: self.rlc_mode,
            reordering_timeout: self.rlc.reordering_timeout_ms * 1e-3,
            max_am_retx: self.rlc.max_am_retx,
        }
    }

    /// Cross-field constraint checks.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let constraint = |m: String| Err(ScenarioError::Constraint(m));
        if self.ue_count == 0 {
            return constraint("ue_count must be at least 1".into());
        }
        if !(self.n_layers == 1 || self.n_layers == 4) {
            return constraint(format!("n_layers must be 1 or 4, got {}", self.n_layers));
        }
        if self.scheduler == SchedulerKind::Tmrs && self.n_layers != 1 {
            return constraint(format!(
                "scheduler=tmrs requires n_layers=1, got n_layers={}",
                self.n_layers
            ));
        }
        if self.bf_scheme.is_mmse() && self.n_layers < 2 {
            return constraint(format!(
                "bf_scheme={} requires n_layers >= 2 (it degenerates to cbf on one layer)",
                self.bf_scheme.label()
            ));
        }
        if self.drop_radius_m <= 0.0 {
            return constraint("drop_radius_m must be positive".into());
        }
        if self.min_bs_distance_m >= self.drop_radius_m {
            return constraint("min_bs_distance_m must be below drop_radius_m".into());
        }
        if self.duration_s < 0.0 || self.warmup_s < 0.0 {
            return constraint("duration_s and warmup_s must be non-negative".into());
        }
        if self.runs == 0 {
            return constraint("runs must be at least 1".into());
        }
        if self.radio.numerology > 4 {
            return constraint("numerology must be in 0..=4".into());
        }
        if self.radio.sinr_chunk == 0 {
            return constraint("sinr_chunk must be at least 1".into());
        }
        if self.traffic.interval_us <= 0.0 {
            return constraint("traffic.interval_us must be positive".into());
        }
        if self.traffic.packet_bytes == 0 {
            return constraint("traffic.packet_bytes must be positive".into());
        }
        let phy = self.phy();
        let cp = phy.symbol_duration() - 1.0 / phy.delta_f();
        if self.channel.delay_max_ns * 1e-9 >= cp {
            return constraint(format!(
                "channel.delay_max_ns must stay below the cyclic prefix ({:.0} ns)",
                cp * 1e9
            ));
        }
        if self.mac.harq_max_attempts == 0 {
            return constraint("mac.harq_max_attempts must be at least 1".into());
        }
        if self.rlc.reordering_timeout_ms <= 0.0 {
            return constraint("rlc.reordering_timeout_ms must be positive".into());
        }
        Ok(())
    }
}

/// Parse and validate a scenario document. An empty document yields the
/// all-defaults scenario.
pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let scenario: Scenario =
        toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
    scenario.validate()?;
    Ok(scenario)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_all_defaults() {
        let s = parse_scenario("").unwrap();
        assert_eq!(s, Scenario::default());
        assert_eq!(s.ue_count, 7);
        assert_eq!(s.drop_radius_m, 100.0);
        assert_eq!(s.radio.numerology, 2);
        assert_eq!(s.phy().subcarriers(), 3300);
        assert_eq!(s.radio.bs_array, [8, 8]);
        assert_eq!(s.radio.ue_array, [4, 4]);
        assert_eq!(s.radio.tx_power_dbm_bs, 30.0);
        assert_eq!(s.radio.noise_figure_db, 5.0);
    }

    #[test]
    fn tmrs_multilayer_rejected() {
        let err = parse_scenario("scheduler = \"tmrs\"\nn_layers = 4\n").unwrap_err();
        match err {
            ScenarioError::Constraint(m) => {
                assert!(m.contains("tmrs") && m.contains("n_layers"), "{m}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn mmse_single_layer_rejected() {
        let err =
            parse_scenario("scheduler = \"pmrs\"\nn_layers = 1\nbf_scheme = \"smbf\"\n")
                .unwrap_err();
        assert!(matches!(err, ScenarioError::Constraint(_)));
    }

    #[test]
    fn unknown_key_named_in_error() {
        let err = parse_scenario("frobnicate = 3\n").unwrap_err();
        match err {
            ScenarioError::Parse(m) => assert!(m.contains("frobnicate"), "{m}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn parse_error_carries_line_info() {
        let err = parse_scenario("seed = \n").unwrap_err();
        match err {
            ScenarioError::Parse(m) => assert!(m.contains("line 1"), "{m}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn nested_tables_parse() {
        let s = parse_scenario(
            "n_layers = 1\nbf_scheme = \"cbf\"\nscheduler = \"tmrs\"\n\
             [traffic]\nkind = \"cbr\"\ninterval_us = 150.0\n\
             [radio]\nsinr_chunk = 12\n",
        )
        .unwrap();
        assert_eq!(s.traffic.interval_us, 150.0);
        assert_eq!(s.radio.sinr_chunk, 12);
        assert_eq!(s.scheduler, SchedulerKind::Tmrs);
    }

    #[test]
    fn delay_spread_must_fit_cyclic_prefix() {
        let err = parse_scenario("[channel]\ndelay_max_ns = 5000.0\n").unwrap_err();
        assert!(matches!(err, ScenarioError::Constraint(_)));
    }
}
