//! Campaign presets: the configuration matrices of the reference
//! experiments. Every configuration of a preset shares the same seed, so the
//! UE drops and channels are identical across configurations and
//! comparisons are paired.

use thiserror::Error;

use crate::beamforming::BfKind;
use crate::rlc::RlcMode;
use crate::scenario::Scenario;
use crate::scheduler::SchedulerKind;
use crate::traffic::TrafficConfig;

#[derive(Debug, Error)]
#[error("unknown preset `{0}`")]
pub struct UnknownPreset(pub String);

/// One configuration of a preset.
#[derive(Debug, Clone)]
pub struct PresetEntry {
    pub label: String,
    pub scenario: Scenario,
}

pub const PRESET_NAMES: [&str; 5] = [
    "bf-comparison",
    "sched-comparison",
    "delay-retx",
    "throughput-delay",
    "apps",
];

fn base(seed: u64, runs: usize) -> Scenario {
    Scenario {
        seed,
        runs,
        ..Scenario::default()
    }
}

fn cfg(
    label: &str,
    seed: u64,
    runs: usize,
    scheduler: SchedulerKind,
    layers: usize,
    bf: BfKind,
    rlc: RlcMode,
    harq: bool,
    traffic: TrafficConfig,
) -> PresetEntry {
    let mut s = base(seed, runs);
    s.scheduler = scheduler;
    s.n_layers = layers;
    s.bf_scheme = bf;
    s.rlc_mode = rlc;
    s.harq = harq;
    s.traffic = traffic;
    s.validate().expect("preset configuration is valid");
    PresetEntry {
        label: label.to_string(),
        scenario: s,
    }
}

/// Configuration matrix of a named preset.
pub fn preset(name: &str, seed: u64, runs: usize) -> Result<Vec<PresetEntry>, UnknownPreset> {
    use BfKind::*;
    use RlcMode::*;
    use SchedulerKind::*;
    let slow = TrafficConfig::cbr_slow;
    let fast = TrafficConfig::cbr_fast;
    let adaptive = TrafficConfig::adaptive;
    let entries = match name {
        // Beamforming comparison: low-rate probing with no retransmissions,
        // PMRS everywhere so the MMSE schemes never fall back.
        "bf-comparison" => vec![
            cfg("gbf-1l", seed, runs, Pmrs, 1, Gbf, Um, false, slow()),
            cfg("cbf-1l", seed, runs, Pmrs, 1, Cbf, Um, false, slow()),
            cfg("gbf-4l", seed, runs, Pmrs, 4, Gbf, Um, false, slow()),
            cfg("cbf-4l", seed, runs, Pmrs, 4, Cbf, Um, false, slow()),
            cfg("fmbf-4l", seed, runs, Pmrs, 4, Fmbf, Um, false, slow()),
            cfg("smbf-4l", seed, runs, Pmrs, 4, Smbf, Um, false, slow()),
        ],
        // Scheduler comparison under saturating traffic, no retransmissions.
        "sched-comparison" => vec![
            cfg("tmrs1-cbf", seed, runs, Tmrs, 1, Cbf, Um, false, fast()),
            cfg("pmrs1-cbf", seed, runs, Pmrs, 1, Cbf, Um, false, fast()),
            cfg("pmrs4-smbf", seed, runs, Pmrs, 4, Smbf, Um, false, fast()),
            cfg("amrs4-smbf", seed, runs, Amrs, 4, Smbf, Um, false, fast()),
        ],
        // Retransmission regimes on the 4-layer padded scheduler.
        "delay-retx" => vec![
            cfg("um-noharq", seed, runs, Pmrs, 4, Smbf, Um, false, fast()),
            cfg("um-harq", seed, runs, Pmrs, 4, Smbf, Um, true, fast()),
            cfg("am-noharq", seed, runs, Pmrs, 4, Smbf, Am, false, fast()),
            cfg("am-harq", seed, runs, Pmrs, 4, Smbf, Am, true, fast()),
        ],
        // Throughput vs delay, with and without full retransmissions.
        "throughput-delay" => vec![
            cfg("tmrs1-noretx", seed, runs, Tmrs, 1, Cbf, Um, false, fast()),
            cfg("tmrs1-retx", seed, runs, Tmrs, 1, Cbf, Am, true, fast()),
            cfg("pmrs4-noretx", seed, runs, Pmrs, 4, Smbf, Um, false, fast()),
            cfg("pmrs4-retx", seed, runs, Pmrs, 4, Smbf, Am, true, fast()),
            cfg("amrs4-noretx", seed, runs, Amrs, 4, Smbf, Um, false, fast()),
            cfg("amrs4-retx", seed, runs, Amrs, 4, Smbf, Am, true, fast()),
        ],
        // Application comparison with full retransmissions.
        "apps" => {
            let mut v = Vec::new();
            for (tl, tc) in [
                ("udpslow", slow()),
                ("udpfast", fast()),
                ("adaptive", adaptive()),
            ] {
                for (sl, sk, layers, bf) in [
                    ("tmrs1", Tmrs, 1, Cbf),
                    ("pmrs4", Pmrs, 4, Smbf),
                    ("amrs4", Amrs, 4, Smbf),
                ] {
                    v.push(cfg(
                        &format!("{tl}-{sl}"),
                        seed,
                        runs,
                        sk,
                        layers,
                        bf,
                        Am,
                        true,
                        tc.clone(),
                    ));
                }
            }
            v
        }
        other => return Err(UnknownPreset(other.to_string())),
    };
    Ok(entries)
}
