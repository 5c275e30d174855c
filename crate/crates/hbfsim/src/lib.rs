//! System-level simulator for a single-cell 5G NR mmWave network with
//! multi-user SDMA hybrid beamforming.
//!
//! The crate models the full chain from antenna arrays and a clustered
//! multipath channel, through analog/hybrid beamforming (geometric,
//! codebook, and frequency-flat / per-subcarrier MMSE schemes), a
//! link-to-system PHY abstraction (SINR, CQI/MCS, BLER), MAC scheduling on
//! the (symbol, layer) grid with HARQ, RLC UM/AM retransmission, and
//! CBR/adaptive traffic sources. A slot-synchronous engine ties the pieces
//! together and produces throughput, delay, SINR, and BLER statistics for
//! reproducible multi-run campaigns.

pub mod array;
pub mod beamforming;
pub mod channel;
pub mod engine;
pub mod events;
pub mod metrics;
pub mod phy;
pub mod presets;
pub mod rlc;
pub mod rng;
pub mod scenario;
pub mod scheduler;
pub mod traffic;

pub use engine::{run, Campaign};
pub use scenario::Scenario;

/// Complex scalar used throughout the simulator.
pub type C64 = num_complex::Complex64;
