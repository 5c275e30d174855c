//! Clustered multipath channel: per-link geometry, log-distance pathloss
//! with shadowing, cluster draws around the geometric angles, and slot-scale
//! temporal evolution (Doppler phase rotation plus periodic gain
//! regeneration).
//!
//! The model keeps the two properties the system conclusions rest on:
//! angular sparsity (rank-deficient matrices) and frequency selectivity.

use std::f64::consts::{FRAC_PI_2, TAU};

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::array::{array_response, geometric_angles, AnglePair, ArrayConfig, BeamVector, Position};
use crate::phy::PhyConfig;
use crate::C64;

const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ChannelError {
    #[error("subcarrier index {k} out of range (K = {total})")]
    SubcarrierOutOfRange { k: usize, total: usize },
    #[error("dimension mismatch: w has {w}, H is {rows}x{cols}, v has {v}")]
    DimensionMismatch {
        w: usize,
        rows: usize,
        cols: usize,
        v: usize,
    },
}

/// Channel model parameters. All values are knobs; the defaults give a
/// UMa-shaped behaviour at 28 GHz with slow (3 km/h) terminals.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelParams {
    pub carrier_ghz: f64,
    pub cluster_count: usize,
    pub k_factor_db: f64,
    pub azimuth_spread_deg: f64,
    pub elevation_spread_deg: f64,
    pub delay_max_ns: f64,
    pub ue_speed_kmh: f64,
    pub regen_period_s: f64,
    pub shadow_los_db: f64,
    pub shadow_nlos_db: f64,
    /// Pathloss exponents (dB per decade / 10).
    pub pl_exponent_los: f64,
    pub pl_exponent_nlos: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            carrier_ghz: 28.0,
            cluster_count: 8,
            k_factor_db: 10.0,
            azimuth_spread_deg: 10.0,
            elevation_spread_deg: 5.0,
            delay_max_ns: 200.0,
            ue_speed_kmh: 3.0,
            regen_period_s: 0.1,
            shadow_los_db: 4.0,
            shadow_nlos_db: 7.8,
            pl_exponent_los: 2.1,
            pl_exponent_nlos: 3.0,
        }
    }
}

impl ChannelParams {
    /// Maximum Doppler shift in Hz for the configured UE speed.
    pub fn max_doppler_hz(&self) -> f64 {
        let speed = self.ue_speed_kmh / 3.6;
        speed * self.carrier_ghz * 1e9 / SPEED_OF_LIGHT
    }
}

/// Log-distance pathloss in dB (positive loss), shadowing excluded.
pub fn pathloss_db(distance_3d: f64, carrier_ghz: f64, exponent: f64) -> f64 {
    32.4 + 10.0 * exponent * distance_3d.log10() + 20.0 * carrier_ghz.log10()
}

/// Distance-dependent LOS probability.
pub fn los_probability(distance_2d: f64) -> f64 {
    let e = (-distance_2d / 63.0).exp();
    (18.0 / distance_2d).min(1.0) * (1.0 - e) + e
}

/// Link endpoints and the LOS state drawn at drop time.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkGeometry {
    pub bs_pos: Position,
    pub ue_pos: Position,
    pub distance_3d: f64,
    pub distance_2d: f64,
    pub los: bool,
    pub departure: AnglePair,
    pub arrival: AnglePair,
}

/// Linear pathloss gain in (0, 1] with its dB representation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pathloss {
    pub db: f64,
    pub linear_gain: f64,
}

impl Pathloss {
    pub fn from_db(db: f64) -> Self {
        Self {
            db,
            linear_gain: 10f64.powf(-db / 10.0),
        }
    }
}

/// One propagation cluster. The stored gain is the base gain of the current
/// coherence epoch; the instantaneous gain also carries the Doppler phase.
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub gain: C64,
    pub departure: AnglePair,
    pub arrival: AnglePair,
    pub delay_s: f64,
    pub doppler_rate: f64,
    pub specular: bool,
}

/// Multipath channel of one BS-UE link with its own regeneration stream.
#[derive(Debug, Clone, PartialEq)]
pub struct MultipathChannel {
    pub clusters: Vec<Cluster>,
    /// Current absolute time of the channel state.
    pub time: f64,
    epoch_start: f64,
    regen_period: f64,
    /// Linear K-factor for LOS links, used on regeneration.
    k_factor_lin: Option<f64>,
    rng: ChaCha12Rng,
}

impl MultipathChannel {
    /// Test/diagnostic constructor from explicit clusters; no regeneration.
    pub fn from_clusters(clusters: Vec<Cluster>) -> Self {
        Self {
            clusters,
            time: 0.0,
            epoch_start: 0.0,
            regen_period: f64::INFINITY,
            k_factor_lin: None,
            rng: ChaCha12Rng::seed_from_u64(0),
        }
    }

    pub fn cluster_count(&self) -> usize {
        self.clusters.len()
    }

    /// Instantaneous complex gain of cluster `c` at the current time.
    pub fn gain_now(&self, c: usize) -> C64 {
        let cl = &self.clusters[c];
        cl.gain * C64::from_polar(1.0, cl.doppler_rate * (self.time - self.epoch_start))
    }

    /// Instantaneous gains of all clusters at the current time.
    pub fn gains_now(&self) -> Vec<C64> {
        (0..self.clusters.len()).map(|c| self.gain_now(c)).collect()
    }

    fn redraw_gains(&mut self) {
        let n = self
            .clusters
            .iter()
            .filter(|c| !c.specular)
            .count()
            .max(1);
        let diffuse_var = match self.k_factor_lin {
            Some(k) => 1.0 / ((1.0 + k) * n as f64),
            None => 1.0 / n as f64,
        };
        let sigma = (diffuse_var / 2.0).sqrt();
        let normal = Normal::new(0.0, sigma).expect("valid sigma");
        for cl in &mut self.clusters {
            if cl.specular {
                let k = self.k_factor_lin.expect("specular implies LOS");
                let amp = (k / (1.0 + k)).sqrt();
                let phase = self.rng.gen_range(0.0..TAU);
                cl.gain = C64::from_polar(amp, phase);
            } else {
                cl.gain = C64::new(normal.sample(&mut self.rng), normal.sample(&mut self.rng));
            }
        }
    }
}

/// Advance the channel by `dt` seconds. Doppler phases rotate continuously;
/// gains are redrawn each time a regeneration epoch boundary is crossed.
pub fn evolve(ch: &mut MultipathChannel, dt: f64) {
    assert!(dt >= 0.0, "dt must be non-negative");
    ch.time += dt;
    while ch.time - ch.epoch_start >= ch.regen_period {
        ch.epoch_start += ch.regen_period;
        ch.redraw_gains();
    }
}

/// Sample a zero-mean Laplacian with the given standard deviation.
fn laplace<R: Rng>(rng: &mut R, std_dev: f64) -> f64 {
    let b = std_dev / 2f64.sqrt();
    let u: f64 = rng.gen_range(-0.5..0.5);
    -b * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

/// Generate the geometry, pathloss and multipath channel of one link.
/// Deterministic for a given seed.
pub fn drop_link(
    seed: u64,
    bs_pos: Position,
    ue_pos: Position,
    params: &ChannelParams,
) -> (LinkGeometry, Pathloss, MultipathChannel) {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let (departure, arrival) =
        geometric_angles(&bs_pos, &ue_pos).expect("distinct BS/UE positions");
    let d3 = bs_pos.distance(&ue_pos);
    let d2 = bs_pos.distance_2d(&ue_pos);

    let los = rng.gen_range(0.0..1.0) < los_probability(d2);
    let (exponent, shadow_sigma) = if los {
        (params.pl_exponent_los, params.shadow_los_db)
    } else {
        (params.pl_exponent_nlos, params.shadow_nlos_db)
    };
    let shadow = Normal::new(0.0, shadow_sigma)
        .expect("valid sigma")
        .sample(&mut rng);
    let pathloss = Pathloss::from_db(pathloss_db(d3, params.carrier_ghz, exponent) + shadow);

    let geometry = LinkGeometry {
        bs_pos,
        ue_pos,
        distance_3d: d3,
        distance_2d: d2,
        los,
        departure,
        arrival,
    };

    let k_lin = los.then(|| 10f64.powf(params.k_factor_db / 10.0));
    let az_spread = params.azimuth_spread_deg.to_radians();
    let el_spread = params.elevation_spread_deg.to_radians();
    let max_doppler = TAU * params.max_doppler_hz();

    let mut clusters = Vec::with_capacity(params.cluster_count + usize::from(los));
    if los {
        clusters.push(Cluster {
            gain: C64::new(0.0, 0.0),
            departure,
            arrival,
            delay_s: 0.0,
            doppler_rate: max_doppler * rng.gen_range(0.0..TAU).cos(),
            specular: true,
        });
    }
    for _ in 0..params.cluster_count {
        let dep = AnglePair::new(
            departure.azimuth + laplace(&mut rng, az_spread),
            (departure.elevation + laplace(&mut rng, el_spread)).clamp(-FRAC_PI_2, FRAC_PI_2),
        );
        let arr = AnglePair::new(
            arrival.azimuth + laplace(&mut rng, az_spread),
            (arrival.elevation + laplace(&mut rng, el_spread)).clamp(-FRAC_PI_2, FRAC_PI_2),
        );
        clusters.push(Cluster {
            gain: C64::new(0.0, 0.0),
            departure: dep,
            arrival: arr,
            delay_s: rng.gen_range(0.0..params.delay_max_ns * 1e-9),
            doppler_rate: max_doppler * rng.gen_range(0.0..TAU).cos(),
            specular: false,
        });
    }

    let mut channel = MultipathChannel {
        clusters,
        time: 0.0,
        epoch_start: 0.0,
        regen_period: params.regen_period_s,
        k_factor_lin: k_lin,
        rng,
    };
    channel.redraw_gains();
    (geometry, pathloss, channel)
}

/// Materialize the full channel matrix H (N_rx x N_tx) at subcarrier `k` and
/// the channel's current time:
///
/// `H = sqrt(N_tx N_rx) * sum_c g_c(t) exp(-j 2 pi f_k tau_c) a_rx(arr_c) a_tx(dep_c)^T`
///
/// The transposed (not conjugated) transmit factor pairs with conjugated
/// steering beams so that a matched beam yields gain sqrt(N_tx N_rx) |g|.
pub fn channel_matrix(
    ch: &MultipathChannel,
    tx_array: &ArrayConfig,
    rx_array: &ArrayConfig,
    k: usize,
    phy: &PhyConfig,
) -> Result<DMatrix<C64>, ChannelError> {
    let total = phy.subcarriers();
    if k >= total {
        return Err(ChannelError::SubcarrierOutOfRange { k, total });
    }
    let f_k = phy.baseband_frequency(k);
    let n_tx = tx_array.elements();
    let n_rx = rx_array.elements();
    let scale = ((n_tx * n_rx) as f64).sqrt();
    let mut h = DMatrix::<C64>::zeros(n_rx, n_tx);
    for (c, cl) in ch.clusters.iter().enumerate() {
        let weight =
            ch.gain_now(c) * C64::from_polar(1.0, -TAU * f_k * cl.delay_s) * scale;
        let a_rx = array_response(rx_array, &cl.arrival);
        let a_tx = array_response(tx_array, &cl.departure);
        for (i, ri) in a_rx.coefficients().iter().enumerate() {
            for (j, tj) in a_tx.coefficients().iter().enumerate() {
                h[(i, j)] += weight * ri * tj;
            }
        }
    }
    Ok(h)
}

/// Effective scalar channel w^T H v. The UL gain uses the transposed matrix
/// with the roles of the vectors swapped, which yields the same scalar.
pub fn effective_gain(
    w: &BeamVector,
    h: &DMatrix<C64>,
    v: &BeamVector,
) -> Result<C64, ChannelError> {
    if w.len() != h.nrows() || v.len() != h.ncols() {
        return Err(ChannelError::DimensionMismatch {
            w: w.len(),
            rows: h.nrows(),
            cols: h.ncols(),
            v: v.len(),
        });
    }
    let mut acc = C64::new(0.0, 0.0);
    for (i, wi) in w.coefficients().iter().enumerate() {
        let mut row = C64::new(0.0, 0.0);
        for (j, vj) in v.coefficients().iter().enumerate() {
            row += h[(i, j)] * vj;
        }
        acc += wi * row;
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array::AnglePair;

    fn test_positions() -> (Position, Position) {
        (
            Position::new(0.0, 0.0, 25.0),
            Position::new(40.0, 30.0, 1.6),
        )
    }

    #[test]
    fn drop_is_deterministic() {
        let (bs, ue) = test_positions();
        let p = ChannelParams::default();
        let a = drop_link(1234, bs, ue, &p);
        let b = drop_link(1234, bs, ue, &p);
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
        assert_eq!(a.2, b.2);
    }

    #[test]
    fn pathloss_decade_difference() {
        let p = ChannelParams::default();
        let d = pathloss_db(100.0, p.carrier_ghz, p.pl_exponent_los)
            - pathloss_db(10.0, p.carrier_ghz, p.pl_exponent_los);
        assert!((d - 21.0).abs() < 1e-9);
    }

    #[test]
    fn pathloss_monotone_and_consistent() {
        let p = ChannelParams::default();
        let mut prev = f64::INFINITY;
        for d in [10.0, 20.0, 50.0, 100.0, 200.0] {
            let pl = Pathloss::from_db(pathloss_db(d, p.carrier_ghz, p.pl_exponent_nlos));
            assert!(pl.linear_gain < prev);
            assert!(pl.linear_gain > 0.0 && pl.linear_gain <= 1.0);
            assert!((10.0 * (-pl.db / 10.0) - 10.0 * pl.linear_gain.log10()).abs() < 1e-9);
            prev = pl.linear_gain;
        }
    }

    #[test]
    fn cluster_power_normalized() {
        // Monte-Carlo oracle of the unit average power normalization.
        let (bs, ue) = test_positions();
        let p = ChannelParams::default();
        let trials = 10_000;
        let mut total = 0.0;
        for seed in 0..trials {
            let (_, _, ch) = drop_link(seed, bs, ue, &p);
            total += ch.clusters.iter().map(|c| c.gain.norm_sqr()).sum::<f64>();
        }
        let mean = total / trials as f64;
        assert!((mean - 1.0).abs() < 0.02, "mean cluster power {mean}");
    }

    #[test]
    fn single_cluster_is_flat_and_rank_one() {
        let ch = MultipathChannel::from_clusters(vec![Cluster {
            gain: C64::new(0.6, -0.2),
            departure: AnglePair::new(0.3, -0.1),
            arrival: AnglePair::new(2.0, 0.1),
            delay_s: 0.0,
            doppler_rate: 0.0,
            specular: false,
        }]);
        let phy = PhyConfig::default();
        let tx = ArrayConfig::new(4, 4);
        let rx = ArrayConfig::new(2, 2);
        let h0 = channel_matrix(&ch, &tx, &rx, 0, &phy).unwrap();
        let h1 = channel_matrix(&ch, &tx, &rx, 1234, &phy).unwrap();
        assert!((&h0 - &h1).norm() < 1e-12);
        let svd = h0.svd(false, false);
        let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
        sv.sort_by(|a, b| b.total_cmp(a));
        assert!(sv[0] > 1e-6);
        assert!(sv[1] < 1e-9 * sv[0]);
    }

    #[test]
    fn distinct_delays_are_frequency_selective() {
        let mk = |delay| Cluster {
            gain: C64::new(0.5, 0.5),
            departure: AnglePair::new(0.3, -0.1),
            arrival: AnglePair::new(2.0, 0.1),
            delay_s: delay,
            doppler_rate: 0.0,
            specular: false,
        };
        let ch = MultipathChannel::from_clusters(vec![mk(0.0), mk(130e-9)]);
        let phy = PhyConfig::default();
        let tx = ArrayConfig::new(4, 4);
        let rx = ArrayConfig::new(2, 2);
        let h0 = channel_matrix(&ch, &tx, &rx, 0, &phy).unwrap();
        let h1 = channel_matrix(&ch, &tx, &rx, 1234, &phy).unwrap();
        assert!((&h0 - &h1).norm() > 1e-6);
    }

    #[test]
    fn realistic_channel_is_rank_deficient() {
        let (bs, ue) = test_positions();
        let p = ChannelParams::default();
        let phy = PhyConfig::default();
        let tx = ArrayConfig::new(8, 8);
        let rx = ArrayConfig::new(4, 4);
        let (_, _, ch) = drop_link(77, bs, ue, &p);
        let h = channel_matrix(&ch, &tx, &rx, 1650, &phy).unwrap();
        let svd = h.svd(false, false);
        let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
        sv.sort_by(|a, b| b.total_cmp(a));
        let total: f64 = sv.iter().map(|s| s * s).sum();
        let mut acc = 0.0;
        let mut rank99 = 0;
        for s in &sv {
            acc += s * s;
            rank99 += 1;
            if acc >= 0.99 * total {
                break;
            }
        }
        assert!(
            rank99 * 2 < sv.len().min(16),
            "99% energy rank {rank99} not well below min dim"
        );
    }

    #[test]
    fn effective_gain_cases() {
        let phy = PhyConfig::default();
        let tx = ArrayConfig::new(4, 2);
        let rx = ArrayConfig::new(2, 2);
        let (bs, ue) = test_positions();
        let (_, _, ch) = drop_link(5, bs, ue, &ChannelParams::default());
        let h = channel_matrix(&ch, &tx, &rx, 100, &phy).unwrap();

        // Basis vectors select the matrix entry.
        let e = |n: usize, i: usize| {
            let mut c = vec![C64::new(0.0, 0.0); n];
            c[i] = C64::new(1.0, 0.0);
            BeamVector::from_coefficients(c)
        };
        let g = effective_gain(&e(4, 0), &h, &e(8, 0)).unwrap();
        assert!((g - h[(0, 0)]).norm() < 1e-12);

        // Transpose identity.
        let w = array_response(&rx, &AnglePair::new(1.0, 0.2));
        let v = array_response(&tx, &AnglePair::new(0.4, -0.3));
        let a = effective_gain(&w, &h, &v).unwrap();
        let b = effective_gain(&v, &h.transpose(), &w).unwrap();
        assert!((a - b).norm() < 1e-12);

        // Linearity in H.
        let scaled = effective_gain(&w, &(h.clone() * C64::new(2.0, 1.0)), &v).unwrap();
        assert!((scaled - a * C64::new(2.0, 1.0)).norm() < 1e-10);

        // Dimension mismatch is an error.
        assert!(effective_gain(&w, &h, &e(7, 0)).is_err());
    }

    #[test]
    fn evolve_semantics() {
        let (bs, ue) = test_positions();
        let p = ChannelParams::default();
        let (_, _, mut ch) = drop_link(9, bs, ue, &p);
        let before = ch.clone();

        evolve(&mut ch, 0.0);
        assert_eq!(ch, before);

        // Within an epoch the phase advance equals doppler * dt.
        let g0 = ch.gains_now();
        let dt = 1e-3;
        evolve(&mut ch, dt);
        let g1 = ch.gains_now();
        for (c, (a, b)) in g0.iter().zip(&g1).enumerate() {
            let expected = ch.clusters[c].doppler_rate * dt;
            let got = (b / a).arg();
            let diff = (got - expected).rem_euclid(TAU);
            assert!(diff < 1e-9 || (TAU - diff) < 1e-9, "cluster {c}");
            assert!((a.norm() - b.norm()).abs() < 1e-12);
        }

        // Crossing the regeneration epoch redraws gains, angles persist.
        let mut ch2 = before.clone();
        let angles: Vec<_> = ch2.clusters.iter().map(|c| (c.departure, c.arrival)).collect();
        let gains: Vec<_> = ch2.clusters.iter().map(|c| c.gain).collect();
        evolve(&mut ch2, p.regen_period_s);
        for (cl, (dep, arr)) in ch2.clusters.iter().zip(&angles) {
            assert_eq!(cl.departure, *dep);
            assert_eq!(cl.arrival, *arr);
        }
        assert!(ch2
            .clusters
            .iter()
            .zip(&gains)
            .any(|(cl, g)| (cl.gain - g).norm() > 1e-12));
    }

    #[test]
    fn los_probability_shape() {
        assert!(los_probability(1.0) > 0.999);
        assert!(los_probability(50.0) < los_probability(20.0));
        assert!(los_probability(500.0) < 0.05);
    }
}
