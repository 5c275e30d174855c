//! Analog beam selection (geometric and codebook based) and hybrid MMSE
//! layer-to-port mappings, frequency flat or per subcarrier, plus the
//! feedback-overhead accounting of each scheme.
//!
//! Conventions: `array_response` returns the raw response vector; the beam
//! that points at a direction is its conjugate. Effective gains are plain
//! transposed products `w^T H v`, so the uplink construction is exactly the
//! transpose of the downlink one.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::array::{geometric_angles, ArrayConfig, BeamVector, Codebook, GeometryError, Position};
use crate::C64;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BfError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("missing measurement for user {user}, port {port}")]
    MissingMeasurement { user: usize, port: usize },
    #[error("equivalent channel must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("rank-deficient zero-noise MMSE")]
    RankDeficient,
    #[error("null effective beam for layer {layer}")]
    NullEffectiveBeam { layer: usize },
    #[error("analog beam count {beams} does not match precoder rows {rows}")]
    ShapeMismatch { beams: usize, rows: usize },
}

/// The four beamforming schemes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BfKind {
    /// Analog beam pointed at the geometric direction.
    Gbf,
    /// Analog beams picked from codebooks by max reference-signal power.
    Cbf,
    /// Frequency-flat MMSE mapping computed at a reference subcarrier.
    Fmbf,
    /// Per-subcarrier MMSE mapping.
    Smbf,
}

impl BfKind {
    pub fn is_mmse(self) -> bool {
        matches!(self, BfKind::Fmbf | BfKind::Smbf)
    }

    pub fn label(self) -> &'static str {
        match self {
            BfKind::Gbf => "gbf",
            BfKind::Cbf => "cbf",
            BfKind::Fmbf => "fmbf",
            BfKind::Smbf => "smbf",
        }
    }
}

/// A scheme plus its narrowband reference subcarrier (CBF/FMBF selection).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BfScheme {
    pub kind: BfKind,
    pub k_ref: usize,
}

impl BfScheme {
    pub fn new(kind: BfKind, total_subcarriers: usize) -> Self {
        Self {
            kind,
            k_ref: total_subcarriers / 2,
        }
    }
}

/// Mode actually applied to one allocation (records MMSE -> CBF fallback).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BfMode {
    Gbf,
    Cbf,
    Mmse,
    CbfFallback,
}

impl BfMode {
    pub fn label(self) -> &'static str {
        match self {
            BfMode::Gbf => "gbf",
            BfMode::Cbf => "cbf",
            BfMode::Mmse => "mmse",
            BfMode::CbfFallback => "cbf_fallback",
        }
    }
}

/// Reference equivalent channel matrix: entry (u, p) is
/// sqrt(L_u) * h_eq[u, p] with the desired channels on the main diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct EquivalentChannel {
    pub matrix: DMatrix<C64>,
    pub users: Vec<usize>,
}

impl EquivalentChannel {
    pub fn from_matrix(matrix: DMatrix<C64>, users: Vec<usize>) -> Self {
        Self { matrix, users }
    }

    pub fn size(&self) -> usize {
        self.matrix.nrows()
    }

    /// The uplink equivalent channel is the plain transpose.
    pub fn transposed(&self) -> EquivalentChannel {
        Self {
            matrix: self.matrix.transpose(),
            users: self.users.clone(),
        }
    }
}

/// MMSE precoding matrix mapping layers to ports (N_p x N_u).
#[derive(Debug, Clone, PartialEq)]
pub struct PrecodingMatrix {
    pub matrix: DMatrix<C64>,
    pub per_subcarrier: bool,
}

/// Feedback accounting inputs. `bits_per_component` is the quantizer
/// resolution of one real component; a complex scalar costs twice that, which
/// is what makes the 32-bit-float example come out at 1024 bits for 4 users.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeedbackBudget {
    pub bits_per_component: u64,
    pub n_users: u64,
    pub k_subcarriers: u64,
    pub dl_codebook_len: u64,
}

/// Geometric beam pair: conjugated array responses at the departure and
/// arrival angles of the BS-UE direction.
pub fn gbf_pair(
    bs_pos: &Position,
    ue_pos: &Position,
    bs_array: &ArrayConfig,
    ue_array: &ArrayConfig,
) -> Result<(BeamVector, BeamVector), BfError> {
    let (departure, arrival) = geometric_angles(bs_pos, ue_pos)?;
    let v = crate::array::array_response(bs_array, &departure).conj();
    let w = crate::array::array_response(ue_array, &arrival).conj();
    Ok((v, w))
}

/// Exhaustive max-SNR pair selection over the codebook product at the
/// reference subcarrier. Ties break towards the lowest (tx, rx) index pair.
pub fn cbf_select(
    h_at_kref: &DMatrix<C64>,
    tx_codebook: &Codebook,
    rx_codebook: &Codebook,
) -> (BeamVector, BeamVector, (usize, usize)) {
    assert!(!tx_codebook.is_empty() && !rx_codebook.is_empty());
    // Precompute H * v for every candidate transmit beam.
    let n_rx = h_at_kref.nrows();
    let mut best = (0usize, 0usize, f64::NEG_INFINITY);
    for (di, v) in tx_codebook.vectors.iter().enumerate() {
        let mut hv = vec![C64::new(0.0, 0.0); n_rx];
        for (j, vj) in v.coefficients().iter().enumerate() {
            for i in 0..n_rx {
                hv[i] += h_at_kref[(i, j)] * vj;
            }
        }
        for (ai, w) in rx_codebook.vectors.iter().enumerate() {
            let g: C64 = w
                .coefficients()
                .iter()
                .zip(&hv)
                .map(|(wi, hvi)| wi * hvi)
                .sum();
            let p = g.norm_sqr();
            if p > best.2 {
                best = (di, ai, p);
            }
        }
    }
    (
        tx_codebook.vectors[best.0].clone(),
        rx_codebook.vectors[best.1].clone(),
        (best.0, best.1),
    )
}

/// Assemble the equivalent channel from scaled measurements; `None` entries
/// are reported as missing with their (user, port) pair.
pub fn build_equivalent(
    measurements: &[Vec<Option<C64>>],
    users: Vec<usize>,
) -> Result<EquivalentChannel, BfError> {
    let rows = measurements.len();
    let cols = measurements.first().map_or(0, Vec::len);
    if rows != cols {
        return Err(BfError::NotSquare { rows, cols });
    }
    let mut matrix = DMatrix::<C64>::zeros(rows, cols);
    for (u, row) in measurements.iter().enumerate() {
        if row.len() != cols {
            return Err(BfError::NotSquare {
                rows,
                cols: row.len(),
            });
        }
        for (p, entry) in row.iter().enumerate() {
            matrix[(u, p)] = entry.ok_or(BfError::MissingMeasurement { user: u, port: p })?;
        }
    }
    Ok(EquivalentChannel { matrix, users })
}

/// MMSE precoder V = H^H (H H^H + ratio I)^-1.
///
/// At ratio = 0 this is the pseudoinverse (zero forcing); for large ratios it
/// converges to the matched filter H^H. A zero-noise call on an
/// ill-conditioned matrix fails instead of returning garbage.
pub fn mmse_precoder(
    h_eq: &EquivalentChannel,
    noise_over_power: f64,
) -> Result<PrecodingMatrix, BfError> {
    assert!(noise_over_power >= 0.0);
    let h = &h_eq.matrix;
    let n = h.nrows();
    if noise_over_power == 0.0 {
        let svd = h.clone().svd(false, false);
        let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
        sv.sort_by(|a, b| b.total_cmp(a));
        let min = sv.last().copied().unwrap_or(0.0);
        if min <= 0.0 || sv[0] / min > 1e12 {
            return Err(BfError::RankDeficient);
        }
    }
    let mut gram = h * h.adjoint();
    for i in 0..n {
        gram[(i, i)] += C64::new(noise_over_power, 0.0);
    }
    // V = H^H G^-1  <=>  V^H = G^-1 H since G is Hermitian.
    let lu = gram.lu();
    let solved = lu.solve(h).ok_or(BfError::RankDeficient)?;
    Ok(PrecodingMatrix {
        matrix: solved.adjoint(),
        per_subcarrier: false,
    })
}

/// Combine analog beams through the digital matrix and renormalize each
/// layer to unit transmit power: v_u = (sum_p analog_p V[p,u]) / |.|.
pub fn effective_vectors(
    analog: &[BeamVector],
    precoder: &PrecodingMatrix,
) -> Result<Vec<BeamVector>, BfError> {
    let v = &precoder.matrix;
    if analog.len() != v.nrows() {
        return Err(BfError::ShapeMismatch {
            beams: analog.len(),
            rows: v.nrows(),
        });
    }
    let n_ant = analog.first().map_or(0, BeamVector::len);
    let mut out = Vec::with_capacity(v.ncols());
    for u in 0..v.ncols() {
        let mut acc = vec![C64::new(0.0, 0.0); n_ant];
        for (p, beam) in analog.iter().enumerate() {
            let weight = v[(p, u)];
            for (a, b) in acc.iter_mut().zip(beam.coefficients()) {
                *a += b * weight;
            }
        }
        let norm = acc.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        if norm < 1e-12 {
            return Err(BfError::NullEffectiveBeam { layer: u });
        }
        for a in &mut acc {
            *a /= norm;
        }
        out.push(BeamVector::from_coefficients(acc));
    }
    Ok(out)
}

/// Per-subcarrier MMSE: one precoder and one effective vector set per
/// equivalent channel in `eq_per_k`.
pub fn smbf_precoders(
    eq_per_k: &[EquivalentChannel],
    analog: &[BeamVector],
    noise_over_power: f64,
) -> Result<Vec<Vec<BeamVector>>, BfError> {
    eq_per_k
        .iter()
        .map(|eq| {
            let mut pre = mmse_precoder(eq, noise_over_power)?;
            pre.per_subcarrier = true;
            effective_vectors(analog, &pre)
        })
        .collect()
}

/// Feedback cost of a scheme in bits.
///
/// A complex scalar costs 2 * bits_per_component. FMBF reports the N_u^2
/// reference-subcarrier coefficients, SMBF reports them for all K
/// subcarriers, CBF sends one beam indicator per user, GBF feeds nothing
/// back.
pub fn feedback_bits(budget: &FeedbackBudget, scheme: BfKind) -> u64 {
    let complex_bits = 2 * budget.bits_per_component;
    let n2 = budget.n_users * budget.n_users;
    match scheme {
        BfKind::Gbf => 0,
        BfKind::Cbf => {
            let indicator =
                (u64::BITS - budget.dl_codebook_len.max(1).saturating_sub(1).leading_zeros())
                    as u64;
            budget.n_users * indicator
        }
        BfKind::Fmbf => n2 * complex_bits,
        BfKind::Smbf => budget.k_subcarriers * n2 * complex_bits,
    }
}
