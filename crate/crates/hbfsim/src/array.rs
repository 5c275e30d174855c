//! Antenna array descriptions, uniform planar array response vectors,
//! geometric pointing angles, and beam codebook construction.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::fmt::Write as _;

use num_complex::Complex64;
use thiserror::Error;

use crate::C64;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GeometryError {
    /// Transmitter and receiver occupy the same point.
    #[error("degenerate geometry: coincident positions")]
    Degenerate,
}

/// A point in 3-D space, meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Position {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Position {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn distance(&self, other: &Position) -> f64 {
        let (dx, dy, dz) = (other.x - self.x, other.y - self.y, other.z - self.z);
        (dx * dx + dy * dy + dz * dz).sqrt()
    }

    /// Horizontal (ground-plane) distance.
    pub fn distance_2d(&self, other: &Position) -> f64 {
        let (dx, dy) = (other.x - self.x, other.y - self.y);
        (dx * dx + dy * dy).sqrt()
    }
}

/// Uniform planar array: `n1` horizontal by `n2` vertical elements.
///
/// `phase_factor` is the coefficient multiplying the element phase ramp.
/// The model uses pi/2 for half-wavelength spacing; the conventional value
/// would be pi, so the constant is kept configurable rather than hard-coded.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArrayConfig {
    pub n1: usize,
    pub n2: usize,
    pub phase_factor: f64,
}

impl ArrayConfig {
    pub fn new(n1: usize, n2: usize) -> Self {
        assert!(n1 >= 1 && n2 >= 1, "array dimensions must be positive");
        Self {
            n1,
            n2,
            phase_factor: FRAC_PI_2,
        }
    }

    pub fn with_phase_factor(mut self, phase_factor: f64) -> Self {
        self.phase_factor = phase_factor;
        self
    }

    /// Total element count N = n1 * n2.
    pub fn elements(&self) -> usize {
        self.n1 * self.n2
    }
}

/// Azimuth/elevation pair in radians. Azimuth is stored modulo 2*pi,
/// elevation in [-pi/2, pi/2].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnglePair {
    pub azimuth: f64,
    pub elevation: f64,
}

impl AnglePair {
    pub fn new(azimuth: f64, elevation: f64) -> Self {
        Self {
            azimuth: wrap_azimuth(azimuth),
            elevation,
        }
    }
}

/// Wrap an angle into [0, 2*pi).
pub fn wrap_azimuth(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    if r == TAU {
        0.0
    } else {
        r
    }
}

/// Unit-norm complex weight/steering vector over the elements of an array.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamVector {
    coefficients: Vec<C64>,
}

impl BeamVector {
    /// Wrap raw coefficients without renormalizing.
    pub fn from_coefficients(coefficients: Vec<C64>) -> Self {
        Self { coefficients }
    }

    pub fn coefficients(&self) -> &[C64] {
        &self.coefficients
    }

    pub fn len(&self) -> usize {
        self.coefficients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coefficients.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.coefficients
            .iter()
            .map(|c| c.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    /// Element-wise conjugate.
    pub fn conj(&self) -> BeamVector {
        Self {
            coefficients: self.coefficients.iter().map(|c| c.conj()).collect(),
        }
    }

    /// Plain (non-conjugated) inner product sum_i a_i * b_i.
    pub fn dot_t(&self, other: &BeamVector) -> C64 {
        debug_assert_eq!(self.len(), other.len());
        self.coefficients
            .iter()
            .zip(&other.coefficients)
            .map(|(a, b)| a * b)
            .sum()
    }

    /// Hermitian inner product sum_i conj(a_i) * b_i.
    pub fn dot_h(&self, other: &BeamVector) -> C64 {
        debug_assert_eq!(self.len(), other.len());
        self.coefficients
            .iter()
            .zip(&other.coefficients)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }
}

/// UPA response vector at the given angles.
///
/// Coefficient `i` is `exp(-j*pf*((i mod n1) sin(az) + floor(i/n1) sin(el))) / sqrt(N)`
/// with `pf` the array's phase factor. The result always has unit norm.
pub fn array_response(cfg: &ArrayConfig, angles: &AnglePair) -> BeamVector {
    let n = cfg.elements();
    let scale = 1.0 / (n as f64).sqrt();
    let s_az = angles.azimuth.sin();
    let s_el = angles.elevation.sin();
    let coefficients = (0..n)
        .map(|i| {
            let phase = -cfg.phase_factor
                * ((i % cfg.n1) as f64 * s_az + (i / cfg.n1) as f64 * s_el);
            Complex64::from_polar(scale, phase)
        })
        .collect();
    BeamVector { coefficients }
}

/// Departure and arrival angle pairs for a transmitter/receiver position pair.
///
/// Departure azimuth is measured at the transmitter towards the receiver with
/// the quadrant fixed by an indicator on the x offset; arrival angles are the
/// departure pair reversed (azimuth shifted by pi, elevation negated).
pub fn geometric_angles(
    tx_pos: &Position,
    rx_pos: &Position,
) -> Result<(AnglePair, AnglePair), GeometryError> {
    if tx_pos == rx_pos {
        return Err(GeometryError::Degenerate);
    }
    let dx = rx_pos.x - tx_pos.x;
    let dy = rx_pos.y - tx_pos.y;
    let dz = rx_pos.z - tx_pos.z;
    let horiz = (dx * dx + dy * dy).sqrt();
    let theta_d = if horiz == 0.0 {
        // Directly above/below: azimuth is undefined, pick 0.
        0.0
    } else {
        let base = (dy / dx).atan();
        wrap_azimuth(base + if dx < 0.0 { PI } else { 0.0 })
    };
    let phi_d = if horiz == 0.0 {
        if dz > 0.0 {
            FRAC_PI_2
        } else {
            -FRAC_PI_2
        }
    } else {
        (dz / horiz).atan()
    };
    let departure = AnglePair::new(theta_d, phi_d);
    let arrival = AnglePair::new(theta_d + PI, -phi_d);
    Ok((departure, arrival))
}

/// Ordered collection of beam vectors with the generating angle grid.
/// The position of a beam in `vectors` is its indicator-message index.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    pub array: ArrayConfig,
    pub vectors: Vec<BeamVector>,
    pub angles: Vec<AnglePair>,
    pub azimuth_count: usize,
    pub elevation_count: usize,
}

impl Codebook {
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Bits of a beam indicator message: ceil(log2(|B|)).
    pub fn indicator_bits(&self) -> u64 {
        (usize::BITS - (self.len().max(1) - 1).leading_zeros()) as u64
    }
}

/// Codebook over a full-circle azimuth grid and elevations in [-pi/4, pi/4].
pub fn build_codebook(cfg: &ArrayConfig, azimuth_count: usize, elevation_count: usize) -> Codebook {
    build_codebook_sector(cfg, azimuth_count, elevation_count, PI, TAU)
}

/// Codebook over an azimuth sector of width `azimuth_span` centered on
/// `azimuth_center` (endpoint-exclusive uniform grid) and elevations uniform
/// in [-pi/4, pi/4] (inclusive endpoints; a single entry sits at 0).
pub fn build_codebook_sector(
    cfg: &ArrayConfig,
    azimuth_count: usize,
    elevation_count: usize,
    azimuth_center: f64,
    azimuth_span: f64,
) -> Codebook {
    assert!(azimuth_count >= 1 && elevation_count >= 1, "counts must be >= 1");
    let el_lo = -PI / 4.0;
    let el_hi = PI / 4.0;
    let mut vectors = Vec::with_capacity(azimuth_count * elevation_count);
    let mut angles = Vec::with_capacity(azimuth_count * elevation_count);
    for ia in 0..azimuth_count {
        let az = azimuth_center - azimuth_span / 2.0
            + azimuth_span * ia as f64 / azimuth_count as f64;
        for ie in 0..elevation_count {
            let el = if elevation_count == 1 {
                0.0
            } else {
                el_lo + (el_hi - el_lo) * ie as f64 / (elevation_count - 1) as f64
            };
            let pair = AnglePair::new(az, el);
            vectors.push(array_response(cfg, &pair));
            angles.push(pair);
        }
    }
    Codebook {
        array: *cfg,
        vectors,
        angles,
        azimuth_count,
        elevation_count,
    }
}

#[derive(Debug, Error)]
pub enum CodebookIoError {
    #[error("codebook parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Serialize a codebook as a structured text document: array dims, grid
/// counts, and per-beam complex coefficients as (re, im) pairs with 12
/// significant digits. Beam order is preserved exactly.
pub fn export_codebook(cb: &Codebook) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "n1 {}", cb.array.n1);
    let _ = writeln!(out, "n2 {}", cb.array.n2);
    let _ = writeln!(out, "phase_factor {:.12e}", cb.array.phase_factor);
    let _ = writeln!(out, "azimuth_count {}", cb.azimuth_count);
    let _ = writeln!(out, "elevation_count {}", cb.elevation_count);
    for (i, (v, a)) in cb.vectors.iter().zip(&cb.angles).enumerate() {
        let _ = writeln!(
            out,
            "beam {} azimuth {:.12e} elevation {:.12e}",
            i, a.azimuth, a.elevation
        );
        for c in v.coefficients() {
            let _ = writeln!(out, "{:.12e} {:.12e}", c.re, c.im);
        }
    }
    out
}

/// Parse a codebook from the text format written by [`export_codebook`].
pub fn import_codebook(text: &str) -> Result<Codebook, CodebookIoError> {
    let err = |line: usize, message: &str| CodebookIoError::Parse {
        line,
        message: message.to_string(),
    };
    let mut n1 = None;
    let mut n2 = None;
    let mut phase_factor = None;
    let mut azimuth_count = None;
    let mut elevation_count = None;
    let mut vectors: Vec<BeamVector> = Vec::new();
    let mut angles: Vec<AnglePair> = Vec::new();
    let mut current: Option<Vec<C64>> = None;

    for (ln, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields[0] {
            "n1" | "n2" | "azimuth_count" | "elevation_count" => {
                let v: usize = fields
                    .get(1)
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| err(ln + 1, "expected integer value"))?;
                match fields[0] {
                    "n1" => n1 = Some(v),
                    "n2" => n2 = Some(v),
                    "azimuth_count" => azimuth_count = Some(v),
                    _ => elevation_count = Some(v),
                }
            }
            "phase_factor" => {
                phase_factor = Some(
                    fields
                        .get(1)
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| err(ln + 1, "expected float value"))?,
                );
            }
            "beam" => {
                if let Some(coeffs) = current.take() {
                    vectors.push(BeamVector::from_coefficients(coeffs));
                }
                if fields.len() != 6 || fields[2] != "azimuth" || fields[4] != "elevation" {
                    return Err(err(ln + 1, "malformed beam header"));
                }
                let az: f64 = fields[3]
                    .parse()
                    .map_err(|_| err(ln + 1, "bad azimuth"))?;
                let el: f64 = fields[5]
                    .parse()
                    .map_err(|_| err(ln + 1, "bad elevation"))?;
                angles.push(AnglePair::new(az, el));
                current = Some(Vec::new());
            }
            _ => {
                let coeffs = current
                    .as_mut()
                    .ok_or_else(|| err(ln + 1, "coefficient outside a beam block"))?;
                if fields.len() != 2 {
                    return Err(err(ln + 1, "expected `re im` pair"));
                }
                let re: f64 = fields[0].parse().map_err(|_| err(ln + 1, "bad re"))?;
                let im: f64 = fields[1].parse().map_err(|_| err(ln + 1, "bad im"))?;
                coeffs.push(Complex64::new(re, im));
            }
        }
    }
    if let Some(coeffs) = current.take() {
        vectors.push(BeamVector::from_coefficients(coeffs));
    }
    let n1 = n1.ok_or_else(|| err(0, "missing n1"))?;
    let n2 = n2.ok_or_else(|| err(0, "missing n2"))?;
    if vectors.len() != angles.len() {
        return Err(err(0, "beam/angle count mismatch"));
    }
    Ok(Codebook {
        array: ArrayConfig::new(n1, n2)
            .with_phase_factor(phase_factor.unwrap_or(FRAC_PI_2)),
        vectors,
        angles,
        azimuth_count: azimuth_count.ok_or_else(|| err(0, "missing azimuth_count"))?,
        elevation_count: elevation_count.ok_or_else(|| err(0, "missing elevation_count"))?,
    })
}
