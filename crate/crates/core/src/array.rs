//! Spatial model of the microphone array: far-field steering vectors, the
//! diffuse-field coherence, the noise coherence and a blocking matrix that
//! annihilates the target direction.

use std::f64::consts::PI;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{CMatrix, CVector};
use crate::stft::StftConfig;
use crate::C64;

#[derive(Debug, Clone, PartialEq)]
pub struct ArrayGeometry {
    /// Microphone coordinates in meters.
    pub mic_positions: Vec<[f64; 3]>,
    pub reference_index: usize,
    /// Speed of sound in m/s.
    pub speed_of_sound: f64,
}

impl Default for ArrayGeometry {
    /// Eight microphones, 4 cm apart, on the x axis.
    fn default() -> Self {
        Self::uniform_linear(8, 0.04)
    }
}

impl ArrayGeometry {
    /// Linear array along the x axis starting at the origin.
    pub fn uniform_linear(count: usize, spacing: f64) -> Self {
        Self {
            mic_positions: (0..count).map(|m| [m as f64 * spacing, 0.0, 0.0]).collect(),
            reference_index: 0,
            speed_of_sound: 343.0,
        }
    }

    pub fn mic_count(&self) -> usize {
        self.mic_positions.len()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.mic_count();
        if m < 2 {
            return Err(Error::InvalidGeometry(format!(
                "need at least 2 microphones, got {m}"
            )));
        }
        if self.reference_index >= m {
            return Err(Error::InvalidGeometry(format!(
                "reference index {} out of range for {m} microphones",
                self.reference_index
            )));
        }
        if !(self.speed_of_sound > 0.0) {
            return Err(Error::InvalidGeometry(
                "speed of sound must be positive".into(),
            ));
        }
        for i in 0..m {
            for j in (i + 1)..m {
                if self.distance(i, j) == 0.0 {
                    return Err(Error::InvalidGeometry(format!(
                        "microphones {i} and {j} coincide"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (self.mic_positions[i], self.mic_positions[j]);
        ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
    }

    /// Arrival delay of each microphone relative to the reference, in
    /// seconds, for a far-field source in direction `doa`. Positive values
    /// mean the wavefront reaches the microphone after the reference.
    pub fn relative_delays(&self, doa: Doa) -> Vec<f64> {
        let u = doa.unit_vector();
        let r = self.mic_positions[self.reference_index];
        self.mic_positions
            .iter()
            .map(|p| {
                let proj = (p[0] - r[0]) * u[0] + (p[1] - r[1]) * u[1] + (p[2] - r[2]) * u[2];
                -proj / self.speed_of_sound
            })
            .collect()
    }
}

/// Direction of the source as seen from the array, in radians. Azimuth is
/// measured from the +x axis in the x-y plane; elevation from that plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Doa {
    pub azimuth: f64,
    pub elevation: f64,
}

impl Doa {
    pub fn new(azimuth: f64, elevation: f64) -> Self {
        Self { azimuth, elevation }
    }

    pub fn azimuth(azimuth: f64) -> Self {
        Self::new(azimuth, 0.0)
    }

    /// Broadside to an array on the x axis.
    pub fn broadside() -> Self {
        Self::azimuth(PI / 2.0)
    }

    pub fn unit_vector(&self) -> [f64; 3] {
        let (ce, se) = (self.elevation.cos(), self.elevation.sin());
        [ce * self.azimuth.cos(), ce * self.azimuth.sin(), se]
    }
}

impl Default for Doa {
    fn default() -> Self {
        Self::broadside()
    }
}

/// Far-field steering vector `d_m = exp(-j 2 pi f tau_m)`; the reference
/// entry is exactly one.
pub fn steering_vector(geom: &ArrayGeometry, doa: Doa, freq: f64) -> CVector {
    let delays = geom.relative_delays(doa);
    CVector::from_iterator(
        delays.len(),
        delays.iter().enumerate().map(|(m, tau)| {
            if m == geom.reference_index {
                C64::new(1.0, 0.0)
            } else {
                C64::from_polar(1.0, -2.0 * PI * freq * tau)
            }
        }),
    )
}

pub fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        x.sin() / x
    }
}

/// Real-valued diffuse coherence, `sinc(2 pi f d_ij / c)`.
pub fn diffuse_coherence_real(geom: &ArrayGeometry, freq: f64) -> DMatrix<f64> {
    let m = geom.mic_count();
    let k = 2.0 * PI * freq / geom.speed_of_sound;
    DMatrix::from_fn(m, m, |i, j| {
        if i == j {
            1.0
        } else {
            sinc(k * geom.distance(i, j))
        }
    })
}

pub fn diffuse_coherence(geom: &ArrayGeometry, freq: f64) -> CMatrix {
    diffuse_coherence_real(geom, freq).map(|v| C64::new(v, 0.0))
}

/// Coherence of spatially uncorrelated noise.
pub fn noise_coherence(geom: &ArrayGeometry) -> CMatrix {
    CMatrix::identity(geom.mic_count(), geom.mic_count())
}

/// Orthonormal basis of the orthogonal complement of `d`, as the columns of
/// an `M x (M-1)` matrix. Built from the Householder reflection that maps
/// `d / |d|` onto the first coordinate axis.
pub fn blocking_matrix(d: &CVector) -> Result<CMatrix> {
    let m = d.len();
    let norm = d.norm();
    if m == 0 || norm == 0.0 || !norm.is_finite() {
        return Err(Error::ZeroVector);
    }
    let v = d / C64::new(norm, 0.0);
    let phase = if v[0].norm() > 0.0 {
        v[0] / v[0].norm()
    } else {
        C64::new(1.0, 0.0)
    };
    let mut u = v.clone();
    u[0] += phase;
    let uu = u.norm_squared();
    // H = I - 2 u u^H / (u^H u); its first column is parallel to d, so the
    // remaining columns span d's orthogonal complement.
    let mut b = CMatrix::zeros(m, m - 1);
    for c in 1..m {
        let scale = u[c].conj() * (2.0 / uu);
        for r in 0..m {
            let id = if r == c { 1.0 } else { 0.0 };
            b[(r, c - 1)] = C64::new(id, 0.0) - u[r] * scale;
        }
    }
    Ok(b)
}

/// Per-bin spatial quantities, immutable after construction.
#[derive(Debug, Clone)]
pub struct BinSpatialModel {
    pub freq: f64,
    pub reference_index: usize,
    /// Relative transfer function, normalized to 1 at the reference.
    pub d: CVector,
    pub gamma: CMatrix,
    pub psi: CMatrix,
    pub blocking: CMatrix,
    /// `B^H Gamma B`.
    pub gamma_tilde: CMatrix,
    /// `B^H Psi B`.
    pub psi_tilde: CMatrix,
}

impl BinSpatialModel {
    pub fn new(geom: &ArrayGeometry, doa: Doa, freq: f64) -> Result<Self> {
        let d = steering_vector(geom, doa, freq);
        let gamma = diffuse_coherence(geom, freq);
        let psi = noise_coherence(geom);
        Self::from_parts(freq, geom.reference_index, d, gamma, psi)
    }

    pub fn from_parts(
        freq: f64,
        reference_index: usize,
        d: CVector,
        gamma: CMatrix,
        psi: CMatrix,
    ) -> Result<Self> {
        let m = d.len();
        for mat in [&gamma, &psi] {
            if mat.shape() != (m, m) {
                return Err(Error::DimensionMismatch {
                    expected: m,
                    got: mat.nrows(),
                });
            }
        }
        let blocking = blocking_matrix(&d)?;
        let bh = blocking.adjoint();
        let gamma_tilde = &bh * &gamma * &blocking;
        let psi_tilde = &bh * &psi * &blocking;
        Ok(Self {
            freq,
            reference_index,
            d,
            gamma,
            psi,
            blocking,
            gamma_tilde,
            psi_tilde,
        })
    }

    pub fn mic_count(&self) -> usize {
        self.d.len()
    }
}

/// Spatial models for bins `0..fft_len/2`, at `f_k = k fs / fft_len`.
pub fn build_bin_models(
    geom: &ArrayGeometry,
    doa: Doa,
    cfg: &StftConfig,
) -> Result<Vec<BinSpatialModel>> {
    geom.validate()?;
    cfg.validate()?;
    (0..cfg.bins())
        .map(|k| BinSpatialModel::new(geom, doa, cfg.bin_freq(k)))
        .collect()
}
