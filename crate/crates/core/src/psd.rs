//! Blocking-based joint estimation of the late-reverberation PSD, the noise
//! PSD and the target PSD for one frequency bin.
//!
//! The blocked signal `n = B^H y` contains no target. Its covariance is
//! modeled as `phi_r B^H Gamma B + phi_v B^H Psi B`, and the two PSDs are the
//! least-squares fit of that model in the Frobenius sense, a 2x2 real
//! system of trace inner products.

use crate::array::BinSpatialModel;
use crate::error::{Error, Result};
use crate::linalg::{make_hermitian, real_trace, smooth_outer, CMatrix, CVector};
use crate::C64;

use twofloat::TwoFloat;

pub const DEFAULT_LAMBDA: f64 = 0.95;
/// PSD floor relative to the running maximum of `tr(Phi_y) / M`.
pub const PSD_FLOOR_RATIO: f64 = 1e-10;
/// Absolute lower bound on the PSD floor, used before any power is seen.
pub const ABSOLUTE_PSD_FLOOR: f64 = 1e-30;
pub const WARMUP_FRAMES: u64 = 10;
/// Relative determinant below which the Gram system counts as singular.
pub const SINGULAR_TOLERANCE: f64 = 1e-12;

/// `n = B^H y`.
pub fn block_signal(model: &BinSpatialModel, y: &CVector) -> Result<CVector> {
    if y.len() != model.mic_count() {
        return Err(Error::DimensionMismatch {
            expected: model.mic_count(),
            got: y.len(),
        });
    }
    Ok(model.blocking.adjoint() * y)
}

/// The 2x2 normal equations relating the blocked covariance to
/// `(phi_r, phi_v)`.
///
/// Inner products and the elimination run in double-double arithmetic. Near
/// the frequencies where the diffuse coherence approaches the identity the
/// two columns are almost parallel, and plain f64 loses several digits to
/// cancellation that the data itself does not justify.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GramSystem {
    pub matrix: [[f64; 2]; 2],
    gg: TwoFloat,
    gp: TwoFloat,
    pp: TwoFloat,
    det: TwoFloat,
}

/// `Re tr(A^H B)` accumulated without rounding the individual products.
fn trace_inner_dd(a: &CMatrix, b: &CMatrix) -> TwoFloat {
    a.iter()
        .zip(b.iter())
        .fold(TwoFloat::from(0.0), |acc, (x, y)| {
            acc + TwoFloat::new_mul(x.re, y.re) + TwoFloat::new_mul(x.im, y.im)
        })
}

impl GramSystem {
    pub fn new(gamma_tilde: &CMatrix, psi_tilde: &CMatrix) -> Self {
        let gg = trace_inner_dd(gamma_tilde, gamma_tilde);
        let gp = trace_inner_dd(gamma_tilde, psi_tilde);
        let pp = trace_inner_dd(psi_tilde, psi_tilde);
        let (g11, g12, g22) = (f64::from(gg), f64::from(gp), f64::from(pp));
        Self {
            matrix: [[g11, g12], [g12, g22]],
            gg,
            gp,
            pp,
            det: gg * pp - gp * gp,
        }
    }

    pub fn from_model(model: &BinSpatialModel) -> Self {
        Self::new(&model.gamma_tilde, &model.psi_tilde)
    }

    pub fn determinant(&self) -> f64 {
        f64::from(self.det)
    }

    /// Singular when the determinant falls below the tolerance relative to
    /// the square of the larger diagonal entry. Scaling by the product of
    /// the diagonals instead would miss DC, where `Gamma~` is round-off.
    pub fn is_singular(&self) -> bool {
        let m = &self.matrix;
        let scale = m[0][0].max(m[1][1]);
        !(self.determinant() > SINGULAR_TOLERANCE * scale * scale)
    }

    /// `[<Gamma~, Phi_n>, <Psi~, Phi_n>]`, rounded to f64.
    pub fn rhs(phi_n: &CMatrix, model: &BinSpatialModel) -> [f64; 2] {
        [
            f64::from(trace_inner_dd(&model.gamma_tilde, phi_n)),
            f64::from(trace_inner_dd(&model.psi_tilde, phi_n)),
        ]
    }

    /// Cramer's rule on the system for `phi_n`; `None` when singular.
    pub fn solve(&self, model: &BinSpatialModel, phi_n: &CMatrix) -> Option<(f64, f64)> {
        if self.is_singular() {
            return None;
        }
        let gy = trace_inner_dd(&model.gamma_tilde, phi_n);
        let py = trace_inner_dd(&model.psi_tilde, phi_n);
        let r = (gy * self.pp - self.gp * py) / self.det;
        let v = (self.gg * py - self.gp * gy) / self.det;
        Some((f64::from(r), f64::from(v)))
    }
}

#[derive(Debug, Clone)]
pub struct BinEstimatorState {
    /// Recursive covariance of the blocked signal.
    pub phi_n: CMatrix,
    /// Recursive covariance of the observation.
    pub phi_y: CMatrix,
    pub phi_r: f64,
    pub phi_v: f64,
    pub phi_target: f64,
    pub lambda: f64,
    /// Running maximum of `tr(Phi_y) / M`.
    pub peak_power: f64,
    pub frames: u64,
    pub singular_count: u64,
    gram: GramSystem,
}

impl BinEstimatorState {
    pub fn new(model: &BinSpatialModel, lambda: f64) -> Self {
        let m = model.mic_count();
        let floor = ABSOLUTE_PSD_FLOOR;
        Self {
            phi_n: CMatrix::identity(m - 1, m - 1) * C64::new(floor, 0.0),
            phi_y: CMatrix::identity(m, m) * C64::new(floor, 0.0),
            phi_r: floor,
            phi_v: floor,
            phi_target: floor,
            lambda,
            peak_power: 0.0,
            frames: 0,
            singular_count: 0,
            gram: GramSystem::from_model(model),
        }
    }

    pub fn gram(&self) -> &GramSystem {
        &self.gram
    }

    pub fn psd_floor(&self) -> f64 {
        (PSD_FLOOR_RATIO * self.peak_power).max(ABSOLUTE_PSD_FLOOR)
    }

    pub fn in_warmup(&self) -> bool {
        self.frames <= WARMUP_FRAMES
    }

    pub fn update_covariances(&mut self, n: &CVector, y: &CVector) {
        let w = 1.0 - self.lambda;
        smooth_outer(&mut self.phi_n, self.lambda, w, n);
        smooth_outer(&mut self.phi_y, self.lambda, w, y);
        make_hermitian(&mut self.phi_n);
        make_hermitian(&mut self.phi_y);
        let power = real_trace(&self.phi_y) / y.len() as f64;
        if power.is_finite() {
            self.peak_power = self.peak_power.max(power);
        }
        self.frames += 1;
    }

    /// Solve for `(phi_r, phi_v)` from the current blocked covariance. On a
    /// singular Gram matrix the previous estimates are kept. `model` must be
    /// the one the state was built from; its Gram system is cached.
    pub fn solve_psd(&mut self, model: &BinSpatialModel) -> (f64, f64) {
        match self.gram.solve(model, &self.phi_n) {
            Some((r, v)) if r.is_finite() && v.is_finite() => {
                let floor = self.psd_floor();
                self.phi_r = r.max(floor);
                self.phi_v = v.max(floor);
            }
            _ => self.singular_count += 1,
        }
        (self.phi_r, self.phi_v)
    }

    /// `phi = tr(Phi_y - phi_r Gamma - phi_v Psi) / (d^H d)`, floored.
    pub fn target_psd(&mut self, model: &BinSpatialModel) -> f64 {
        let phi = target_psd_value(&self.phi_y, model, self.phi_r, self.phi_v);
        let floor = self.psd_floor();
        self.phi_target = if phi.is_finite() {
            phi.max(floor)
        } else {
            floor
        };
        self.phi_target
    }
}

fn target_psd_value(phi_y: &CMatrix, model: &BinSpatialModel, phi_r: f64, phi_v: f64) -> f64 {
    let tr = real_trace(phi_y) - phi_r * real_trace(&model.gamma) - phi_v * real_trace(&model.psi);
    tr / model.d.norm_squared()
}
