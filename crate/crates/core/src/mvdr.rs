//! MVDR beamformer driven by the estimated reverberation and noise PSDs.

use crate::array::BinSpatialModel;
use crate::linalg::{hermitian_solve, real_trace, CMatrix, CVector};
use crate::C64;

/// Loading relative to `tr(Phi_i) / M`. Large enough that a PSD estimate driven
/// to its floor by coherence mismatch cannot make the beam superdirective.
pub const DEFAULT_DIAGONAL_LOADING: f64 = 1e-2;

#[derive(Debug, Clone)]
pub struct BeamformerState {
    pub w_b: CVector,
    /// Weights of the previous frame, used by the target-PSD fusion.
    pub w_b_prev: CVector,
    pub diagonal_loading: f64,
    pub fallback_count: u64,
}

impl BeamformerState {
    /// Both weight vectors start as delay-and-sum.
    pub fn new(model: &BinSpatialModel, diagonal_loading: f64) -> Self {
        let ds = delay_and_sum(&model.d);
        Self {
            w_b: ds.clone(),
            w_b_prev: ds,
            diagonal_loading,
            fallback_count: 0,
        }
    }

    /// Shift the current weights into `w_b_prev` and install `next`.
    pub fn advance(&mut self, next: CVector) {
        self.w_b_prev = std::mem::replace(&mut self.w_b, next);
    }
}

/// `Phi_i = phi_r Gamma + phi_v Psi + delta tr(.)/M I`.
pub fn interference_covariance(
    model: &BinSpatialModel,
    phi_r: f64,
    phi_v: f64,
    diagonal_loading: f64,
) -> CMatrix {
    let mut phi = &model.gamma * C64::new(phi_r, 0.0) + &model.psi * C64::new(phi_v, 0.0);
    let m = model.mic_count();
    let load = diagonal_loading * real_trace(&phi) / m as f64;
    for i in 0..m {
        phi[(i, i)] += load;
    }
    phi
}

pub fn delay_and_sum(d: &CVector) -> CVector {
    d / C64::new(d.norm_squared(), 0.0)
}

/// `Phi^{-1} d / (d^H Phi^{-1} d)` via a Cholesky solve; `None` when
/// `Phi` is not numerically positive definite.
pub fn mvdr_from_covariance(phi: &CMatrix, d: &CVector) -> Option<CVector> {
    let x = hermitian_solve(phi, d)?;
    let denom = d.dotc(&x);
    if !(denom.norm() > 0.0) || !denom.re.is_finite() || !denom.im.is_finite() {
        return None;
    }
    let w = x / denom.conj();
    w.iter()
        .all(|v| v.re.is_finite() && v.im.is_finite())
        .then_some(w)
}

#[derive(Debug, Clone)]
pub struct MvdrWeights {
    pub weights: CVector,
    /// Set when the solve failed and delay-and-sum was used instead.
    pub fallback: bool,
}

pub fn mvdr_weights(
    model: &BinSpatialModel,
    phi_r: f64,
    phi_v: f64,
    diagonal_loading: f64,
) -> MvdrWeights {
    let solved = if phi_r.is_finite() && phi_v.is_finite() && phi_r + phi_v > 0.0 {
        let phi = interference_covariance(model, phi_r, phi_v, diagonal_loading);
        mvdr_from_covariance(&phi, &model.d)
    } else {
        None
    };
    match solved {
        Some(weights) => MvdrWeights {
            weights,
            fallback: false,
        },
        None => MvdrWeights {
            weights: delay_and_sum(&model.d),
            fallback: true,
        },
    }
}

/// `x_b = w^H y`.
#[inline]
pub fn beamform(w: &CVector, y: &CVector) -> C64 {
    w.dotc(y)
}

/// Same as [`beamform`] on plain slices.
#[inline]
pub fn beamform_slice(w: &[C64], y: &[C64]) -> C64 {
    w.iter()
        .zip(y)
        .fold(C64::new(0.0, 0.0), |acc, (a, b)| acc + a.conj() * b)
}
