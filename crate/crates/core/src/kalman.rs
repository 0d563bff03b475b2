//! Kalman-filtered multichannel linear prediction for one frequency bin.
//!
//! The state is the stacked prediction-weight vector `w` of dimension
//! `N = M (L - D)`. The observation model is `x_b* = t^H w + x_e*`, where
//! `t` stacks the delayed microphone vectors `y(l-D) .. y(l-L+1)` and the
//! target `x_e` plays the role of measurement noise with PSD `phi_xc`.
//! The innovation `s = x_b - w^H t` is the dereverberated output.
//!
//! Covariances are stored densely, row-major, as `Vec<C64>`; the loops are
//! written out by hand because this is the inner loop of the whole engine.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::C64;

pub const DEFAULT_TRANSITION: f64 = 0.999;
pub const DEFAULT_INITIAL_VARIANCE: f64 = 1e-2;
/// Innovation floor relative to the running maximum of `|x_b|^2`.
pub const INNOVATION_FLOOR_RATIO: f64 = 1e-12;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// Delay line of past microphone vectors.
#[derive(Debug, Clone)]
pub struct TapBuffer {
    channels: usize,
    delay: usize,
    order: usize,
    /// Most recent frame first; holds at most `order - 1` frames.
    history: VecDeque<Vec<C64>>,
}

impl TapBuffer {
    pub fn new(channels: usize, delay: usize, order: usize) -> Result<Self> {
        if channels == 0 || delay < 1 || delay >= order {
            return Err(Error::InvalidConfig(format!(
                "prediction taps need 1 <= D < L (D = {delay}, L = {order})"
            )));
        }
        Ok(Self {
            channels,
            delay,
            order,
            history: VecDeque::with_capacity(order),
        })
    }

    /// Stacked dimension `M (L - D)`.
    pub fn dim(&self) -> usize {
        self.channels * (self.order - self.delay)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Record `y(l)` after frame `l` has been processed.
    pub fn push(&mut self, y: &[C64]) {
        debug_assert_eq!(y.len(), self.channels);
        let mut slot = if self.history.len() == self.order - 1 {
            self.history.pop_back().expect("nonempty")
        } else {
            vec![ZERO; self.channels]
        };
        slot.copy_from_slice(y);
        self.history.push_front(slot);
    }

    /// `t(l) = [y(l-D); ...; y(l-L+1)]`, zero where history is missing.
    pub fn stacked_into(&self, out: &mut Vec<C64>) {
        out.clear();
        out.resize(self.dim(), ZERO);
        for lag in self.delay..self.order {
            // history[0] is y(l-1).
            if let Some(frame) = self.history.get(lag - 1) {
                let start = (lag - self.delay) * self.channels;
                out[start..start + self.channels].copy_from_slice(frame);
            }
        }
    }

    pub fn stacked(&self) -> Vec<C64> {
        let mut out = Vec::new();
        self.stacked_into(&mut out);
        out
    }

    pub fn frames_held(&self) -> usize {
        self.history.len()
    }
}

/// Process-noise covariance model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProcessNoise {
    /// `(1 - a^2) (w w^H + Phi_e)`, keeping the implied state covariance
    /// stationary under the transition.
    Stationary,
    /// `sigma^2 I`.
    Isotropic(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KalmanParams {
    /// Transition scalar `a`, with `A = a I`.
    pub transition: f64,
    pub process_noise: ProcessNoise,
    pub initial_variance: f64,
    pub innovation_floor_ratio: f64,
}

impl Default for KalmanParams {
    fn default() -> Self {
        Self {
            transition: DEFAULT_TRANSITION,
            process_noise: ProcessNoise::Stationary,
            initial_variance: DEFAULT_INITIAL_VARIANCE,
            innovation_floor_ratio: INNOVATION_FLOOR_RATIO,
        }
    }
}

/// A-priori estimate for the current frame.
#[derive(Debug, Clone)]
pub struct Prior {
    pub w: Vec<C64>,
    /// Row-major `N x N`.
    pub phi: Vec<C64>,
}

#[derive(Debug, Clone)]
pub struct Innovation {
    /// Enhanced sample `s = x_b - w_prior^H t`.
    pub s: C64,
    pub gain: Vec<C64>,
    /// Innovation PSD after flooring.
    pub phi_s: f64,
    /// `Phi_prior t`, reused by the covariance update.
    pub phi_t: Vec<C64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KalmanOutput {
    pub s: C64,
    /// Predicted late reverberation `r = w_prior^H t`.
    pub r: C64,
    pub gain_norm: f64,
    pub skipped: bool,
}

#[derive(Debug, Clone)]
pub struct BinKalmanState {
    pub n: usize,
    pub w_hat: Vec<C64>,
    /// Row-major Hermitian `N x N` error covariance.
    pub phi_e: Vec<C64>,
    pub params: KalmanParams,
    /// Running maximum of `|x_b|^2`.
    pub peak_power: f64,
    pub skipped: u64,
    scratch: Option<Prior>,
    t: Vec<C64>,
}

impl BinKalmanState {
    pub fn new(n: usize, params: KalmanParams) -> Self {
        let mut phi_e = vec![ZERO; n * n];
        for i in 0..n {
            phi_e[i * n + i] = C64::new(params.initial_variance, 0.0);
        }
        Self {
            n,
            w_hat: vec![ZERO; n],
            phi_e,
            params,
            peak_power: 0.0,
            skipped: 0,
            scratch: None,
            t: Vec::with_capacity(n),
        }
    }

    pub fn predict(&self) -> Prior {
        let mut prior = Prior {
            w: vec![ZERO; self.n],
            phi: vec![ZERO; self.n * self.n],
        };
        self.predict_into(&mut prior);
        prior
    }

    /// `w_prior = a w_hat`, `Phi_prior = a^2 Phi_e + Phi_v`.
    pub fn predict_into(&self, prior: &mut Prior) {
        let n = self.n;
        let a = self.params.transition;
        prior.w.resize(n, ZERO);
        prior.phi.resize(n * n, ZERO);
        for (p, w) in prior.w.iter_mut().zip(&self.w_hat) {
            *p = w * a;
        }
        let a2 = a * a;
        match self.params.process_noise {
            ProcessNoise::Stationary => {
                let q = 1.0 - a2;
                let scale = a2 + q;
                for i in 0..n {
                    let wi = self.w_hat[i] * q;
                    let row = &self.phi_e[i * n..(i + 1) * n];
                    let out = &mut prior.phi[i * n..(i + 1) * n];
                    for j in 0..n {
                        out[j] = row[j] * scale + wi * self.w_hat[j].conj();
                    }
                }
            }
            ProcessNoise::Isotropic(sigma2) => {
                for (o, e) in prior.phi.iter_mut().zip(&self.phi_e) {
                    *o = e * a2;
                }
                for i in 0..n {
                    prior.phi[i * n + i] += sigma2;
                }
            }
        }
    }

    pub fn innovation_floor(&self) -> f64 {
        (self.params.innovation_floor_ratio * self.peak_power).max(f64::MIN_POSITIVE)
    }

    /// Innovation, its PSD and the Kalman gain. Returns `None` on
    /// non-finite inputs.
    pub fn innovate(
        &mut self,
        prior: &Prior,
        t: &[C64],
        x_b: C64,
        phi_xc: f64,
    ) -> Option<Innovation> {
        let n = self.n;
        debug_assert_eq!(t.len(), n);
        let finite = x_b.re.is_finite()
            && x_b.im.is_finite()
            && phi_xc.is_finite()
            && t.iter().all(|v| v.re.is_finite() && v.im.is_finite());
        if !finite {
            return None;
        }
        self.peak_power = self.peak_power.max(x_b.norm_sqr());

        // s* = x_b* - t^H w_prior.
        let mut pred = ZERO;
        for (ti, wi) in t.iter().zip(&prior.w) {
            pred += ti.conj() * wi;
        }
        let s_conj = x_b.conj() - pred;

        let mut phi_t = vec![ZERO; n];
        let mut quad = 0.0;
        for i in 0..n {
            let row = &prior.phi[i * n..(i + 1) * n];
            let mut acc = ZERO;
            for (p, tj) in row.iter().zip(t) {
                acc += p * tj;
            }
            phi_t[i] = acc;
            quad += (t[i].conj() * acc).re;
        }
        let phi_s = (quad + phi_xc).max(self.innovation_floor());
        let inv = 1.0 / phi_s;
        let gain: Vec<C64> = phi_t.iter().map(|v| v * inv).collect();
        let innov = Innovation {
            s: s_conj.conj(),
            gain,
            phi_s,
            phi_t,
        };
        innov
            .gain
            .iter()
            .all(|v| v.re.is_finite() && v.im.is_finite())
            .then_some(innov)
    }

    /// `w_hat = w_prior + k s*`, `Phi_e = Phi_prior - k t^H Phi_prior`,
    /// then Hermitian symmetrization with the diagonal clipped at zero.
    pub fn correct(&mut self, prior: Prior, innov: &Innovation) {
        let n = self.n;
        let s_conj = innov.s.conj();
        for ((w, p), k) in self.w_hat.iter_mut().zip(&prior.w).zip(&innov.gain) {
            *w = p + k * s_conj;
        }
        let old = std::mem::replace(&mut self.phi_e, prior.phi);
        // Since Phi_prior is Hermitian, t^H Phi_prior = (Phi_prior t)^H.
        let phi = &mut self.phi_e;
        for i in 0..n {
            let ki = innov.gain[i];
            let diag = phi[i * n + i].re - (ki * innov.phi_t[i].conj()).re;
            phi[i * n + i] = C64::new(diag.max(0.0), 0.0);
            for j in (i + 1)..n {
                let upper = phi[i * n + j] - ki * innov.phi_t[j].conj();
                let lower = phi[j * n + i] - innov.gain[j] * innov.phi_t[i].conj();
                let avg = (upper + lower.conj()) * 0.5;
                phi[i * n + j] = avg;
                phi[j * n + i] = avg.conj();
            }
        }
        self.scratch = Some(Prior {
            w: prior.w,
            phi: old,
        });
    }

    /// One predict/innovate/correct cycle. Returns the enhanced sample
    /// together with the prediction weights that produced it.
    pub fn process_frame(
        &mut self,
        buffer: &TapBuffer,
        x_b: C64,
        phi_xc: f64,
        weights_out: Option<&mut [C64]>,
    ) -> KalmanOutput {
        let mut t = std::mem::take(&mut self.t);
        buffer.stacked_into(&mut t);
        let out = self.process_stacked(&t, x_b, phi_xc, weights_out);
        self.t = t;
        out
    }

    pub fn process_stacked(
        &mut self,
        t: &[C64],
        x_b: C64,
        phi_xc: f64,
        weights_out: Option<&mut [C64]>,
    ) -> KalmanOutput {
        let mut prior = self.scratch.take().unwrap_or_else(|| Prior {
            w: Vec::new(),
            phi: Vec::new(),
        });
        self.predict_into(&mut prior);
        match self.innovate(&prior, t, x_b, phi_xc) {
            Some(innov) => {
                let r = x_b - innov.s;
                let gain_norm = innov.gain.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
                if let Some(dst) = weights_out {
                    dst.copy_from_slice(&prior.w);
                }
                let s = innov.s;
                self.correct(prior, &innov);
                KalmanOutput {
                    s,
                    r,
                    gain_norm,
                    skipped: false,
                }
            }
            None => {
                self.skipped += 1;
                self.scratch = Some(prior);
                if let Some(dst) = weights_out {
                    dst.iter_mut().for_each(|v| *v = ZERO);
                }
                KalmanOutput {
                    s: x_b,
                    r: ZERO,
                    gain_norm: 0.0,
                    skipped: true,
                }
            }
        }
    }

    pub fn covariance_trace(&self) -> f64 {
        (0..self.n).map(|i| self.phi_e[i * self.n + i].re).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<C64> {
        (0..n)
            .map(|_| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect()
    }

    fn random_state(rng: &mut ChaCha8Rng, n: usize, a: f64) -> BinKalmanState {
        let mut st = BinKalmanState::new(
            n,
            KalmanParams {
                transition: a,
                ..KalmanParams::default()
            },
        );
        st.w_hat = random_vec(rng, n);
        let g = DMatrix::from_fn(n, n, |_, _| {
            c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        });
        let p = &g * g.adjoint();
        for i in 0..n {
            for j in 0..n {
                st.phi_e[i * n + j] = p[(i, j)];
            }
        }
        st
    }

    fn params_rls() -> KalmanParams {
        KalmanParams {
            transition: 1.0,
            ..KalmanParams::default()
        }
    }

    #[test]
    fn tap_buffer_stacks_delayed_frames() {
        let mut buf = TapBuffer::new(2, 2, 4).unwrap();
        assert_eq!(buf.dim(), 4);
        assert!(buf.stacked().iter().all(|v| *v == ZERO));
        for l in 0..5 {
            buf.push(&[c(l as f64, 0.0), c(0.0, l as f64)]);
        }
        // Current frame is l = 5: taps are y(3), y(2).
        let t = buf.stacked();
        assert_eq!(t, vec![c(3.0, 0.0), c(0.0, 3.0), c(2.0, 0.0), c(0.0, 2.0)]);
        assert_eq!(buf.frames_held(), 3);
        assert!(TapBuffer::new(2, 0, 4).is_err());
        assert!(TapBuffer::new(2, 4, 4).is_err());
    }

    #[test]
    fn identity_transition_keeps_prior() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let st = random_state(&mut rng, 5, 1.0);
        let prior = st.predict();
        assert_eq!(prior.w, st.w_hat);
        assert_eq!(prior.phi, st.phi_e);
    }

    #[test]
    fn stationary_prior_from_isotropic_covariance() {
        let n = 4;
        let mut st = BinKalmanState::new(n, KalmanParams::default());
        let sigma2 = 0.37;
        for i in 0..n {
            st.phi_e[i * n + i] = c(sigma2, 0.0);
        }
        let prior = st.predict();
        for i in 0..n {
            for j in 0..n {
                let expect = if i == j { sigma2 } else { 0.0 };
                assert!((prior.phi[i * n + j] - c(expect, 0.0)).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn prior_matches_direct_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 6;
        let a = 0.9;
        let st = random_state(&mut rng, n, a);
        let prior = st.predict();
        let w = DVector::from_vec(st.w_hat.clone());
        let pe = DMatrix::from_row_slice(n, n, &st.phi_e);
        let a_mat = DMatrix::<C64>::identity(n, n) * c(a, 0.0);
        let phi_v = (&w * w.adjoint() + &pe) * c(1.0 - a * a, 0.0);
        let expect = a_mat.adjoint() * &pe * &a_mat + phi_v;
        let got = DMatrix::from_row_slice(n, n, &prior.phi);
        assert!((got - expect).norm() < 1e-12);
        for i in 0..n {
            assert!((prior.w[i] - st.w_hat[i] * a).norm() < 1e-15);
        }
    }

    #[test]
    fn isotropic_process_noise() {
        let mut st = BinKalmanState::new(
            3,
            KalmanParams {
                transition: 0.5,
                process_noise: ProcessNoise::Isotropic(0.2),
                ..KalmanParams::default()
            },
        );
        st.phi_e = vec![c(1.0, 0.0); 9];
        let prior = st.predict();
        assert!((prior.phi[0] - c(0.45, 0.0)).norm() < 1e-15);
        assert!((prior.phi[1] - c(0.25, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn zero_regressor_passes_through() {
        let mut st = BinKalmanState::new(4, KalmanParams::default());
        let buf = TapBuffer::new(2, 1, 3).unwrap();
        let xb = c(0.7, -0.2);
        let before = st.phi_e.clone();
        let out = st.process_frame(&buf, xb, 1.0, None);
        assert_eq!(out.s, xb);
        assert_eq!(out.gain_norm, 0.0);
        assert!(st.w_hat.iter().all(|v| *v == ZERO));
        // Phi_prior equals Phi_e for w_hat = 0.
        for (a, b) in st.phi_e.iter().zip(&before) {
            assert!((a - b).norm() < 1e-15);
        }
    }

    #[test]
    fn large_target_psd_suppresses_adaptation() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut st = BinKalmanState::new(4, KalmanParams::default());
        let prior = st.predict();
        let t = random_vec(&mut rng, 4);
        let xb = c(0.5, 0.5);
        let inn = st.innovate(&prior, &t, xb, 1e12).unwrap();
        assert!(inn.gain.iter().all(|k| k.norm() < 1e-12));
        assert_eq!(inn.s, xb);
    }

    #[test]
    fn scalar_gain_and_covariance_closed_form() {
        let (p, tau, q) = (0.8, c(0.6, -0.3), 0.25);
        let mut st = BinKalmanState::new(1, params_rls());
        st.phi_e[0] = c(p, 0.0);
        let prior = st.predict();
        let inn = st.innovate(&prior, &[tau], c(1.0, 0.0), q).unwrap();
        let denom = p * tau.norm_sqr() + q;
        assert!((inn.gain[0] - tau * (p / denom)).norm() < 1e-15);
        st.correct(prior, &inn);
        let expect = p * q / denom;
        assert!((st.phi_e[0].re - expect).abs() < 1e-15);
        assert!(st.phi_e[0].re <= p);
    }

    #[test]
    fn zero_gain_leaves_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut st = random_state(&mut rng, 3, 1.0);
        let before = (st.w_hat.clone(), st.phi_e.clone());
        let prior = st.predict();
        let inn = Innovation {
            s: c(1.0, 2.0),
            gain: vec![ZERO; 3],
            phi_s: 1.0,
            phi_t: vec![ZERO; 3],
        };
        st.correct(prior, &inn);
        assert_eq!(st.w_hat, before.0);
        for (a, b) in st.phi_e.iter().zip(&before.1) {
            assert!((a - b).norm() < 1e-15);
        }
    }

    #[test]
    fn non_finite_input_skips_frame() {
        let mut st = BinKalmanState::new(2, KalmanParams::default());
        let before = st.phi_e.clone();
        let out = st.process_stacked(&[c(1.0, 0.0), ZERO], c(f64::NAN, 0.0), 1.0, None);
        assert!(out.skipped);
        assert_eq!(st.skipped, 1);
        assert_eq!(st.phi_e, before);
    }

    #[test]
    fn gain_consistency_and_monotone_trace() {
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let n = 8;
        let mut st = BinKalmanState::new(n, KalmanParams::default());
        for _ in 0..100 {
            let t = random_vec(&mut rng, n);
            let xb = random_vec(&mut rng, 1)[0];
            let prior = st.predict();
            let prior_trace: f64 = (0..n).map(|i| prior.phi[i * n + i].re).sum();
            let inn = st.innovate(&prior, &t, xb, 0.3).unwrap();
            for i in 0..n {
                let lhs = inn.gain[i] * inn.phi_s;
                assert!((lhs - inn.phi_t[i]).norm() <= 1e-10 * inn.phi_t[i].norm().max(1e-300));
            }
            st.correct(prior, &inn);
            assert!(st.covariance_trace() <= prior_trace);
            for i in 0..n {
                assert!(st.phi_e[i * n + i].re >= 0.0);
                assert_eq!(st.phi_e[i * n + i].im, 0.0);
                for j in 0..n {
                    assert!((st.phi_e[i * n + j] - st.phi_e[j * n + i].conj()).norm() < 1e-10);
                }
            }
        }
    }

    /// Batch oracle: `(P0^{-1} + sum t t^H / q) w = sum t x_b^* / q`.
    fn normal_equations(ts: &[Vec<C64>], xbs: &[C64], q: f64, p0: f64) -> DVector<C64> {
        let n = ts[0].len();
        let mut lhs = DMatrix::<C64>::identity(n, n) * c(1.0 / p0, 0.0);
        let mut rhs = DVector::<C64>::zeros(n);
        for (t, xb) in ts.iter().zip(xbs) {
            let tv = DVector::from_vec(t.clone());
            lhs += &tv * tv.adjoint() * c(1.0 / q, 0.0);
            rhs += &tv * (xb.conj() / q);
        }
        lhs.lu().solve(&rhs).unwrap()
    }

    #[test]
    fn converges_to_true_weights_at_40_db() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let n = 8;
        let w_true = random_vec(&mut rng, n);
        let wt = DVector::from_vec(w_true.clone());
        let mut st = BinKalmanState::new(n, params_rls());
        let (mut ts, mut xbs) = (Vec::new(), Vec::new());
        let signal_power = wt.norm_squared() * 2.0 / 3.0;
        let noise_std = (signal_power * 1e-4 / 2.0).sqrt();
        for _ in 0..200 {
            let t = random_vec(&mut rng, n);
            let tv = DVector::from_vec(t.clone());
            let e = c(
                noise_std * rng.random_range(-1.7..1.7),
                noise_std * rng.random_range(-1.7..1.7),
            );
            // x_b^* = t^H w + e^*.
            let xb = (tv.dotc(&wt) + e.conj()).conj();
            st.process_stacked(&t, xb, 1e-4, None);
            ts.push(t);
            xbs.push(xb);
        }
        let w_hat = DVector::from_vec(st.w_hat.clone());
        // Least-squares error at this SNR is about sqrt(N / (T snr)) = 2e-3
        // relative, so the estimate cannot be much closer than that.
        let expected = (n as f64 / (200.0 * 1e4)).sqrt();
        assert!((&w_hat - &wt).norm() / wt.norm() < 2.0 * expected);
        let oracle = normal_equations(&ts, &xbs, 1e-4, DEFAULT_INITIAL_VARIANCE);
        assert!((&w_hat - &oracle).norm() / oracle.norm() < 1e-6);
    }

    #[test]
    fn no_spurious_adaptation_on_uncorrelated_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (m, d, l) = (2, 2, 6);
        let n = m * (l - d);
        let mut st = BinKalmanState::new(n, KalmanParams::default());
        let mut buf = TapBuffer::new(m, d, l).unwrap();
        let mut warm = 0.0;
        for frame in 0..400 {
            let y = random_vec(&mut rng, m);
            st.process_frame(&buf, y[0], 2.0 / 3.0, None);
            buf.push(&y);
            let norm = st.w_hat.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
            if frame == 20 {
                warm = norm;
            }
            if frame > 20 {
                assert!(norm < 10.0 * warm.max(1e-3));
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]

            #[test]
            fn matches_regularized_least_squares(seed in 0u64..10_000, n in 1usize..=8) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let q = 0.5;
                let mut st = BinKalmanState::new(n, params_rls());
                let (mut ts, mut xbs) = (Vec::new(), Vec::new());
                for _ in 0..200 {
                    let t = random_vec(&mut rng, n);
                    let xb = random_vec(&mut rng, 1)[0];
                    st.process_stacked(&t, xb, q, None);
                    ts.push(t);
                    xbs.push(xb);
                }
                let oracle = normal_equations(&ts, &xbs, q, DEFAULT_INITIAL_VARIANCE);
                let w_hat = DVector::from_vec(st.w_hat.clone());
                prop_assert!((&w_hat - &oracle).norm() <= 1e-6 * oracle.norm());
            }
        }
    }
}
