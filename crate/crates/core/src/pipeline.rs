//! Frame-online orchestration of the three processing paths.
//!
//! For every frame and bin: the blocked covariance yields `(phi_r, phi_v)`
//! and the target PSD; the MVDR weights built from them give `x_b`; the
//! target PSD is fused with the previous beamformer's output power; and the
//! Kalman predictor subtracts the predicted late reverberation from `x_b`.
//! Bins never communicate, so within a frame they may run on any number of
//! workers without affecting the result.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::array::{build_bin_models, ArrayGeometry, BinSpatialModel, Doa};
use crate::error::{Error, Result};
use crate::kalman::{BinKalmanState, KalmanParams, ProcessNoise, TapBuffer};
use crate::linalg::CVector;
use crate::mvdr::{beamform_slice, mvdr_weights, BeamformerState};
use crate::psd::{BinEstimatorState, DEFAULT_LAMBDA};
use crate::stft::{Spectrogram, Stft, StftConfig};
use crate::trace::ShadowTrace;
use crate::C64;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Full,
    MvdrOnly,
    MclpOnly,
    Passthrough,
}

impl Mode {
    pub const ALL: [Mode; 4] = [
        Mode::Passthrough,
        Mode::MvdrOnly,
        Mode::MclpOnly,
        Mode::Full,
    ];

    pub fn uses_beamformer(self) -> bool {
        matches!(self, Mode::Full | Mode::MvdrOnly)
    }

    pub fn uses_prediction(self) -> bool {
        matches!(self, Mode::Full | Mode::MclpOnly)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Full => "full",
            Mode::MvdrOnly => "mvdr_only",
            Mode::MclpOnly => "mclp_only",
            Mode::Passthrough => "passthrough",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Mode::Full),
            "mvdr_only" => Ok(Mode::MvdrOnly),
            "mclp_only" => Ok(Mode::MclpOnly),
            "passthrough" => Ok(Mode::Passthrough),
            other => Err(Error::InvalidConfig(format!("unknown mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub stft: StftConfig,
    pub geometry: ArrayGeometry,
    pub doa: Doa,
    /// Prediction delay `D` in frames.
    pub delay: usize,
    /// Prediction order `L` in frames.
    pub order: usize,
    /// Weight of the estimator PSD in the fused target PSD.
    pub alpha: f64,
    /// Recursive smoothing factor of the covariance estimates.
    pub lambda: f64,
    /// Kalman state-transition scalar `a`.
    pub transition: f64,
    pub diagonal_loading: f64,
    pub mode: Mode,
    pub process_noise: ProcessNoise,
    pub initial_variance: f64,
    /// Bin workers per frame; 0 uses the global rayon pool.
    pub workers: usize,
    /// Keep diagnostics for every n-th frame; 0 disables them.
    pub diagnostics_decimation: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            stft: StftConfig::default(),
            geometry: ArrayGeometry::default(),
            doa: Doa::default(),
            delay: 2,
            order: 10,
            alpha: 0.7,
            lambda: DEFAULT_LAMBDA,
            transition: crate::kalman::DEFAULT_TRANSITION,
            diagonal_loading: crate::mvdr::DEFAULT_DIAGONAL_LOADING,
            mode: Mode::Full,
            process_noise: ProcessNoise::Stationary,
            initial_variance: crate::kalman::DEFAULT_INITIAL_VARIANCE,
            workers: 1,
            diagnostics_decimation: 1,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.stft.validate()?;
        self.geometry.validate()?;
        self.validate_common()?;
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        Ok(())
    }

    fn validate_common(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return bad(format!("lambda must lie in (0, 1), got {}", self.lambda));
        }
        if !(self.transition > 0.0 && self.transition <= 1.0) {
            return bad(format!("a must lie in (0, 1], got {}", self.transition));
        }
        if !(self.delay >= 1 && self.delay < self.order) {
            return bad(format!(
                "need 1 <= D < L, got D = {}, L = {}",
                self.delay, self.order
            ));
        }
        if !(self.diagonal_loading >= 0.0) {
            return bad("diagonal_loading must be nonnegative".into());
        }
        if !(self.initial_variance > 0.0) {
            return bad("initial_variance must be positive".into());
        }
        if let ProcessNoise::Isotropic(s) = self.process_noise {
            if !(s >= 0.0) {
                return bad("process noise variance must be nonnegative".into());
            }
        }
        Ok(())
    }

    pub fn channels(&self) -> usize {
        self.geometry.mic_count()
    }

    pub fn prediction_dim(&self) -> usize {
        self.channels() * (self.order - self.delay)
    }

    fn kalman_params(&self) -> KalmanParams {
        KalmanParams {
            transition: self.transition,
            process_noise: self.process_noise,
            initial_variance: self.initial_variance,
            ..KalmanParams::default()
        }
    }
}

pub mod flags {
    pub const MVDR_FALLBACK: u8 = 1;
    pub const PSD_SINGULAR: u8 = 2;
    pub const KALMAN_SKIPPED: u8 = 4;
    pub const NONFINITE_OUTPUT: u8 = 8;
    pub const WARMUP: u8 = 16;
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BinDiagnostics {
    pub phi_r: f64,
    pub phi_v: f64,
    pub phi_target: f64,
    pub phi_xc: f64,
    /// `|r|^2`, power of the predicted late reverberation.
    pub residual_power: f64,
    pub gain_norm: f64,
    pub flags: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameResult {
    /// Enhanced coefficient per bin.
    pub output: Vec<C64>,
    /// Beamformer output `x_b` per bin.
    pub beamformed: Vec<C64>,
    pub diagnostics: Vec<BinDiagnostics>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DiagnosticCounters {
    pub mvdr_fallbacks: u64,
    pub psd_singular: u64,
    pub kalman_skipped: u64,
    pub nonfinite_outputs: u64,
}

impl DiagnosticCounters {
    fn absorb(&mut self, diags: &[BinDiagnostics]) {
        for d in diags {
            self.mvdr_fallbacks += u64::from(d.flags & flags::MVDR_FALLBACK != 0);
            self.psd_singular += u64::from(d.flags & flags::PSD_SINGULAR != 0);
            self.kalman_skipped += u64::from(d.flags & flags::KALMAN_SKIPPED != 0);
            self.nonfinite_outputs += u64::from(d.flags & flags::NONFINITE_OUTPUT != 0);
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DiagnosticsLog {
    pub decimation: usize,
    /// `(frame index, per-bin diagnostics)`.
    pub frames: Vec<(usize, Vec<BinDiagnostics>)>,
    pub counters: DiagnosticCounters,
}

/// `phi_xc = alpha phi + (1 - alpha) |w_prev^H y|^2`.
pub fn fused_target_psd(alpha: f64, phi: f64, w_b_prev: &[C64], y: &[C64]) -> f64 {
    alpha * phi + (1.0 - alpha) * beamform_slice(w_b_prev, y).norm_sqr()
}

#[derive(Debug, Clone)]
struct BinProcessor {
    estimator: BinEstimatorState,
    beam: BeamformerState,
    kalman: Option<BinKalmanState>,
    taps: TapBuffer,
    reference: CVector,
}

struct BinParams {
    mode: Mode,
    alpha: f64,
    diagonal_loading: f64,
}

impl BinProcessor {
    fn new(model: &BinSpatialModel, cfg: &PipelineConfig) -> Result<Self> {
        let m = model.mic_count();
        let mut reference = CVector::zeros(m);
        reference[model.reference_index] = C64::new(1.0, 0.0);
        Ok(Self {
            estimator: BinEstimatorState::new(model, cfg.lambda),
            beam: BeamformerState::new(model, cfg.diagonal_loading),
            kalman: cfg
                .mode
                .uses_prediction()
                .then(|| BinKalmanState::new(cfg.prediction_dim(), cfg.kalman_params())),
            taps: TapBuffer::new(m, cfg.delay, cfg.order)?,
            reference,
        })
    }

    fn process(
        &mut self,
        model: &BinSpatialModel,
        y: &[C64],
        p: &BinParams,
        beam_out: &mut [C64],
        pred_out: &mut [C64],
    ) -> (C64, C64, BinDiagnostics) {
        let mut diag = BinDiagnostics::default();
        let yv = CVector::from_column_slice(y);

        // Estimator path.
        let n = model.blocking.adjoint() * &yv;
        let singular_before = self.estimator.singular_count;
        self.estimator.update_covariances(&n, &yv);
        let (phi_r, phi_v) = self.estimator.solve_psd(model);
        let phi = self.estimator.target_psd(model);
        if self.estimator.singular_count != singular_before {
            diag.flags |= flags::PSD_SINGULAR;
        }
        if self.estimator.in_warmup() {
            diag.flags |= flags::WARMUP;
        }

        // Beamformer path.
        let w_b = if p.mode.uses_beamformer() {
            let w = mvdr_weights(model, phi_r, phi_v, p.diagonal_loading);
            if w.fallback {
                self.beam.fallback_count += 1;
                diag.flags |= flags::MVDR_FALLBACK;
            }
            w.weights
        } else {
            self.reference.clone()
        };
        self.beam.advance(w_b);
        let x_b = beamform_slice(self.beam.w_b.as_slice(), y);
        let phi_xc = fused_target_psd(p.alpha, phi, self.beam.w_b_prev.as_slice(), y);
        beam_out.copy_from_slice(self.beam.w_b.as_slice());

        // Prediction path; taps are pushed only after prediction so t(l)
        // never contains the current frame.
        let mut s = x_b;
        if let Some(kalman) = self.kalman.as_mut() {
            let out = kalman.process_frame(&self.taps, x_b, phi_xc, Some(pred_out));
            s = out.s;
            diag.residual_power = out.r.norm_sqr();
            diag.gain_norm = out.gain_norm;
            if out.skipped {
                diag.flags |= flags::KALMAN_SKIPPED;
            }
        }
        self.taps.push(y);

        if !(s.re.is_finite() && s.im.is_finite()) {
            diag.flags |= flags::NONFINITE_OUTPUT;
            pred_out.iter_mut().for_each(|v| *v = ZERO);
            s = x_b;
            if !(s.re.is_finite() && s.im.is_finite()) {
                s = ZERO;
                beam_out.iter_mut().for_each(|v| *v = ZERO);
            }
        }

        diag.phi_r = phi_r;
        diag.phi_v = phi_v;
        diag.phi_target = phi;
        diag.phi_xc = phi_xc;
        (s, x_b, diag)
    }
}

pub struct Pipeline {
    config: PipelineConfig,
    alpha: f64,
    models: Vec<BinSpatialModel>,
    bins: Vec<BinProcessor>,
    pool: Option<rayon::ThreadPool>,
    frame_index: usize,
    beam_scratch: Vec<C64>,
    pred_scratch: Vec<C64>,
}

impl fmt::Debug for Pipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Pipeline")
            .field("config", &self.config)
            .field("alpha", &self.alpha)
            .field("frame_index", &self.frame_index)
            .finish()
    }
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        let alpha = config.alpha;
        Self::build(config, alpha)
    }

    /// Like [`Pipeline::new`] but accepts the fusion endpoints `alpha = 0`
    /// and `alpha = 1`, which isolate one input of the fused target PSD.
    pub fn with_alpha_override(config: PipelineConfig, alpha: f64) -> Result<Self> {
        config.stft.validate()?;
        config.geometry.validate()?;
        config.validate_common()?;
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::InvalidConfig(format!(
                "alpha override must lie in [0, 1], got {alpha}"
            )));
        }
        Self::build(config, alpha)
    }

    fn build(config: PipelineConfig, alpha: f64) -> Result<Self> {
        let models = build_bin_models(&config.geometry, config.doa, &config.stft)?;
        let bins = models
            .iter()
            .map(|m| BinProcessor::new(m, &config))
            .collect::<Result<Vec<_>>>()?;
        let pool = match config.workers {
            1 => None,
            n => Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build()
                    .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?,
            ),
        };
        Ok(Self {
            alpha,
            models,
            bins,
            pool,
            frame_index: 0,
            beam_scratch: Vec::new(),
            pred_scratch: Vec::new(),
            config,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn models(&self) -> &[BinSpatialModel] {
        &self.models
    }

    pub fn frames_processed(&self) -> usize {
        self.frame_index
    }

    fn prediction_dim(&self) -> usize {
        if self.config.mode.uses_prediction() {
            self.config.prediction_dim()
        } else {
            0
        }
    }

    /// Process one frame given bin-major microphone coefficients
    /// (`frame[bin * M + channel]`).
    pub fn process_frame(&mut self, frame: &[C64]) -> Result<FrameResult> {
        let k = self.models.len();
        let mut beam = std::mem::take(&mut self.beam_scratch);
        let mut pred = std::mem::take(&mut self.pred_scratch);
        beam.resize(k * self.config.channels(), ZERO);
        pred.resize(k * self.prediction_dim(), ZERO);
        let result = self.process_frame_weights(frame, &mut beam, &mut pred);
        self.beam_scratch = beam;
        self.pred_scratch = pred;
        result
    }

    /// [`Pipeline::process_frame`] that also writes the weights actually
    /// applied: `beam_out[bin * M ..]` and `pred_out[bin * N ..]`.
    pub fn process_frame_weights(
        &mut self,
        frame: &[C64],
        beam_out: &mut [C64],
        pred_out: &mut [C64],
    ) -> Result<FrameResult> {
        let m = self.config.channels();
        let k = self.models.len();
        let n = self.prediction_dim();
        if frame.len() != k * m {
            return Err(Error::DimensionMismatch {
                expected: k * m,
                got: frame.len(),
            });
        }
        if beam_out.len() != k * m || pred_out.len() != k * n {
            return Err(Error::DimensionMismatch {
                expected: k * (m + n),
                got: beam_out.len() + pred_out.len(),
            });
        }
        let params = BinParams {
            mode: self.config.mode,
            alpha: self.alpha,
            diagonal_loading: self.config.diagonal_loading,
        };
        let mut results = vec![(ZERO, ZERO, BinDiagnostics::default()); k];
        let models = &self.models;
        let beam_slices: Vec<&mut [C64]> = beam_out.chunks_mut(m).collect();
        let pred_slices: Vec<&mut [C64]> = if n == 0 {
            (0..k).map(|_| -> &mut [C64] { &mut [] }).collect()
        } else {
            pred_out.chunks_mut(n).collect()
        };
        #[allow(clippy::type_complexity)]
        let work = |((((bin, model), y), (b_out, p_out)), res): (
            (
                ((&mut BinProcessor, &BinSpatialModel), &[C64]),
                (&mut [C64], &mut [C64]),
            ),
            &mut (C64, C64, BinDiagnostics),
        )| {
            *res = bin.process(model, y, &params, b_out, p_out);
        };
        let weights: Vec<(&mut [C64], &mut [C64])> =
            beam_slices.into_iter().zip(pred_slices).collect();
        match self.pool.as_ref() {
            None => self
                .bins
                .iter_mut()
                .zip(models.iter())
                .zip(frame.chunks(m))
                .zip(weights)
                .zip(results.iter_mut())
                .for_each(work),
            Some(pool) => {
                let bins = &mut self.bins;
                pool.install(|| {
                    bins.par_iter_mut()
                        .zip(models.par_iter())
                        .zip(frame.par_chunks(m))
                        .zip(weights)
                        .zip(results.par_iter_mut())
                        .for_each(work)
                });
            }
        }
        self.frame_index += 1;
        let mut out = FrameResult {
            output: Vec::with_capacity(k),
            beamformed: Vec::with_capacity(k),
            diagnostics: Vec::with_capacity(k),
        };
        for (s, xb, d) in results {
            out.output.push(s);
            out.beamformed.push(xb);
            out.diagnostics.push(d);
        }
        Ok(out)
    }

    /// Run every frame of `spec` through the pipeline.
    pub fn process_spectrogram(
        &mut self,
        spec: &Spectrogram,
        record_trace: bool,
    ) -> Result<SpectrogramRun> {
        let m = self.config.channels();
        if spec.channel_count != m {
            return Err(Error::ChannelCountMismatch {
                expected: m,
                got: spec.channel_count,
            });
        }
        if spec.bins != self.models.len() {
            return Err(Error::DimensionMismatch {
                expected: self.models.len(),
                got: spec.bins,
            });
        }
        let k = spec.bins;
        let n = self.prediction_dim();
        let mut output = Spectrogram::zeros(1, spec.frames, k, spec.signal_len);
        let mut beamformed = Spectrogram::zeros(1, spec.frames, k, spec.signal_len);
        let mut trace = record_trace.then(|| {
            ShadowTrace::new(
                self.config.stft,
                m,
                self.config.delay,
                self.config.order,
                self.config.geometry.reference_index,
                spec.signal_len,
                spec.frames,
                self.config.mode.uses_prediction(),
            )
        });
        let decimation = self.config.diagnostics_decimation;
        let mut log = DiagnosticsLog {
            decimation,
            ..DiagnosticsLog::default()
        };
        let mut frame = Vec::new();
        let mut beam = vec![ZERO; k * m];
        let mut pred = vec![ZERO; k * n];
        for l in 0..spec.frames {
            spec.frame_bin_major(l, &mut frame);
            let result = match trace.as_mut() {
                Some(tr) => {
                    let (b, p) = tr.frame_mut(l);
                    self.process_frame_weights(&frame, b, p)?
                }
                None => self.process_frame_weights(&frame, &mut beam, &mut pred)?,
            };
            output
                .channel_frame_mut(0, l)
                .copy_from_slice(&result.output);
            beamformed
                .channel_frame_mut(0, l)
                .copy_from_slice(&result.beamformed);
            log.counters.absorb(&result.diagnostics);
            if decimation > 0 && l % decimation == 0 {
                log.frames.push((l, result.diagnostics));
            }
        }
        Ok(SpectrogramRun {
            output,
            beamformed,
            diagnostics: log,
            trace,
        })
    }
}

#[derive(Debug, Clone)]
pub struct SpectrogramRun {
    pub output: Spectrogram,
    pub beamformed: Spectrogram,
    pub diagnostics: DiagnosticsLog,
    pub trace: Option<ShadowTrace>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub enhanced: Vec<f64>,
    pub diagnostics: DiagnosticsLog,
    pub trace: Option<ShadowTrace>,
}

/// Analyze, process frame by frame, and resynthesize.
pub fn run(config: &PipelineConfig, signal: &[Vec<f64>], sample_rate: u32) -> Result<RunOutput> {
    run_with(Pipeline::new(config.clone())?, signal, sample_rate, true)
}

pub fn run_with(
    mut pipeline: Pipeline,
    signal: &[Vec<f64>],
    sample_rate: u32,
    record_trace: bool,
) -> Result<RunOutput> {
    let cfg = pipeline.config().clone();
    if sample_rate != cfg.stft.sample_rate {
        return Err(Error::SampleRateMismatch {
            expected: cfg.stft.sample_rate,
            got: sample_rate,
        });
    }
    if signal.len() != cfg.channels() {
        return Err(Error::ChannelCountMismatch {
            expected: cfg.channels(),
            got: signal.len(),
        });
    }
    let stft = Stft::new(cfg.stft)?;
    let spec = stft.analyze(signal)?;
    let run = pipeline.process_spectrogram(&spec, record_trace)?;
    let enhanced = stft.synthesize(&run.output)?.remove(0);
    Ok(RunOutput {
        enhanced,
        diagnostics: run.diagnostics,
        trace: run.trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_config(mode: Mode) -> PipelineConfig {
        PipelineConfig {
            geometry: ArrayGeometry::uniform_linear(4, 0.04),
            doa: Doa::azimuth(1.1),
            mode,
            ..PipelineConfig::default()
        }
    }

    fn random_signal(channels: usize, len: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..channels)
            .map(|_| (0..len).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect()
    }

    #[test]
    fn config_validation() {
        let ok = PipelineConfig::default();
        assert!(ok.validate().is_ok());
        for f in [
            |c: &mut PipelineConfig| c.alpha = 1.0,
            |c: &mut PipelineConfig| c.alpha = 0.0,
            |c: &mut PipelineConfig| c.lambda = 1.0,
            |c: &mut PipelineConfig| c.transition = 0.0,
            |c: &mut PipelineConfig| c.transition = 1.01,
            |c: &mut PipelineConfig| c.delay = 0,
            |c: &mut PipelineConfig| c.delay = 10,
            |c: &mut PipelineConfig| c.diagonal_loading = -1.0,
        ] {
            let mut c = PipelineConfig::default();
            f(&mut c);
            assert!(c.validate().is_err(), "{c:?}");
        }
        assert!(Pipeline::with_alpha_override(PipelineConfig::default(), 1.0).is_ok());
        assert!(Pipeline::with_alpha_override(PipelineConfig::default(), 1.5).is_err());
    }

    #[test]
    fn mode_parsing() {
        for m in Mode::ALL {
            assert_eq!(m.as_str().parse::<Mode>().unwrap(), m);
        }
        assert!("mvdr".parse::<Mode>().is_err());
    }

    #[test]
    fn fused_psd_endpoints() {
        let w = [C64::new(0.5, 0.5), C64::new(0.0, 1.0)];
        let y = [C64::new(1.0, 0.0), C64::new(0.3, -0.2)];
        let p = beamform_slice(&w, &y).norm_sqr();
        assert_eq!(fused_target_psd(1.0, 2.0, &w, &y), 2.0);
        assert_eq!(fused_target_psd(0.0, 2.0, &w, &y), p);
        let w1 = [C64::new(1.0, 0.0), C64::new(0.0, 0.0)];
        let y1 = [C64::new(1.0, 0.0), C64::new(5.0, 0.0)];
        assert!((fused_target_psd(0.7, 2.0, &w1, &y1) - 1.7).abs() < 1e-15);
    }

    #[test]
    fn passthrough_returns_reference_channel() {
        let cfg = small_config(Mode::Passthrough);
        let x = random_signal(4, 4000, 1);
        let out = run(&cfg, &x, 16000).unwrap();
        let err: f64 = out
            .enhanced
            .iter()
            .zip(&x[0])
            .map(|(a, b)| (a - b).powi(2))
            .sum();
        let den: f64 = x[0].iter().map(|v| v * v).sum();
        assert!((err / den).sqrt() < 1e-12);
    }

    #[test]
    fn mvdr_only_matches_full_beamformer_stream() {
        let x = random_signal(4, 6000, 2);
        let spec = crate::stft::analyze(&x, &StftConfig::default()).unwrap();
        let mut full = Pipeline::new(small_config(Mode::Full)).unwrap();
        let mut mvdr = Pipeline::new(small_config(Mode::MvdrOnly)).unwrap();
        let a = full.process_spectrogram(&spec, false).unwrap();
        let b = mvdr.process_spectrogram(&spec, false).unwrap();
        assert_eq!(a.beamformed.data, b.beamformed.data);
        assert_eq!(b.output.data, b.beamformed.data);
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let cfg = small_config(Mode::Full);
        let x = vec![vec![0.0; 5000]; 4];
        let out = run(&cfg, &x, 16000).unwrap();
        assert!(out.enhanced.iter().all(|v| *v == 0.0));
        assert_eq!(out.diagnostics.counters.nonfinite_outputs, 0);
    }

    #[test]
    fn rejects_mismatched_input() {
        let cfg = small_config(Mode::Full);
        let x = random_signal(3, 2000, 3);
        assert!(matches!(
            run(&cfg, &x, 16000),
            Err(Error::ChannelCountMismatch { .. })
        ));
        let x = random_signal(4, 2000, 3);
        assert!(matches!(
            run(&cfg, &x, 8000),
            Err(Error::SampleRateMismatch { .. })
        ));
    }

    #[test]
    fn deterministic_across_worker_counts() {
        let x = random_signal(4, 8000, 4);
        let mut a = small_config(Mode::Full);
        a.workers = 1;
        let mut b = a.clone();
        b.workers = 3;
        let ra = run(&a, &x, 16000).unwrap();
        let rb = run(&b, &x, 16000).unwrap();
        let rc = run(&a, &x, 16000).unwrap();
        assert_eq!(ra.enhanced, rb.enhanced);
        assert_eq!(ra.enhanced, rc.enhanced);
        assert_eq!(ra.diagnostics, rb.diagnostics);
        assert_eq!(ra.trace, rb.trace);
    }

    #[test]
    fn frame_dimension_checked() {
        let mut p = Pipeline::new(small_config(Mode::Full)).unwrap();
        assert!(p.process_frame(&[ZERO; 10]).is_err());
        let r = p.process_frame(&vec![ZERO; 257 * 4]).unwrap();
        assert_eq!(r.output.len(), 257);
    }

    #[test]
    fn diagnostics_decimation() {
        let mut cfg = small_config(Mode::Full);
        cfg.diagnostics_decimation = 4;
        let x = random_signal(4, 4000, 5);
        let out = run(&cfg, &x, 16000).unwrap();
        let frames = cfg.stft.frame_count(4000);
        assert_eq!(out.diagnostics.frames.len(), frames.div_ceil(4));
        assert!(out.diagnostics.frames.iter().all(|(l, _)| l % 4 == 0));
    }
}
