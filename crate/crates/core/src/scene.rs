//! Synthetic multichannel acoustic scenes with separately kept components.
//!
//! A scene is `y = x_e + x_r + v`: the direct path plus early reflections
//! (steered exactly like the far-field model), a late tail whose spatial
//! coherence follows the diffuse sinc model and whose envelope decays with
//! the requested T60, and spatially white noise at a given SNR.

use std::f64::consts::{LN_10, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use realfft::RealFftPlanner;

use crate::array::{diffuse_coherence_real, ArrayGeometry, Doa};
use crate::error::{Error, Result};
use crate::linalg::psd_sqrt_real;
use crate::stft::StftConfig;
use crate::C64;

/// Half-length of the fractional-delay filters; they have `2 * HALF` taps.
const FRACTIONAL_HALF: usize = 32;

// Independent random streams per scene component.
const STREAM_SOURCE: u64 = 1;
const STREAM_EARLY: u64 = 2;
const STREAM_TAIL: u64 = 3;
const STREAM_NOISE: u64 = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    /// Reverberation time in seconds.
    pub t60: f64,
    /// SNR at the reference microphone; `f64::INFINITY` disables noise.
    pub snr_db: f64,
    pub doa: Doa,
    /// Seconds.
    pub duration: f64,
    pub seed: u64,
    pub early_taps: usize,
    pub early_window_ms: f64,
    /// Total reverberant energy relative to the direct path, per second of
    /// T60. The tail beyond the early window carries
    /// `reverb_level * t60 * exp(-6 ln10 t_onset / t60)`.
    pub reverb_level: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            t60: 0.6,
            snr_db: 10.0,
            doa: Doa::azimuth(PI / 3.0),
            duration: 10.0,
            seed: 1,
            early_taps: 3,
            early_window_ms: 40.0,
            reverb_level: 20.0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.t60 > 0.0 && self.t60 <= 2.0) {
            return bad(format!("t60 must lie in (0, 2] s, got {}", self.t60));
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return bad(format!("duration must be positive, got {}", self.duration));
        }
        if self.snr_db.is_nan() || self.snr_db == f64::NEG_INFINITY {
            return bad(format!("invalid snr_db {}", self.snr_db));
        }
        if !(self.early_window_ms > 0.0 && self.early_window_ms.is_finite()) {
            return bad("early_window_ms must be positive".into());
        }
        if !(self.reverb_level >= 0.0 && self.reverb_level.is_finite()) {
            return bad("reverb_level must be nonnegative".into());
        }
        Ok(())
    }

    /// The early window must reach at least the prediction delay, so that
    /// everything the predictor can see is late reverberation or older.
    pub fn check_prediction_boundary(&self, delay_frames: usize, stft: &StftConfig) -> Result<()> {
        let boundary_ms = 1000.0 * (delay_frames * stft.hop) as f64 / stft.sample_rate as f64;
        if self.early_window_ms < boundary_ms {
            return Err(Error::InvalidConfig(format!(
                "early_window_ms ({}) is shorter than the prediction delay ({boundary_ms} ms)",
                self.early_window_ms
            )));
        }
        Ok(())
    }

    /// Late-tail energy relative to a unit direct path.
    pub fn late_energy(&self, onset_s: f64) -> f64 {
        self.reverb_level * self.t60 * (-6.0 * LN_10 * onset_s / self.t60).exp()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    /// Clean mono source.
    pub source: Vec<f64>,
    /// Direct path plus early reflections.
    pub x_e: Vec<Vec<f64>>,
    /// Late reverberation.
    pub x_r: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
    pub sample_rate: u32,
    pub reference_index: usize,
}

impl Scene {
    pub fn channels(&self) -> usize {
        self.y.len()
    }

    pub fn len(&self) -> usize {
        self.source.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source.is_empty()
    }

    /// `10 log10(P(x_e + x_r) / P(v))` at the reference microphone.
    pub fn measured_snr_db(&self) -> f64 {
        let r = self.reference_index;
        let speech: f64 = self.x_e[r]
            .iter()
            .zip(&self.x_r[r])
            .map(|(a, b)| (a + b).powi(2))
            .sum();
        10.0 * (speech / power(&self.v[r])).log10()
    }
}

fn power(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Speech-like test signal: colored Gaussian noise with a low-pass spectral
/// tilt, gated by a random syllable-rate envelope with pauses. Peak 0.5.
pub fn speech_shaped_source(duration: f64, sample_rate: u32, seed: u64) -> Vec<f64> {
    let fs = sample_rate as f64;
    let len = (duration * fs).round() as usize;
    let mut rng = rng_for(seed, STREAM_SOURCE);

    // Poles at 0.9 and 0.5 give the long-term low-pass slope; the zero at
    // 0.95 removes DC.
    let (mut x1, mut x2, mut e1) = (0.0, 0.0, 0.0);
    let mut colored = Vec::with_capacity(len);
    for _ in 0..len {
        let e = gaussian(&mut rng);
        let x = (e - 0.95 * e1) + 1.4 * x1 - 0.45 * x2;
        e1 = e;
        x2 = x1;
        x1 = x;
        colored.push(x);
    }

    let rates: Vec<(f64, f64)> = (0..3)
        .map(|_| (rng.random_range(2.0..6.0), rng.random_range(0.0..2.0 * PI)))
        .collect();
    // Pauses of 150-500 ms roughly every 1.5 s.
    let mut gate = vec![1.0; len];
    let mut pos = (rng.random_range(0.8..2.0) * fs) as usize;
    while pos < len {
        let pause = (rng.random_range(0.15..0.5) * fs) as usize;
        let ramp = (0.02 * fs) as usize;
        for i in 0..pause + 2 * ramp {
            let idx = pos + i;
            if idx >= len {
                break;
            }
            let g = if i < ramp {
                1.0 - i as f64 / ramp as f64
            } else if i < ramp + pause {
                0.0
            } else {
                (i - ramp - pause) as f64 / ramp as f64
            };
            gate[idx] = g;
        }
        pos += pause + 2 * ramp + (rng.random_range(0.8..2.2) * fs) as usize;
    }
    let mut out: Vec<f64> = colored
        .iter()
        .enumerate()
        .map(|(n, x)| {
            let t = n as f64 / fs;
            let s: f64 = rates
                .iter()
                .enumerate()
                .map(|(i, (f, ph))| (2.0 * PI * f * t + ph).sin() / (i + 1) as f64)
                .sum();
            let env = (0.35 + s).max(0.0).powf(1.5);
            x * env * gate[n]
        })
        .collect();
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        out.iter_mut().for_each(|v| *v *= 0.5 / peak);
    }
    out
}

/// Blackman-windowed sinc filter delaying by `delay` samples (which may be
/// negative), centered on tap `FRACTIONAL_HALF`.
fn fractional_delay_filter(delay: f64) -> Vec<f64> {
    let taps = 2 * FRACTIONAL_HALF;
    let center = FRACTIONAL_HALF as f64 + delay;
    if (center - center.round()).abs() < 1e-12 {
        let mut h = vec![0.0; taps];
        let c = center.round() as isize;
        if c >= 0 && (c as usize) < taps {
            h[c as usize] = 1.0;
        }
        return h;
    }
    let half = FRACTIONAL_HALF as f64;
    (0..taps)
        .map(|j| {
            let x = j as f64 - center;
            if x.abs() >= half {
                return 0.0;
            }
            let w = 0.42 + 0.5 * (PI * x / half).cos() + 0.08 * (2.0 * PI * x / half).cos();
            crate::array::sinc(PI * x) * w
        })
        .collect()
}

/// `out[n] = sum_j h[j] x[n + HALF - j]`, the filter's bulk delay removed.
fn apply_centered(x: &[f64], h: &[f64]) -> Vec<f64> {
    let len = x.len() as isize;
    (0..x.len())
        .map(|n| {
            let mut acc = 0.0;
            for (j, hj) in h.iter().enumerate() {
                if *hj == 0.0 {
                    continue;
                }
                let idx = n as isize + FRACTIONAL_HALF as isize - j as isize;
                if idx >= 0 && idx < len {
                    acc += hj * x[idx as usize];
                }
            }
            acc
        })
        .collect()
}

/// Each channel is the source delayed by its far-field arrival offset
/// relative to the reference microphone.
pub fn synth_direct(
    source: &[f64],
    geom: &ArrayGeometry,
    doa: Doa,
    sample_rate: u32,
) -> Vec<Vec<f64>> {
    geom.relative_delays(doa)
        .iter()
        .map(|tau| apply_centered(source, &fractional_delay_filter(tau * sample_rate as f64)))
        .collect()
}

/// Source plus `early_taps` attenuated copies inside the early window.
pub fn add_early_reflections(source: &[f64], spec: &SceneSpec, sample_rate: u32) -> Vec<f64> {
    let mut rng = rng_for(spec.seed, STREAM_EARLY);
    let fs = sample_rate as f64;
    let min_delay = 0.002 * fs;
    let max_delay = (spec.early_window_ms * 1e-3 * fs).max(min_delay + 1.0);
    let decay = 3.0 * LN_10 / spec.t60;
    let mut out = source.to_vec();
    for _ in 0..spec.early_taps {
        let delay = rng.random_range(min_delay..max_delay).round() as usize;
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let gain = sign * 0.6 * rng.random_range(0.5..1.0) * (-decay * delay as f64 / fs).exp();
        for n in delay..out.len() {
            out[n] += gain * source[n - delay];
        }
    }
    out
}

/// Tail onset in samples: the early window after the latest direct-path
/// arrival across the array.
pub fn tail_onset(spec: &SceneSpec, geom: &ArrayGeometry, sample_rate: u32) -> usize {
    let fs = sample_rate as f64;
    let latest = geom
        .relative_delays(spec.doa)
        .into_iter()
        .fold(0.0f64, f64::max);
    (spec.early_window_ms * 1e-3 * fs).round() as usize + (latest * fs).ceil() as usize
}

/// Per-channel late-tail impulse responses: Gaussian sequences mixed per
/// frequency by the square root of the diffuse coherence, shaped by the T60
/// envelope and zero before the onset.
// Bins mix across channels, so `k` indexes every channel's spectrum.
#[allow(clippy::needless_range_loop)]
pub fn tail_rirs(spec: &SceneSpec, geom: &ArrayGeometry, sample_rate: u32) -> Vec<Vec<f64>> {
    let m = geom.mic_count();
    let fs = sample_rate as f64;
    let onset = tail_onset(spec, geom, sample_rate);
    let len = onset + (spec.t60 * fs).ceil() as usize;
    let nfft = len.next_power_of_two();
    let mut rng = rng_for(spec.seed, STREAM_TAIL);

    let mut planner = RealFftPlanner::<f64>::new();
    let forward = planner.plan_fft_forward(nfft);
    let inverse = planner.plan_fft_inverse(nfft);
    let mut spectra: Vec<Vec<C64>> = (0..m)
        .map(|_| {
            let mut buf: Vec<f64> = (0..nfft).map(|_| gaussian(&mut rng)).collect();
            let mut out = forward.make_output_vec();
            forward.process(&mut buf, &mut out).expect("fft sizes");
            out
        })
        .collect();
    let bins = nfft / 2 + 1;
    let mut mixed = vec![C64::new(0.0, 0.0); m];
    for k in 0..bins {
        let freq = k as f64 * fs / nfft as f64;
        let root = psd_sqrt_real(&diffuse_coherence_real(geom, freq));
        for (i, out) in mixed.iter_mut().enumerate() {
            *out = (0..m).map(|j| spectra[j][k] * root[(i, j)]).sum();
        }
        for (i, v) in mixed.iter().enumerate() {
            spectra[i][k] = *v;
        }
    }

    let decay = 3.0 * LN_10 / spec.t60;
    let target = spec.late_energy(onset as f64 / fs);
    spectra
        .into_iter()
        .map(|mut s| {
            s[0].im = 0.0;
            s[bins - 1].im = 0.0;
            let mut buf = inverse.make_output_vec();
            inverse.process(&mut s, &mut buf).expect("fft sizes");
            let mut h: Vec<f64> = (0..len)
                .map(|n| {
                    if n < onset {
                        0.0
                    } else {
                        buf[n] * (-decay * n as f64 / fs).exp()
                    }
                })
                .collect();
            let e = power(&h);
            if e > 0.0 {
                let g = (target / e).sqrt();
                h.iter_mut().for_each(|v| *v *= g);
            }
            h
        })
        .collect()
}

/// Linear convolution truncated to `x.len()`.
pub fn convolve_truncated(x: &[f64], h: &[f64]) -> Vec<f64> {
    if x.is_empty() || h.is_empty() {
        return vec![0.0; x.len()];
    }
    let nfft = (x.len() + h.len() - 1).next_power_of_two();
    let mut planner = RealFftPlanner::<f64>::new();
    let forward = planner.plan_fft_forward(nfft);
    let inverse = planner.plan_fft_inverse(nfft);
    let mut a = vec![0.0; nfft];
    a[..x.len()].copy_from_slice(x);
    let mut b = vec![0.0; nfft];
    b[..h.len()].copy_from_slice(h);
    let mut fa = forward.make_output_vec();
    let mut fb = forward.make_output_vec();
    forward.process(&mut a, &mut fa).expect("fft sizes");
    forward.process(&mut b, &mut fb).expect("fft sizes");
    for (u, v) in fa.iter_mut().zip(&fb) {
        *u *= v;
    }
    let last = fa.len() - 1;
    fa[0].im = 0.0;
    fa[last].im = 0.0;
    let mut out = vec![0.0; nfft];
    inverse.process(&mut fa, &mut out).expect("fft sizes");
    out.truncate(x.len());
    out.iter_mut().for_each(|v| *v /= nfft as f64);
    out
}

pub fn synth_late(
    source: &[f64],
    geom: &ArrayGeometry,
    spec: &SceneSpec,
    sample_rate: u32,
) -> Vec<Vec<f64>> {
    tail_rirs(spec, geom, sample_rate)
        .iter()
        .map(|h| convolve_truncated(source, h))
        .collect()
}

/// Add noise at `snr_db` (reference microphone, relative to `x_e + x_r`).
/// With `noise = None`, spatially white Gaussian noise is generated from
/// `seed`; a supplied noise recording is looped to length.
#[allow(clippy::too_many_arguments)]
pub fn mix(
    source: Vec<f64>,
    x_e: Vec<Vec<f64>>,
    x_r: Vec<Vec<f64>>,
    snr_db: f64,
    seed: u64,
    reference_index: usize,
    sample_rate: u32,
    noise: Option<&[Vec<f64>]>,
) -> Result<Scene> {
    let m = x_e.len();
    let len = source.len();
    if x_r.len() != m || reference_index >= m {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: x_r.len(),
        });
    }
    for (ch, c) in x_e.iter().chain(&x_r).enumerate() {
        if c.len() != len {
            return Err(Error::ChannelLengthMismatch {
                channel: ch % m,
                expected: len,
                got: c.len(),
            });
        }
    }
    let speech: f64 = x_e[reference_index]
        .iter()
        .zip(&x_r[reference_index])
        .map(|(a, b)| (a + b).powi(2))
        .sum();
    if !(speech > 0.0) {
        return Err(Error::DegenerateComponent("speech has zero power".into()));
    }

    let v = if snr_db == f64::INFINITY {
        vec![vec![0.0; len]; m]
    } else {
        let mut raw: Vec<Vec<f64>> = match noise {
            Some(n) => {
                if n.len() != m {
                    return Err(Error::ChannelCountMismatch {
                        expected: m,
                        got: n.len(),
                    });
                }
                n.iter()
                    .map(|c| {
                        if c.is_empty() {
                            vec![0.0; len]
                        } else {
                            (0..len).map(|i| c[i % c.len()]).collect()
                        }
                    })
                    .collect()
            }
            None => {
                let mut rng = rng_for(seed, STREAM_NOISE);
                (0..m)
                    .map(|_| (0..len).map(|_| gaussian(&mut rng)).collect())
                    .collect()
            }
        };
        let p = power(&raw[reference_index]);
        if !(p > 0.0) {
            return Err(Error::DegenerateComponent("noise has zero power".into()));
        }
        let g = (speech / p / 10f64.powf(snr_db / 10.0)).sqrt();
        raw.iter_mut().flatten().for_each(|x| *x *= g);
        raw
    };

    let y = (0..m)
        .map(|ch| {
            (0..len)
                .map(|i| x_e[ch][i] + x_r[ch][i] + v[ch][i])
                .collect()
        })
        .collect();
    Ok(Scene {
        source,
        x_e,
        x_r,
        v,
        y,
        sample_rate,
        reference_index,
    })
}

/// Full scene from a spec. Without an explicit source a speech-shaped
/// signal of `spec.duration` seconds is generated.
pub fn generate(
    spec: &SceneSpec,
    geom: &ArrayGeometry,
    sample_rate: u32,
    source: Option<Vec<f64>>,
    noise: Option<&[Vec<f64>]>,
) -> Result<Scene> {
    spec.validate()?;
    geom.validate()?;
    let source =
        source.unwrap_or_else(|| speech_shaped_source(spec.duration, sample_rate, spec.seed));
    if source.is_empty() {
        return Err(Error::EmptySignal);
    }
    let early = add_early_reflections(&source, spec, sample_rate);
    let x_e = synth_direct(&early, geom, spec.doa, sample_rate);
    let x_r = if spec.reverb_level > 0.0 {
        synth_late(&source, geom, spec, sample_rate)
    } else {
        vec![vec![0.0; source.len()]; geom.mic_count()]
    };
    mix(
        source,
        x_e,
        x_r,
        spec.snr_db,
        spec.seed,
        geom.reference_index,
        sample_rate,
        noise,
    )
}
