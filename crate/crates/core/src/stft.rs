//! Short-time Fourier analysis and weighted overlap-add synthesis.
//!
//! Analysis and synthesis share a periodic square-root Hann window, so at 50%
//! overlap the squared windows sum to one and an unmodified spectrogram is
//! reconstructed exactly. The input is zero-padded by `frame_len - hop`
//! samples at the start (and as needed at the end) so that every input sample
//! is covered by two frames.

use std::sync::Arc;

use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};

use crate::error::{Error, Result};
use crate::C64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StftConfig {
    pub frame_len: usize,
    pub hop: usize,
    pub fft_len: usize,
    pub sample_rate: u32,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            frame_len: 512,
            hop: 256,
            fft_len: 512,
            sample_rate: 16000,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frame_len == 0 || self.hop * 2 != self.frame_len {
            return Err(Error::InvalidConfig(format!(
                "hop ({}) must be half of frame_len ({})",
                self.hop, self.frame_len
            )));
        }
        if self.fft_len < self.frame_len {
            return Err(Error::InvalidConfig(format!(
                "fft_len ({}) must be at least frame_len ({})",
                self.fft_len, self.frame_len
            )));
        }
        if self.sample_rate == 0 {
            return Err(Error::InvalidConfig("sample_rate must be positive".into()));
        }
        Ok(())
    }

    /// Number of one-sided bins, `fft_len / 2 + 1`.
    pub fn bins(&self) -> usize {
        self.fft_len / 2 + 1
    }

    /// Center frequency of bin `k` in Hz.
    pub fn bin_freq(&self, k: usize) -> f64 {
        k as f64 * self.sample_rate as f64 / self.fft_len as f64
    }

    /// Leading zero padding applied before the first frame.
    pub fn lead_padding(&self) -> usize {
        self.frame_len - self.hop
    }

    /// Frames produced for a signal of `len` samples.
    pub fn frame_count(&self, len: usize) -> usize {
        (len + self.lead_padding()).div_ceil(self.hop)
    }

    /// Periodic square-root Hann window, `sin(pi n / N)`.
    pub fn window(&self) -> Vec<f64> {
        let n = self.frame_len as f64;
        (0..self.frame_len)
            .map(|i| (std::f64::consts::PI * i as f64 / n).sin())
            .collect()
    }
}

/// One-sided multichannel spectrogram stored channel-major:
/// `data[(channel * frames + frame) * bins + bin]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub frames: usize,
    pub bins: usize,
    pub channel_count: usize,
    /// Length of the time-domain signal this spectrogram was taken from.
    pub signal_len: usize,
    pub data: Vec<C64>,
}

impl Spectrogram {
    pub fn zeros(channel_count: usize, frames: usize, bins: usize, signal_len: usize) -> Self {
        Self {
            frames,
            bins,
            channel_count,
            signal_len,
            data: vec![C64::new(0.0, 0.0); channel_count * frames * bins],
        }
    }

    #[inline]
    fn index(&self, channel: usize, frame: usize, bin: usize) -> usize {
        (channel * self.frames + frame) * self.bins + bin
    }

    #[inline]
    pub fn get(&self, channel: usize, frame: usize, bin: usize) -> C64 {
        self.data[self.index(channel, frame, bin)]
    }

    #[inline]
    pub fn set(&mut self, channel: usize, frame: usize, bin: usize, value: C64) {
        let i = self.index(channel, frame, bin);
        self.data[i] = value;
    }

    pub fn channel_frame(&self, channel: usize, frame: usize) -> &[C64] {
        let start = self.index(channel, frame, 0);
        &self.data[start..start + self.bins]
    }

    pub fn channel_frame_mut(&mut self, channel: usize, frame: usize) -> &mut [C64] {
        let start = self.index(channel, frame, 0);
        &mut self.data[start..start + self.bins]
    }

    /// Frame `l` gathered bin-major: `out[bin * channels + channel]`.
    pub fn frame_bin_major(&self, frame: usize, out: &mut Vec<C64>) {
        out.clear();
        out.resize(self.bins * self.channel_count, C64::new(0.0, 0.0));
        for ch in 0..self.channel_count {
            for (k, v) in self.channel_frame(ch, frame).iter().enumerate() {
                out[k * self.channel_count + ch] = *v;
            }
        }
    }

    /// Multichannel vector of one time-frequency point.
    pub fn vector(&self, frame: usize, bin: usize) -> Vec<C64> {
        (0..self.channel_count)
            .map(|ch| self.get(ch, frame, bin))
            .collect()
    }

    pub fn scale(&mut self, factor: f64) {
        for v in &mut self.data {
            *v *= factor;
        }
    }
}

/// Reusable analysis/synthesis engine with cached FFT plans.
pub struct Stft {
    cfg: StftConfig,
    window: Vec<f64>,
    forward: Arc<dyn RealToComplex<f64>>,
    inverse: Arc<dyn ComplexToReal<f64>>,
}

impl std::fmt::Debug for Stft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Stft").field("cfg", &self.cfg).finish()
    }
}

impl Stft {
    pub fn new(cfg: StftConfig) -> Result<Self> {
        cfg.validate()?;
        let mut planner = RealFftPlanner::<f64>::new();
        Ok(Self {
            window: cfg.window(),
            forward: planner.plan_fft_forward(cfg.fft_len),
            inverse: planner.plan_fft_inverse(cfg.fft_len),
            cfg,
        })
    }

    pub fn config(&self) -> &StftConfig {
        &self.cfg
    }

    pub fn analyze(&self, signal: &[Vec<f64>]) -> Result<Spectrogram> {
        let len = check_channels(signal)?;
        if len < self.cfg.frame_len {
            return Err(Error::SignalTooShort {
                len,
                frame_len: self.cfg.frame_len,
            });
        }
        let cfg = &self.cfg;
        let frames = cfg.frame_count(len);
        let pad = cfg.lead_padding() as isize;
        let mut spec = Spectrogram::zeros(signal.len(), frames, cfg.bins(), len);

        let mut buf = self.forward.make_input_vec();
        let mut out = self.forward.make_output_vec();
        let mut scratch = self.forward.make_scratch_vec();
        for (ch, x) in signal.iter().enumerate() {
            for l in 0..frames {
                buf.iter_mut().for_each(|v| *v = 0.0);
                let start = (l * cfg.hop) as isize - pad;
                for (n, w) in self.window.iter().enumerate() {
                    let idx = start + n as isize;
                    if idx >= 0 && (idx as usize) < len {
                        buf[n] = x[idx as usize] * w;
                    }
                }
                self.forward
                    .process_with_scratch(&mut buf, &mut out, &mut scratch)
                    .expect("fft buffer sizes are fixed by the plan");
                spec.channel_frame_mut(ch, l).copy_from_slice(&out);
            }
        }
        Ok(spec)
    }

    pub fn synthesize(&self, spec: &Spectrogram) -> Result<Vec<Vec<f64>>> {
        let cfg = &self.cfg;
        if spec.bins != cfg.bins() {
            return Err(Error::DimensionMismatch {
                expected: cfg.bins(),
                got: spec.bins,
            });
        }
        if spec.frames != cfg.frame_count(spec.signal_len) {
            return Err(Error::DimensionMismatch {
                expected: cfg.frame_count(spec.signal_len),
                got: spec.frames,
            });
        }
        let len = spec.signal_len;
        let pad = cfg.lead_padding();
        let norm = 1.0 / cfg.fft_len as f64;
        let mut input = self.inverse.make_input_vec();
        let mut frame = self.inverse.make_output_vec();
        let mut scratch = self.inverse.make_scratch_vec();
        let mut output = Vec::with_capacity(spec.channel_count);
        for ch in 0..spec.channel_count {
            let mut acc = vec![0.0; spec.frames * cfg.hop + cfg.frame_len];
            for l in 0..spec.frames {
                input.copy_from_slice(spec.channel_frame(ch, l));
                // DC and Nyquist are real for a real signal.
                input[0].im = 0.0;
                let last = input.len() - 1;
                input[last].im = 0.0;
                self.inverse
                    .process_with_scratch(&mut input, &mut frame, &mut scratch)
                    .expect("fft buffer sizes are fixed by the plan");
                let start = l * cfg.hop;
                for (n, w) in self.window.iter().enumerate() {
                    acc[start + n] += frame[n] * w * norm;
                }
            }
            output.push(acc[pad..pad + len].to_vec());
        }
        Ok(output)
    }
}

fn check_channels(signal: &[Vec<f64>]) -> Result<usize> {
    let first = signal.first().ok_or(Error::EmptySignal)?;
    let len = first.len();
    if len == 0 {
        return Err(Error::EmptySignal);
    }
    for (channel, x) in signal.iter().enumerate() {
        if x.len() != len {
            return Err(Error::ChannelLengthMismatch {
                channel,
                expected: len,
                got: x.len(),
            });
        }
    }
    Ok(len)
}

pub fn analyze(signal: &[Vec<f64>], cfg: &StftConfig) -> Result<Spectrogram> {
    Stft::new(*cfg)?.analyze(signal)
}

pub fn synthesize(spec: &Spectrogram, cfg: &StftConfig) -> Result<Vec<Vec<f64>>> {
    Stft::new(*cfg)?.synthesize(spec)
}
