//! Record of the per-frame, per-bin linear weights a pipeline run applied.
//!
//! For frozen weights the output `s = w_b^H y - w^H t` is linear in the
//! observations, so replaying a trace on each scene component separately
//! decomposes the enhanced signal into target and interference parts.

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::stft::StftConfig;
use crate::C64;

const MAGIC: &[u8; 8] = b"DRVTRC01";

#[derive(Debug, Clone, PartialEq)]
pub struct ShadowTrace {
    pub stft: StftConfig,
    pub channels: usize,
    /// Prediction delay `D` in frames.
    pub delay: usize,
    /// Prediction order `L` in frames.
    pub order: usize,
    pub reference_index: usize,
    pub signal_len: usize,
    pub frames: usize,
    pub bins: usize,
    /// Stacked prediction dimension; zero when the prediction path is off.
    pub prediction_dim: usize,
    /// `[frame][bin][channel]`.
    pub beam_weights: Vec<C64>,
    /// `[frame][bin][tap]`.
    pub prediction_weights: Vec<C64>,
}

impl ShadowTrace {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        stft: StftConfig,
        channels: usize,
        delay: usize,
        order: usize,
        reference_index: usize,
        signal_len: usize,
        frames: usize,
        prediction_enabled: bool,
    ) -> Self {
        let bins = stft.bins();
        let prediction_dim = if prediction_enabled {
            channels * (order - delay)
        } else {
            0
        };
        Self {
            stft,
            channels,
            delay,
            order,
            reference_index,
            signal_len,
            frames,
            bins,
            prediction_dim,
            beam_weights: vec![C64::new(0.0, 0.0); frames * bins * channels],
            prediction_weights: vec![C64::new(0.0, 0.0); frames * bins * prediction_dim],
        }
    }

    pub fn beam(&self, frame: usize, bin: usize) -> &[C64] {
        let i = (frame * self.bins + bin) * self.channels;
        &self.beam_weights[i..i + self.channels]
    }

    pub fn prediction(&self, frame: usize, bin: usize) -> &[C64] {
        let i = (frame * self.bins + bin) * self.prediction_dim;
        &self.prediction_weights[i..i + self.prediction_dim]
    }

    /// Mutable views of both weight sets for one frame, split per bin.
    pub fn frame_mut(&mut self, frame: usize) -> (&mut [C64], &mut [C64]) {
        let b = frame * self.bins * self.channels;
        let p = frame * self.bins * self.prediction_dim;
        (
            &mut self.beam_weights[b..b + self.bins * self.channels],
            &mut self.prediction_weights[p..p + self.bins * self.prediction_dim],
        )
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        for v in [
            self.stft.frame_len,
            self.stft.hop,
            self.stft.fft_len,
            self.stft.sample_rate as usize,
            self.channels,
            self.delay,
            self.order,
            self.reference_index,
            self.signal_len,
            self.frames,
            self.bins,
            self.prediction_dim,
        ] {
            w.write_u64::<LittleEndian>(v as u64)?;
        }
        for z in self.beam_weights.iter().chain(&self.prediction_weights) {
            w.write_f64::<LittleEndian>(z.re)?;
            w.write_f64::<LittleEndian>(z.im)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::TraceMismatch("not a shadow trace file".into()));
        }
        let mut h = [0usize; 12];
        for v in &mut h {
            *v = r.read_u64::<LittleEndian>()? as usize;
        }
        let [frame_len, hop, fft_len, sample_rate, channels, delay, order, reference_index, signal_len, frames, bins, prediction_dim] =
            h;
        let stft = StftConfig {
            frame_len,
            hop,
            fft_len,
            sample_rate: sample_rate as u32,
        };
        stft.validate()
            .map_err(|e| Error::TraceMismatch(format!("bad STFT header: {e}")))?;
        if bins != stft.bins()
            || frames != stft.frame_count(signal_len)
            || delay == 0
            || delay >= order
            || reference_index >= channels
            || (prediction_dim != 0 && prediction_dim != channels * (order - delay))
        {
            return Err(Error::TraceMismatch("inconsistent trace header".into()));
        }
        let mut read_block = |count: usize| -> Result<Vec<C64>> {
            let mut out = Vec::with_capacity(count);
            for _ in 0..count {
                let re = r.read_f64::<LittleEndian>()?;
                let im = r.read_f64::<LittleEndian>()?;
                out.push(C64::new(re, im));
            }
            Ok(out)
        };
        let beam_weights = read_block(frames * bins * channels)?;
        let prediction_weights = read_block(frames * bins * prediction_dim)?;
        Ok(Self {
            stft,
            channels,
            delay,
            order,
            reference_index,
            signal_len,
            frames,
            bins,
            prediction_dim,
            beam_weights,
            prediction_weights,
        })
    }
}
