use std::path::Path;

use anyhow::{bail, Context, Result};
use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

/// Channel-major samples plus the file's sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Audio {
    pub channels: Vec<Vec<f64>>,
    pub sample_rate: u32,
}

/// Reads 16-bit PCM or 32-bit float. PCM is scaled by 1/32768.
pub fn read(path: &Path) -> Result<Audio> {
    let reader =
        WavReader::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let spec = reader.spec();
    let count = usize::from(spec.channels);
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| f64::from(v) / 32768.0))
            .collect::<std::result::Result<_, _>>(),
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>(),
        (format, bits) => bail!(
            "{}: unsupported sample format {format:?} at {bits} bits (need 16-bit PCM or 32-bit float)",
            path.display()
        ),
    }
    .with_context(|| format!("cannot decode {}", path.display()))?;
    let mut channels = vec![Vec::with_capacity(interleaved.len() / count.max(1)); count];
    for frame in interleaved.chunks_exact(count) {
        for (ch, &s) in channels.iter_mut().zip(frame) {
            ch.push(s);
        }
    }
    Ok(Audio {
        channels,
        sample_rate: spec.sample_rate,
    })
}

/// Writes interleaved 32-bit float.
pub fn write(path: &Path, channels: &[Vec<f64>], sample_rate: u32) -> Result<()> {
    let count = channels.len();
    if count == 0 || count > usize::from(u16::MAX) {
        bail!("cannot write {count} channels to {}", path.display());
    }
    let len = channels[0].len();
    if channels.iter().any(|c| c.len() != len) {
        bail!("channels of unequal length for {}", path.display());
    }
    let spec = WavSpec {
        channels: count as u16,
        sample_rate,
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let mut writer = WavWriter::create(path, spec)
        .with_context(|| format!("cannot create {}", path.display()))?;
    for i in 0..len {
        for ch in channels {
            writer.write_sample(ch[i] as f32)?;
        }
    }
    writer
        .finalize()
        .with_context(|| format!("cannot finish {}", path.display()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_round_trip_is_exact_for_f32_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let chans = vec![vec![0.25, -0.5, 0.125], vec![1.5, 0.0, -2.0]];
        write(&path, &chans, 16000).unwrap();
        let back = read(&path).unwrap();
        assert_eq!(back.channels, chans);
        assert_eq!(back.sample_rate, 16000);
    }

    #[test]
    fn pcm16_is_scaled() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.wav");
        let spec = WavSpec {
            channels: 1,
            sample_rate: 8000,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        };
        let mut w = WavWriter::create(&path, spec).unwrap();
        for s in [16384i16, -32768, 0] {
            w.write_sample(s).unwrap();
        }
        w.finalize().unwrap();
        let back = read(&path).unwrap();
        assert_eq!(back.channels, vec![vec![0.5, -1.0, 0.0]]);
    }

    #[test]
    fn other_formats_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p24.wav");
        let spec = WavSpec {
            channels: 1,
            sample_rate: 8000,
            bits_per_sample: 24,
            sample_format: SampleFormat::Int,
        };
        let mut w = WavWriter::create(&path, spec).unwrap();
        w.write_sample(1i32).unwrap();
        w.finalize().unwrap();
        assert!(read(&path).is_err());
    }
}
