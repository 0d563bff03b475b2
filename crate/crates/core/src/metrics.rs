//! Shadow filtering and objective measures.
//!
//! A recorded [`ShadowTrace`] is replayed with frozen weights on each scene
//! component, so the enhanced output splits exactly into the part that came
//! from the early target and the part that came from late reverberation and
//! noise. Segmental SNR and log-spectral distance stand in for perceptual
//! scores.

use std::fmt::Write as _;

use realfft::RealFftPlanner;

use crate::error::{Error, Result};
use crate::scene::Scene;
use crate::stft::{Spectrogram, Stft};
use crate::trace::ShadowTrace;
use crate::C64;

/// Segment length of the segmental measures, in seconds.
pub const SEGMENT_SECONDS: f64 = 0.03;
/// Segments quieter than this, relative to the loudest, are skipped.
pub const SILENCE_DB: f64 = -40.0;
pub const SEGSNR_FLOOR_DB: f64 = -10.0;
pub const SEGSNR_CEILING_DB: f64 = 35.0;
/// Spectral floor of the log-spectral distance relative to the peak bin.
pub const LSD_FLOOR_RATIO: f64 = 1e-10;
/// Tolerance of the superposition check when the output is exact.
pub const SUPERPOSITION_TOLERANCE: f64 = 1e-9;
/// Reporting bands in Hz; the last one includes its upper edge.
pub const BANDS: [(f64, f64); 4] = [
    (0.0, 1000.0),
    (1000.0, 2000.0),
    (2000.0, 4000.0),
    (4000.0, 8000.0),
];

/// Replay the trace on an M-channel component without any adaptation:
/// `s_c = w_b^H y_c - w^H t_c` per frame and bin.
pub fn shadow_apply(trace: &ShadowTrace, component: &[Vec<f64>]) -> Result<Vec<f64>> {
    if component.len() != trace.channels {
        return Err(Error::TraceMismatch(format!(
            "component has {} channels, trace has {}",
            component.len(),
            trace.channels
        )));
    }
    if let Some(ch) = component.iter().position(|c| c.len() != trace.signal_len) {
        return Err(Error::TraceMismatch(format!(
            "channel {ch} has {} samples, trace covers {}",
            component[ch].len(),
            trace.signal_len
        )));
    }
    let stft = Stft::new(trace.stft)?;
    let spec = stft.analyze(component)?;
    if spec.frames != trace.frames || spec.bins != trace.bins {
        return Err(Error::TraceMismatch("frame grid differs from trace".into()));
    }
    let m = trace.channels;
    let mut out = Spectrogram::zeros(1, spec.frames, spec.bins, trace.signal_len);
    for frame in 0..spec.frames {
        for bin in 0..spec.bins {
            let wb = trace.beam(frame, bin);
            let mut s = C64::new(0.0, 0.0);
            for (ch, w) in wb.iter().enumerate() {
                s += w.conj() * spec.get(ch, frame, bin);
            }
            if trace.prediction_dim > 0 {
                let w = trace.prediction(frame, bin);
                for lag in trace.delay..trace.order.min(frame + 1) {
                    let taps = &w[(lag - trace.delay) * m..(lag - trace.delay + 1) * m];
                    for (ch, wt) in taps.iter().enumerate() {
                        s -= wt.conj() * spec.get(ch, frame - lag, bin);
                    }
                }
            }
            out.set(0, frame, bin, s);
        }
    }
    Ok(stft.synthesize(&out)?.remove(0))
}

/// Samples excluded from the start of every measure: `max(L hop, fs / 2)`.
pub fn warmup_samples(trace: &ShadowTrace) -> usize {
    let half_second = (trace.stft.sample_rate as usize).div_ceil(2);
    (trace.order * trace.stft.hop).max(half_second)
}

fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

fn check_lengths(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(())
}

fn to_db(ratio: f64) -> f64 {
    if ratio.is_nan() {
        return f64::NAN;
    }
    10.0 * ratio.log10()
}

/// `10 log10(sum target^2 / sum interference^2)`; `+inf` for silent
/// interference.
pub fn sir(target: &[f64], interference: &[f64]) -> Result<f64> {
    check_lengths(target, interference)?;
    let pi = energy(interference);
    if pi == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(to_db(energy(target) / pi))
}

/// Start offsets of the 50%-overlap analysis segments.
fn segment_starts(len: usize, seg: usize) -> impl Iterator<Item = usize> {
    let hop = (seg / 2).max(1);
    (0..)
        .map(move |i| i * hop)
        .take_while(move |s| s + seg <= len)
}

fn segment_len(sample_rate: u32) -> usize {
    ((SEGMENT_SECONDS * sample_rate as f64).round() as usize).max(2)
}

/// Segments of `reference` loud enough to be scored.
fn active_segments(reference: &[f64], seg: usize) -> Result<Vec<usize>> {
    let starts: Vec<usize> = segment_starts(reference.len(), seg).collect();
    let energies: Vec<f64> = starts
        .iter()
        .map(|&s| energy(&reference[s..s + seg]))
        .collect();
    let peak = energies.iter().cloned().fold(0.0, f64::max);
    if !(peak > 0.0) {
        return Err(Error::SilentReference);
    }
    let threshold = peak * 10f64.powf(SILENCE_DB / 10.0);
    Ok(starts
        .into_iter()
        .zip(energies)
        .filter(|&(_, e)| e >= threshold)
        .map(|(s, _)| s)
        .collect())
}

/// Mean per-segment SNR over active 30 ms segments, each clamped.
pub fn segmental_snr(reference: &[f64], estimate: &[f64], sample_rate: u32) -> Result<f64> {
    check_lengths(reference, estimate)?;
    let seg = segment_len(sample_rate);
    let active = active_segments(reference, seg)?;
    let total: f64 = active
        .iter()
        .map(|&s| {
            let r = &reference[s..s + seg];
            let e = &estimate[s..s + seg];
            let err: f64 = r.iter().zip(e).map(|(a, b)| (a - b) * (a - b)).sum();
            let snr = if err == 0.0 {
                SEGSNR_CEILING_DB
            } else {
                to_db(energy(r) / err)
            };
            snr.clamp(SEGSNR_FLOOR_DB, SEGSNR_CEILING_DB)
        })
        .sum();
    Ok(total / active.len() as f64)
}

/// Mean over active segments of the RMS difference of Hann-windowed log
/// power spectra.
pub fn log_spectral_distance(reference: &[f64], estimate: &[f64], sample_rate: u32) -> Result<f64> {
    check_lengths(reference, estimate)?;
    let seg = segment_len(sample_rate);
    let active = active_segments(reference, seg)?;
    let n = seg.next_power_of_two();
    let fft = RealFftPlanner::<f64>::new().plan_fft_forward(n);
    let window: Vec<f64> = (0..seg)
        .map(|i| (std::f64::consts::PI * i as f64 / seg as f64).sin().powi(2))
        .collect();
    let mut buf = fft.make_input_vec();
    let mut spec = fft.make_output_vec();
    let mut power = |x: &[f64]| -> Vec<f64> {
        buf.iter_mut().for_each(|v| *v = 0.0);
        for (b, (v, w)) in buf.iter_mut().zip(x.iter().zip(&window)) {
            *b = v * w;
        }
        fft.process(&mut buf, &mut spec)
            .expect("buffer sizes come from the plan");
        spec.iter().map(|z| z.norm_sqr()).collect()
    };
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = active
        .iter()
        .map(|&s| (power(&reference[s..s + seg]), power(&estimate[s..s + seg])))
        .collect();
    let peak = pairs
        .iter()
        .flat_map(|(r, _)| r.iter())
        .cloned()
        .fold(0.0, f64::max);
    let floor = (LSD_FLOOR_RATIO * peak).max(f64::MIN_POSITIVE);
    let total: f64 = pairs
        .iter()
        .map(|(r, e)| {
            let mean_sq = r
                .iter()
                .zip(e)
                .map(|(a, b)| {
                    let d = 10.0 * ((a + floor) / (b + floor)).log10();
                    d * d
                })
                .sum::<f64>()
                / r.len() as f64;
            mean_sq.sqrt()
        })
        .sum();
    Ok(total / pairs.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandSir {
    pub low_hz: f64,
    pub high_hz: f64,
    pub sir_in: f64,
    pub sir_out: f64,
    pub delta_sir: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub sir_in: f64,
    pub sir_out: f64,
    pub delta_sir: f64,
    pub segsnr: f64,
    pub lsd: f64,
    /// Relative L2 gap between the summed shadows and the enhanced output.
    pub superposition_error: f64,
    pub warmup_samples: usize,
    pub bands: Vec<BandSir>,
}

/// Power per reporting band over frames that start after the warm-up.
fn band_powers(signal: &[f64], stft: &Stft, warmup: usize) -> Result<[f64; 4]> {
    let cfg = *stft.config();
    let spec = stft.analyze(&[signal.to_vec()])?;
    let mut out = [0.0; 4];
    for frame in 0..spec.frames {
        if (frame * cfg.hop) < warmup + cfg.lead_padding() {
            continue;
        }
        for (bin, z) in spec.channel_frame(0, frame).iter().enumerate() {
            let f = cfg.bin_freq(bin);
            let last = BANDS.len() - 1;
            if let Some(b) = BANDS
                .iter()
                .enumerate()
                .position(|(i, &(lo, hi))| f >= lo && (f < hi || (i == last && f <= hi)))
            {
                out[b] += z.norm_sqr();
            }
        }
    }
    Ok(out)
}

fn band_ratio(target: f64, interference: f64) -> f64 {
    if interference == 0.0 {
        f64::INFINITY
    } else {
        to_db(target / interference)
    }
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

/// Shadow-filter the components, check that they add up to `enhanced`
/// within `tolerance` (relative L2), and score the result. The reference
/// for segSNR and LSD is the early component at the reference microphone.
pub fn evaluate(
    trace: &ShadowTrace,
    x_e: &[Vec<f64>],
    x_r: &[Vec<f64>],
    v: &[Vec<f64>],
    enhanced: &[f64],
    tolerance: f64,
) -> Result<MetricsReport> {
    if enhanced.len() != trace.signal_len {
        return Err(Error::TraceMismatch(format!(
            "enhanced signal has {} samples, trace covers {}",
            enhanced.len(),
            trace.signal_len
        )));
    }
    let target_out = shadow_apply(trace, x_e)?;
    let reverb_out = shadow_apply(trace, x_r)?;
    let noise_out = shadow_apply(trace, v)?;
    let interference_out = add(&reverb_out, &noise_out);

    let gap: f64 = target_out
        .iter()
        .zip(&interference_out)
        .zip(enhanced)
        .map(|((t, i), e)| (t + i - e).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale = energy(enhanced).sqrt();
    let superposition_error = if scale > 0.0 { gap / scale } else { gap };
    if !(superposition_error <= tolerance) {
        return Err(Error::Superposition {
            relative_error: superposition_error,
        });
    }

    let r = trace.reference_index;
    let interference_in = add(&x_r[r], &v[r]);
    let warmup = warmup_samples(trace).min(trace.signal_len);
    let tail = |x: &[f64]| x[warmup..].to_vec();

    let sir_in = sir(&tail(&x_e[r]), &tail(&interference_in))?;
    let sir_out = sir(&tail(&target_out), &tail(&interference_out))?;
    let fs = trace.stft.sample_rate;
    let segsnr = segmental_snr(&tail(&x_e[r]), &tail(enhanced), fs)?;
    let lsd = log_spectral_distance(&tail(&x_e[r]), &tail(enhanced), fs)?;

    let stft = Stft::new(trace.stft)?;
    let t_in = band_powers(&x_e[r], &stft, warmup)?;
    let i_in = band_powers(&interference_in, &stft, warmup)?;
    let t_out = band_powers(&target_out, &stft, warmup)?;
    let i_out = band_powers(&interference_out, &stft, warmup)?;
    let bands = BANDS
        .iter()
        .enumerate()
        .map(|(b, &(low_hz, high_hz))| {
            let sir_in = band_ratio(t_in[b], i_in[b]);
            let sir_out = band_ratio(t_out[b], i_out[b]);
            BandSir {
                low_hz,
                high_hz,
                sir_in,
                sir_out,
                delta_sir: sir_out - sir_in,
            }
        })
        .collect();

    Ok(MetricsReport {
        sir_in,
        sir_out,
        delta_sir: sir_out - sir_in,
        segsnr,
        lsd,
        superposition_error,
        warmup_samples: warmup,
        bands,
    })
}

/// [`evaluate`] on the components of a generated scene.
pub fn evaluate_scene(
    trace: &ShadowTrace,
    scene: &Scene,
    enhanced: &[f64],
    tolerance: f64,
) -> Result<MetricsReport> {
    if scene.reference_index != trace.reference_index {
        return Err(Error::TraceMismatch("reference microphone differs".into()));
    }
    evaluate(trace, &scene.x_e, &scene.x_r, &scene.v, enhanced, tolerance)
}

fn band_key(lo: f64, hi: f64, what: &str) -> String {
    format!("band_{}_{}_{what}", lo as u64, hi as u64)
}

impl MetricsReport {
    /// Two-column `metric,value` table. Numbers use the shortest
    /// representation that parses back to the same value.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,value\n");
        let mut row = |k: &str, v: String| {
            let _ = writeln!(s, "{k},{v}");
        };
        row("sir_in", self.sir_in.to_string());
        row("sir_out", self.sir_out.to_string());
        row("delta_sir", self.delta_sir.to_string());
        row("segsnr", self.segsnr.to_string());
        row("lsd", self.lsd.to_string());
        row("superposition_error", self.superposition_error.to_string());
        row("warmup_samples", self.warmup_samples.to_string());
        for b in &self.bands {
            row(
                &band_key(b.low_hz, b.high_hz, "sir_in"),
                b.sir_in.to_string(),
            );
            row(
                &band_key(b.low_hz, b.high_hz, "sir_out"),
                b.sir_out.to_string(),
            );
            row(
                &band_key(b.low_hz, b.high_hz, "delta_sir"),
                b.delta_sir.to_string(),
            );
        }
        row(
            "perceptual_proxy",
            "segsnr and lsd replace PESQ and STOI".into(),
        );
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut values = std::collections::HashMap::new();
        for (i, line) in text.lines().enumerate() {
            if i == 0 || line.trim().is_empty() {
                continue;
            }
            let (k, v) = line.split_once(',').ok_or_else(|| Error::Parse {
                line: i + 1,
                message: "expected 'metric,value'".into(),
            })?;
            values.insert(k.trim().to_string(), (i + 1, v.trim().to_string()));
        }
        let get = |k: &str| -> Result<f64> {
            let (line, v) = values.get(k).ok_or_else(|| Error::Parse {
                line: 0,
                message: format!("missing metric '{k}'"),
            })?;
            v.parse().map_err(|_| Error::Parse {
                line: *line,
                message: format!("'{v}' is not a number"),
            })
        };
        let bands = BANDS
            .iter()
            .map(|&(lo, hi)| {
                Ok(BandSir {
                    low_hz: lo,
                    high_hz: hi,
                    sir_in: get(&band_key(lo, hi, "sir_in"))?,
                    sir_out: get(&band_key(lo, hi, "sir_out"))?,
                    delta_sir: get(&band_key(lo, hi, "delta_sir"))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            sir_in: get("sir_in")?,
            sir_out: get("sir_out")?,
            delta_sir: get("delta_sir")?,
            segsnr: get("segsnr")?,
            lsd: get("lsd")?,
            superposition_error: get("superposition_error")?,
            warmup_samples: get("warmup_samples")? as usize,
            bands,
        })
    }
}
