use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write as _};
use std::path::Path;

use anyhow::{anyhow, bail, Context};
use derev_core::config::{pipeline_snapshot, scene_snapshot, ConfigFile};
use derev_core::metrics::{self, MetricsReport, SUPERPOSITION_TOLERANCE};
use derev_core::pipeline::{self, DiagnosticsLog};
use derev_core::stft::Stft;
use derev_core::{scene, Mode, PipelineConfig, SceneSpec, ShadowTrace};

use crate::manifest::{manifest_path_for, RunManifest};
use crate::wav;
use crate::Failure;

type CmdResult = Result<(), Failure>;

pub const SEED_ENV: &str = "DEREV_SEED";

/// Shadows of the stored components are compared with an enhanced WAV that
/// went through two rounds of f32 quantization (the input mixture and the
/// output). That alone leaves a relative gap near 1e-7, so the file check
/// is looser than the in-memory one. A WAV enhanced from a different input
/// or with a different trace misses by orders of magnitude more.
pub const WAV_SUPERPOSITION_TOLERANCE: f64 = 1e-5;

/// Default dynamic range of the exported spectrogram.
pub const SPECTROGRAM_RANGE_DB: f64 = 80.0;

const SCENE_FILES: [&str; 5] = ["y.wav", "x_e.wav", "x_r.wav", "v.wav", "source.wav"];
const SCENE_CONFIG: &str = "scene.cfg";

fn load_config(path: Option<&Path>, m: &mut RunManifest) -> anyhow::Result<ConfigFile> {
    match path {
        None => Ok(ConfigFile::default()),
        Some(p) => {
            let file = ConfigFile::load(p).with_context(|| format!("config {}", p.display()))?;
            m.add_input(p)?;
            Ok(file)
        }
    }
}

/// Scene spec with `DEREV_SEED` applied; records the seed in the manifest.
fn scene_spec_with_seed(file: &ConfigFile, m: &mut RunManifest) -> anyhow::Result<SceneSpec> {
    let mut spec = file.scene_spec()?;
    match std::env::var(SEED_ENV) {
        Ok(raw) => {
            spec.seed = raw
                .trim()
                .parse()
                .map_err(|_| anyhow!("{SEED_ENV}='{raw}' is not an unsigned integer"))?;
            m.seed_source = Some(SEED_ENV.into());
        }
        Err(_) => m.seed_source = Some("config".into()),
    }
    m.seed = Some(spec.seed);
    Ok(spec)
}

/// One config text holding both the pipeline and the scene, steered at the
/// scene's source. It parses back to the same values.
fn combined_snapshot(cfg: &PipelineConfig, spec: &SceneSpec) -> String {
    let steered = PipelineConfig {
        doa: spec.doa,
        ..cfg.clone()
    };
    let mut text = pipeline_snapshot(&steered);
    for line in scene_snapshot(spec).lines() {
        if !line.starts_with("doa") {
            text.push_str(line);
            text.push('\n');
        }
    }
    text
}

fn read_mono(path: &Path, sample_rate: u32, m: &mut RunManifest) -> anyhow::Result<Vec<f64>> {
    let audio = wav::read(path)?;
    if audio.channels.len() != 1 {
        bail!(
            "{} has {} channels, expected mono",
            path.display(),
            audio.channels.len()
        );
    }
    if audio.sample_rate != sample_rate {
        bail!(
            "{} is at {} Hz, expected {sample_rate} Hz",
            path.display(),
            audio.sample_rate
        );
    }
    m.add_input(path)?;
    Ok(audio.channels.into_iter().next().unwrap_or_default())
}

pub fn simulate(
    config: Option<&Path>,
    out: &Path,
    source: Option<&Path>,
    noise: Option<&Path>,
) -> CmdResult {
    let mut m = RunManifest::new("simulate");
    let file = load_config(config, &mut m)?;
    let cfg = file.pipeline_config()?;
    let spec = scene_spec_with_seed(&file, &mut m)?;
    spec.check_prediction_boundary(cfg.delay, &cfg.stft)?;
    let fs = cfg.stft.sample_rate;

    let source = source.map(|p| read_mono(p, fs, &mut m)).transpose()?;
    let noise = match noise {
        None => None,
        Some(p) => {
            let audio = wav::read(p)?;
            if audio.sample_rate != fs {
                return Err(anyhow!(
                    "{} is at {} Hz, expected {fs} Hz",
                    p.display(),
                    audio.sample_rate
                )
                .into());
            }
            m.add_input(p)?;
            Some(audio.channels)
        }
    };

    let scene = m.time("generate", || {
        scene::generate(&spec, &cfg.geometry, fs, source, noise.as_deref())
    })?;

    std::fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    let source_channel = [scene.source.clone()];
    let signals: [&[Vec<f64>]; 5] = [&scene.y, &scene.x_e, &scene.x_r, &scene.v, &source_channel];
    m.time("write", || -> anyhow::Result<()> {
        for (name, sig) in SCENE_FILES.iter().zip(signals) {
            wav::write(&out.join(name), sig, fs)?;
        }
        Ok(())
    })?;
    m.config = combined_snapshot(&cfg, &spec);
    let cfg_path = out.join(SCENE_CONFIG);
    std::fs::write(&cfg_path, &m.config)
        .with_context(|| format!("cannot write {}", cfg_path.display()))?;
    for name in SCENE_FILES.iter().chain([&SCENE_CONFIG]) {
        m.add_output(&out.join(name))?;
    }
    m.detail("channels", scene.channels());
    m.detail("samples", scene.len());
    m.detail("measured_snr_db", finite_or_null(scene.measured_snr_db()));
    m.write(&out.join("manifest.json"))?;
    Ok(())
}

fn finite_or_null(x: f64) -> serde_json::Value {
    serde_json::Number::from_f64(x).map_or(serde_json::Value::Null, serde_json::Value::Number)
}

pub struct EnhanceArgs<'a> {
    pub config: Option<&'a Path>,
    pub input: &'a Path,
    pub output: &'a Path,
    pub mode: Option<Mode>,
    pub trace: Option<&'a Path>,
    pub diagnostics: Option<&'a Path>,
}

pub fn enhance(args: &EnhanceArgs) -> CmdResult {
    let mut m = RunManifest::new("enhance");
    let file = load_config(args.config, &mut m)?;
    let mut cfg = file.pipeline_config()?;
    if let Some(mode) = args.mode {
        cfg.mode = mode;
    }
    let audio = m.time("read", || wav::read(args.input))?;
    m.add_input(args.input)?;

    let run = m.time("enhance", || {
        pipeline::run(&cfg, &audio.channels, audio.sample_rate)
    })?;

    m.time("write", || -> anyhow::Result<()> {
        wav::write(
            args.output,
            std::slice::from_ref(&run.enhanced),
            audio.sample_rate,
        )?;
        if let (Some(path), Some(trace)) = (args.trace, &run.trace) {
            let f =
                File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
            trace.write_to(BufWriter::new(f))?;
        }
        if let Some(path) = args.diagnostics {
            std::fs::write(path, diagnostics_csv(&run.diagnostics))
                .with_context(|| format!("cannot write {}", path.display()))?;
        }
        Ok(())
    })?;
    m.add_output(args.output)?;
    for path in [args.trace, args.diagnostics].into_iter().flatten() {
        m.add_output(path)?;
    }

    m.config = pipeline_snapshot(&cfg);
    let c = &run.diagnostics.counters;
    m.detail("mode", cfg.mode.as_str());
    m.detail("mvdr_fallbacks", c.mvdr_fallbacks);
    m.detail("psd_singular", c.psd_singular);
    m.detail("kalman_skipped", c.kalman_skipped);
    m.detail("nonfinite_outputs", c.nonfinite_outputs);
    m.write(&manifest_path_for(args.output))?;
    Ok(())
}

fn diagnostics_csv(log: &DiagnosticsLog) -> String {
    let mut s =
        String::from("frame,bin,phi_r,phi_v,phi_target,phi_xc,residual_power,gain_norm,flags\n");
    for (frame, bins) in &log.frames {
        for (bin, d) in bins.iter().enumerate() {
            let _ = writeln!(
                s,
                "{frame},{bin},{},{},{},{},{},{},{}",
                d.phi_r, d.phi_v, d.phi_target, d.phi_xc, d.residual_power, d.gain_norm, d.flags
            );
        }
    }
    s
}

pub fn evaluate(
    scene_dir: &Path,
    trace_path: &Path,
    enhanced: &Path,
    output: Option<&Path>,
) -> CmdResult {
    let mut m = RunManifest::new("evaluate");
    let trace = {
        let f = File::open(trace_path)
            .with_context(|| format!("cannot open {}", trace_path.display()))?;
        ShadowTrace::read_from(BufReader::new(f))
            .with_context(|| format!("trace {}", trace_path.display()))?
    };
    m.add_input(trace_path)?;
    let mut component = |name: &str| -> anyhow::Result<Vec<Vec<f64>>> {
        let path = scene_dir.join(name);
        let audio = wav::read(&path)?;
        if audio.sample_rate != trace.stft.sample_rate {
            bail!(
                "{} is at {} Hz, trace at {} Hz",
                path.display(),
                audio.sample_rate,
                trace.stft.sample_rate
            );
        }
        m.add_input(&path)?;
        Ok(audio.channels)
    };
    let x_e = component("x_e.wav")?;
    let x_r = component("x_r.wav")?;
    let v = component("v.wav")?;
    let enhanced_audio = wav::read(enhanced)?;
    if enhanced_audio.channels.len() != 1 {
        return Err(anyhow!("{} must be mono", enhanced.display()).into());
    }
    m.add_input(enhanced)?;

    let report = m.time("evaluate", || {
        metrics::evaluate(
            &trace,
            &x_e,
            &x_r,
            &v,
            &enhanced_audio.channels[0],
            WAV_SUPERPOSITION_TOLERANCE,
        )
    })?;
    let text = report.to_csv();
    match output {
        None => print!("{text}"),
        Some(path) => {
            std::fs::write(path, &text)
                .with_context(|| format!("cannot write {}", path.display()))?;
            m.add_output(path)?;
            m.detail("superposition_tolerance", WAV_SUPERPOSITION_TOLERANCE);
            m.write(&manifest_path_for(path))?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, Default)]
struct CellSum {
    sir_in: f64,
    sir_out: f64,
    delta_sir: f64,
    segsnr: f64,
    lsd: f64,
}

impl CellSum {
    fn add(&mut self, r: &MetricsReport) {
        self.sir_in += r.sir_in;
        self.sir_out += r.sir_out;
        self.delta_sir += r.delta_sir;
        self.segsnr += r.segsnr;
        self.lsd += r.lsd;
    }
}

/// One scene per (T60, seed); every mode sees the same scene. Cells are
/// means over seeds, in the in-memory f64 path, so the strict superposition
/// tolerance applies.
pub fn sweep(
    config: Option<&Path>,
    output: &Path,
    t60s: &[f64],
    seeds: u64,
    duration: Option<f64>,
) -> CmdResult {
    let mut m = RunManifest::new("sweep");
    if seeds == 0 || t60s.is_empty() {
        return Err(anyhow!("the grid needs at least one T60 and one seed").into());
    }
    let file = load_config(config, &mut m)?;
    let base_cfg = file.pipeline_config()?;
    let mut base = scene_spec_with_seed(&file, &mut m)?;
    if let Some(d) = duration {
        base.duration = d;
    }
    let cfg = PipelineConfig {
        doa: base.doa,
        ..base_cfg
    };
    let fs = cfg.stft.sample_rate;
    let mut sums = vec![CellSum::default(); t60s.len() * Mode::ALL.len()];

    let start = std::time::Instant::now();
    for (ti, &t60) in t60s.iter().enumerate() {
        for s in 0..seeds {
            let spec = SceneSpec {
                t60,
                seed: base.seed.wrapping_add(s),
                ..base.clone()
            };
            spec.validate()?;
            spec.check_prediction_boundary(cfg.delay, &cfg.stft)?;
            let scene = scene::generate(&spec, &cfg.geometry, fs, None, None)?;
            for (mi, &mode) in Mode::ALL.iter().enumerate() {
                let run_cfg = PipelineConfig {
                    mode,
                    ..cfg.clone()
                };
                let run = pipeline::run(&run_cfg, &scene.y, fs)?;
                let trace = run
                    .trace
                    .ok_or_else(|| anyhow!("pipeline returned no trace"))?;
                let report = metrics::evaluate_scene(
                    &trace,
                    &scene,
                    &run.enhanced,
                    SUPERPOSITION_TOLERANCE,
                )?;
                sums[ti * Mode::ALL.len() + mi].add(&report);
            }
        }
    }
    m.timings
        .insert("sweep".into(), start.elapsed().as_secs_f64());

    let n = seeds as f64;
    let mut table = String::from("t60,mode,seeds,sir_in,sir_out,delta_sir,segsnr,lsd\n");
    for (ti, &t60) in t60s.iter().enumerate() {
        for (mi, mode) in Mode::ALL.iter().enumerate() {
            let c = sums[ti * Mode::ALL.len() + mi];
            let _ = writeln!(
                table,
                "{t60},{mode},{seeds},{},{},{},{},{}",
                c.sir_in / n,
                c.sir_out / n,
                c.delta_sir / n,
                c.segsnr / n,
                c.lsd / n
            );
        }
    }
    std::fs::write(output, &table).with_context(|| format!("cannot write {}", output.display()))?;
    m.add_output(output)?;
    m.config = combined_snapshot(&cfg, &base);
    m.detail("t60", t60s.to_vec());
    m.detail("seeds", seeds);
    m.write(&manifest_path_for(output))?;
    Ok(())
}

/// Rows are frames, columns are bins. Values are `20 log10 |X|` clipped to
/// the peak minus the dynamic range. A silent channel has no peak and is
/// written at the floor relative to full scale.
pub fn spectrogram_csv(signal: &[f64], stft: &Stft, range_db: f64) -> derev_core::Result<String> {
    let cfg = *stft.config();
    let spec = stft.analyze(&[signal.to_vec()])?;
    let mut peak = 0.0f64;
    for f in 0..spec.frames {
        for z in spec.channel_frame(0, f) {
            peak = peak.max(z.norm());
        }
    }
    let peak_db = if peak > 0.0 { 20.0 * peak.log10() } else { 0.0 };
    let floor_db = peak_db - range_db;

    let mut s = String::from("frame,time_s");
    for k in 0..cfg.bins() {
        let _ = write!(s, ",{}", cfg.bin_freq(k));
    }
    s.push('\n');
    let fs = f64::from(cfg.sample_rate);
    for f in 0..spec.frames {
        let center = (f * cfg.hop + cfg.frame_len / 2) as f64 - cfg.lead_padding() as f64;
        let _ = write!(s, "{f},{}", center / fs);
        for z in spec.channel_frame(0, f) {
            let db = if z.norm() > 0.0 {
                20.0 * z.norm().log10()
            } else {
                f64::NEG_INFINITY
            };
            let _ = write!(s, ",{:.3}", db.max(floor_db));
        }
        s.push('\n');
    }
    Ok(s)
}

pub fn spectrogram(
    input: &Path,
    output: &Path,
    channel: usize,
    config: Option<&Path>,
) -> CmdResult {
    let mut m = RunManifest::new("spectrogram");
    let file = load_config(config, &mut m)?;
    let mut stft_cfg = file.pipeline_config()?.stft;
    let audio = wav::read(input)?;
    m.add_input(input)?;
    let signal = audio.channels.get(channel).ok_or_else(|| {
        anyhow!(
            "{} has {} channels, asked for channel {channel}",
            input.display(),
            audio.channels.len()
        )
    })?;
    // The grid follows the file, not the configured rate.
    stft_cfg.sample_rate = audio.sample_rate;
    let stft = Stft::new(stft_cfg)?;
    let text = m.time("analyze", || {
        spectrogram_csv(signal, &stft, SPECTROGRAM_RANGE_DB)
    })?;
    let mut f = BufWriter::new(
        File::create(output).with_context(|| format!("cannot create {}", output.display()))?,
    );
    f.write_all(text.as_bytes())?;
    f.flush()?;
    drop(f);
    m.add_output(output)?;
    m.config = format!(
        "frame_len = {}\nhop = {}\nfft_len = {}\nsample_rate = {}\n",
        stft_cfg.frame_len, stft_cfg.hop, stft_cfg.fft_len, stft_cfg.sample_rate
    );
    m.detail("channel", channel);
    m.detail("range_db", SPECTROGRAM_RANGE_DB);
    m.write(&manifest_path_for(output))?;
    Ok(())
}
