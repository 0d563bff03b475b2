//! Flat `key = value` configuration text.
//!
//! One file may hold pipeline keys, scene keys, or both; `doa` and
//! `doa_elevation` are shared. `#` starts a comment. Unknown or repeated keys
//! are errors. Snapshots written by [`pipeline_snapshot`] and
//! [`scene_snapshot`] parse back to identical values.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::array::{ArrayGeometry, Doa};
use crate::error::{Error, Result};
use crate::kalman::ProcessNoise;
use crate::pipeline::{Mode, PipelineConfig};
use crate::scene::SceneSpec;

pub const PIPELINE_KEYS: &[&str] = &[
    "frame_len",
    "hop",
    "fft_len",
    "sample_rate",
    "mic_positions",
    "mic_count",
    "mic_spacing",
    "reference_index",
    "speed_of_sound",
    "doa",
    "doa_elevation",
    "D",
    "L",
    "alpha",
    "lambda",
    "a",
    "diagonal_loading",
    "mode",
    "process_noise",
    "initial_variance",
    "workers",
];

pub const SCENE_KEYS: &[&str] = &[
    "t60",
    "snr_db",
    "doa",
    "doa_elevation",
    "duration",
    "seed",
    "early_taps",
    "early_window_ms",
    "reverb_level",
];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    /// key -> (line number, raw value).
    entries: BTreeMap<String, (usize, String)>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: line_no,
                message: format!("expected 'key = value', got '{line}'"),
            })?;
            let (k, v) = (k.trim(), v.trim());
            if !PIPELINE_KEYS.contains(&k) && !SCENE_KEYS.contains(&k) {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("unknown key '{k}'"),
                });
            }
            if entries
                .insert(k.to_string(), (line_no, v.to_string()))
                .is_some()
            {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("duplicate key '{k}'"),
                });
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some((line, v)) => v.parse().map(Some).map_err(|_| Error::Parse {
                line: *line,
                message: format!("invalid value '{v}' for '{key}'"),
            }),
        }
    }

    fn set<T: FromStr>(&self, key: &str, slot: &mut T) -> Result<()> {
        if let Some(v) = self.get(key)? {
            *slot = v;
        }
        Ok(())
    }

    fn parse_error(&self, key: &str, message: String) -> Error {
        Error::Parse {
            line: self.entries.get(key).map_or(0, |e| e.0),
            message,
        }
    }

    fn doa(&self, default: Doa) -> Result<Doa> {
        let mut doa = default;
        self.set("doa", &mut doa.azimuth)?;
        self.set("doa_elevation", &mut doa.elevation)?;
        Ok(doa)
    }

    fn geometry(&self) -> Result<ArrayGeometry> {
        let mut geom = if let Some((_, raw)) = self.entries.get("mic_positions") {
            if self.contains("mic_count") || self.contains("mic_spacing") {
                return Err(self.parse_error(
                    "mic_positions",
                    "mic_positions excludes mic_count and mic_spacing".into(),
                ));
            }
            ArrayGeometry {
                mic_positions: parse_positions(raw)
                    .map_err(|m| self.parse_error("mic_positions", m))?,
                ..ArrayGeometry::default()
            }
        } else {
            let default = ArrayGeometry::default();
            let count = self.get("mic_count")?.unwrap_or(default.mic_count());
            let spacing = self.get("mic_spacing")?.unwrap_or(0.04);
            ArrayGeometry::uniform_linear(count, spacing)
        };
        self.set("reference_index", &mut geom.reference_index)?;
        self.set("speed_of_sound", &mut geom.speed_of_sound)?;
        Ok(geom)
    }

    /// Pipeline configuration with defaults for missing keys; validated.
    pub fn pipeline_config(&self) -> Result<PipelineConfig> {
        let mut cfg = PipelineConfig::default();
        self.set("frame_len", &mut cfg.stft.frame_len)?;
        self.set("hop", &mut cfg.stft.hop)?;
        self.set("fft_len", &mut cfg.stft.fft_len)?;
        self.set("sample_rate", &mut cfg.stft.sample_rate)?;
        cfg.geometry = self.geometry()?;
        cfg.doa = self.doa(cfg.doa)?;
        self.set("D", &mut cfg.delay)?;
        self.set("L", &mut cfg.order)?;
        self.set("alpha", &mut cfg.alpha)?;
        self.set("lambda", &mut cfg.lambda)?;
        self.set("a", &mut cfg.transition)?;
        self.set("diagonal_loading", &mut cfg.diagonal_loading)?;
        if let Some((line, v)) = self.entries.get("mode") {
            cfg.mode = v.parse::<Mode>().map_err(|e| Error::Parse {
                line: *line,
                message: e.to_string(),
            })?;
        }
        if let Some((_, v)) = self.entries.get("process_noise") {
            cfg.process_noise =
                parse_process_noise(v).map_err(|m| self.parse_error("process_noise", m))?;
        }
        self.set("initial_variance", &mut cfg.initial_variance)?;
        self.set("workers", &mut cfg.workers)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Scene specification with defaults for missing keys; validated.
    pub fn scene_spec(&self) -> Result<SceneSpec> {
        let mut spec = SceneSpec::default();
        self.set("t60", &mut spec.t60)?;
        self.set("snr_db", &mut spec.snr_db)?;
        spec.doa = self.doa(spec.doa)?;
        self.set("duration", &mut spec.duration)?;
        self.set("seed", &mut spec.seed)?;
        self.set("early_taps", &mut spec.early_taps)?;
        self.set("early_window_ms", &mut spec.early_window_ms)?;
        self.set("reverb_level", &mut spec.reverb_level)?;
        spec.validate()?;
        Ok(spec)
    }
}

fn parse_positions(raw: &str) -> std::result::Result<Vec<[f64; 3]>, String> {
    raw.split(';')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| {
            let coords: Vec<f64> = p
                .split(',')
                .map(|c| c.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| format!("bad coordinate in '{p}'"))?;
            <[f64; 3]>::try_from(coords).map_err(|_| format!("'{p}' is not 'x, y, z'"))
        })
        .collect()
}

fn parse_process_noise(raw: &str) -> std::result::Result<ProcessNoise, String> {
    match raw.split_once(':') {
        None if raw == "stationary" => Ok(ProcessNoise::Stationary),
        Some(("isotropic", v)) => v
            .trim()
            .parse()
            .map(ProcessNoise::Isotropic)
            .map_err(|_| format!("bad isotropic variance '{v}'")),
        _ => Err(format!(
            "process_noise must be 'stationary' or 'isotropic:<variance>', got '{raw}'"
        )),
    }
}

/// Full pipeline configuration as parseable text. `workers` is left out
/// because it never changes the output.
pub fn pipeline_snapshot(cfg: &PipelineConfig) -> String {
    let mut s = String::new();
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(s, "{k} = {v}");
    };
    kv("frame_len", cfg.stft.frame_len.to_string());
    kv("hop", cfg.stft.hop.to_string());
    kv("fft_len", cfg.stft.fft_len.to_string());
    kv("sample_rate", cfg.stft.sample_rate.to_string());
    let positions: Vec<String> = cfg
        .geometry
        .mic_positions
        .iter()
        .map(|p| format!("{}, {}, {}", p[0], p[1], p[2]))
        .collect();
    kv("mic_positions", positions.join("; "));
    kv("reference_index", cfg.geometry.reference_index.to_string());
    kv("speed_of_sound", cfg.geometry.speed_of_sound.to_string());
    kv("doa", cfg.doa.azimuth.to_string());
    kv("doa_elevation", cfg.doa.elevation.to_string());
    kv("D", cfg.delay.to_string());
    kv("L", cfg.order.to_string());
    kv("alpha", cfg.alpha.to_string());
    kv("lambda", cfg.lambda.to_string());
    kv("a", cfg.transition.to_string());
    kv("diagonal_loading", cfg.diagonal_loading.to_string());
    kv("mode", cfg.mode.to_string());
    kv(
        "process_noise",
        match cfg.process_noise {
            ProcessNoise::Stationary => "stationary".into(),
            ProcessNoise::Isotropic(v) => format!("isotropic:{v}"),
        },
    );
    kv("initial_variance", cfg.initial_variance.to_string());
    s
}

pub fn scene_snapshot(spec: &SceneSpec) -> String {
    let mut s = String::new();
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(s, "{k} = {v}");
    };
    kv("t60", spec.t60.to_string());
    kv("snr_db", spec.snr_db.to_string());
    kv("doa", spec.doa.azimuth.to_string());
    kv("doa_elevation", spec.doa.elevation.to_string());
    kv("duration", spec.duration.to_string());
    kv("seed", spec.seed.to_string());
    kv("early_taps", spec.early_taps.to_string());
    kv("early_window_ms", spec.early_window_ms.to_string());
    kv("reverb_level", spec.reverb_level.to_string());
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        let c = ConfigFile::parse("# nothing\n\n").unwrap();
        assert_eq!(c.pipeline_config().unwrap(), PipelineConfig::default());
        assert_eq!(c.scene_spec().unwrap(), SceneSpec::default());
    }

    #[test]
    fn values_and_comments() {
        let text = "\
            mode = mvdr_only   # beamformer only\n\
            D = 3\n\
            L = 12\n\
            alpha = 0.5\n\
            mic_count = 4\n\
            mic_spacing = 0.05\n\
            doa = 1.25\n\
            t60 = 0.8\n\
            snr_db = inf\n\
            seed = 42\n\
            process_noise = isotropic:1e-6\n";
        let c = ConfigFile::parse(text).unwrap();
        let p = c.pipeline_config().unwrap();
        assert_eq!(p.mode, Mode::MvdrOnly);
        assert_eq!((p.delay, p.order, p.alpha), (3, 12, 0.5));
        assert_eq!(p.geometry, ArrayGeometry::uniform_linear(4, 0.05));
        assert_eq!(p.doa.azimuth, 1.25);
        assert_eq!(p.process_noise, ProcessNoise::Isotropic(1e-6));
        let s = c.scene_spec().unwrap();
        assert_eq!((s.t60, s.seed), (0.8, 42));
        assert_eq!(s.snr_db, f64::INFINITY);
        assert_eq!(s.doa.azimuth, 1.25);
    }

    #[test]
    fn explicit_positions() {
        let c =
            ConfigFile::parse("mic_positions = 0,0,0; 0.1, 0, 0 ; 0,0.1,0\nreference_index = 2")
                .unwrap();
        let g = c.pipeline_config().unwrap().geometry;
        assert_eq!(
            g.mic_positions,
            vec![[0.0, 0.0, 0.0], [0.1, 0.0, 0.0], [0.0, 0.1, 0.0]]
        );
        assert_eq!(g.reference_index, 2);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let line_of = |text: &str| match ConfigFile::parse(text).and_then(|c| c.pipeline_config()) {
            Err(Error::Parse { line, .. }) => Some(line),
            _ => None,
        };
        assert_eq!(line_of("hop = 256\nbogus = 1"), Some(2));
        assert_eq!(line_of("hop = 256\nhop = 128"), Some(2));
        assert_eq!(line_of("\nalpha = lots"), Some(2));
        assert_eq!(line_of("no equals sign"), Some(1));
        assert_eq!(line_of("mode = louder"), Some(1));
        assert_eq!(line_of("mic_positions = 0,0; 1,1,1"), Some(1));
        assert_eq!(line_of("process_noise = sometimes"), Some(1));
    }

    #[test]
    fn invalid_values_rejected() {
        for text in [
            "alpha = 1.0",
            "alpha = 0",
            "D = 5\nL = 5",
            "lambda = 1",
            "hop = 100",
        ] {
            let c = ConfigFile::parse(text).unwrap();
            assert!(
                matches!(c.pipeline_config(), Err(Error::InvalidConfig(_))),
                "{text}"
            );
        }
        for text in ["t60 = 0", "t60 = 2.5", "duration = 0"] {
            let c = ConfigFile::parse(text).unwrap();
            assert!(c.scene_spec().is_err(), "{text}");
        }
    }

    #[test]
    fn snapshots_round_trip() {
        let cfg = PipelineConfig {
            geometry: ArrayGeometry {
                mic_positions: vec![[0.0, 0.0, 0.0], [0.1 / 3.0, 0.0, 0.0], [0.0, 0.07, 0.01]],
                reference_index: 1,
                speed_of_sound: 340.5,
            },
            doa: Doa::new(0.1 + 0.2, 0.05),
            delay: 3,
            order: 7,
            alpha: 0.3,
            mode: Mode::MclpOnly,
            process_noise: ProcessNoise::Isotropic(2.5e-7),
            ..PipelineConfig::default()
        };
        let back = ConfigFile::parse(&pipeline_snapshot(&cfg))
            .unwrap()
            .pipeline_config()
            .unwrap();
        assert_eq!(back, cfg);

        let spec = SceneSpec {
            t60: 0.45,
            snr_db: f64::INFINITY,
            seed: u64::MAX,
            duration: 1.0 / 3.0,
            ..SceneSpec::default()
        };
        let back = ConfigFile::parse(&scene_snapshot(&spec))
            .unwrap()
            .scene_spec()
            .unwrap();
        assert_eq!(back, spec);
    }
}
