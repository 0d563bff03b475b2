use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn derev(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_derev"))
        .args(args)
        .env_remove("DEREV_SEED")
        .output()
        .expect("binary runs")
}

fn derev_with_seed(args: &[&str], seed: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_derev"))
        .args(args)
        .env("DEREV_SEED", seed)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

/// 4 mics and 1.5 s keep every command quick.
const SMALL: &str = "mic_count = 4\nduration = 1.5\nt60 = 0.5\nseed = 11\n";

fn simulate_small(dir: &Path) -> PathBuf {
    let cfg = write_config(dir, "small.cfg", SMALL);
    let scene = dir.join("scene");
    ok(&derev(&[
        "simulate",
        "--config",
        s(&cfg),
        "--out",
        s(&scene),
    ]));
    scene
}

fn read_wav(p: &Path) -> (hound::WavSpec, Vec<f32>) {
    let mut r = hound::WavReader::open(p).unwrap();
    let spec = r.spec();
    (spec, r.samples::<f32>().map(Result::unwrap).collect())
}

fn csv_value(text: &str, key: &str) -> f64 {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key},")))
        .unwrap_or_else(|| panic!("no {key} in report"))
        .parse()
        .unwrap()
}

#[test]
fn simulate_defaults_write_eight_channel_16k_files() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "short.cfg", "duration = 0.5\n");
    let out = dir.path().join("scene");
    ok(&derev(&["simulate", "--config", s(&cfg), "--out", s(&out)]));
    let (y, _) = read_wav(&out.join("y.wav"));
    assert_eq!(y.channels, 8);
    assert_eq!(y.sample_rate, 16000);
    assert_eq!(y.bits_per_sample, 32);
    for name in ["x_e.wav", "x_r.wav", "v.wav"] {
        assert_eq!(read_wav(&out.join(name)).0.channels, 8);
    }
    assert_eq!(read_wav(&out.join("source.wav")).0.channels, 1);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "simulate");
    assert_eq!(manifest["seed"], 1);
    assert_eq!(manifest["outputs"].as_object().unwrap().len(), 6);
    assert!(manifest["config"].as_str().unwrap().contains("t60 = 0.6"));
}

#[test]
fn simulate_is_reproducible_and_seed_env_overrides() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.cfg", SMALL);
    let (a, b, c) = (
        dir.path().join("a"),
        dir.path().join("b"),
        dir.path().join("c"),
    );
    ok(&derev(&["simulate", "--config", s(&cfg), "--out", s(&a)]));
    ok(&derev(&["simulate", "--config", s(&cfg), "--out", s(&b)]));
    ok(&derev_with_seed(
        &["simulate", "--config", s(&cfg), "--out", s(&c)],
        "99",
    ));
    for name in [
        "y.wav",
        "x_e.wav",
        "x_r.wav",
        "v.wav",
        "source.wav",
        "scene.cfg",
    ] {
        assert_eq!(
            std::fs::read(a.join(name)).unwrap(),
            std::fs::read(b.join(name)).unwrap(),
            "{name}"
        );
    }
    assert_ne!(
        std::fs::read(a.join("y.wav")).unwrap(),
        std::fs::read(c.join("y.wav")).unwrap()
    );
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(c.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 99);
    assert_eq!(manifest["seed_source"], "DEREV_SEED");
    assert!(std::fs::read_to_string(c.join("scene.cfg"))
        .unwrap()
        .contains("seed = 99"));
}

#[test]
fn invalid_inputs_exit_2() {
    let dir = TempDir::new().unwrap();
    let bad_t60 = write_config(dir.path(), "t.cfg", "t60 = 2.5\n");
    let out = derev(&[
        "simulate",
        "--config",
        s(&bad_t60),
        "--out",
        s(&dir.path().join("x")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("t60"));

    let unknown = write_config(dir.path(), "u.cfg", "colour = blue\n");
    let out = derev(&[
        "simulate",
        "--config",
        s(&unknown),
        "--out",
        s(&dir.path().join("x")),
    ]);
    assert_eq!(out.status.code(), Some(2));

    let missing = dir.path().join("nope.wav");
    let out = derev(&[
        "enhance",
        "--input",
        s(&missing),
        "--output",
        s(&dir.path().join("o.wav")),
    ]);
    assert_eq!(out.status.code(), Some(2));

    let bad_seed = derev_with_seed(&["simulate", "--out", s(&dir.path().join("x"))], "abc");
    assert_eq!(bad_seed.status.code(), Some(2));
}

#[test]
fn enhance_rejects_channel_mismatch() {
    let dir = TempDir::new().unwrap();
    let scene = simulate_small(dir.path());
    // Default config expects 8 microphones; the scene has 4.
    let out = derev(&[
        "enhance",
        "--input",
        s(&scene.join("y.wav")),
        "--output",
        s(&dir.path().join("o.wav")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("channels"));
}

#[test]
fn passthrough_reproduces_the_reference_channel() {
    let dir = TempDir::new().unwrap();
    let scene = simulate_small(dir.path());
    let out_wav = dir.path().join("pass.wav");
    ok(&derev(&[
        "enhance",
        "--config",
        s(&scene.join("scene.cfg")),
        "--input",
        s(&scene.join("y.wav")),
        "--output",
        s(&out_wav),
        "--mode",
        "passthrough",
    ]));
    let (yspec, y) = read_wav(&scene.join("y.wav"));
    let (ospec, out) = read_wav(&out_wav);
    assert_eq!(ospec.channels, 1);
    let m = yspec.channels as usize;
    let reference: Vec<f32> = y.iter().step_by(m).copied().collect();
    assert_eq!(reference.len(), out.len());
    let worst = reference
        .iter()
        .zip(&out)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f32, f32::max);
    assert!(worst < 1e-6, "worst {worst}");
}

#[test]
fn enhance_evaluate_round_trip() {
    let dir = TempDir::new().unwrap();
    let scene = simulate_small(dir.path());
    let cfg = scene.join("scene.cfg");
    let y = scene.join("y.wav");
    let mut reports = Vec::new();
    for mode in ["full", "passthrough"] {
        let wav = dir.path().join(format!("{mode}.wav"));
        let trace = dir.path().join(format!("{mode}.trace"));
        let diag = dir.path().join(format!("{mode}.diag.csv"));
        let mut args = vec![
            "enhance",
            "--config",
            s(&cfg),
            "--input",
            s(&y),
            "--output",
            s(&wav),
            "--trace",
            s(&trace),
            "--diagnostics",
            s(&diag),
        ];
        if mode != "full" {
            args.extend(["--mode", mode]);
        }
        ok(&derev(&args));
        let manifest: serde_json::Value = serde_json::from_str(
            &std::fs::read_to_string(dir.path().join(format!("{mode}.manifest.json"))).unwrap(),
        )
        .unwrap();
        assert_eq!(manifest["details"]["mode"], mode);
        assert!(manifest["config"]
            .as_str()
            .unwrap()
            .contains(&format!("mode = {mode}")));
        assert!(manifest["timings"]["enhance"].as_f64().unwrap() > 0.0);
        assert!(std::fs::read_to_string(&diag)
            .unwrap()
            .starts_with("frame,bin,"));

        let report = dir.path().join(format!("{mode}.csv"));
        ok(&derev(&[
            "evaluate",
            "--scene",
            s(&scene),
            "--trace",
            s(&trace),
            "--enhanced",
            s(&wav),
            "--output",
            s(&report),
        ]));
        reports.push(std::fs::read_to_string(&report).unwrap());
    }
    let full = &reports[0];
    let pass = &reports[1];
    assert!(full.starts_with("metric,value\n"));
    assert!(csv_value(full, "delta_sir") > 0.0);
    assert!(csv_value(pass, "delta_sir").abs() < 0.1);
    assert!(csv_value(full, "superposition_error") < 1e-5);

    // The passthrough output does not belong to the full-mode trace.
    let out = derev(&[
        "evaluate",
        "--scene",
        s(&scene),
        "--trace",
        s(&dir.path().join("full.trace")),
        "--enhanced",
        s(&dir.path().join("passthrough.wav")),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("shadows"));
}

#[test]
fn sweep_emits_twenty_deterministic_rows() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "sweep.cfg", "mic_count = 4\nseed = 3\n");
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    for out in [&a, &b] {
        ok(&derev(&[
            "sweep",
            "--config",
            s(&cfg),
            "--output",
            s(out),
            "--duration",
            "1",
        ]));
    }
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(
        lines[0],
        "t60,mode,seeds,sir_in,sir_out,delta_sir,segsnr,lsd"
    );
    assert_eq!(lines.len(), 21);
    let modes: Vec<&str> = lines[1..5]
        .iter()
        .map(|l| l.split(',').nth(1).unwrap())
        .collect();
    assert_eq!(modes, ["passthrough", "mvdr_only", "mclp_only", "full"]);
    for line in &lines[1..] {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols.len(), 8);
        if cols[1] == "passthrough" {
            assert!(cols[5].parse::<f64>().unwrap().abs() < 1e-9);
        }
    }
    assert!(dir.path().join("a.manifest.json").exists());
}

#[test]
fn spectrogram_exports_a_floored_db_matrix() {
    let dir = TempDir::new().unwrap();
    let scene = simulate_small(dir.path());
    let out = dir.path().join("spec.csv");
    ok(&derev(&[
        "spectrogram",
        "--input",
        s(&scene.join("y.wav")),
        "--output",
        s(&out),
        "--channel",
        "2",
    ]));
    let text = std::fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(header.len(), 2 + 257);
    assert_eq!(header[..3], ["frame", "time_s", "0"]);
    let values: Vec<f64> = lines
        .flat_map(|l| {
            l.split(',')
                .skip(2)
                .map(|v| v.parse::<f64>().unwrap())
                .collect::<Vec<_>>()
        })
        .collect();
    let peak = values.iter().copied().fold(f64::MIN, f64::max);
    let low = values.iter().copied().fold(f64::MAX, f64::min);
    assert!(peak - low <= 80.0 + 1e-3);
    assert!(!text.contains('\r'));

    let out = derev(&[
        "spectrogram",
        "--input",
        s(&scene.join("y.wav")),
        "--output",
        s(&out),
        "--channel",
        "9",
    ]);
    assert_eq!(out.status.code(), Some(2));
}
