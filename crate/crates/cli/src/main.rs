//! `derev`: scene generation, enhancement, evaluation, sweeps and
//! spectrogram export on top of `derev-core`.
//!
//! Exit codes: 0 on success, 2 for bad input (files, configuration, shape
//! mismatches), 3 when the shadow components do not add up to the enhanced
//! output.

mod commands;
mod manifest;
mod wav;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use derev_core::Mode;

pub const EXIT_INPUT: u8 = 2;
pub const EXIT_CONSISTENCY: u8 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "derev",
    version,
    about = "Online multichannel speech dereverberation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic scene: y, x_e, x_r, v and source WAVs plus scene.cfg.
    Simulate {
        /// Key-value file with scene keys and optionally array keys.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Mono WAV used as the clean source instead of the generated one.
        #[arg(long)]
        source: Option<PathBuf>,
        /// Multichannel noise WAV, rescaled to the configured SNR.
        #[arg(long)]
        noise: Option<PathBuf>,
    },
    /// Enhance a multichannel WAV.
    Enhance {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Overrides the configured mode.
        #[arg(long, value_parser = parse_mode)]
        mode: Option<Mode>,
        /// Write the per-frame filter trace for shadow evaluation.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Per-bin diagnostics as CSV.
        #[arg(long)]
        diagnostics: Option<PathBuf>,
    },
    /// Score an enhanced WAV against the components of a simulated scene.
    Evaluate {
        /// Directory written by `simulate`.
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        enhanced: PathBuf,
        /// Report path; printed to stdout when absent.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Delta SIR over a T60 x mode grid.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        output: PathBuf,
        /// Comma-separated reverberation times in seconds.
        #[arg(long, value_delimiter = ',', default_values_t = [0.4, 0.5, 0.6, 0.7, 0.8])]
        t60: Vec<f64>,
        /// Seeds per cell, starting at the configured seed.
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        /// Overrides the configured scene duration in seconds.
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Magnitude spectrogram in dB as CSV, frame by bin.
    Spectrogram {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 0)]
        channel: usize,
        /// Supplies the STFT parameters.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse().map_err(|e: derev_core::Error| e.to_string())
}

/// An error with the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        let error = e.into();
        let code = match error.downcast_ref::<derev_core::Error>() {
            Some(derev_core::Error::Superposition { .. }) => EXIT_CONSISTENCY,
            _ => EXIT_INPUT,
        };
        Self { code, error }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate {
            config,
            out,
            source,
            noise,
        } => commands::simulate(config.as_deref(), &out, source.as_deref(), noise.as_deref()),
        Command::Enhance {
            config,
            input,
            output,
            mode,
            trace,
            diagnostics,
        } => commands::enhance(&commands::EnhanceArgs {
            config: config.as_deref(),
            input: &input,
            output: &output,
            mode,
            trace: trace.as_deref(),
            diagnostics: diagnostics.as_deref(),
        }),
        Command::Evaluate {
            scene,
            trace,
            enhanced,
            output,
        } => commands::evaluate(&scene, &trace, &enhanced, output.as_deref()),
        Command::Sweep {
            config,
            output,
            t60,
            seeds,
            duration,
        } => commands::sweep(config.as_deref(), &output, &t60, seeds, duration),
        Command::Spectrogram {
            input,
            output,
            channel,
            config,
        } => commands::spectrogram(&input, &output, channel, config.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("derev: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
