//! Frame-online multichannel speech dereverberation.
//!
//! Each STFT bin runs three coupled paths: a blocking-based estimator of the
//! late-reverberation and noise PSDs, an MVDR beamformer built from those
//! PSDs, and a Kalman-filtered multichannel linear predictor that removes the
//! remaining late reverberation from the beamformer output. The crate also
//! ships a synthetic scene generator and a shadow-filtering evaluator.

// `!(x > 0.0)` is used on purpose throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod array;
pub mod config;
pub mod error;
pub mod kalman;
pub mod linalg;
pub mod metrics;
pub mod mvdr;
pub mod pipeline;
pub mod psd;
pub mod scene;
pub mod stft;
pub mod trace;

pub use num_complex::Complex64 as C64;

pub use array::{ArrayGeometry, BinSpatialModel, Doa};
pub use error::{Error, Result};
pub use pipeline::{Mode, Pipeline, PipelineConfig, RunOutput};
pub use scene::{Scene, SceneSpec};
pub use stft::{Spectrogram, StftConfig};
pub use trace::ShadowTrace;
