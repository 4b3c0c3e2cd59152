//! Mixture-consistency separation toolkit.
//!
//! Building blocks for unsupervised separation of over-determined
//! multichannel mixtures (more microphones than speakers):
//!
//! - [`signal`]: STFT analysis/synthesis with exact reconstruction.
//! - [`sim`]: synthetic scenes with known speaker images.
//! - [`fcp`]: sub-band forward convolutive prediction of relative filters.
//! - [`losses`]: mixture-consistency and magnitude-scattering losses.
//! - [`wiener`]: time-domain Wiener filtering and its mixture loss.
//! - [`align`]: frequency and speaker permutation handling.
//! - [`solver`]: alternating least squares for the blind-deconvolution fit.
//! - [`metrics`]: SI-SDR and SNR reports.

pub mod align;
pub mod error;
pub mod fcp;
pub mod linalg;
pub mod losses;
pub mod metrics;
pub mod rng;
pub mod signal;
pub mod sim;
pub mod solver;
pub mod wav;
pub mod wiener;

pub use align::{
    corr_freq_align, oracle_freq_align, pit_speaker_permutation, FrequencyPermutation,
};
pub use error::{Error, Result};
pub use fcp::{FcpConfig, RelativeFilterBank};
pub use losses::{LossBreakdown, LossWeights, McVariant};
pub use metrics::{si_sdr, snr, MetricReport};
pub use rng::SeedStream;
pub use signal::{istft, stft, Spectrogram, Stft, StftConfig, WindowKind};
pub use sim::{random_scene, render, RirModel, SceneParams, SceneTruth, SimScene};
pub use solver::{solve, AlsConfig, AlsTrace, Init, SeparationEstimate};
pub use wav::{read_wav, write_wav, Audio, WavEncoding};
pub use wiener::WienerConfig;
