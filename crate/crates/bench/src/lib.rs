//! Shared fixtures for the benchmarks.

use mcsep::{random_scene, render, SceneParams, Spectrogram, StftConfig};

/// Mixture and reference-microphone image spectrograms of a seeded
/// two-speaker, three-microphone scene of `samples` samples.
pub fn fixture(samples: usize, seed: u64) -> (Vec<Spectrogram>, Vec<Spectrogram>) {
    let params = SceneParams {
        num_samples: samples,
        seed,
        ..SceneParams::default()
    };
    let truth = render(&random_scene(&params).expect("valid scene")).expect("scene renders");
    let cfg = StftConfig::default();
    let mixtures = truth.mixture_spectrograms(&cfg).expect("stft");
    let images = truth.image_spectrograms(&cfg).expect("stft");
    (
        mixtures,
        images
            .into_iter()
            .map(|per_mic| per_mic[0].clone())
            .collect(),
    )
}
