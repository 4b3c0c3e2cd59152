//! Synthetic over-determined scenes with known ground truth.
//!
//! A scene is a set of dry sources, one FIR room impulse response per
//! (speaker, microphone) pair and an optional white-noise floor. Rendering
//! produces the speaker images `x_p(c) = h_p(c) * s(c)` and the mixtures
//! `y_p = Σ_c x_p(c) + n_p`.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array2, ArrayView2};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, mismatch, Error, Result};
use crate::rng::SeedStream;
use crate::signal::{stft_channels, Spectrogram, StftConfig};

/// How room impulse responses are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RirModel {
    /// Direct-path tap at an integer delay followed by exponentially decaying
    /// Gaussian taps at every sample.
    Exponential,
    /// Taps only on multiples of `hop`; the reference microphone hears the
    /// direct path alone. Relative filters between microphones are then
    /// exactly representable as K-tap sub-band filters.
    HopAligned { hop: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneParams {
    pub speakers: usize,
    pub mics: usize,
    pub num_samples: usize,
    pub sample_rate: u32,
    pub rir_len: usize,
    /// Time for the reverberant tail envelope to fall by 20 dB.
    pub decay_ms: f64,
    pub max_delay: usize,
    /// Amplitude of the tail relative to the unit direct path.
    pub reverb_gain: f64,
    pub noise_snr_db: Option<f64>,
    pub rir_model: RirModel,
    pub seed: u64,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            speakers: 2,
            mics: 3,
            num_samples: 8000,
            sample_rate: 8000,
            rir_len: 400,
            decay_ms: 50.0,
            max_delay: 8,
            reverb_gain: 0.5,
            noise_snr_db: None,
            rir_model: RirModel::Exponential,
            seed: 0,
        }
    }
}

impl SceneParams {
    pub fn validate(&self) -> Result<()> {
        if self.speakers == 0 || self.mics == 0 {
            return Err(invalid("need at least one speaker and one microphone"));
        }
        if self.rir_len == 0 {
            return Err(invalid("rir_len must be at least 1"));
        }
        if self.max_delay >= self.rir_len {
            return Err(invalid(format!(
                "max_delay {} must be below rir_len {}",
                self.max_delay, self.rir_len
            )));
        }
        if !(self.decay_ms >= 0.0) || !(self.reverb_gain >= 0.0) {
            return Err(invalid("decay_ms and reverb_gain must be non-negative"));
        }
        if self.num_samples == 0 || self.sample_rate == 0 {
            return Err(invalid("num_samples and sample_rate must be positive"));
        }
        if let RirModel::HopAligned { hop } = self.rir_model {
            if hop == 0 {
                return Err(invalid("hop-aligned RIRs need hop > 0"));
            }
        }
        Ok(())
    }

    /// Decay constant (in samples) of the `exp(-n / τ)` tail envelope.
    pub fn tau_samples(&self) -> f64 {
        decay_tau_samples(self.decay_ms, self.sample_rate)
    }
}

/// `τ` such that `exp(-n/τ)` drops by 20 dB after `decay_ms`; the 60 dB point
/// is therefore at `3 · decay_ms`.
pub fn decay_tau_samples(decay_ms: f64, sample_rate: u32) -> f64 {
    decay_ms * 1e-3 * f64::from(sample_rate) / std::f64::consts::LN_10
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimScene {
    pub sample_rate: u32,
    /// One dry signal per speaker, all of equal length.
    pub dry: Vec<Vec<f64>>,
    /// `rirs[c][p]`.
    pub rirs: Vec<Vec<Vec<f64>>>,
    pub noise_snr_db: Option<f64>,
    pub seed: u64,
}

impl SimScene {
    pub fn num_speakers(&self) -> usize {
        self.dry.len()
    }

    pub fn num_mics(&self) -> usize {
        self.rirs.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dry.is_empty() {
            return Err(invalid("scene has no speakers"));
        }
        let len = self.dry[0].len();
        if len == 0 || self.dry.iter().any(Vec::is_empty) {
            return Err(Error::EmptyInput("dry source"));
        }
        if self.dry.iter().any(|d| d.len() != len) {
            return Err(invalid("dry sources differ in length"));
        }
        if self.rirs.len() != self.dry.len() {
            return Err(invalid("one RIR set per speaker required"));
        }
        let p = self.num_mics();
        if p == 0 || self.rirs.iter().any(|r| r.len() != p) {
            return Err(invalid("every speaker needs one RIR per microphone"));
        }
        if self.rirs.iter().flatten().any(Vec::is_empty) {
            return Err(Error::EmptyInput("room impulse response"));
        }
        Ok(())
    }

    fn max_rir_len(&self) -> usize {
        self.rirs.iter().flatten().map(Vec::len).max().unwrap_or(1)
    }

    /// Length of rendered images and mixtures.
    pub fn output_len(&self) -> usize {
        self.dry[0].len() + self.max_rir_len() - 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneTruth {
    pub sample_rate: u32,
    /// `images[c][p]`.
    pub images: Vec<Vec<Vec<f64>>>,
    pub mixtures: Vec<Vec<f64>>,
    pub noise: Vec<Vec<f64>>,
}

impl SceneTruth {
    pub fn num_speakers(&self) -> usize {
        self.images.len()
    }

    pub fn num_mics(&self) -> usize {
        self.mixtures.len()
    }

    pub fn len(&self) -> usize {
        self.mixtures.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Speaker images at one microphone, one per speaker.
    pub fn images_at(&self, mic: usize) -> Vec<Vec<f64>> {
        self.images.iter().map(|c| c[mic].clone()).collect()
    }

    pub fn mixture_spectrograms(&self, cfg: &StftConfig) -> Result<Vec<Spectrogram>> {
        stft_channels(&self.mixtures, cfg)
    }

    /// `out[c][p]`.
    pub fn image_spectrograms(&self, cfg: &StftConfig) -> Result<Vec<Vec<Spectrogram>>> {
        self.images.iter().map(|c| stft_channels(c, cfg)).collect()
    }

    pub fn noise_spectrograms(&self, cfg: &StftConfig) -> Result<Vec<Spectrogram>> {
        stft_channels(&self.noise, cfg)
    }
}

/// Full linear convolution, zero-extended to `out_len`.
pub fn convolve(x: &[f64], h: &[f64], out_len: usize) -> Vec<f64> {
    let mut y = vec![0.0; out_len];
    for (k, &hk) in h.iter().enumerate() {
        if hk == 0.0 {
            continue;
        }
        for (n, &xn) in x.iter().enumerate() {
            if n + k < out_len {
                y[n + k] += hk * xn;
            }
        }
    }
    y
}

pub fn render(scene: &SimScene) -> Result<SceneTruth> {
    scene.validate()?;
    let len = scene.output_len();
    let p_count = scene.num_mics();
    let images: Vec<Vec<Vec<f64>>> = scene
        .dry
        .iter()
        .zip(&scene.rirs)
        .map(|(s, hs)| hs.iter().map(|h| convolve(s, h, len)).collect())
        .collect();
    let mut clean = vec![vec![0.0; len]; p_count];
    for per_speaker in &images {
        for (acc, img) in clean.iter_mut().zip(per_speaker) {
            acc.iter_mut().zip(img).for_each(|(a, v)| *a += v);
        }
    }
    let noise = match scene.noise_snr_db {
        None => vec![vec![0.0; len]; p_count],
        Some(snr_db) => {
            if !snr_db.is_finite() {
                return Err(invalid("noise_snr_db must be finite"));
            }
            let mut rng = SeedStream::new(scene.seed).rng("noise");
            let raw: Vec<Vec<f64>> = (0..p_count)
                .map(|_| (0..len).map(|_| StandardNormal.sample(&mut rng)).collect())
                .collect();
            let signal: f64 = clean.iter().flatten().map(|v| v * v).sum();
            let noise: f64 = raw.iter().flatten().map(|v| v * v).sum();
            if signal == 0.0 {
                return Err(Error::Degenerate("silent scene cannot set an SNR".into()));
            }
            let gain = (signal / noise / 10f64.powf(snr_db / 10.0)).sqrt();
            raw.into_iter()
                .map(|ch| ch.into_iter().map(|v| v * gain).collect())
                .collect()
        }
    };
    let mixtures = clean
        .iter()
        .zip(&noise)
        .map(|(c, n)| c.iter().zip(n).map(|(a, b)| a + b).collect())
        .collect();
    Ok(SceneTruth {
        sample_rate: scene.sample_rate,
        images,
        mixtures,
        noise,
    })
}

/// Amplitude-modulated coloured noise: a random two-pole resonance shaped by a
/// piecewise-linear envelope with knots every 100 ms. Unit RMS.
pub fn synthetic_source(num_samples: usize, sample_rate: u32, stream: &SeedStream) -> Vec<f64> {
    let mut rng = stream.rng("source");
    let radius: f64 = rng.gen_range(0.5..0.9);
    let angle: f64 = rng.gen_range(0.1..3.0);
    let (a1, a2) = (2.0 * radius * angle.cos(), -radius * radius);
    let (mut y1, mut y2) = (0.0, 0.0);
    let mut x: Vec<f64> = (0..num_samples)
        .map(|_| {
            let e: f64 = StandardNormal.sample(&mut rng);
            let y = e + a1 * y1 + a2 * y2;
            y2 = y1;
            y1 = y;
            y
        })
        .collect();
    let spacing = (sample_rate as usize / 10).max(1);
    let knots: Vec<f64> = (0..num_samples / spacing + 2)
        .map(|_| rng.gen::<f64>().powi(2))
        .collect();
    for (n, v) in x.iter_mut().enumerate() {
        let (i, frac) = (n / spacing, (n % spacing) as f64 / spacing as f64);
        *v *= knots[i] * (1.0 - frac) + knots[i + 1] * frac;
    }
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / num_samples as f64).sqrt();
    if rms > 0.0 {
        x.iter_mut().for_each(|v| *v /= rms);
    }
    x
}

fn random_rir(params: &SceneParams, mic: usize, stream: &SeedStream) -> Vec<f64> {
    let mut rng = stream.rng("rir");
    let mut h = vec![0.0; params.rir_len];
    let tau = params.tau_samples();
    let envelope = |lag: usize| {
        if tau > 0.0 {
            params.reverb_gain * (-(lag as f64) / tau).exp()
        } else {
            0.0
        }
    };
    match params.rir_model {
        RirModel::Exponential => {
            let delay = rng.gen_range(0..=params.max_delay);
            h[delay] = 1.0;
            for (lag, tap) in h[delay + 1..].iter_mut().enumerate() {
                let g: f64 = StandardNormal.sample(&mut rng);
                *tap = g * envelope(lag + 1);
            }
        }
        RirModel::HopAligned { hop } => {
            if mic == 0 {
                h[0] = 1.0;
            } else {
                let delay = hop * rng.gen_range(0..=params.max_delay / hop);
                h[delay] = 1.0;
                let mut lag = hop;
                while delay + lag < params.rir_len {
                    let g: f64 = StandardNormal.sample(&mut rng);
                    h[delay + lag] = g * envelope(lag);
                    lag += hop;
                }
            }
        }
    }
    h
}

/// Draw a scene with synthetic dry sources.
pub fn random_scene(params: &SceneParams) -> Result<SimScene> {
    params.validate()?;
    let root = SeedStream::new(params.seed);
    let dry = (0..params.speakers)
        .map(|c| {
            synthetic_source(
                params.num_samples,
                params.sample_rate,
                &root.child("speaker", c as u64),
            )
        })
        .collect();
    random_scene_with_dry(params, dry)
}

/// Draw RIRs for user-supplied dry sources (e.g. read from WAV files).
pub fn random_scene_with_dry(params: &SceneParams, dry: Vec<Vec<f64>>) -> Result<SimScene> {
    params.validate()?;
    if dry.len() != params.speakers {
        return Err(invalid(format!(
            "{} dry sources for {} speakers",
            dry.len(),
            params.speakers
        )));
    }
    let root = SeedStream::new(params.seed);
    let rirs = (0..params.speakers)
        .map(|c| {
            (0..params.mics)
                .map(|p| random_rir(params, p, &root.child("rir", (c * params.mics + p) as u64)))
                .collect()
        })
        .collect();
    let scene = SimScene {
        sample_rate: params.sample_rate,
        dry,
        rirs,
        noise_snr_db: params.noise_snr_db,
        seed: params.seed,
    };
    scene.validate()?;
    Ok(scene)
}

/// Least-squares sub-band filter mapping `reference` onto `target`, one
/// K-tap filter per frequency, solved through an SVD of the stacked design
/// matrix (rank-deficient cases get the minimum-norm solution).
///
/// Tap `k` multiplies frame `t - past + k`; the model is
/// `target(t) = Σ_k conj(g_k) · reference(t - past + k)`. Optional weights
/// divide each squared residual, matching the weighted FCP objective.
pub fn oracle_relative_rir(
    reference: &Spectrogram,
    target: &Spectrogram,
    past: usize,
    future: usize,
    weights: Option<ArrayView2<'_, f64>>,
) -> Result<Array2<Complex64>> {
    reference.check_geometry(target)?;
    if reference.energy() == 0.0 || target.energy() == 0.0 {
        return Err(Error::Degenerate(
            "oracle filter needs nonzero images".into(),
        ));
    }
    let (frames, bins) = reference.data().dim();
    if let Some(w) = &weights {
        if w.dim() != (frames, bins) {
            return Err(mismatch("weight array does not match spectrogram"));
        }
    }
    let taps = past + 1 + future;
    let mut out = Array2::zeros((bins, taps));
    for f in 0..bins {
        let z = reference.bin(f);
        let y = target.bin(f);
        let scale = |t: usize| weights.as_ref().map_or(1.0, |w| 1.0 / w[[t, f]].sqrt());
        let a = DMatrix::from_fn(frames, taps, |t, k| {
            let s = t as isize - past as isize + k as isize;
            if s >= 0 && (s as usize) < frames {
                z[s as usize] * scale(t)
            } else {
                Complex64::new(0.0, 0.0)
            }
        });
        let b = DVector::from_fn(frames, |t, _| y[t] * scale(t));
        let h = a
            .svd(true, true)
            .solve(&b, 1e-12)
            .map_err(|e| Error::Singular(e.to_string()))?;
        for k in 0..taps {
            out[[f, k]] = h[k].conj();
        }
    }
    Ok(out)
}

/// Unknown and equation counts of the linear system with and without the
/// relative-filter constraint, for `E`-tap relative filters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UnknownCount {
    pub equations: usize,
    pub unknowns_unconstrained: usize,
    pub unknowns_constrained: usize,
}

pub fn unknown_count(
    frames: usize,
    bins: usize,
    mics: usize,
    speakers: usize,
    taps: usize,
) -> UnknownCount {
    UnknownCount {
        equations: frames * bins * mics,
        unknowns_unconstrained: frames * bins * mics * speakers,
        unknowns_constrained: frames * bins * speakers + bins * (mics - 1) * taps * speakers,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::stft;

    fn energy(x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum()
    }

    #[test]
    fn unit_impulse_passes_source_through() {
        let params = SceneParams {
            speakers: 1,
            mics: 1,
            rir_len: 1,
            max_delay: 0,
            decay_ms: 0.0,
            ..SceneParams::default()
        };
        let scene = random_scene(&params).unwrap();
        assert_eq!(scene.rirs[0][0], vec![1.0]);
        let truth = render(&scene).unwrap();
        assert_eq!(truth.images[0][0], scene.dry[0]);
        assert_eq!(truth.mixtures[0], scene.dry[0]);
    }

    #[test]
    fn mixtures_are_sums_of_images() {
        let scene = random_scene(&SceneParams {
            speakers: 2,
            mics: 2,
            ..SceneParams::default()
        })
        .unwrap();
        let truth = render(&scene).unwrap();
        for p in 0..2 {
            for n in 0..truth.len() {
                let s = truth.images[0][p][n] + truth.images[1][p][n];
                assert_eq!(truth.mixtures[p][n] - s, 0.0);
            }
        }
    }

    #[test]
    fn additivity_carries_to_stft() {
        let mut params = SceneParams::default();
        params.noise_snr_db = Some(20.0);
        let truth = render(&random_scene(&params).unwrap()).unwrap();
        let cfg = StftConfig::default();
        let mix = truth.mixture_spectrograms(&cfg).unwrap();
        let img = truth.image_spectrograms(&cfg).unwrap();
        let noise = truth.noise_spectrograms(&cfg).unwrap();
        for p in 0..3 {
            let mut sum = noise[p].data().clone();
            for c in 0..2 {
                sum = sum + img[c][p].data();
            }
            let err = (&sum - mix[p].data())
                .iter()
                .map(|v| v.norm())
                .fold(0.0, f64::max);
            assert!(err < 1e-10, "{err}");
        }
    }

    #[test]
    fn measured_snr_matches_request() {
        let mut params = SceneParams::default();
        params.noise_snr_db = Some(25.0);
        let truth = render(&random_scene(&params).unwrap()).unwrap();
        let mut sig = 0.0;
        for p in 0..truth.num_mics() {
            let clean: Vec<f64> = (0..truth.len())
                .map(|n| truth.images.iter().map(|c| c[p][n]).sum())
                .collect();
            sig += energy(&clean);
        }
        let noise: f64 = truth.noise.iter().map(|n| energy(n)).sum();
        let snr = 10.0 * (sig / noise).log10();
        assert!((snr - 25.0).abs() < 0.1, "{snr}");
    }

    #[test]
    fn seeds_are_deterministic() {
        let p = SceneParams::default();
        assert_eq!(random_scene(&p).unwrap(), random_scene(&p).unwrap());
        let q = SceneParams {
            seed: 1,
            ..p.clone()
        };
        assert_ne!(random_scene(&p).unwrap(), random_scene(&q).unwrap());
    }

    #[test]
    fn anechoic_when_decay_is_zero() {
        let params = SceneParams {
            rir_len: 1,
            max_delay: 0,
            decay_ms: 0.0,
            ..SceneParams::default()
        };
        let scene = random_scene(&params).unwrap();
        assert!(scene.rirs.iter().flatten().all(|h| h == &vec![1.0]));
    }

    #[test]
    fn envelope_falls_sixty_db_at_three_decay_times() {
        // decay_ms = 100 at 8 kHz: 20 dB per 800 samples, 60 dB at 2400.
        let tau = decay_tau_samples(100.0, 8000);
        let env_db = |n: f64| 20.0 * (-n / tau).exp().log10();
        assert!((env_db(2400.0) + 60.0).abs() < 1e-9);
        // Empirical check on drawn taps: RMS over a window around lag 2400
        // sits about 60 dB below the RMS near lag 0.
        let params = SceneParams {
            speakers: 1,
            mics: 1,
            rir_len: 3000,
            max_delay: 0,
            decay_ms: 100.0,
            reverb_gain: 1.0,
            ..SceneParams::default()
        };
        let mut early = 0.0;
        let mut late = 0.0;
        for seed in 0..40 {
            let h = &random_scene(&SceneParams {
                seed,
                ..params.clone()
            })
            .unwrap()
            .rirs[0][0];
            early += h[1..101].iter().map(|v| v * v).sum::<f64>();
            late += h[2351..2451].iter().map(|v| v * v).sum::<f64>();
        }
        // Window means sit at lags ~50 and ~2400.
        let drop = 10.0 * (late / early).log10();
        let expected = env_db(2400.0) - env_db(50.0);
        assert!((drop - expected).abs() < 1.5, "{drop} vs {expected}");
    }

    #[test]
    fn hop_aligned_taps_sit_on_the_grid() {
        let params = SceneParams {
            rir_len: 640,
            max_delay: 128,
            rir_model: RirModel::HopAligned { hop: 64 },
            ..SceneParams::default()
        };
        let scene = random_scene(&params).unwrap();
        for c in 0..2 {
            assert_eq!(scene.rirs[c][0][0], 1.0);
            assert!(scene.rirs[c][0][1..].iter().all(|v| *v == 0.0));
            for p in 1..3 {
                for (n, v) in scene.rirs[c][p].iter().enumerate() {
                    if n % 64 != 0 {
                        assert_eq!(*v, 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn render_rejects_bad_scenes() {
        let mut scene = random_scene(&SceneParams::default()).unwrap();
        scene.rirs[0][1].clear();
        assert!(matches!(render(&scene), Err(Error::EmptyInput(_))));
        let mut scene = random_scene(&SceneParams::default()).unwrap();
        scene.dry[0].clear();
        assert!(render(&scene).is_err());
        assert!(random_scene(&SceneParams {
            mics: 0,
            ..SceneParams::default()
        })
        .is_err());
        assert!(random_scene(&SceneParams {
            rir_len: 0,
            ..SceneParams::default()
        })
        .is_err());
    }

    #[test]
    fn oracle_identity_for_same_mic() {
        let truth = render(&random_scene(&SceneParams::default()).unwrap()).unwrap();
        let x = stft(&truth.images[0][0], &StftConfig::default()).unwrap();
        let g = oracle_relative_rir(&x, &x, 0, 0, None).unwrap();
        for f in 1..128 {
            assert!((g[[f, 0]] - Complex64::new(1.0, 0.0)).norm() < 1e-9);
        }
    }

    #[test]
    fn oracle_finds_one_hop_delay() {
        let cfg = StftConfig::default();
        let scene = random_scene(&SceneParams::default()).unwrap();
        let s = &scene.dry[0];
        let mut delayed = vec![0.0; 64];
        delayed.extend_from_slice(s);
        let mut plain = s.clone();
        plain.extend(vec![0.0; 64]);
        let x1 = stft(&plain, &cfg).unwrap();
        let xp = stft(&delayed, &cfg).unwrap();
        let g = oracle_relative_rir(&x1, &xp, 3, 0, None).unwrap();
        for f in 1..128 {
            // Lag-1 tap sits at index past - 1.
            let mags: Vec<f64> = g.row(f).iter().map(|v| v.norm()).collect();
            assert!((mags[2] - 1.0).abs() < 1e-8, "f={f} {mags:?}");
            assert!(mags[0] + mags[1] + mags[3] < 1e-8);
        }
    }

    #[test]
    fn oracle_residual_small_when_taps_cover_support() {
        let cfg = StftConfig::default();
        let params = SceneParams {
            rir_len: 640,
            max_delay: 128,
            rir_model: RirModel::HopAligned { hop: 64 },
            ..SceneParams::default()
        };
        let truth = render(&random_scene(&params).unwrap()).unwrap();
        let img = truth.image_spectrograms(&cfg).unwrap();
        let (x1, xp) = (&img[0][0], &img[0][2]);
        let g = oracle_relative_rir(x1, xp, 19, 0, None).unwrap();
        let mut res = 0.0;
        for f in 0..x1.num_bins() {
            for t in 0..x1.num_frames() {
                let mut est = Complex64::new(0.0, 0.0);
                for k in 0..20 {
                    let s = t as isize - 19 + k as isize;
                    if s >= 0 {
                        est += g[[f, k]].conj() * x1.data()[[s as usize, f]];
                    }
                }
                res += (xp.data()[[t, f]] - est).norm_sqr();
            }
        }
        let db = 10.0 * (res / xp.energy()).log10();
        assert!(db < -40.0, "{db}");
    }

    #[test]
    fn unknown_counting() {
        let u = unknown_count(500, 129, 6, 2, 20);
        assert_eq!(u.unknowns_unconstrained, 500 * 129 * 6 * 2);
        assert_eq!(u.unknowns_constrained, 500 * 129 * 2 + 129 * 5 * 20 * 2);
        assert_eq!(u.equations, 500 * 129 * 6);
        // Over-determined once P > C and T is long enough.
        assert!(u.unknowns_constrained < u.equations);
        assert!(
            unknown_count(500, 129, 2, 2, 20).unknowns_constrained
                > unknown_count(500, 129, 2, 2, 20).equations
        );
    }
}
