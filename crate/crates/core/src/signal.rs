//! STFT analysis and overlap-add synthesis.
//!
//! Framing convention: the signal is front-padded with `win_len - hop` zeros
//! and back-padded until the last frame covers the final sample, so every
//! input sample lies under exactly `win_len / hop` frames. Synthesis uses the
//! analysis window divided by the overlap-add sum of its square, which is a
//! constant for a valid configuration, giving exact reconstruction.

use std::fmt;
use std::sync::Arc;

use ndarray::{Array2, ArrayView1, Axis};
use num_complex::Complex64;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};

use crate::error::{invalid, mismatch, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WindowKind {
    /// `sqrt` of the periodic Hann window, i.e. `sin(π n / N)`.
    SqrtHann,
}

impl WindowKind {
    pub fn samples(self, len: usize) -> Vec<f64> {
        match self {
            WindowKind::SqrtHann => (0..len)
                .map(|n| (std::f64::consts::PI * n as f64 / len as f64).sin())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StftConfig {
    pub sample_rate: u32,
    pub win_len: usize,
    pub hop: usize,
    pub fft_size: usize,
    pub window: WindowKind,
}

impl Default for StftConfig {
    /// 32 ms window, 8 ms hop, 256-point DFT at 8 kHz.
    fn default() -> Self {
        Self {
            sample_rate: 8000,
            win_len: 256,
            hop: 64,
            fft_size: 256,
            window: WindowKind::SqrtHann,
        }
    }
}

impl fmt::Display for StftConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} Hz, win {}, hop {}, fft {}",
            self.sample_rate, self.win_len, self.hop, self.fft_size
        )
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.win_len == 0 || self.hop == 0 {
            return Err(invalid("win_len and hop must be positive"));
        }
        if self.win_len % self.hop != 0 {
            return Err(invalid(format!(
                "hop {} does not divide win_len {}",
                self.hop, self.win_len
            )));
        }
        if self.fft_size < self.win_len {
            return Err(invalid(format!(
                "fft_size {} smaller than win_len {}",
                self.fft_size, self.win_len
            )));
        }
        if self.sample_rate == 0 {
            return Err(invalid("sample_rate must be positive"));
        }
        // Overlap-add of the squared window must be flat.
        let w = self.window.samples(self.win_len);
        let sums: Vec<f64> = (0..self.hop)
            .map(|n| {
                (n..self.win_len)
                    .step_by(self.hop)
                    .map(|i| w[i] * w[i])
                    .sum()
            })
            .collect();
        let mean = sums.iter().sum::<f64>() / sums.len() as f64;
        if sums
            .iter()
            .any(|s| (s - mean).abs() > 1e-10 * mean.max(1.0))
        {
            return Err(invalid(format!(
                "window does not satisfy overlap-add at hop {}",
                self.hop
            )));
        }
        Ok(())
    }

    /// Number of frequency bins, `fft_size / 2 + 1`.
    pub fn num_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Head padding applied before framing.
    pub fn head_pad(&self) -> usize {
        self.win_len - self.hop
    }

    /// Frame count for an input of `len` samples.
    pub fn num_frames(&self, len: usize) -> usize {
        if len == 0 {
            return 0;
        }
        (self.head_pad() + len - 1) / self.hop + 1
    }

    /// Longest output `istft` can produce from `frames` frames.
    pub fn max_output_len(&self, frames: usize) -> usize {
        frames * self.hop
    }

    pub fn hop_ms(&self) -> f64 {
        1000.0 * self.hop as f64 / self.sample_rate as f64
    }

    pub fn win_ms(&self) -> f64 {
        1000.0 * self.win_len as f64 / self.sample_rate as f64
    }
}

/// Complex T×F time-frequency matrix with the configuration that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    data: Array2<Complex64>,
    cfg: StftConfig,
}

impl Spectrogram {
    pub fn new(data: Array2<Complex64>, cfg: StftConfig) -> Result<Self> {
        if data.ncols() != cfg.num_bins() {
            return Err(mismatch(format!(
                "{} bins, configuration expects {}",
                data.ncols(),
                cfg.num_bins()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("spectrogram"));
        }
        Ok(Self { data, cfg })
    }

    pub fn zeros(frames: usize, cfg: StftConfig) -> Self {
        Self {
            data: Array2::zeros((frames, cfg.num_bins())),
            cfg,
        }
    }

    pub(crate) fn from_raw(data: Array2<Complex64>, cfg: StftConfig) -> Self {
        debug_assert_eq!(data.ncols(), cfg.num_bins());
        Self { data, cfg }
    }

    pub fn config(&self) -> &StftConfig {
        &self.cfg
    }

    pub fn data(&self) -> &Array2<Complex64> {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut Array2<Complex64> {
        &mut self.data
    }

    pub fn into_data(self) -> Array2<Complex64> {
        self.data
    }

    pub fn num_frames(&self) -> usize {
        self.data.nrows()
    }

    pub fn num_bins(&self) -> usize {
        self.data.ncols()
    }

    /// Time series of one frequency bin.
    pub fn bin(&self, f: usize) -> ArrayView1<'_, Complex64> {
        self.data.index_axis(Axis(1), f)
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum()
    }

    pub fn same_geometry(&self, other: &Spectrogram) -> bool {
        self.cfg == other.cfg && self.data.dim() == other.data.dim()
    }

    pub fn check_geometry(&self, other: &Spectrogram) -> Result<()> {
        if self.same_geometry(other) {
            Ok(())
        } else {
            Err(mismatch(format!(
                "spectrogram {:?} vs {:?}",
                self.data.dim(),
                other.data.dim()
            )))
        }
    }

    pub fn scaled(&self, s: f64) -> Spectrogram {
        Self::from_raw(self.data.mapv(|v| v * s), self.cfg)
    }

    /// `a·self + b·other`.
    pub fn combine(&self, a: f64, other: &Spectrogram, b: f64) -> Result<Spectrogram> {
        self.check_geometry(other)?;
        Ok(Self::from_raw(&self.data * a + &other.data * b, self.cfg))
    }
}

/// Reusable STFT engine holding the windows and FFT plans for one config.
#[derive(Clone)]
pub struct Stft {
    cfg: StftConfig,
    analysis: Vec<f64>,
    synthesis: Vec<f64>,
    forward: Arc<dyn RealToComplex<f64>>,
    inverse: Arc<dyn ComplexToReal<f64>>,
}

impl fmt::Debug for Stft {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Stft").field("cfg", &self.cfg).finish()
    }
}

impl Stft {
    pub fn new(cfg: StftConfig) -> Result<Self> {
        cfg.validate()?;
        let analysis = cfg.window.samples(cfg.win_len);
        let ola: f64 = (0..cfg.win_len)
            .step_by(cfg.hop)
            .map(|i| analysis[i] * analysis[i])
            .sum();
        let synthesis = analysis.iter().map(|w| w / ola).collect();
        let mut planner = RealFftPlanner::<f64>::new();
        Ok(Self {
            cfg,
            analysis,
            synthesis,
            forward: planner.plan_fft_forward(cfg.fft_size),
            inverse: planner.plan_fft_inverse(cfg.fft_size),
        })
    }

    pub fn config(&self) -> &StftConfig {
        &self.cfg
    }

    pub fn analysis_window(&self) -> &[f64] {
        &self.analysis
    }

    pub fn synthesis_window(&self) -> &[f64] {
        &self.synthesis
    }

    pub fn forward(&self, audio: &[f64]) -> Result<Spectrogram> {
        if audio.is_empty() {
            return Err(Error::EmptyInput("audio"));
        }
        if audio.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("audio"));
        }
        let cfg = &self.cfg;
        let frames = cfg.num_frames(audio.len());
        let head = cfg.head_pad();
        let mut out = Array2::<Complex64>::zeros((frames, cfg.num_bins()));
        let mut buf = self.forward.make_input_vec();
        let mut spec = self.forward.make_output_vec();
        let mut scratch = self.forward.make_scratch_vec();
        for (t, mut row) in out.rows_mut().into_iter().enumerate() {
            buf.iter_mut().for_each(|v| *v = 0.0);
            let start = t * cfg.hop;
            for (n, w) in self.analysis.iter().enumerate() {
                let pos = start + n;
                if pos >= head && pos - head < audio.len() {
                    buf[n] = audio[pos - head] * w;
                }
            }
            self.forward
                .process_with_scratch(&mut buf, &mut spec, &mut scratch)
                .expect("fft buffer sizes are fixed by the plan");
            row.iter_mut().zip(&spec).for_each(|(o, s)| *o = *s);
        }
        Ok(Spectrogram::from_raw(out, *cfg))
    }

    pub fn inverse(&self, spec: &Spectrogram, out_len: usize) -> Result<Vec<f64>> {
        let cfg = &self.cfg;
        if spec.config() != cfg {
            return Err(mismatch(format!(
                "spectrogram made with [{}], engine is [{}]",
                spec.config(),
                cfg
            )));
        }
        let frames = spec.num_frames();
        if out_len > cfg.max_output_len(frames) {
            return Err(mismatch(format!(
                "{frames} frames cover at most {} samples, {out_len} requested",
                cfg.max_output_len(frames)
            )));
        }
        let head = cfg.head_pad();
        let mut out = vec![0.0; out_len];
        let mut buf = self.inverse.make_input_vec();
        let mut frame = self.inverse.make_output_vec();
        let mut scratch = self.inverse.make_scratch_vec();
        let norm = 1.0 / cfg.fft_size as f64;
        let last = buf.len() - 1;
        for (t, row) in spec.data().rows().into_iter().enumerate() {
            let start = t * cfg.hop;
            if start + cfg.win_len <= head || start >= head + out_len {
                continue;
            }
            buf.iter_mut().zip(row.iter()).for_each(|(b, s)| *b = *s);
            // The DC and Nyquist bins of a real signal carry no imaginary part.
            buf[0].im = 0.0;
            if cfg.fft_size % 2 == 0 {
                buf[last].im = 0.0;
            }
            self.inverse
                .process_with_scratch(&mut buf, &mut frame, &mut scratch)
                .expect("fft buffer sizes are fixed by the plan");
            for (n, w) in self.synthesis.iter().enumerate() {
                let pos = start + n;
                if pos >= head && pos - head < out_len {
                    out[pos - head] += frame[n] * norm * w;
                }
            }
        }
        Ok(out)
    }
}

pub fn stft(audio: &[f64], cfg: &StftConfig) -> Result<Spectrogram> {
    Stft::new(*cfg)?.forward(audio)
}

pub fn istft(spec: &Spectrogram, cfg: &StftConfig, out_len: usize) -> Result<Vec<f64>> {
    Stft::new(*cfg)?.inverse(spec, out_len)
}

/// Analyze several equal-length channels with one engine.
pub fn stft_channels(channels: &[Vec<f64>], cfg: &StftConfig) -> Result<Vec<Spectrogram>> {
    let engine = Stft::new(*cfg)?;
    channels.iter().map(|c| engine.forward(c)).collect()
}

pub fn istft_channels(
    specs: &[Spectrogram],
    cfg: &StftConfig,
    out_len: usize,
) -> Result<Vec<Vec<f64>>> {
    let engine = Stft::new(*cfg)?;
    specs.iter().map(|s| engine.inverse(s, out_len)).collect()
}
