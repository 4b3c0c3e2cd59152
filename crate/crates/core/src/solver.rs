//! Alternating least squares for the blind-deconvolution fit
//!
//! ```text
//! J(X, g) = Σ_f [ Σ_t |Y_1 - Σ_c X_c|² + Σ_{p≥2} Σ_t |Y_p - Σ_c g_pc^H X~_c|²
//!                 + ρ_x Σ |X|² + ρ_g(f) Σ |g|² ]
//! ```
//!
//! The filter step solves for all speakers' filters of one microphone
//! jointly, the source step solves for all speakers' reference-microphone
//! images at one frequency jointly; both are exact minimizers of `J`, so
//! `J` never increases across joint half-steps.
//!
//! The fit alone is invariant to any per-frequency instantaneous remix
//! `X'_1 = a X_1 + b X_2`, `X'_2 = (1-a) X_1 + (1-b) X_2` (the joint filters
//! absorb it), so joint ALS started from a symmetric split stays at that
//! split. A warm-up phase therefore replaces the joint filter step by
//! per-speaker FCP fits, which treat the other speakers as interference and
//! favour separated estimates. Joint ALS then refines from there.

use ndarray::{Array2, Axis};
use num_complex::Complex64;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{invalid, mismatch, Error, Result};
use crate::fcp::{cross_gram, cross_rhs, solve_filter, FcpConfig, RelativeFilterBank};
use crate::linalg::{BandedHermitian, DenseHermitian};
use crate::rng::SeedStream;
use crate::signal::{istft_channels, Spectrogram};

/// Relative slack allowed on monotone descent.
pub const DESCENT_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    /// `X_c = Y_1 / C ⊙ (1 + 0.1 n)` with complex Gaussian `n`.
    MixtureSplitRandom,
    /// Ground-truth reference images.
    Oracle(Vec<Spectrogram>),
    User(Vec<Spectrogram>),
}

impl Init {
    pub fn name(&self) -> &'static str {
        match self {
            Init::MixtureSplitRandom => "mixture_split_random",
            Init::Oracle(_) => "oracle",
            Init::User(_) => "user",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterUpdate {
    /// Joint least squares over all speakers' filters (exact minimizer).
    Joint,
    /// Independent unweighted FCP fit per speaker.
    PerSpeaker,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlsConfig {
    pub max_iters: usize,
    pub tol_rel: f64,
    pub fcp: FcpConfig,
    pub init: Init,
    /// `ρ_x`, dimensionless (the source and mixture share units).
    pub source_ridge: f64,
    pub seed: u64,
    /// Iterations using per-speaker filter fits before joint ALS.
    pub warmup_iters: usize,
}

impl Default for AlsConfig {
    fn default() -> Self {
        Self {
            max_iters: 100,
            tol_rel: 1e-6,
            fcp: FcpConfig::default(),
            init: Init::MixtureSplitRandom,
            source_ridge: 1e-3,
            seed: 0,
            warmup_iters: 30,
        }
    }
}

impl AlsConfig {
    pub fn validate(&self) -> Result<()> {
        self.fcp.validate()?;
        if self.max_iters == 0 {
            return Err(invalid("max_iters must be at least 1"));
        }
        if !(self.tol_rel > 0.0) {
            return Err(invalid("tol_rel must be positive"));
        }
        if !(self.source_ridge >= 0.0) || !self.source_ridge.is_finite() {
            return Err(invalid("source_ridge must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepKind {
    Filter(FilterUpdate),
    Source,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HalfStep {
    pub iteration: usize,
    pub kind: StepKind,
    /// Penalized objective `J`.
    pub objective: f64,
    /// Data term alone.
    pub fit: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AlsTrace {
    /// `J` at the end of each iteration, starting with iteration 0 (the
    /// filter fit to the initial sources).
    pub objective: Vec<f64>,
    pub fit: Vec<f64>,
    pub half_steps: Vec<HalfStep>,
    pub iterations: usize,
    pub converged: bool,
    /// Largest pivot-ratio condition estimate seen in a source step.
    pub max_condition: f64,
    /// The filter steps run without the FCP `λ̂` weighting.
    pub weighted_filters: bool,
    pub mixture_energy: f64,
}

impl AlsTrace {
    /// Whether every half-step that is an exact minimizer kept `J` within
    /// the relative slack of its predecessor.
    pub fn is_monotone(&self, slack: f64) -> bool {
        self.half_steps.windows(2).all(|w| {
            w[1].kind == StepKind::Filter(FilterUpdate::PerSpeaker)
                || w[1].objective <= w[0].objective * (1.0 + slack)
        })
    }

    /// `iter,phase,objective` rows, one per iteration. The phase is
    /// `warmup` for iterations ending in a per-speaker filter fit (not a
    /// descent step) and `joint` otherwise.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iter,phase,objective\n");
        let filters = self.half_steps.iter().filter_map(|h| match h.kind {
            StepKind::Filter(mode) => Some(mode),
            StepKind::Source => None,
        });
        for ((i, j), mode) in self.objective.iter().enumerate().zip(filters) {
            let phase = match mode {
                FilterUpdate::PerSpeaker => "warmup",
                FilterUpdate::Joint => "joint",
            };
            out.push_str(&format!("{i},{phase},{j:.12e}\n"));
        }
        out
    }

    pub fn final_fit_ratio(&self) -> f64 {
        self.fit.last().copied().unwrap_or(f64::NAN) / self.mixture_energy
    }
}

/// Per-speaker reference-microphone estimates and their FCP images.
#[derive(Debug, Clone, PartialEq)]
pub struct SeparationEstimate {
    pub sources: Vec<Spectrogram>,
    /// `images[p][c]`.
    pub images: Vec<Vec<Spectrogram>>,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub estimate: SeparationEstimate,
    pub trace: AlsTrace,
    pub filters: RelativeFilterBank,
}

/// The mixtures of one frequency bin, `y[p][t]`.
struct BinData {
    y: Vec<Vec<Complex64>>,
    filter_ridge: f64,
}

/// Solver state of one frequency bin.
#[derive(Clone)]
struct BinState {
    /// `x[t * C + c]`.
    x: Vec<Complex64>,
    /// `g[p - 1][c * K + k]` for microphones 2..P.
    g: Vec<Vec<Complex64>>,
}

#[derive(Clone, Copy)]
struct Dims {
    frames: usize,
    speakers: usize,
    mics: usize,
}

fn bin_data(mixtures: &[Spectrogram], f: usize, cfg: &AlsConfig) -> BinData {
    let y: Vec<Vec<Complex64>> = mixtures.iter().map(|m| m.bin(f).to_vec()).collect();
    let power: f64 = y.iter().flatten().map(|v| v.norm_sqr()).sum::<f64>() / y.len() as f64;
    BinData {
        y,
        filter_ridge: cfg.fcp.ridge * power,
    }
}

fn speaker_series(x: &[Complex64], c: usize, d: Dims) -> Vec<Complex64> {
    (0..d.frames).map(|t| x[t * d.speakers + c]).collect()
}

/// Filtered sum `Σ_c g_c^H x~_c(t)` at one microphone.
fn predict(g: &[Complex64], x: &[Complex64], fcp: &FcpConfig, d: Dims) -> Vec<Complex64> {
    let taps = fcp.taps();
    (0..d.frames)
        .map(|t| {
            let mut acc = Complex64::new(0.0, 0.0);
            for k in 0..taps {
                if let Some(s) = fcp.source_frame(t, k, d.frames) {
                    for c in 0..d.speakers {
                        acc += g[c * taps + k].conj() * x[s * d.speakers + c];
                    }
                }
            }
            acc
        })
        .collect()
}

/// `(fit, penalty)` of one bin.
fn bin_objective(
    data: &BinData,
    st: &BinState,
    fcp: &FcpConfig,
    ridge_x: f64,
    d: Dims,
) -> (f64, f64) {
    let mut fit = 0.0;
    for t in 0..d.frames {
        let s: Complex64 = (0..d.speakers).map(|c| st.x[t * d.speakers + c]).sum();
        fit += (data.y[0][t] - s).norm_sqr();
    }
    for p in 1..d.mics {
        let pred = predict(&st.g[p - 1], &st.x, fcp, d);
        fit += pred
            .iter()
            .zip(&data.y[p])
            .map(|(a, b)| (b - a).norm_sqr())
            .sum::<f64>();
    }
    let pen = ridge_x * st.x.iter().map(|v| v.norm_sqr()).sum::<f64>()
        + data.filter_ridge * st.g.iter().flatten().map(|v| v.norm_sqr()).sum::<f64>();
    (fit, pen)
}

fn bin_filter_step(
    data: &BinData,
    st: &mut BinState,
    fcp: &FcpConfig,
    mode: FilterUpdate,
    d: Dims,
) -> Result<()> {
    let taps = fcp.taps();
    let n = d.speakers * taps;
    match mode {
        FilterUpdate::Joint => {
            // Gram of the stacked regressor is shared by every microphone.
            let mut gram = DenseHermitian::<Complex64>::zeros(n);
            let mut phi = vec![Complex64::new(0.0, 0.0); n];
            let mut rhs = vec![vec![Complex64::new(0.0, 0.0); n]; d.mics.saturating_sub(1)];
            for t in 0..d.frames {
                for k in 0..taps {
                    let s = fcp.source_frame(t, k, d.frames);
                    for c in 0..d.speakers {
                        phi[c * taps + k] =
                            s.map_or(Complex64::new(0.0, 0.0), |s| st.x[s * d.speakers + c]);
                    }
                }
                for i in 0..n {
                    if phi[i] == Complex64::new(0.0, 0.0) {
                        continue;
                    }
                    for j in 0..n {
                        gram.add(i, j, phi[i] * phi[j].conj());
                    }
                    for p in 1..d.mics {
                        rhs[p - 1][i] += phi[i] * data.y[p][t].conj();
                    }
                }
            }
            gram.add_diagonal(data.filter_ridge);
            for p in 1..d.mics {
                st.g[p - 1] = if rhs[p - 1].iter().all(|v| *v == Complex64::new(0.0, 0.0)) {
                    vec![Complex64::new(0.0, 0.0); n]
                } else {
                    gram.solve(&rhs[p - 1])?
                };
            }
        }
        FilterUpdate::PerSpeaker => {
            for c in 0..d.speakers {
                let z = ndarray::Array1::from(speaker_series(&st.x, c, d));
                let gram = cross_gram(z.view(), z.view(), None, fcp);
                for p in 1..d.mics {
                    let y = ndarray::ArrayView1::from(&data.y[p]);
                    let rhs = cross_rhs(z.view(), y, None, fcp);
                    let g = solve_filter(gram.clone(), &rhs, fcp.ridge)?;
                    st.g[p - 1][c * taps..(c + 1) * taps].copy_from_slice(&g);
                }
            }
        }
    }
    Ok(())
}

/// Normal equations of the source step for one bin.
fn source_system(
    data: &BinData,
    g: &[Vec<Complex64>],
    fcp: &FcpConfig,
    ridge_x: f64,
    d: Dims,
) -> (BandedHermitian<Complex64>, Vec<Complex64>) {
    let taps = fcp.taps();
    let cc = d.speakers;
    let n = d.frames * cc;
    let mut a = BandedHermitian::zeros(n, taps * cc - 1);
    let mut rhs = vec![Complex64::new(0.0, 0.0); n];
    let one = Complex64::new(1.0, 0.0);
    for t in 0..d.frames {
        for c in 0..cc {
            rhs[t * cc + c] += data.y[0][t];
            for c2 in 0..=c {
                a.add_lower(t * cc + c, t * cc + c2, one);
            }
        }
    }
    let mut idx = Vec::with_capacity(taps * cc);
    let mut coef = Vec::with_capacity(taps * cc);
    for p in 1..d.mics {
        let gp = &g[p - 1];
        for t in 0..d.frames {
            idx.clear();
            coef.clear();
            for k in 0..taps {
                if let Some(s) = fcp.source_frame(t, k, d.frames) {
                    for c in 0..cc {
                        idx.push(s * cc + c);
                        coef.push(gp[c * taps + k].conj());
                    }
                }
            }
            let y = data.y[p][t];
            for (u, (&i, &ai)) in idx.iter().zip(&coef).enumerate() {
                rhs[i] += ai.conj() * y;
                for (&j, &aj) in idx[..=u].iter().zip(&coef[..=u]) {
                    // idx is increasing, so i >= j.
                    a.add_lower(i, j, ai.conj() * aj);
                }
            }
        }
    }
    a.add_diagonal(ridge_x);
    (a, rhs)
}

fn bin_source_step(
    data: &BinData,
    st: &mut BinState,
    fcp: &FcpConfig,
    ridge_x: f64,
    d: Dims,
) -> Result<f64> {
    let (a, rhs) = source_system(data, &st.g, fcp, ridge_x, d);
    let (x, cond) = a.solve(&rhs).map_err(|e| match e {
        Error::Singular(msg) => Error::Singular(format!(
            "source step: {msg}; use source_ridge > 0 when the system is under-determined"
        )),
        other => other,
    })?;
    st.x = x;
    Ok(cond)
}

fn check_mixtures(mixtures: &[Spectrogram], speakers: usize) -> Result<Dims> {
    let first = mixtures.first().ok_or(Error::EmptyInput("mixtures"))?;
    for m in mixtures {
        first.check_geometry(m)?;
    }
    if speakers == 0 {
        return Err(invalid("need at least one speaker"));
    }
    Ok(Dims {
        frames: first.num_frames(),
        speakers,
        mics: mixtures.len(),
    })
}

fn states_from_sources(sources: &[Spectrogram], d: Dims, taps: usize) -> Vec<BinState> {
    let bins = sources[0].num_bins();
    (0..bins)
        .map(|f| {
            let mut x = vec![Complex64::new(0.0, 0.0); d.frames * d.speakers];
            for (c, s) in sources.iter().enumerate() {
                for (t, v) in s.bin(f).iter().enumerate() {
                    x[t * d.speakers + c] = *v;
                }
            }
            BinState {
                x,
                g: vec![vec![Complex64::new(0.0, 0.0); d.speakers * taps]; d.mics - 1],
            }
        })
        .collect()
}

fn sources_from_states(states: &[BinState], like: &Spectrogram, d: Dims) -> Vec<Spectrogram> {
    (0..d.speakers)
        .map(|c| {
            let mut data = Array2::zeros(like.data().dim());
            for (f, st) in states.iter().enumerate() {
                for t in 0..d.frames {
                    data[[t, f]] = st.x[t * d.speakers + c];
                }
            }
            Spectrogram::from_raw(data, *like.config())
        })
        .collect()
}

fn bank_from_states(states: &[BinState], fcp: &FcpConfig, d: Dims) -> RelativeFilterBank {
    let taps = fcp.taps();
    let mut bank = RelativeFilterBank::identity(d.mics, d.speakers, states.len(), *fcp);
    for p in 1..d.mics {
        for c in 0..d.speakers {
            let g = Array2::from_shape_fn((states.len(), taps), |(f, k)| {
                states[f].g[p - 1][c * taps + k]
            });
            bank.set_filter(p, c, g.view())
                .expect("shapes agree by construction");
        }
    }
    bank
}

fn states_with_bank(
    sources: &[Spectrogram],
    bank: &RelativeFilterBank,
    d: Dims,
) -> Result<Vec<BinState>> {
    let taps = bank.config().taps();
    if bank.num_mics() != d.mics || bank.num_speakers() != d.speakers {
        return Err(mismatch(format!(
            "filter bank is {}x{}, problem is {}x{}",
            bank.num_mics(),
            bank.num_speakers(),
            d.mics,
            d.speakers
        )));
    }
    let mut states = states_from_sources(sources, d, taps);
    for (f, st) in states.iter_mut().enumerate() {
        for p in 1..d.mics {
            for c in 0..d.speakers {
                for k in 0..taps {
                    st.g[p - 1][c * taps + k] = bank.filter(p, c)[[f, k]];
                }
            }
        }
    }
    Ok(states)
}

fn initial_sources(mixtures: &[Spectrogram], d: Dims, cfg: &AlsConfig) -> Result<Vec<Spectrogram>> {
    match &cfg.init {
        Init::MixtureSplitRandom => {
            let mut rng = SeedStream::new(cfg.seed).rng("als-init");
            let y1 = &mixtures[0];
            Ok((0..d.speakers)
                .map(|_| {
                    let data = y1.data().mapv(|v| {
                        let re: f64 = StandardNormal.sample(&mut rng);
                        let im: f64 = StandardNormal.sample(&mut rng);
                        let n = Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2;
                        v / d.speakers as f64 * (Complex64::new(1.0, 0.0) + 0.1 * n)
                    });
                    Spectrogram::from_raw(data, *y1.config())
                })
                .collect())
        }
        Init::Oracle(s) | Init::User(s) => {
            if s.len() != d.speakers {
                return Err(mismatch(format!(
                    "{} initial estimates for {} speakers",
                    s.len(),
                    d.speakers
                )));
            }
            for x in s {
                mixtures[0].check_geometry(x)?;
            }
            Ok(s.clone())
        }
    }
}

/// Joint (or per-speaker) filter update for fixed reference-microphone
/// estimates. The reference microphone keeps the identity filter.
pub fn filter_step(
    sources: &[Spectrogram],
    mixtures: &[Spectrogram],
    cfg: &AlsConfig,
    mode: FilterUpdate,
) -> Result<RelativeFilterBank> {
    cfg.validate()?;
    let d = check_mixtures(mixtures, sources.len())?;
    for s in sources {
        mixtures[0].check_geometry(s)?;
    }
    let mut states = states_from_sources(sources, d, cfg.fcp.taps());
    states.par_iter_mut().enumerate().try_for_each(|(f, st)| {
        bin_filter_step(&bin_data(mixtures, f, cfg), st, &cfg.fcp, mode, d)
    })?;
    Ok(bank_from_states(&states, &cfg.fcp, d))
}

/// Exact least-squares update of the reference-microphone estimates for
/// fixed filters, frequency by frequency.
pub fn source_step(
    bank: &RelativeFilterBank,
    mixtures: &[Spectrogram],
    cfg: &AlsConfig,
) -> Result<Vec<Spectrogram>> {
    cfg.validate()?;
    let d = check_mixtures(mixtures, bank.num_speakers())?;
    let zeros: Vec<Spectrogram> = (0..d.speakers)
        .map(|_| Spectrogram::zeros(d.frames, *mixtures[0].config()))
        .collect();
    let mut states = states_with_bank(&zeros, bank, d)?;
    states.par_iter_mut().enumerate().try_for_each(|(f, st)| {
        bin_source_step(
            &bin_data(mixtures, f, cfg),
            st,
            &cfg.fcp,
            cfg.source_ridge,
            d,
        )
        .map(|_| ())
    })?;
    Ok(sources_from_states(&states, &mixtures[0], d))
}

/// Penalized objective and data term for given sources and filters.
pub fn objective(
    sources: &[Spectrogram],
    bank: &RelativeFilterBank,
    mixtures: &[Spectrogram],
    cfg: &AlsConfig,
) -> Result<(f64, f64)> {
    let d = check_mixtures(mixtures, sources.len())?;
    let states = states_with_bank(sources, bank, d)?;
    let parts: Vec<(f64, f64)> = states
        .par_iter()
        .enumerate()
        .map(|(f, st)| {
            bin_objective(
                &bin_data(mixtures, f, cfg),
                st,
                &cfg.fcp,
                cfg.source_ridge,
                d,
            )
        })
        .collect();
    let fit: f64 = parts.iter().map(|p| p.0).sum();
    let pen: f64 = parts.iter().map(|p| p.1).sum();
    Ok((fit + pen, fit))
}

/// Dense reference solution of one bin's source step, for testing the
/// banded path.
pub fn dense_source_solve(
    bank: &RelativeFilterBank,
    mixtures: &[Spectrogram],
    cfg: &AlsConfig,
    f: usize,
) -> Result<Vec<Complex64>> {
    let d = check_mixtures(mixtures, bank.num_speakers())?;
    let zeros: Vec<Spectrogram> = (0..d.speakers)
        .map(|_| Spectrogram::zeros(d.frames, *mixtures[0].config()))
        .collect();
    let states = states_with_bank(&zeros, bank, d)?;
    let data = bin_data(mixtures, f, cfg);
    // Build A explicitly and form A^H A densely.
    let n = d.frames * d.speakers;
    let taps = cfg.fcp.taps();
    let mut rows: Vec<(Vec<Complex64>, Complex64)> = Vec::new();
    for t in 0..d.frames {
        let mut r = vec![Complex64::new(0.0, 0.0); n];
        for c in 0..d.speakers {
            r[t * d.speakers + c] = Complex64::new(1.0, 0.0);
        }
        rows.push((r, data.y[0][t]));
    }
    for p in 1..d.mics {
        for t in 0..d.frames {
            let mut r = vec![Complex64::new(0.0, 0.0); n];
            for k in 0..taps {
                if let Some(s) = cfg.fcp.source_frame(t, k, d.frames) {
                    for c in 0..d.speakers {
                        r[s * d.speakers + c] += states[f].g[p - 1][c * taps + k].conj();
                    }
                }
            }
            rows.push((r, data.y[p][t]));
        }
    }
    let mut ata = DenseHermitian::<Complex64>::zeros(n);
    let mut rhs = vec![Complex64::new(0.0, 0.0); n];
    for (r, y) in &rows {
        for i in 0..n {
            if r[i] == Complex64::new(0.0, 0.0) {
                continue;
            }
            rhs[i] += r[i].conj() * y;
            for j in 0..n {
                ata.add(i, j, r[i].conj() * r[j]);
            }
        }
    }
    ata.add_diagonal(cfg.source_ridge);
    ata.solve(&rhs)
}

/// Run ALS from the configured initialization.
pub fn solve(mixtures: &[Spectrogram], speakers: usize, cfg: &AlsConfig) -> Result<Solution> {
    cfg.validate()?;
    let d = check_mixtures(mixtures, speakers)?;
    if d.mics <= d.speakers {
        log::warn!(
            "{} microphones for {} speakers: the problem is not over-determined",
            d.mics,
            d.speakers
        );
    }
    let mixture_energy: f64 = mixtures.iter().map(Spectrogram::energy).sum();
    if mixture_energy == 0.0 {
        return Err(Error::Degenerate("all-zero mixtures".into()));
    }
    let init = initial_sources(mixtures, d, cfg)?;
    let data: Vec<BinData> = (0..mixtures[0].num_bins())
        .map(|f| bin_data(mixtures, f, cfg))
        .collect();
    let mut states = states_from_sources(&init, d, cfg.fcp.taps());
    let fcp = cfg.fcp;

    let eval = |states: &[BinState]| -> (f64, f64) {
        let parts: Vec<(f64, f64)> = states
            .par_iter()
            .zip(&data)
            .map(|(st, bd)| bin_objective(bd, st, &fcp, cfg.source_ridge, d))
            .collect();
        let fit: f64 = parts.iter().map(|p| p.0).sum();
        (fit + parts.iter().map(|p| p.1).sum::<f64>(), fit)
    };
    // The warm-up only exists to leave the symmetric split; a supplied
    // initialization is refined by joint ALS straight away.
    let warmup = match cfg.init {
        Init::MixtureSplitRandom => cfg.warmup_iters,
        Init::Oracle(_) | Init::User(_) => 0,
    };
    let mode_for = |iter: usize| {
        if iter < warmup {
            FilterUpdate::PerSpeaker
        } else {
            FilterUpdate::Joint
        }
    };
    let filter = |states: &mut [BinState], mode: FilterUpdate| -> Result<()> {
        states
            .par_iter_mut()
            .zip(&data)
            .try_for_each(|(st, bd)| bin_filter_step(bd, st, &fcp, mode, d))
    };
    let source = |states: &mut [BinState]| -> Result<f64> {
        let conds: Vec<f64> = states
            .par_iter_mut()
            .zip(&data)
            .map(|(st, bd)| bin_source_step(bd, st, &fcp, cfg.source_ridge, d))
            .collect::<Result<_>>()?;
        Ok(conds.into_iter().fold(0.0, f64::max))
    };

    let mut trace = AlsTrace {
        mixture_energy,
        ..AlsTrace::default()
    };
    let push = |trace: &mut AlsTrace,
                iteration: usize,
                kind: StepKind,
                (objective, fit): (f64, f64)|
     -> Result<()> {
        if !objective.is_finite() {
            return Err(Error::NonFinite("ALS objective"));
        }
        if let (Some(prev), true) = (
            trace.half_steps.last(),
            kind != StepKind::Filter(FilterUpdate::PerSpeaker),
        ) {
            if objective > prev.objective * (1.0 + DESCENT_SLACK) {
                return Err(Error::Divergence {
                    iter: iteration,
                    previous: prev.objective,
                    current: objective,
                });
            }
        }
        trace.half_steps.push(HalfStep {
            iteration,
            kind,
            objective,
            fit,
        });
        Ok(())
    };

    let mode = mode_for(0);
    filter(&mut states, mode)?;
    let j0 = eval(&states);
    push(&mut trace, 0, StepKind::Filter(mode), j0)?;
    trace.objective.push(j0.0);
    trace.fit.push(j0.1);

    for iter in 1..=cfg.max_iters {
        let cond = source(&mut states)?;
        trace.max_condition = trace.max_condition.max(cond);
        push(&mut trace, iter, StepKind::Source, eval(&states))?;
        let mode = mode_for(iter);
        filter(&mut states, mode)?;
        let (j, fit) = eval(&states);
        push(&mut trace, iter, StepKind::Filter(mode), (j, fit))?;
        let prev = *trace.objective.last().expect("iteration 0 recorded");
        trace.objective.push(j);
        trace.fit.push(fit);
        trace.iterations = iter;
        if mode == FilterUpdate::Joint
            && iter > warmup
            && (prev - j) <= cfg.tol_rel * mixture_energy
        {
            trace.converged = true;
            break;
        }
    }

    let sources = sources_from_states(&states, &mixtures[0], d);
    let filters = bank_from_states(&states, &fcp, d);
    let images = filters.images(&sources)?;
    Ok(Solution {
        estimate: SeparationEstimate { sources, images },
        trace,
        filters,
    })
}

/// FCP images of each speaker at the reference microphone.
pub fn extract_reference_images(
    estimate: &SeparationEstimate,
    bank: &RelativeFilterBank,
) -> Result<Vec<Spectrogram>> {
    Ok(bank.images(&estimate.sources)?.swap_remove(0))
}

/// Time-domain reference images.
pub fn reference_images_time(
    estimate: &SeparationEstimate,
    bank: &RelativeFilterBank,
    out_len: usize,
) -> Result<Vec<Vec<f64>>> {
    let images = extract_reference_images(estimate, bank)?;
    let cfg = *images[0].config();
    istft_channels(&images, &cfg, out_len)
}

/// Filters of one bin re-expressed as `(mic, speaker)` views, for callers
/// that want to inspect the joint fit.
pub fn bank_bin(bank: &RelativeFilterBank, f: usize) -> Array2<Vec<Complex64>> {
    Array2::from_shape_fn((bank.num_mics(), bank.num_speakers()), |(p, c)| {
        bank.filter(p, c).index_axis(Axis(0), f).to_vec()
    })
}
