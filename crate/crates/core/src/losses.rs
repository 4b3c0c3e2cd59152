//! Mixture-consistency and magnitude-scattering losses.
//!
//! All losses are evaluated on spectrograms. The MC losses compare each
//! microphone's mixture against the sum of the speakers' FCP images there;
//! the reference-unfiltered variant leaves microphone 1 unfiltered, the
//! all-filtered variant re-estimates a filter for every microphone.

use ndarray::{Array2, Axis};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{invalid, mismatch, Error, Result};
use crate::fcp::{
    apply_filter, cross_gram, cross_rhs, estimate_filterbank, fcp_weight, solve_filter,
};
use crate::fcp::{FcpConfig, RelativeFilterBank};
use crate::signal::{Spectrogram, StftConfig};
use crate::sim::SceneTruth;

/// Magnitude floor applied before taking logs.
pub const LOG_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct LossWeights {
    /// Per-microphone weights; empty means 1 for every microphone.
    pub alpha: Vec<f64>,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: Vec::new(),
            gamma: 0.04,
        }
    }
}

impl LossWeights {
    pub fn alpha(&self, p: usize) -> f64 {
        self.alpha.get(p).copied().unwrap_or(1.0)
    }

    pub fn validate(&self, mics: usize) -> Result<()> {
        if !self.alpha.is_empty() {
            if self.alpha.len() != mics {
                return Err(invalid(format!(
                    "{} alpha weights for {mics} microphones",
                    self.alpha.len()
                )));
            }
            if self.alpha.iter().any(|a| !(*a >= 0.0) || !a.is_finite()) {
                return Err(invalid("alpha weights must be finite and non-negative"));
            }
            if self.alpha.iter().all(|a| *a == 0.0) {
                return Err(invalid("at least one alpha weight must be positive"));
            }
        }
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return Err(invalid("gamma must be finite and non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum McVariant {
    /// Reference microphone compared against the unfiltered sum.
    #[default]
    RefUnfiltered,
    /// Every microphone, the reference included, uses FCP images.
    AllFiltered,
}

impl McVariant {
    pub fn name(self) -> &'static str {
        match self {
            McVariant::RefUnfiltered => "eq4",
            McVariant::AllFiltered => "eq9",
        }
    }

    /// One future tap for the reference-unfiltered form, strictly causal
    /// filters when the reference is filtered too.
    pub fn default_fcp(self) -> FcpConfig {
        match self {
            McVariant::RefUnfiltered => FcpConfig::new(19, 1),
            McVariant::AllFiltered => FcpConfig::new(19, 0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct McBreakdown {
    /// `α_p`-weighted per-microphone terms.
    pub per_mic: Vec<f64>,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub mc_per_mic: Vec<f64>,
    pub isms_per_mic: Vec<f64>,
    pub mc_total: f64,
    pub isms_total: f64,
    pub gamma: f64,
    pub combined: f64,
}

impl LossBreakdown {
    pub fn compose(mc: McBreakdown, isms: McBreakdown, gamma: f64) -> Self {
        Self {
            combined: mc.total + gamma * isms.total,
            mc_per_mic: mc.per_mic,
            isms_per_mic: isms.per_mic,
            mc_total: mc.total,
            isms_total: isms.total,
            gamma,
        }
    }
}

fn abs_terms(y: Complex64, yhat: Complex64) -> f64 {
    let d = y - yhat;
    d.re.abs() + d.im.abs() + (y.norm() - yhat.norm()).abs()
}

fn tf_abs_raw(y: &Array2<Complex64>, yhat: &Array2<Complex64>) -> Result<f64> {
    let norm: f64 = y.iter().map(|v| v.norm()).sum();
    if norm == 0.0 {
        return Err(Error::Degenerate(
            "all-zero mixture in loss normalizer".into(),
        ));
    }
    let num: f64 = y.iter().zip(yhat).map(|(a, b)| abs_terms(*a, *b)).sum();
    Ok(num / norm)
}

/// `Σ (|ΔRe| + |ΔIm| + |Δ|mag||) / Σ |Y|`.
pub fn tf_abs_loss(y: &Spectrogram, yhat: &Spectrogram) -> Result<f64> {
    y.check_geometry(yhat)?;
    tf_abs_raw(y.data(), yhat.data())
}

fn check_problem(
    mixtures: &[Spectrogram],
    zhats: &[Spectrogram],
    weights: &LossWeights,
) -> Result<()> {
    let first = mixtures.first().ok_or(Error::EmptyInput("mixtures"))?;
    if zhats.is_empty() {
        return Err(Error::EmptyInput("estimates"));
    }
    for s in mixtures.iter().chain(zhats) {
        first.check_geometry(s)?;
    }
    weights.validate(mixtures.len())
}

fn sum_of(specs: &[Spectrogram]) -> Array2<Complex64> {
    let mut acc = specs[0].data().clone();
    for s in &specs[1..] {
        acc += s.data();
    }
    acc
}

fn mc_from_images(
    mixtures: &[Spectrogram],
    images: &[Vec<Spectrogram>],
    zhats: &[Spectrogram],
    reference_filtered: bool,
    weights: &LossWeights,
) -> Result<McBreakdown> {
    let per_mic: Vec<f64> = mixtures
        .iter()
        .enumerate()
        .map(|(p, y)| {
            let pred = if p == 0 && !reference_filtered {
                sum_of(zhats)
            } else {
                sum_of(&images[p])
            };
            Ok(weights.alpha(p) * tf_abs_raw(y.data(), &pred)?)
        })
        .collect::<Result<_>>()?;
    Ok(McBreakdown {
        total: per_mic.iter().sum(),
        per_mic,
    })
}

/// MC loss with microphone 1 compared against the unfiltered sum of the
/// estimates and microphones 2..P against the sum of FCP images under the
/// given filters. The bank's reference-microphone filters are ignored.
pub fn mc_loss_ref_unfiltered(
    mixtures: &[Spectrogram],
    zhats: &[Spectrogram],
    bank: &RelativeFilterBank,
    weights: &LossWeights,
) -> Result<McBreakdown> {
    check_problem(mixtures, zhats, weights)?;
    if bank.num_mics() != mixtures.len() {
        return Err(mismatch(format!(
            "filter bank has {} microphones, mixtures {}",
            bank.num_mics(),
            mixtures.len()
        )));
    }
    let images = bank.images(zhats)?;
    mc_from_images(mixtures, &images, zhats, false, weights)
}

/// MC loss with every microphone filtered; filters are re-estimated from
/// the estimates and mixtures with weighted FCP and returned.
pub fn mc_loss_all_filtered(
    mixtures: &[Spectrogram],
    zhats: &[Spectrogram],
    fcp: &FcpConfig,
    weights: &LossWeights,
) -> Result<(McBreakdown, RelativeFilterBank)> {
    check_problem(mixtures, zhats, weights)?;
    if !fcp.is_causal() {
        log::warn!(
            "all-filtered MC loss with {} future taps; the reference filter can absorb the mixture",
            fcp.future
        );
    }
    let bank = estimate_filterbank(mixtures, zhats, fcp, true)?;
    let images = bank.images(zhats)?;
    Ok((
        mc_from_images(mixtures, &images, zhats, true, weights)?,
        bank,
    ))
}

/// Estimate filters for `variant` and evaluate its MC loss.
pub fn mc_loss(
    mixtures: &[Spectrogram],
    zhats: &[Spectrogram],
    variant: McVariant,
    fcp: &FcpConfig,
    weights: &LossWeights,
) -> Result<(McBreakdown, RelativeFilterBank)> {
    match variant {
        McVariant::AllFiltered => mc_loss_all_filtered(mixtures, zhats, fcp, weights),
        McVariant::RefUnfiltered => {
            check_problem(mixtures, zhats, weights)?;
            let bank = estimate_filterbank(mixtures, zhats, fcp, false)?;
            Ok((
                mc_loss_ref_unfiltered(mixtures, zhats, &bank, weights)?,
                bank,
            ))
        }
    }
}

/// `Σ_t var_f(log max(|X(t, f)|, floor))` with the population variance.
fn summed_frame_variance(x: &Array2<Complex64>, floor: f64) -> f64 {
    x.axis_iter(Axis(0))
        .map(|row| {
            // Shifted by the first value so that constant frames give an
            // exact zero.
            let l0 = row[0].norm().max(floor).ln();
            let logs: Vec<f64> = row.iter().map(|v| v.norm().max(floor).ln() - l0).collect();
            let n = logs.len() as f64;
            let mean = logs.iter().sum::<f64>() / n;
            logs.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / n
        })
        .sum()
}

/// Intra-source magnitude scattering: per microphone, the mean over
/// speakers of the summed per-frame log-magnitude variance across
/// frequency, normalized by the same quantity of the mixture.
/// `images[p][c]` are the FCP images.
pub fn isms_loss(
    images: &[Vec<Spectrogram>],
    mixtures: &[Spectrogram],
    weights: &LossWeights,
    log_floor: f64,
) -> Result<McBreakdown> {
    let first = mixtures.first().ok_or(Error::EmptyInput("mixtures"))?;
    weights.validate(mixtures.len())?;
    if images.len() != mixtures.len() {
        return Err(mismatch(format!(
            "images for {} microphones, {} mixtures",
            images.len(),
            mixtures.len()
        )));
    }
    if !(log_floor > 0.0) {
        return Err(invalid("log_floor must be positive"));
    }
    let per_mic: Vec<f64> = images
        .iter()
        .zip(mixtures)
        .enumerate()
        .map(|(p, (imgs, y))| {
            if imgs.is_empty() {
                return Err(Error::EmptyInput("speaker images"));
            }
            for s in imgs.iter().chain([y]) {
                first.check_geometry(s)?;
            }
            let den = summed_frame_variance(y.data(), log_floor);
            if den == 0.0 {
                return Err(Error::Degenerate(format!(
                    "mixture {p} has no spectral variation in any frame"
                )));
            }
            let num = imgs
                .iter()
                .map(|x| summed_frame_variance(x.data(), log_floor))
                .sum::<f64>()
                / imgs.len() as f64;
            Ok(weights.alpha(p) * num / den)
        })
        .collect::<Result<_>>()?;
    Ok(McBreakdown {
        total: per_mic.iter().sum(),
        per_mic,
    })
}

/// MC loss of `variant` plus `gamma` times ISMS of the FCP images.
pub fn combined_loss(
    mixtures: &[Spectrogram],
    zhats: &[Spectrogram],
    variant: McVariant,
    fcp: &FcpConfig,
    weights: &LossWeights,
    log_floor: f64,
) -> Result<LossBreakdown> {
    let (mc, bank) = mc_loss(mixtures, zhats, variant, fcp, weights)?;
    // The reference-unfiltered bank keeps the identity at microphone 1,
    // so its images there are the estimates themselves.
    let images = bank.images(zhats)?;
    let isms = isms_loss(&images, mixtures, weights, log_floor)?;
    Ok(LossBreakdown::compose(mc, isms, weights.gamma))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceOptions {
    pub grid_n: usize,
    pub variant: McVariant,
    pub fcp: FcpConfig,
    pub weights: LossWeights,
    /// Reuse the filters fit at `(μ, ν) = (1, 0)` for every grid point
    /// instead of re-estimating them.
    pub freeze_filters: bool,
}

impl SurfaceOptions {
    pub fn new(variant: McVariant, grid_n: usize) -> Self {
        Self {
            grid_n,
            variant,
            fcp: variant.default_fcp(),
            weights: LossWeights::default(),
            freeze_filters: false,
        }
    }
}

/// MC loss over `Ẑ(1) = μ X(1) + ν X(2) + ε/2`, `Ẑ(2) = (1-μ) X(1) +
/// (1-ν) X(2) + ε/2`, with `X(c)` the reference-microphone images and `ε`
/// the reference-microphone noise.
#[derive(Debug, Clone, PartialEq)]
pub struct LossSurface {
    pub grid: Vec<f64>,
    /// `values[[i, j]]` is the loss at `(μ, ν) = (grid[i], grid[j])`.
    pub values: Array2<f64>,
    pub variant: McVariant,
}

impl LossSurface {
    pub fn grid_n(&self) -> usize {
        self.grid.len()
    }

    /// Value at the grid point nearest to `(mu, nu)`.
    pub fn at(&self, mu: f64, nu: f64) -> f64 {
        let idx =
            |v: f64| ((v * (self.grid_n() - 1) as f64).round() as usize).min(self.grid_n() - 1);
        self.values[[idx(mu), idx(nu)]]
    }

    /// Grid indices of the `n` smallest values, ascending; ties keep
    /// row-major order.
    pub fn smallest(&self, n: usize) -> Vec<(usize, usize)> {
        let mut idx: Vec<(usize, usize)> = self.values.indexed_iter().map(|(ij, _)| ij).collect();
        idx.sort_by(|a, b| self.values[*a].total_cmp(&self.values[*b]));
        idx.truncate(n);
        idx
    }

    pub fn min_corner(&self) -> f64 {
        self.at(1.0, 0.0).min(self.at(0.0, 1.0))
    }

    /// Rows `mu,nu,loss` in row-major `(μ, ν)` order, 12 significant
    /// digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("mu,nu,loss\n");
        for ((i, j), v) in self.values.indexed_iter() {
            out.push_str(&format!("{},{},{:.11e}\n", self.grid[i], self.grid[j], v));
        }
        out
    }
}

/// Loss surface of a simulated two-speaker scene.
pub fn loss_surface(
    truth: &SceneTruth,
    stft: &StftConfig,
    opts: &SurfaceOptions,
) -> Result<LossSurface> {
    if truth.num_speakers() != 2 {
        return Err(invalid(format!(
            "the loss surface needs exactly two speakers, scene has {}",
            truth.num_speakers()
        )));
    }
    let mixtures = truth.mixture_spectrograms(stft)?;
    let images = truth.image_spectrograms(stft)?;
    let noise = truth.noise_spectrograms(stft)?;
    loss_surface_from(&mixtures, [&images[0][0], &images[1][0]], &noise[0], opts)
}

/// Loss surface from spectrograms: mixtures, the two reference-microphone
/// images and the reference-microphone noise.
pub fn loss_surface_from(
    mixtures: &[Spectrogram],
    x: [&Spectrogram; 2],
    noise: &Spectrogram,
    opts: &SurfaceOptions,
) -> Result<LossSurface> {
    if opts.grid_n < 2 {
        return Err(invalid("grid_n must be at least 2"));
    }
    let first = mixtures.first().ok_or(Error::EmptyInput("mixtures"))?;
    for s in mixtures.iter().chain(x).chain([noise]) {
        first.check_geometry(s)?;
    }
    opts.fcp.validate()?;
    opts.weights.validate(mixtures.len())?;
    let grid: Vec<f64> = (0..opts.grid_n)
        .map(|i| i as f64 / (opts.grid_n - 1) as f64)
        .collect();
    let ctx = SurfaceContext::new(mixtures, x, noise, opts)?;
    let points: Vec<(usize, usize)> = (0..opts.grid_n)
        .flat_map(|i| (0..opts.grid_n).map(move |j| (i, j)))
        .collect();
    let frozen = if opts.freeze_filters {
        Some(ctx.filters(1.0, 0.0)?)
    } else {
        None
    };
    let values: Vec<f64> = points
        .par_iter()
        .map(|&(i, j)| {
            let (mu, nu) = (grid[i], grid[j]);
            match &frozen {
                Some(g) => ctx.loss(mu, nu, g),
                None => ctx.loss(mu, nu, &ctx.filters(mu, nu)?),
            }
        })
        .collect::<Result<_>>()?;
    Ok(LossSurface {
        values: Array2::from_shape_vec((opts.grid_n, opts.grid_n), values).expect("grid is square"),
        grid,
        variant: opts.variant,
    })
}

/// Basis signals `[X(1), X(2), ε/2]` and their weighted cross-statistics.
/// Every estimate on the surface is a real combination of the basis, so
/// its FCP Gram matrix and right-hand side are quadratic and linear in the
/// combination weights.
struct SurfaceContext<'a> {
    mixtures: &'a [Spectrogram],
    basis: [Spectrogram; 3],
    /// `gram[p][f][a][b]` (`a ≤ b`) and `rhs[p][f][a]`.
    gram: Vec<Vec<[[Vec<Complex64>; 3]; 3]>>,
    rhs: Vec<Vec<[Vec<Complex64>; 3]>>,
    opts: &'a SurfaceOptions,
}

type Filters = Vec<[Vec<Vec<Complex64>>; 2]>;

impl<'a> SurfaceContext<'a> {
    fn new(
        mixtures: &'a [Spectrogram],
        x: [&Spectrogram; 2],
        noise: &Spectrogram,
        opts: &'a SurfaceOptions,
    ) -> Result<Self> {
        let basis = [x[0].clone(), x[1].clone(), noise.scaled(0.5)];
        let lambda = fcp_weight(mixtures, opts.fcp.xi)?;
        let bins = mixtures[0].num_bins();
        let cfg = &opts.fcp;
        let mut gram = Vec::with_capacity(mixtures.len());
        let mut rhs = Vec::with_capacity(mixtures.len());
        for (p, y) in mixtures.iter().enumerate() {
            let w = lambda.index_axis(Axis(0), p);
            let per_bin: Vec<_> = (0..bins)
                .into_par_iter()
                .map(|f| {
                    let wf = w.index_axis(Axis(1), f);
                    let g: [[Vec<Complex64>; 3]; 3] = std::array::from_fn(|a| {
                        std::array::from_fn(|b| {
                            if a <= b {
                                cross_gram(basis[a].bin(f), basis[b].bin(f), Some(wf), cfg)
                            } else {
                                Vec::new()
                            }
                        })
                    });
                    let r: [Vec<Complex64>; 3] = std::array::from_fn(|a| {
                        cross_rhs(basis[a].bin(f), y.bin(f), Some(wf), cfg)
                    });
                    (g, r)
                })
                .collect();
            let (g, r): (Vec<_>, Vec<_>) = per_bin.into_iter().unzip();
            gram.push(g);
            rhs.push(r);
        }
        Ok(Self {
            mixtures,
            basis,
            gram,
            rhs,
            opts,
        })
    }

    fn coefficients(mu: f64, nu: f64) -> [[f64; 3]; 2] {
        [[mu, nu, 1.0], [1.0 - mu, 1.0 - nu, 1.0]]
    }

    fn filtered_mic(&self, p: usize) -> bool {
        p > 0 || self.opts.variant == McVariant::AllFiltered
    }

    /// `filters[p][c][f]`; unfiltered microphones get an empty entry.
    fn filters(&self, mu: f64, nu: f64) -> Result<Filters> {
        let coef = Self::coefficients(mu, nu);
        let taps = self.opts.fcp.taps();
        (0..self.mixtures.len())
            .map(|p| {
                let mut out: [Vec<Vec<Complex64>>; 2] = [Vec::new(), Vec::new()];
                if !self.filtered_mic(p) {
                    return Ok(out);
                }
                for (c, a) in coef.iter().enumerate() {
                    out[c] = (0..self.gram[p].len())
                        .map(|f| {
                            let mut g = vec![Complex64::new(0.0, 0.0); taps * taps];
                            let mut r = vec![Complex64::new(0.0, 0.0); taps];
                            for i in 0..3 {
                                for (rk, v) in r.iter_mut().zip(&self.rhs[p][f][i]) {
                                    *rk += a[i] * v;
                                }
                                for j in i..3 {
                                    let w = a[i] * a[j];
                                    if w == 0.0 {
                                        continue;
                                    }
                                    let gij = &self.gram[p][f][i][j];
                                    for u in 0..taps {
                                        for v in 0..taps {
                                            g[u * taps + v] += w * gij[u * taps + v];
                                            if i != j {
                                                // G_ji = G_ij^H.
                                                g[u * taps + v] += w * gij[v * taps + u].conj();
                                            }
                                        }
                                    }
                                }
                            }
                            solve_filter(g, &r, self.opts.fcp.ridge)
                        })
                        .collect::<Result<_>>()?;
                }
                Ok(out)
            })
            .collect()
    }

    fn loss(&self, mu: f64, nu: f64, filters: &Filters) -> Result<f64> {
        let coef = Self::coefficients(mu, nu);
        let frames = self.mixtures[0].num_frames();
        let bins = self.mixtures[0].num_bins();
        let zhat = |c: usize, f: usize| -> ndarray::Array1<Complex64> {
            let mut z = ndarray::Array1::zeros(frames);
            for (i, b) in self.basis.iter().enumerate() {
                z.scaled_add(Complex64::new(coef[c][i], 0.0), &b.bin(f));
            }
            z
        };
        let mut total = 0.0;
        for (p, y) in self.mixtures.iter().enumerate() {
            let mut pred = Array2::<Complex64>::zeros((frames, bins));
            for f in 0..bins {
                for c in 0..2 {
                    let z = zhat(c, f);
                    let mut col = pred.column_mut(f);
                    if self.filtered_mic(p) {
                        let g = ndarray::ArrayView1::from(&filters[p][c][f]);
                        for (o, v) in col
                            .iter_mut()
                            .zip(apply_filter(z.view(), g, &self.opts.fcp))
                        {
                            *o += v;
                        }
                    } else {
                        col += &z;
                    }
                }
            }
            total += self.opts.weights.alpha(p) * tf_abs_raw(y.data(), &pred)?;
        }
        Ok(total)
    }
}
