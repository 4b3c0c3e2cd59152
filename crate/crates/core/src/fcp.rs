//! Sub-band forward convolutive prediction.
//!
//! For each frequency, a K-tap filter `g` is fit so that `g^H z̃(t)` predicts
//! a target spectrogram, where `z̃(t)` stacks `past` earlier frames, the
//! current frame and `future` later frames of an estimate. The fit is a
//! weighted linear regression with a closed-form solution; the filtered
//! estimate is the FCP image of that estimate at the target microphone.
//!
//! Tap `k` multiplies frame `t - past + k`, so tap `past` is the current
//! frame. Frames outside `[0, T)` are zero.

use ndarray::{Array2, Array3, Array4, ArrayView1, ArrayView2, Axis};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{invalid, mismatch, Error, Result};
use crate::linalg::DenseHermitian;
use crate::signal::Spectrogram;

/// Largest filter length accepted; keeps every per-frequency solve small.
pub const MAX_TAPS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FcpConfig {
    pub past: usize,
    pub future: usize,
    /// Floor of the weighting term, relative to the peak mean mixture power.
    pub xi: f64,
    /// Diagonal loading, relative to `trace(Gram) / K`.
    pub ridge: f64,
}

impl Default for FcpConfig {
    /// Causal 20-tap filters.
    fn default() -> Self {
        Self {
            past: 19,
            future: 0,
            xi: 1e-4,
            ridge: 1e-6,
        }
    }
}

impl FcpConfig {
    pub fn new(past: usize, future: usize) -> Self {
        Self {
            past,
            future,
            ..Self::default()
        }
    }

    pub fn taps(&self) -> usize {
        self.past + 1 + self.future
    }

    pub fn is_causal(&self) -> bool {
        self.future == 0
    }

    pub fn validate(&self) -> Result<()> {
        if self.taps() > MAX_TAPS {
            return Err(invalid(format!(
                "{} taps exceeds the limit of {MAX_TAPS}",
                self.taps()
            )));
        }
        if !(self.xi > 0.0) || !self.xi.is_finite() {
            return Err(invalid("xi must be positive"));
        }
        if !(self.ridge >= 0.0) || !self.ridge.is_finite() {
            return Err(invalid("ridge must be non-negative"));
        }
        Ok(())
    }

    /// Frame feeding tap `k` at output frame `t`, if inside `[0, frames)`.
    #[inline]
    pub fn source_frame(&self, t: usize, k: usize, frames: usize) -> Option<usize> {
        let s = (t + k).checked_sub(self.past)?;
        (s < frames).then_some(s)
    }

    pub fn identity_filter(&self) -> Vec<Complex64> {
        let mut g = vec![Complex64::new(0.0, 0.0); self.taps()];
        g[self.past] = Complex64::new(1.0, 0.0);
        g
    }
}

/// Per-(mic, speaker, frequency) K-tap filters.
#[derive(Debug, Clone, PartialEq)]
pub struct RelativeFilterBank {
    filters: Array4<Complex64>,
    cfg: FcpConfig,
}

impl RelativeFilterBank {
    pub fn identity(mics: usize, speakers: usize, bins: usize, cfg: FcpConfig) -> Self {
        let mut filters = Array4::zeros((mics, speakers, bins, cfg.taps()));
        filters
            .index_axis_mut(Axis(3), cfg.past)
            .fill(Complex64::new(1.0, 0.0));
        Self { filters, cfg }
    }

    pub fn config(&self) -> &FcpConfig {
        &self.cfg
    }

    pub fn num_mics(&self) -> usize {
        self.filters.dim().0
    }

    pub fn num_speakers(&self) -> usize {
        self.filters.dim().1
    }

    pub fn num_bins(&self) -> usize {
        self.filters.dim().2
    }

    /// `(F, K)` filters of one (mic, speaker) pair.
    pub fn filter(&self, mic: usize, speaker: usize) -> ArrayView2<'_, Complex64> {
        self.filters
            .index_axis(Axis(0), mic)
            .index_axis_move(Axis(0), speaker)
    }

    pub fn set_filter(
        &mut self,
        mic: usize,
        speaker: usize,
        g: ArrayView2<'_, Complex64>,
    ) -> Result<()> {
        let mut slot = self.filters.index_axis_mut(Axis(0), mic);
        let mut slot = slot.index_axis_mut(Axis(0), speaker);
        if slot.dim() != g.dim() {
            return Err(mismatch(format!(
                "filter {:?} vs slot {:?}",
                g.dim(),
                slot.dim()
            )));
        }
        slot.assign(&g);
        Ok(())
    }

    pub fn as_array(&self) -> &Array4<Complex64> {
        &self.filters
    }

    pub fn is_finite(&self) -> bool {
        self.filters.iter().all(|v| v.is_finite())
    }

    /// FCP images of every speaker at every microphone, `out[p][c]`.
    pub fn images(&self, zhats: &[Spectrogram]) -> Result<Vec<Vec<Spectrogram>>> {
        if zhats.len() != self.num_speakers() {
            return Err(mismatch(format!(
                "{} estimates for a {}-speaker filter bank",
                zhats.len(),
                self.num_speakers()
            )));
        }
        (0..self.num_mics())
            .map(|p| {
                zhats
                    .iter()
                    .enumerate()
                    .map(|(c, z)| fcp_image(z, self.filter(p, c), &self.cfg))
                    .collect()
            })
            .collect()
    }
}

/// `λ̂_p(t, f) = ξ · max_{t,f}(mean_p |Y_p|²) + |Y_p(t, f)|²`, indexed `(p, t, f)`.
/// The same weights serve every speaker.
pub fn fcp_weight(mixtures: &[Spectrogram], xi: f64) -> Result<Array3<f64>> {
    let first = mixtures.first().ok_or(Error::EmptyInput("mixtures"))?;
    for m in mixtures {
        first.check_geometry(m)?;
    }
    if !(xi > 0.0) {
        return Err(invalid("xi must be positive"));
    }
    let (frames, bins) = first.data().dim();
    let p_count = mixtures.len() as f64;
    let mut power = Array3::zeros((mixtures.len(), frames, bins));
    for (p, m) in mixtures.iter().enumerate() {
        power
            .index_axis_mut(Axis(0), p)
            .assign(&m.data().mapv(|v| v.norm_sqr()));
    }
    let peak = power
        .sum_axis(Axis(0))
        .iter()
        .fold(0.0f64, |a, &b| a.max(b / p_count));
    if !(peak > 0.0) {
        return Err(Error::Degenerate(
            "all-zero mixture gives zero FCP weights".into(),
        ));
    }
    let floor = xi * peak;
    Ok(power.mapv(|v| floor + v))
}

/// `Σ_t a~(t) b~(t)^H / λ(t)`.
pub(crate) fn cross_gram(
    a: ArrayView1<'_, Complex64>,
    b: ArrayView1<'_, Complex64>,
    weights: Option<ArrayView1<'_, f64>>,
    cfg: &FcpConfig,
) -> Vec<Complex64> {
    let taps = cfg.taps();
    let frames = a.len();
    let mut g = vec![Complex64::new(0.0, 0.0); taps * taps];
    let mut sa = vec![Complex64::new(0.0, 0.0); taps];
    let mut sb = vec![Complex64::new(0.0, 0.0); taps];
    for t in 0..frames {
        let inv = weights.as_ref().map_or(1.0, |w| 1.0 / w[t]);
        for k in 0..taps {
            let s = cfg.source_frame(t, k, frames);
            sa[k] = s.map_or(Complex64::new(0.0, 0.0), |s| a[s]);
            sb[k] = s.map_or(Complex64::new(0.0, 0.0), |s| b[s]).conj() * inv;
        }
        for i in 0..taps {
            if sa[i] == Complex64::new(0.0, 0.0) {
                continue;
            }
            for j in 0..taps {
                g[i * taps + j] += sa[i] * sb[j];
            }
        }
    }
    g
}

/// `Σ_t z~(t) y(t)^* / λ(t)`.
pub(crate) fn cross_rhs(
    z: ArrayView1<'_, Complex64>,
    y: ArrayView1<'_, Complex64>,
    weights: Option<ArrayView1<'_, f64>>,
    cfg: &FcpConfig,
) -> Vec<Complex64> {
    let taps = cfg.taps();
    let frames = z.len();
    let mut r = vec![Complex64::new(0.0, 0.0); taps];
    for t in 0..frames {
        let yw = y[t].conj() * weights.as_ref().map_or(1.0, |w| 1.0 / w[t]);
        for (k, rk) in r.iter_mut().enumerate() {
            if let Some(s) = cfg.source_frame(t, k, frames) {
                *rk += z[s] * yw;
            }
        }
    }
    r
}

/// Solve `(R + ridge · tr(R)/K · I) g = r`. A zero Gram matrix (silent
/// estimate at this frequency) yields the zero filter.
pub(crate) fn solve_filter(
    gram: Vec<Complex64>,
    rhs: &[Complex64],
    ridge: f64,
) -> Result<Vec<Complex64>> {
    let taps = rhs.len();
    let mut r = DenseHermitian::from_rows(taps, gram);
    let tr = r.trace();
    if tr == 0.0 {
        return Ok(vec![Complex64::new(0.0, 0.0); taps]);
    }
    r.add_diagonal(ridge * tr / taps as f64);
    r.solve(rhs)
}

fn check_inputs(
    zhat: &Spectrogram,
    y: &Spectrogram,
    weights: Option<ArrayView2<'_, f64>>,
) -> Result<()> {
    zhat.check_geometry(y)?;
    if let Some(w) = weights {
        if w.dim() != zhat.data().dim() {
            return Err(mismatch(format!(
                "weights {:?} vs spectrogram {:?}",
                w.dim(),
                zhat.data().dim()
            )));
        }
        if w.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::Degenerate("FCP weights must be positive".into()));
        }
    }
    if zhat
        .data()
        .iter()
        .chain(y.data().iter())
        .any(|v| !v.is_finite())
    {
        return Err(Error::NonFinite("FCP input"));
    }
    Ok(())
}

/// Closed-form weighted FCP filter per frequency, returned as `(F, K)`.
/// `weights` is the `(T, F)` slice of `λ̂` for the target microphone;
/// `None` weighs every frame equally.
pub fn estimate_filter(
    zhat: &Spectrogram,
    y_p: &Spectrogram,
    weights: Option<ArrayView2<'_, f64>>,
    cfg: &FcpConfig,
) -> Result<Array2<Complex64>> {
    cfg.validate()?;
    check_inputs(zhat, y_p, weights)?;
    let bins = zhat.num_bins();
    let taps = cfg.taps();
    let rows: Vec<Vec<Complex64>> = (0..bins)
        .into_par_iter()
        .map(|f| {
            let z = zhat.bin(f);
            let w = weights.map(|w| w.index_axis_move(Axis(1), f));
            let gram = cross_gram(z, z, w, cfg);
            let rhs = cross_rhs(z, y_p.bin(f), w, cfg);
            solve_filter(gram, &rhs, cfg.ridge)
        })
        .collect::<Result<_>>()?;
    let mut out = Array2::zeros((bins, taps));
    for (f, g) in rows.into_iter().enumerate() {
        out.row_mut(f).iter_mut().zip(g).for_each(|(o, v)| *o = v);
    }
    Ok(out)
}

/// `g^H z~(t)` for one frequency bin.
pub fn apply_filter(
    z: ArrayView1<'_, Complex64>,
    g: ArrayView1<'_, Complex64>,
    cfg: &FcpConfig,
) -> Vec<Complex64> {
    let frames = z.len();
    (0..frames)
        .map(|t| {
            g.iter()
                .enumerate()
                .filter_map(|(k, gk)| cfg.source_frame(t, k, frames).map(|s| gk.conj() * z[s]))
                .sum()
        })
        .collect()
}

/// FCP-estimated image: the estimate filtered per frequency.
pub fn fcp_image(
    zhat: &Spectrogram,
    filter: ArrayView2<'_, Complex64>,
    cfg: &FcpConfig,
) -> Result<Spectrogram> {
    if filter.dim() != (zhat.num_bins(), cfg.taps()) {
        return Err(mismatch(format!(
            "filter {:?} for {} bins and {} taps",
            filter.dim(),
            zhat.num_bins(),
            cfg.taps()
        )));
    }
    let mut out = Array2::zeros(zhat.data().dim());
    for f in 0..zhat.num_bins() {
        let col = apply_filter(zhat.bin(f), filter.row(f), cfg);
        out.column_mut(f)
            .iter_mut()
            .zip(col)
            .for_each(|(o, v)| *o = v);
    }
    Spectrogram::new(out, *zhat.config())
}

/// Weighted prediction residual `Σ_t |y - g^H z~|² / λ` per frequency.
pub fn weighted_residual(
    zhat: &Spectrogram,
    y_p: &Spectrogram,
    weights: Option<ArrayView2<'_, f64>>,
    filter: ArrayView2<'_, Complex64>,
    cfg: &FcpConfig,
) -> Result<Vec<f64>> {
    check_inputs(zhat, y_p, weights)?;
    Ok((0..zhat.num_bins())
        .map(|f| {
            let pred = apply_filter(zhat.bin(f), filter.row(f), cfg);
            pred.iter()
                .zip(y_p.bin(f))
                .enumerate()
                .map(|(t, (p, y))| (y - p).norm_sqr() / weights.map_or(1.0, |w| w[[t, f]]))
                .sum()
        })
        .collect())
}

/// Per-speaker FCP filters for every microphone. With `filter_reference`
/// false the reference microphone keeps the identity filter.
pub fn estimate_filterbank(
    mixtures: &[Spectrogram],
    zhats: &[Spectrogram],
    cfg: &FcpConfig,
    filter_reference: bool,
) -> Result<RelativeFilterBank> {
    cfg.validate()?;
    let first = zhats.first().ok_or(Error::EmptyInput("estimates"))?;
    for z in zhats {
        first.check_geometry(z)?;
    }
    let lambda = fcp_weight(mixtures, cfg.xi)?;
    let mut bank =
        RelativeFilterBank::identity(mixtures.len(), zhats.len(), first.num_bins(), *cfg);
    for (p, y) in mixtures.iter().enumerate() {
        if p == 0 && !filter_reference {
            continue;
        }
        for (c, z) in zhats.iter().enumerate() {
            let g = estimate_filter(z, y, Some(lambda.index_axis(Axis(0), p)), cfg)?;
            bank.set_filter(p, c, g.view())?;
        }
    }
    Ok(bank)
}
