//! Time-domain Wiener filters and the reverberation-as-supervision loss.
//!
//! Tap `j` of an `M`-tap filter multiplies `ẑ(n - (j - future_taps))`, so
//! the first `future_taps` taps look ahead, tap `future_taps` is the current
//! sample and the rest look back. Filtering keeps the input length: samples
//! outside the signal are zero and the fit runs over exactly the output
//! samples.

use rayon::prelude::*;

use crate::error::{invalid, mismatch, Error, Result};
use crate::linalg::DenseHermitian;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WienerConfig {
    pub taps: usize,
    pub future_taps: usize,
    /// Diagonal loading relative to `trace(R) / M`.
    pub ridge: f64,
}

impl Default for WienerConfig {
    /// 512 taps: 100 ahead, the current sample and 411 behind.
    fn default() -> Self {
        Self {
            taps: 512,
            future_taps: 100,
            ridge: 1e-9,
        }
    }
}

impl WienerConfig {
    pub fn causal(taps: usize) -> Self {
        Self {
            taps,
            future_taps: 0,
            ridge: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.taps == 0 {
            return Err(invalid("Wiener filter needs at least one tap"));
        }
        if self.future_taps >= self.taps {
            return Err(invalid(format!(
                "future_taps ({}) must be below taps ({})",
                self.future_taps, self.taps
            )));
        }
        if !(self.ridge >= 0.0) || !self.ridge.is_finite() {
            return Err(invalid("ridge must be finite and non-negative"));
        }
        Ok(())
    }

    fn lag(&self, j: usize) -> isize {
        j as isize - self.future_taps as isize
    }
}

/// `x(n - lag)` with zeros outside the signal.
#[inline]
fn lagged(x: &[f64], n: isize, lag: isize) -> f64 {
    let i = n - lag;
    if i < 0 || i as usize >= x.len() {
        0.0
    } else {
        x[i as usize]
    }
}

fn check_pair(zhat: &[f64], y: &[f64]) -> Result<()> {
    if zhat.len() != y.len() {
        return Err(mismatch(format!(
            "estimate has {} samples, target {}",
            zhat.len(),
            y.len()
        )));
    }
    if zhat.is_empty() {
        return Err(Error::EmptyInput("Wiener input"));
    }
    if zhat.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("Wiener input"));
    }
    Ok(())
}

/// Least-squares filter `h` minimizing `‖y - h ∗ ẑ‖²`.
pub fn estimate_wiener(zhat: &[f64], y: &[f64], cfg: &WienerConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    check_pair(zhat, y)?;
    if zhat.iter().all(|v| *v == 0.0) {
        return Err(Error::Degenerate("Wiener estimate is all zeros".into()));
    }
    let m = cfg.taps;
    let len = zhat.len() as isize;
    // First row by direct sums; the rest of the Toeplitz-like Gram matrix
    // follows from R[i+1][j+1] = R[i][j] + z(-1-l_i) z(-1-l_j)
    //                          - z(N-1-l_i) z(N-1-l_j).
    let first: Vec<f64> = (0..m)
        .into_par_iter()
        .map(|j| {
            (0..len)
                .map(|n| lagged(zhat, n, cfg.lag(0)) * lagged(zhat, n, cfg.lag(j)))
                .sum()
        })
        .collect();
    let mut r = DenseHermitian::<f64>::zeros(m);
    for j in 0..m {
        r.set(0, j, first[j]);
        r.set(j, 0, first[j]);
    }
    for i in 0..m - 1 {
        for j in i..m - 1 {
            let (li, lj) = (cfg.lag(i), cfg.lag(j));
            let v = r.get(i, j) + lagged(zhat, -1, li) * lagged(zhat, -1, lj)
                - lagged(zhat, len - 1, li) * lagged(zhat, len - 1, lj);
            r.set(i + 1, j + 1, v);
            r.set(j + 1, i + 1, v);
        }
    }
    let rhs: Vec<f64> = (0..m)
        .into_par_iter()
        .map(|j| {
            (0..len)
                .map(|n| lagged(zhat, n, cfg.lag(j)) * y[n as usize])
                .sum()
        })
        .collect();
    let tr = r.trace();
    r.add_diagonal(cfg.ridge * tr / m as f64);
    r.solve(&rhs).map_err(|e| match e {
        Error::Singular(msg) => Error::Singular(format!(
            "Wiener normal equations are singular ({msg}); set ridge > 0"
        )),
        other => other,
    })
}

/// `h ∗ ẑ` at the input length.
pub fn apply_wiener(zhat: &[f64], h: &[f64], cfg: &WienerConfig) -> Result<Vec<f64>> {
    if h.len() != cfg.taps {
        return Err(mismatch(format!(
            "{} filter taps, config says {}",
            h.len(),
            cfg.taps
        )));
    }
    Ok((0..zhat.len() as isize)
        .map(|n| {
            h.iter()
                .enumerate()
                .map(|(j, hj)| hj * lagged(zhat, n, cfg.lag(j)))
                .sum()
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct IrasBreakdown {
    /// `α_p`-weighted per-microphone terms.
    pub per_mic: Vec<f64>,
    pub total: f64,
}

/// `Σ_p α_p ‖y_p - Σ_c ĥ_pc ∗ ẑ_c‖₁ / ‖y_p‖₁`, each filter fit on its own.
/// An empty `alpha` weighs every microphone by 1.
pub fn iras_loss(
    mixtures: &[Vec<f64>],
    zhats: &[Vec<f64>],
    cfg: &WienerConfig,
    alpha: &[f64],
) -> Result<IrasBreakdown> {
    cfg.validate()?;
    if mixtures.is_empty() || zhats.is_empty() {
        return Err(Error::EmptyInput("iRAS signals"));
    }
    if !alpha.is_empty() && alpha.len() != mixtures.len() {
        return Err(invalid(format!(
            "{} alpha weights for {} microphones",
            alpha.len(),
            mixtures.len()
        )));
    }
    for z in zhats {
        for y in mixtures {
            check_pair(z, y)?;
        }
    }
    let per_mic: Vec<f64> = mixtures
        .iter()
        .enumerate()
        .map(|(p, y)| {
            let norm: f64 = y.iter().map(|v| v.abs()).sum();
            if norm == 0.0 {
                return Err(Error::Degenerate(format!("mixture {p} is all zeros")));
            }
            let mut pred = vec![0.0; y.len()];
            for z in zhats {
                if z.iter().all(|v| *v == 0.0) {
                    continue;
                }
                let h = estimate_wiener(z, y, cfg)?;
                for (o, v) in pred.iter_mut().zip(apply_wiener(z, &h, cfg)?) {
                    *o += v;
                }
            }
            let err: f64 = y.iter().zip(&pred).map(|(a, b)| (a - b).abs()).sum();
            Ok(alpha.get(p).copied().unwrap_or(1.0) * err / norm)
        })
        .collect::<Result<_>>()?;
    Ok(IrasBreakdown {
        total: per_mic.iter().sum(),
        per_mic,
    })
}

/// Time-domain taps spanning a `K`-tap sub-band filter:
/// `((K - 1) · hop_ms + win_ms) / 1000 · sr`, rounded to the nearest sample.
pub fn taps_from_stft_filter(
    k: usize,
    hop_ms: f64,
    win_ms: f64,
    sample_rate: u32,
) -> Result<usize> {
    if k == 0 {
        return Err(invalid("sub-band filter needs at least one tap"));
    }
    if !(hop_ms > 0.0) || !(win_ms > 0.0) {
        return Err(invalid("hop and window durations must be positive"));
    }
    Ok((((k - 1) as f64 * hop_ms + win_ms) / 1000.0 * sample_rate as f64).round() as usize)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn energy(x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum()
    }

    #[test]
    fn tap_mapping() {
        assert_eq!(taps_from_stft_filter(13, 8.0, 32.0, 8000).unwrap(), 1024);
        assert_eq!(taps_from_stft_filter(1, 8.0, 32.0, 8000).unwrap(), 256);
        assert_eq!(taps_from_stft_filter(20, 8.0, 32.0, 8000).unwrap(), 1472);
        assert!(taps_from_stft_filter(0, 8.0, 32.0, 8000).is_err());
    }

    #[test]
    fn identity_filter() {
        let z = noise(1, 300);
        let h = estimate_wiener(&z, &z, &WienerConfig::causal(1)).unwrap();
        assert!((h[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn delay_is_found() {
        let z = noise(2, 2000);
        let y: Vec<f64> = (0..2000)
            .map(|n| if n >= 5 { z[n - 5] } else { 0.0 })
            .collect();
        let cfg = WienerConfig::causal(12);
        let h = estimate_wiener(&z, &y, &cfg).unwrap();
        let peak = (0..12)
            .max_by(|a, b| h[*a].abs().total_cmp(&h[*b].abs()))
            .unwrap();
        assert_eq!(peak, 5);
        let fit = apply_wiener(&z, &h, &cfg).unwrap();
        let err: Vec<f64> = y.iter().zip(&fit).map(|(a, b)| a - b).collect();
        assert!(10.0 * (energy(&err) / energy(&y)).log10() < -60.0);
    }

    #[test]
    fn lookahead_convention() {
        let z = noise(3, 1000);
        // y(n) = z(n + 3) needs three samples of lookahead.
        let y: Vec<f64> = (0..1000)
            .map(|n| z.get(n + 3).copied().unwrap_or(0.0))
            .collect();
        let cfg = WienerConfig {
            taps: 10,
            future_taps: 5,
            ridge: 0.0,
        };
        let h = estimate_wiener(&z, &y, &cfg).unwrap();
        assert!((h[2] - 1.0).abs() < 1e-9, "{h:?}");
    }

    #[test]
    fn independent_noise_is_barely_predicted() {
        let z = noise(4, 8000);
        let y = noise(5, 8000);
        let cfg = WienerConfig::causal(512);
        let h = estimate_wiener(&z, &y, &cfg).unwrap();
        let fit = apply_wiener(&z, &h, &cfg).unwrap();
        assert!(energy(&fit) / energy(&y) < 0.2);
    }

    #[test]
    fn residual_is_orthogonal_to_regressors() {
        let z = noise(6, 3000);
        let y: Vec<f64> = noise(7, 3000)
            .iter()
            .zip(&z)
            .map(|(a, b)| 0.3 * a + b)
            .collect();
        let cfg = WienerConfig {
            taps: 64,
            future_taps: 10,
            ridge: 0.0,
        };
        let h = estimate_wiener(&z, &y, &cfg).unwrap();
        let fit = apply_wiener(&z, &h, &cfg).unwrap();
        let e: Vec<f64> = y.iter().zip(&fit).map(|(a, b)| a - b).collect();
        let scale = (energy(&e) * energy(&z)).sqrt();
        for j in 0..cfg.taps {
            let c: f64 = (0..3000)
                .map(|n| e[n] * lagged(&z, n as isize, cfg.lag(j)))
                .sum();
            assert!(c.abs() / scale < 1e-8, "tap {j}: {}", c.abs() / scale);
        }
    }

    #[test]
    fn gram_recurrence_matches_direct_sums() {
        let z = noise(8, 200);
        let y = noise(9, 200);
        let cfg = WienerConfig {
            taps: 16,
            future_taps: 4,
            ridge: 0.0,
        };
        let h = estimate_wiener(&z, &y, &cfg).unwrap();
        let mut r = DenseHermitian::<f64>::zeros(16);
        let mut rhs = vec![0.0; 16];
        for i in 0..16 {
            for n in 0..200 {
                rhs[i] += lagged(&z, n, cfg.lag(i)) * y[n as usize];
                for j in 0..16 {
                    r.add(i, j, lagged(&z, n, cfg.lag(i)) * lagged(&z, n, cfg.lag(j)));
                }
            }
        }
        let direct = r.solve(&rhs).unwrap();
        for (a, b) in h.iter().zip(&direct) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn errors() {
        let z = noise(10, 50);
        assert!(matches!(
            estimate_wiener(&vec![0.0; 50], &z, &WienerConfig::causal(4)),
            Err(Error::Degenerate(_))
        ));
        assert!(estimate_wiener(&z, &z[..40], &WienerConfig::causal(4)).is_err());
        let bad = WienerConfig {
            taps: 4,
            future_taps: 4,
            ridge: 0.0,
        };
        assert!(bad.validate().is_err());
        // Only lag 0 sees a spike on the last sample; the other columns of
        // the normal equations vanish.
        let mut spike = vec![0.0; 50];
        spike[49] = 1.0;
        let err = estimate_wiener(&spike, &z, &WienerConfig::causal(8)).unwrap_err();
        assert!(matches!(err, Error::Singular(ref m) if m.contains("ridge > 0")));
        assert!(estimate_wiener(
            &spike,
            &z,
            &WienerConfig {
                ridge: 1e-6,
                ..WienerConfig::causal(8)
            }
        )
        .is_ok());
    }

    #[test]
    fn iras_single_speaker_identity() {
        let y = vec![noise(11, 500), noise(12, 500)];
        let l = iras_loss(&y[..1], &y[..1], &WienerConfig::causal(4), &[]).unwrap();
        assert!(l.total < 1e-10);
        assert!(iras_loss(&[vec![0.0; 500]], &y[..1], &WienerConfig::causal(4), &[]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(16))]
            #[test]
            fn more_taps_never_fit_worse(seed in 0u64..1000) {
                let z = noise(seed, 600);
                let y: Vec<f64> = noise(seed + 1, 600).iter().zip(&z).map(|(a, b)| a + b).collect();
                let mut last = f64::INFINITY;
                for taps in [4, 8, 16, 32] {
                    let cfg = WienerConfig::causal(taps);
                    let h = estimate_wiener(&z, &y, &cfg).unwrap();
                    let fit = apply_wiener(&z, &h, &cfg).unwrap();
                    let e: f64 = y.iter().zip(&fit).map(|(a, b)| (a - b).powi(2)).sum();
                    prop_assert!(e <= last * (1.0 + 1e-12));
                    last = e;
                }
            }
        }
    }
}
