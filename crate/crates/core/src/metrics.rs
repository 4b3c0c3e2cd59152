//! Separation metrics.
//!
//! BSS-eval SDR with a distortion filter is not provided; `snr` is the plain
//! non-scale-invariant companion to SI-SDR.

use crate::align::{pit_speaker_permutation, Metric};
use crate::error::{mismatch, Error, Result};

/// Magnitude of the sentinel returned for degenerate ratios.
pub const CEILING_DB: f64 = 120.0;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn ratio_db(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        return if num == 0.0 { -CEILING_DB } else { CEILING_DB };
    }
    if num == 0.0 {
        return -CEILING_DB;
    }
    (10.0 * (num / den).log10()).clamp(-CEILING_DB, CEILING_DB)
}

fn check(est: &[f64], reference: &[f64]) -> Result<f64> {
    if est.len() != reference.len() {
        return Err(mismatch(format!(
            "estimate has {} samples, reference {}",
            est.len(),
            reference.len()
        )));
    }
    if est.iter().chain(reference).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("metric input"));
    }
    let energy = dot(reference, reference);
    if energy == 0.0 {
        return Err(Error::Degenerate("reference signal is all zeros".into()));
    }
    Ok(energy)
}

/// Scale-invariant SDR in dB, clamped to `±CEILING_DB`.
pub fn si_sdr(est: &[f64], reference: &[f64]) -> Result<f64> {
    let energy = check(est, reference)?;
    let alpha = dot(est, reference) / energy;
    let target = alpha * alpha * energy;
    let err: f64 = est
        .iter()
        .zip(reference)
        .map(|(e, r)| (alpha * r - e).powi(2))
        .sum();
    Ok(ratio_db(target, err))
}

/// `10 log10(‖ref‖² / ‖ref − est‖²)`, clamped to `±CEILING_DB`.
pub fn snr(est: &[f64], reference: &[f64]) -> Result<f64> {
    let energy = check(est, reference)?;
    let err: f64 = est
        .iter()
        .zip(reference)
        .map(|(e, r)| (r - e).powi(2))
        .sum();
    Ok(ratio_db(energy, err))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeakerMetrics {
    pub si_sdr: f64,
    pub snr: f64,
    pub si_sdr_delta: f64,
    pub snr_delta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    /// `permutation[c]` is the estimate assigned to reference `c`.
    pub permutation: Vec<usize>,
    pub speakers: Vec<SpeakerMetrics>,
}

impl MetricReport {
    pub fn mean_si_sdr_delta(&self) -> f64 {
        self.speakers.iter().map(|s| s.si_sdr_delta).sum::<f64>() / self.speakers.len() as f64
    }

    pub fn mean_si_sdr(&self) -> f64 {
        self.speakers.iter().map(|s| s.si_sdr).sum::<f64>() / self.speakers.len() as f64
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("speaker,si_sdr,snr,si_sdr_delta,snr_delta\n");
        for (c, s) in self.speakers.iter().enumerate() {
            out.push_str(&format!(
                "{c},{:.6},{:.6},{:.6},{:.6}\n",
                s.si_sdr, s.snr, s.si_sdr_delta, s.snr_delta
            ));
        }
        out
    }
}

/// PIT-matched SI-SDR and SNR with improvements over the reference-mic
/// mixture.
pub fn report(
    estimates: &[Vec<f64>],
    references: &[Vec<f64>],
    mixture: &[f64],
) -> Result<MetricReport> {
    let (permutation, _) = pit_speaker_permutation(estimates, references, Metric::SiSdr)?;
    let speakers = references
        .iter()
        .zip(&permutation)
        .map(|(r, &e)| {
            let est = &estimates[e];
            let (s, n) = (si_sdr(est, r)?, snr(est, r)?);
            Ok(SpeakerMetrics {
                si_sdr: s,
                snr: n,
                si_sdr_delta: s - si_sdr(mixture, r)?,
                snr_delta: n - snr(mixture, r)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(MetricReport {
        permutation,
        speakers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn tone(n: usize, w: f64) -> Vec<f64> {
        (0..n)
            .map(|i| (w * i as f64).sin() + 0.3 * (2.7 * w * i as f64).cos())
            .collect()
    }

    #[test]
    fn ceilings() {
        let r = tone(500, 0.1);
        assert_eq!(si_sdr(&r, &r).unwrap(), CEILING_DB);
        let doubled: Vec<f64> = r.iter().map(|v| 2.0 * v).collect();
        assert_eq!(si_sdr(&doubled, &r).unwrap(), CEILING_DB);
        assert_eq!(si_sdr(&vec![0.0; 500], &r).unwrap(), -CEILING_DB);
        assert_eq!(snr(&r, &r).unwrap(), CEILING_DB);
    }

    #[test]
    fn snr_hand_values() {
        let r = tone(400, 0.2);
        assert_abs_diff_eq!(snr(&vec![0.0; 400], &r).unwrap(), 0.0, epsilon = 1e-12);
        let half: Vec<f64> = r.iter().map(|v| 0.5 * v).collect();
        assert_abs_diff_eq!(
            snr(&half, &r).unwrap(),
            10.0 * 4f64.log10(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn orthogonal_noise_is_zero_db() {
        let r = tone(1000, 0.05);
        let mut n = tone(1000, 0.31);
        let k = dot(&n, &r) / dot(&r, &r);
        n.iter_mut().zip(&r).for_each(|(a, b)| *a -= k * b);
        let s = (dot(&r, &r) / dot(&n, &n)).sqrt();
        let est: Vec<f64> = r.iter().zip(&n).map(|(a, b)| a + s * b).collect();
        assert_abs_diff_eq!(si_sdr(&est, &r).unwrap(), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn errors() {
        assert!(matches!(si_sdr(&[1.0], &[0.0]), Err(Error::Degenerate(_))));
        assert!(matches!(
            snr(&[1.0, 2.0], &[1.0]),
            Err(Error::GeometryMismatch(_))
        ));
        assert!(si_sdr(&[f64::NAN], &[1.0]).is_err());
    }

    #[test]
    fn report_on_mixture_copies_has_zero_delta() {
        let a = tone(800, 0.07);
        let b = tone(800, 0.19);
        let mix: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let rep = report(&[mix.clone(), mix.clone()], &[a.clone(), b.clone()], &mix).unwrap();
        for s in &rep.speakers {
            assert_abs_diff_eq!(s.si_sdr_delta, 0.0, epsilon = 1e-12);
            assert_abs_diff_eq!(s.snr_delta, 0.0, epsilon = 1e-12);
        }
        let rep = report(&[b.clone(), a.clone()], &[a.clone(), b.clone()], &mix).unwrap();
        assert_eq!(rep.permutation, vec![1, 0]);
        assert_eq!(rep.speakers[0].si_sdr, CEILING_DB);
        let csv = rep.to_csv();
        assert!(csv.starts_with("speaker,si_sdr,snr,si_sdr_delta,snr_delta\n"));
        assert_eq!(csv.lines().count(), 3);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn si_sdr_is_scale_invariant(
                est in proptest::collection::vec(-1.0f64..1.0, 64),
                reference in proptest::collection::vec(-1.0f64..1.0, 64),
                k in 1e-3f64..1e3,
            ) {
                prop_assume!(dot(&reference, &reference) > 1e-3);
                let a = si_sdr(&est, &reference).unwrap();
                let scaled: Vec<f64> = est.iter().map(|v| k * v).collect();
                let b = si_sdr(&scaled, &reference).unwrap();
                prop_assert!((a - b).abs() < 1e-9, "{} vs {}", a, b);
            }
        }
    }
}
