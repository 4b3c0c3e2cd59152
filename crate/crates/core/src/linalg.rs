//! Small dense and banded Hermitian solvers.
//!
//! Every least-squares problem in the crate reduces to a Hermitian positive
//! definite normal-equation system of modest size (K ≤ 64 for sub-band
//! filters, M ≤ 2048 for time-domain Wiener filters, a band of width C·K for
//! the source update), so a plain Cholesky factorization is all we need.

use std::ops::{Add, AddAssign, Div, Mul, Sub, SubAssign};

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Scalar field the solvers operate on (real or complex double).
pub trait Field:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + AddAssign
    + SubAssign
    + Send
    + Sync
    + 'static
{
    fn zero() -> Self;
    fn from_re(re: f64) -> Self;
    fn conj(self) -> Self;
    fn re(self) -> f64;
    fn abs2(self) -> f64;
    fn is_finite(self) -> bool;
}

impl Field for f64 {
    fn zero() -> Self {
        0.0
    }
    fn from_re(re: f64) -> Self {
        re
    }
    fn conj(self) -> Self {
        self
    }
    fn re(self) -> f64 {
        self
    }
    fn abs2(self) -> f64 {
        self * self
    }
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
}

impl Field for Complex64 {
    fn zero() -> Self {
        Complex64::new(0.0, 0.0)
    }
    fn from_re(re: f64) -> Self {
        Complex64::new(re, 0.0)
    }
    fn conj(self) -> Self {
        Complex64::conj(&self)
    }
    fn re(self) -> f64 {
        self.re
    }
    fn abs2(self) -> f64 {
        self.norm_sqr()
    }
    fn is_finite(self) -> bool {
        Complex64::is_finite(self)
    }
}

/// Dense row-major Hermitian matrix.
#[derive(Debug, Clone)]
pub struct DenseHermitian<T> {
    n: usize,
    data: Vec<T>,
}

impl<T: Field> DenseHermitian<T> {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![T::zero(); n * n],
        }
    }

    pub fn from_rows(n: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), n * n);
        Self { n, data }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.n + j] = v;
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.n + j] += v;
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i).re()).sum()
    }

    pub fn add_diagonal(&mut self, v: f64) {
        for i in 0..self.n {
            self.add(i, i, T::from_re(v));
        }
    }

    /// `y = A x`.
    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        (0..self.n)
            .map(|i| {
                let row = &self.data[i * self.n..(i + 1) * self.n];
                row.iter()
                    .zip(x)
                    .fold(T::zero(), |acc, (&a, &b)| acc + a * b)
            })
            .collect()
    }

    /// Solve `A x = b` by Cholesky factorization; the lower triangle of `A`
    /// is read and the matrix is left untouched.
    pub fn solve(&self, b: &[T]) -> Result<Vec<T>> {
        let n = self.n;
        assert_eq!(b.len(), n);
        let mut l = vec![T::zero(); n * n];
        for j in 0..n {
            let mut d = self.get(j, j).re();
            for k in 0..j {
                d -= l[j * n + k].abs2();
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::Singular(format!(
                    "non-positive pivot {d:.3e} at column {j} of {n}"
                )));
            }
            let djj = d.sqrt();
            l[j * n + j] = T::from_re(djj);
            for i in j + 1..n {
                let mut s = self.get(i, j);
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k].conj();
                }
                l[i * n + j] = s / T::from_re(djj);
            }
        }
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= l[i * n + k] * y[k];
            }
            y[i] = s / l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s -= l[k * n + i].conj() * y[k];
            }
            y[i] = s / l[i * n + i];
        }
        Ok(y)
    }
}

/// Hermitian matrix with half-bandwidth `bw`, lower band stored row by row:
/// `band[i * (bw + 1) + d] = A[i][i - d]`.
#[derive(Debug, Clone)]
pub struct BandedHermitian<T> {
    n: usize,
    bw: usize,
    band: Vec<T>,
}

impl<T: Field> BandedHermitian<T> {
    pub fn zeros(n: usize, bw: usize) -> Self {
        Self {
            n,
            bw,
            band: vec![T::zero(); n * (bw + 1)],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    /// Accumulate into `A[i][j]` for `i ≥ j`; the upper triangle is implied.
    #[inline]
    pub fn add_lower(&mut self, i: usize, j: usize, v: T) {
        debug_assert!(i >= j && i - j <= self.bw);
        self.band[i * (self.bw + 1) + (i - j)] += v;
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        if i >= j {
            if i - j > self.bw {
                T::zero()
            } else {
                self.band[i * (self.bw + 1) + (i - j)]
            }
        } else {
            self.get(j, i).conj()
        }
    }

    pub fn add_diagonal(&mut self, v: f64) {
        for i in 0..self.n {
            self.band[i * (self.bw + 1)] += T::from_re(v);
        }
    }

    pub fn to_dense(&self) -> DenseHermitian<T> {
        let mut d = DenseHermitian::zeros(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                d.set(i, j, self.get(i, j));
            }
        }
        d
    }

    /// Banded Cholesky solve in O(n·bw²). Returns the solution and a crude
    /// condition estimate (ratio of extreme squared pivots).
    pub fn solve(&self, b: &[T]) -> Result<(Vec<T>, f64)> {
        let (n, w) = (self.n, self.bw);
        assert_eq!(b.len(), n);
        let stride = w + 1;
        // l[i * stride + d] = L[i][i - d]
        let mut l = vec![T::zero(); n * stride];
        let mut pmin = f64::INFINITY;
        let mut pmax = 0.0f64;
        for j in 0..n {
            let m = j - j.saturating_sub(w);
            let mut d = self.band[j * stride].re();
            for v in &l[j * stride + 1..j * stride + 1 + m] {
                d -= v.abs2();
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::Singular(format!(
                    "non-positive banded pivot {d:.3e} at row {j} of {n}"
                )));
            }
            pmin = pmin.min(d);
            pmax = pmax.max(d);
            let djj = d.sqrt();
            l[j * stride] = T::from_re(djj);
            let hi = (j + w).min(n - 1);
            let inv = T::from_re(1.0 / djj);
            for i in j + 1..=hi {
                // Shared columns k in [max(i, j) - w, j): offsets i-k and j-k
                // both run contiguously, so walk the two rows as slices.
                let off = i - j;
                let m = j - i.saturating_sub(w);
                let (head, tail) = l.split_at_mut(i * stride);
                let row_j = &head[j * stride + 1..j * stride + 1 + m];
                let row_i = &tail[off + 1..off + 1 + m];
                let s = row_i
                    .iter()
                    .zip(row_j)
                    .fold(self.band[i * stride + off], |acc, (&a, &b)| {
                        acc - a * b.conj()
                    });
                tail[off] = s * inv;
            }
        }
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in i.saturating_sub(w)..i {
                s -= l[i * stride + (i - k)] * y[k];
            }
            y[i] = s / l[i * stride];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..=(i + w).min(n - 1) {
                s -= l[k * stride + (k - i)].conj() * y[k];
            }
            y[i] = s / l[i * stride];
        }
        Ok((y, pmax / pmin))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(n: usize, bw: usize, rng: &mut ChaCha8Rng) -> BandedHermitian<Complex64> {
        // A = B^H B + I with B banded keeps A banded (bandwidth 2·bw) and SPD.
        let mut b = vec![Complex64::new(0.0, 0.0); n * n];
        for i in 0..n {
            for j in i..(i + bw + 1).min(n) {
                b[i * n + j] = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            }
        }
        let mut a = BandedHermitian::zeros(n, 2 * bw);
        for i in 0..n {
            for j in i.saturating_sub(2 * bw)..=i {
                let mut s = Complex64::new(0.0, 0.0);
                for k in 0..n {
                    s += b[k * n + i].conj() * b[k * n + j];
                }
                a.add_lower(i, j, s);
            }
        }
        a.add_diagonal(1.0);
        a
    }

    #[test]
    fn banded_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_spd(40, 3, &mut rng);
        let rhs: Vec<Complex64> = (0..40)
            .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let (xb, cond) = a.solve(&rhs).unwrap();
        let xd = a.to_dense().solve(&rhs).unwrap();
        for (u, v) in xb.iter().zip(&xd) {
            assert!((u - v).norm() < 1e-10);
        }
        assert!(cond >= 1.0);
        let back = a.to_dense().matvec(&xb);
        for (u, v) in back.iter().zip(&rhs) {
            assert!((u - v).norm() < 1e-9);
        }
    }

    #[test]
    fn singular_is_reported() {
        let a = DenseHermitian::<f64>::zeros(3);
        assert!(matches!(a.solve(&[1.0, 0.0, 0.0]), Err(Error::Singular(_))));
        let b = BandedHermitian::<f64>::zeros(4, 1);
        assert!(b.solve(&[0.0; 4]).is_err());
    }

    #[test]
    fn real_dense_solve() {
        let a = DenseHermitian::from_rows(2, vec![4.0, 1.0, 1.0, 3.0]);
        let x = a.solve(&[1.0, 2.0]).unwrap();
        assert!((x[0] - 1.0 / 11.0).abs() < 1e-14);
        assert!((x[1] - 7.0 / 11.0).abs() < 1e-14);
    }
}
