//! Hermitian matrix tuples with the normalized trace conventions.
//!
//! Throughout, `tau(a) = Tr(a)/N` and the inner product is
//! `<a,b> = sum_j tau(a_j^* b_j)`, so a GUE matrix normalized to
//! `E tau(S^2) = t` has entrywise variance `t/N`. Lebesgue measure and
//! Laplacians are understood in coordinates of a Tr-orthonormal basis of
//! the real vector space of Hermitian matrices.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::CoreError;

pub type CMatrix = DMatrix<Complex64>;

/// An `m`-tuple of `N x N` Hermitian matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct MatrixTuple {
    pub mats: Vec<CMatrix>,
    pub n: usize,
}

impl MatrixTuple {
    pub fn new(mats: Vec<CMatrix>) -> Result<Self, CoreError> {
        let n = mats.first().map_or(0, |m| m.nrows());
        for m in &mats {
            if m.nrows() != n || m.ncols() != n {
                return Err(CoreError::DimensionMismatch(format!(
                    "expected {n}x{n}, got {}x{}",
                    m.nrows(),
                    m.ncols()
                )));
            }
        }
        Ok(Self { mats, n })
    }

    pub fn zeros(m: usize, n: usize) -> Self {
        Self {
            mats: vec![CMatrix::zeros(n, n); m],
            n,
        }
    }

    /// Scalar tuple `(a_1 I, ..., a_m I)`.
    pub fn scalar(coeffs: &[f64], n: usize) -> Self {
        Self {
            mats: coeffs
                .iter()
                .map(|&a| CMatrix::identity(n, n) * Complex64::new(a, 0.0))
                .collect(),
            n,
        }
    }

    pub fn m(&self) -> usize {
        self.mats.len()
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.mats.iter().all(|a| {
            let d = a - a.adjoint();
            d.iter().all(|z| z.norm() <= tol)
        })
    }

    /// Replace each component with its Hermitian part `(a + a^*)/2`.
    pub fn hermitize(&mut self) {
        for a in &mut self.mats {
            let h = (&*a + a.adjoint()) * Complex64::new(0.5, 0.0);
            *a = h;
        }
    }

    /// `<self, other> = sum_j tau(a_j^* b_j)`, real part.
    pub fn inner(&self, other: &Self) -> f64 {
        debug_assert_eq!(self.m(), other.m());
        let mut acc = Complex64::new(0.0, 0.0);
        for (a, b) in self.mats.iter().zip(&other.mats) {
            acc += a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum::<Complex64>();
        }
        acc.re / self.n as f64
    }

    /// `||self||_2 = sqrt(sum_j tau(a_j^2))`.
    pub fn norm2(&self) -> f64 {
        self.inner(self).max(0.0).sqrt()
    }

    /// Max operator norm over components (largest singular value).
    pub fn opnorm_inf(&self) -> f64 {
        self.mats
            .iter()
            .map(|a| a.clone().singular_values().max())
            .fold(0.0, f64::max)
    }

    /// Per-component normalized traces `tau(a_j)`.
    pub fn taus(&self) -> Vec<Complex64> {
        let n = self.n as f64;
        self.mats.iter().map(|a| a.trace() / n).collect()
    }

    pub fn axpy(&mut self, alpha: f64, x: &Self) {
        let a = Complex64::new(alpha, 0.0);
        for (s, t) in self.mats.iter_mut().zip(&x.mats) {
            *s += t * a;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        let a = Complex64::new(alpha, 0.0);
        for s in &mut self.mats {
            *s *= a;
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.axpy(1.0, other);
        out
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        let mut out = self.clone();
        out.scale(alpha);
        out
    }

    /// Select a sub-tuple by variable indices.
    pub fn select(&self, vars: &[usize]) -> Self {
        Self {
            mats: vars.iter().map(|&j| self.mats[j].clone()).collect(),
            n: self.n,
        }
    }

    /// Concatenate two tuples over the same N.
    pub fn concat(&self, other: &Self) -> Self {
        let mut mats = self.mats.clone();
        mats.extend(other.mats.iter().cloned());
        Self { mats, n: self.n }
    }
}

/// GUE tuple with `E tau(S_j^2) = t` (entrywise variance `t/N`).
pub fn gue_tuple<R: Rng>(m: usize, n: usize, t: f64, rng: &mut R) -> MatrixTuple {
    let mut out = MatrixTuple::zeros(m, n);
    let s_off = (t / (2.0 * n as f64)).sqrt();
    let s_diag = (t / n as f64).sqrt();
    for a in &mut out.mats {
        for i in 0..n {
            let d: f64 = rng.sample(StandardNormal);
            a[(i, i)] = Complex64::new(s_diag * d, 0.0);
            for j in (i + 1)..n {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                let z = Complex64::new(s_off * re, s_off * im);
                a[(i, j)] = z;
                a[(j, i)] = z.conj();
            }
        }
    }
    out
}

/// Hermitian tuple whose Tr-orthonormal coordinates are iid standard normal
/// (so `E tau(G^2) = N`); this is the white noise used by MALA proposals.
pub fn standard_noise<R: Rng>(m: usize, n: usize, rng: &mut R) -> MatrixTuple {
    let mut g = gue_tuple(m, n, n as f64, rng);
    g.hermitize();
    g
}

/// Tr-orthonormal basis of the real vector space of Hermitian `N x N`
/// matrices: `E_ii`, `(E_ij + E_ji)/sqrt(2)`, `i(E_ij - E_ji)/sqrt(2)`.
pub fn tr_orthonormal_basis(n: usize) -> Vec<CMatrix> {
    let mut basis = Vec::with_capacity(n * n);
    let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
    for i in 0..n {
        let mut e = CMatrix::zeros(n, n);
        e[(i, i)] = Complex64::new(1.0, 0.0);
        basis.push(e);
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let mut h = CMatrix::zeros(n, n);
            h[(i, j)] = Complex64::new(inv_sqrt2, 0.0);
            h[(j, i)] = Complex64::new(inv_sqrt2, 0.0);
            basis.push(h);
            let mut k = CMatrix::zeros(n, n);
            k[(i, j)] = Complex64::new(0.0, inv_sqrt2);
            k[(j, i)] = Complex64::new(0.0, -inv_sqrt2);
            basis.push(k);
        }
    }
    basis
}

/// Summary statistics of a set of tuples: mean tuple and `E||X - EX||_2^2`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TupleStats {
    pub mean_taus: Vec<f64>,
    pub variance2: f64,
    pub mean_norm2: f64,
}

pub fn tuple_mean(samples: &[MatrixTuple]) -> MatrixTuple {
    let mut mean = MatrixTuple::zeros(samples[0].m(), samples[0].n);
    for s in samples {
        mean.axpy(1.0, s);
    }
    mean.scale(1.0 / samples.len() as f64);
    mean
}

pub fn tuple_stats(samples: &[MatrixTuple]) -> TupleStats {
    let mean = tuple_mean(samples);
    let variance2 = samples
        .iter()
        .map(|s| {
            let d = s.sub(&mean);
            d.inner(&d)
        })
        .sum::<f64>()
        / samples.len() as f64;
    TupleStats {
        mean_taus: mean.taus().iter().map(|z| z.re).collect(),
        variance2,
        mean_norm2: mean.norm2(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn gue_second_moment() {
        let mut rng = stream(1, "gue-test", 0);
        let mut acc = 0.0;
        let k = 4000;
        for _ in 0..k {
            let s = gue_tuple(1, 8, 1.0, &mut rng);
            acc += s.inner(&s);
        }
        let mean = acc / k as f64;
        assert!((mean - 1.0).abs() < 0.02, "E tau(S^2) = {mean}");
    }

    #[test]
    fn basis_contraction_identities() {
        let n = 3;
        let basis = tr_orthonormal_basis(n);
        assert_eq!(basis.len(), n * n);
        let mut rng = stream(2, "basis", 0);
        let a = gue_tuple(1, n, 1.0, &mut rng).mats[0].clone();
        // sum_i e_i a e_i = Tr(a) I
        let mut s = CMatrix::zeros(n, n);
        for e in &basis {
            s += e * &a * e;
        }
        let expect = CMatrix::identity(n, n) * a.trace();
        assert!((s - expect).norm() < 1e-12);
        // sum_i Tr(e_i a) e_i = a
        let mut s2 = CMatrix::zeros(n, n);
        for e in &basis {
            s2 += e * (e * &a).trace();
        }
        assert!((s2 - a).norm() < 1e-12);
    }
}
