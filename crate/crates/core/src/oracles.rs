//! Independent reference values: Wick-pairing GUE moments at finite N,
//! the quartic one-matrix model moments from the spectral density, Catalan
//! numbers, and finite-difference differential operators on matrix space.
//!
//! These are deliberately computed along different routes than the
//! estimators and symbolic operators they are compared against.

use num_complex::Complex64;

use crate::matrix::{tr_orthonormal_basis, MatrixTuple};

/// Catalan numbers `C_0..C_k`.
pub fn catalan(k: usize) -> Vec<f64> {
    let mut c = vec![1.0f64];
    for i in 0..k {
        // C_{i+1} = C_i * 2(2i+1)/(i+2)
        let next = c[i] * 2.0 * (2.0 * i as f64 + 1.0) / (i as f64 + 2.0);
        c.push(next);
    }
    c
}

/// Exact finite-N GUE moment `E tau(S^{2k})` for `E tau(S^2) = 1`, by
/// summing `N^{-2 genus}` over all pairings of the 2k-gon. The genus comes
/// from the face count of the glued surface: faces are the cycles of
/// `gamma ∘ pi` with `gamma` the full cycle.
pub fn gue_moment(k: usize, n: usize) -> f64 {
    if k == 0 {
        return 1.0;
    }
    let len = 2 * k;
    let mut pairing = vec![usize::MAX; len];
    let mut total = 0.0;
    fn recurse(pairing: &mut Vec<usize>, len: usize, n: usize, k: usize, total: &mut f64) {
        let first = match pairing.iter().position(|&p| p == usize::MAX) {
            Some(i) => i,
            None => {
                // count cycles of i -> pairing[i] + 1 mod len
                let mut seen = vec![false; len];
                let mut faces = 0usize;
                for start in 0..len {
                    if seen[start] {
                        continue;
                    }
                    faces += 1;
                    let mut i = start;
                    while !seen[i] {
                        seen[i] = true;
                        i = (pairing[i] + 1) % len;
                    }
                }
                // exponent faces - k - 1 = -2 genus
                let expo = faces as i64 - k as i64 - 1;
                *total += (n as f64).powi(expo as i32);
                return;
            }
        };
        for j in (first + 1)..len {
            if pairing[j] == usize::MAX {
                pairing[first] = j;
                pairing[j] = first;
                recurse(pairing, len, n, k, total);
                pairing[first] = usize::MAX;
                pairing[j] = usize::MAX;
            }
        }
    }
    recurse(&mut pairing, len, n, k, &mut total);
    total
}

/// Moments of the limiting spectral law of the quartic one-matrix model
/// `V = 1/2 tau(x^2) + g tau(x^4)`: the density is
/// `(1 + 8 g a^2 + 4 g x^2) sqrt(4 a^2 - x^2) / 2 pi` on `[-2a, 2a]` with
/// `12 g a^4 + a^2 = 1`, giving
/// `m_{2k} = (1 + 8 g a^2) a^{2k+2} C_k + 4 g a^{2k+4} C_{k+1}`.
/// These are exactly the moments solving the loop-equation recursion
/// `m_{j+1} + 4 g m_{j+3} = sum_{i+l=j-1} m_i m_l`.
pub fn quartic_moments(g: f64, max_even: usize) -> Vec<f64> {
    let a2 = if g == 0.0 {
        1.0
    } else {
        (-1.0 + (1.0 + 48.0 * g).sqrt()) / (24.0 * g)
    };
    let kmax = max_even / 2;
    let cat = catalan(kmax + 1);
    (0..=kmax)
        .map(|k| {
            (1.0 + 8.0 * g * a2) * a2.powi(k as i32 + 1) * cat[k]
                + 4.0 * g * a2.powi(k as i32 + 2) * cat[k + 1]
        })
        .collect()
}

/// Central finite-difference directional derivative of a scalar function
/// on matrix tuples.
pub fn fd_directional<F: Fn(&MatrixTuple) -> f64>(
    f: F,
    x: &MatrixTuple,
    h: &MatrixTuple,
    eps: f64,
) -> f64 {
    let mut xp = x.clone();
    xp.axpy(eps, h);
    let mut xm = x.clone();
    xm.axpy(-eps, h);
    (f(&xp) - f(&xm)) / (2.0 * eps)
}

/// Finite-difference Laplacian of a complex-valued function over the full
/// Tr-orthonormal basis of a block of variables, normalized by `1/N`:
/// approximates `(1/N) Delta_block f (x)`.
pub fn fd_laplacian_block<F: Fn(&MatrixTuple) -> Complex64>(
    f: F,
    x: &MatrixTuple,
    block: &[usize],
    eps: f64,
) -> Complex64 {
    let basis = tr_orthonormal_basis(x.n);
    let f0 = f(x);
    let mut acc = Complex64::ZERO;
    for &j in block {
        for e in &basis {
            let mut xp = x.clone();
            xp.mats[j] += e * Complex64::new(eps, 0.0);
            let mut xm = x.clone();
            xm.mats[j] -= e * Complex64::new(eps, 0.0);
            acc += (f(&xp) - 2.0 * f0 + f(&xm)) / Complex64::new(eps * eps, 0.0);
        }
    }
    acc / Complex64::new(x.n as f64, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalan_values() {
        assert_eq!(catalan(5), vec![1.0, 1.0, 2.0, 5.0, 14.0, 42.0]);
    }

    #[test]
    fn gue_moments_finite_n() {
        // E tau(S^2) = 1 exactly; E tau(S^4) = 2 + 1/N^2;
        // E tau(S^6) = 5 + 10/N^2; E tau(S^8) = 14 + 70/N^2 + 21/N^4
        for n in [2usize, 4, 16] {
            let n2 = (n * n) as f64;
            assert!((gue_moment(1, n) - 1.0).abs() < 1e-12);
            assert!((gue_moment(2, n) - (2.0 + 1.0 / n2)).abs() < 1e-12);
            assert!((gue_moment(3, n) - (5.0 + 10.0 / n2)).abs() < 1e-12);
            assert!((gue_moment(4, n) - (14.0 + 70.0 / n2 + 21.0 / (n2 * n2))).abs() < 1e-12);
        }
    }

    #[test]
    fn quartic_moments_satisfy_loop_equation() {
        let g = 0.1;
        let m = quartic_moments(g, 10);
        // normalization
        assert!((m[0] - 1.0).abs() < 1e-12);
        // m_{j+1} + 4g m_{j+3} = sum_{i+l=j-1} m_i m_l for odd j+1 (even data)
        // j = 1: m_2 + 4g m_4 = m_0^2
        assert!((m[1] + 4.0 * g * m[2] - 1.0).abs() < 1e-12);
        // j = 3: m_4 + 4g m_6 = 2 m_2
        assert!((m[2] + 4.0 * g * m[3] - 2.0 * m[1]).abs() < 1e-12);
        // j = 5: m_6 + 4g m_8 = 2 m_4 + m_2^2
        assert!((m[3] + 4.0 * g * m[4] - (2.0 * m[2] + m[1] * m[1])).abs() < 1e-12);
        // g = 0 reduces to Catalan
        let c = quartic_moments(0.0, 6);
        assert_eq!(&c[..4], &[1.0, 1.0, 2.0, 5.0]);
    }
}
