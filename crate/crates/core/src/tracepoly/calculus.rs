//! Laplacians and the heat semigroup on trace polynomials.
//!
//! `laplacian_*` computes the map `L_j` with the defining property
//! `(1/N) Delta_j f = L_j^{(N)} f` on Hermitian tuples, where `Delta_j` is
//! the Laplacian in Tr-orthonormal coordinates of the j-th matrix. The
//! computation uses the two contraction identities of such a basis,
//! `sum_i e_i A e_i = Tr(A) I` and `sum_i Tr(e_i A) Tr(e_i B) = Tr(AB)`:
//! a pair of occurrences of `x_j` inside one traced word splits that word
//! into the product of the two arcs, a pair across two traced factors (or a
//! traced factor and the operator word) merges them with weight `1/N^2`,
//! and a pair inside the operator word cuts out the middle as a trace.
//! The large-N map drops the `1/N^2` terms. Both maps lower the degree by
//! exactly two, so `exp(tL/2)` is evaluated by its (terminating) series.

use num_complex::Complex64;

use super::{OperatorTracePoly, ScalarTracePoly, TraceMonomial, TracedWord, Word};

/// Which Laplacian: the exact finite-N map or its coefficientwise limit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LaplaceMode {
    FiniteN(usize),
    LargeN,
}

impl LaplaceMode {
    fn merge_weight(self) -> f64 {
        match self {
            LaplaceMode::FiniteN(n) => 1.0 / ((n * n) as f64),
            LaplaceMode::LargeN => 0.0,
        }
    }
}

fn occ(word: &Word, j: u8) -> Vec<usize> {
    word.0
        .iter()
        .enumerate()
        .filter_map(|(i, &l)| (l == j).then_some(i))
        .collect()
}

/// Split a cyclic word at a pair of positions `p < q`: the two arcs
/// strictly between the occurrences.
fn arcs(word: &Word, p: usize, q: usize) -> (Word, Word) {
    let inner = Word(word.0[p + 1..q].to_vec());
    let mut outer = word.0[q + 1..].to_vec();
    outer.extend_from_slice(&word.0[..p]);
    (inner, Word(outer))
}

/// Split a cyclic word at one position: suffix then prefix.
fn split_at(word: &Word, p: usize) -> Word {
    let mut v = word.0[p + 1..].to_vec();
    v.extend_from_slice(&word.0[..p]);
    Word(v)
}

fn push_traced(mono: &TraceMonomial, w: Word) -> TraceMonomial {
    match TracedWord::new(w) {
        Some(tw) => {
            let mut words = mono.words().to_vec();
            words.push(tw);
            TraceMonomial::from_words(words)
        }
        None => mono.clone(),
    }
}

fn without_two(mono: &TraceMonomial, r: usize, s: usize) -> TraceMonomial {
    debug_assert!(r < s);
    let mut words = mono.words().to_vec();
    words.remove(s);
    words.remove(r);
    TraceMonomial::from_words(words)
}

fn without_one(mono: &TraceMonomial, r: usize) -> TraceMonomial {
    let mut words = mono.words().to_vec();
    words.remove(r);
    TraceMonomial::from_words(words)
}

fn laplace_term_scalar(
    mono: &TraceMonomial,
    coeff: Complex64,
    j: u8,
    mode: LaplaceMode,
    out: &mut Vec<(TraceMonomial, Complex64)>,
) {
    let words = mono.words();
    let two = Complex64::new(2.0, 0.0);
    // pairs inside one traced word
    for (r, tw) in words.iter().enumerate() {
        let positions = occ(tw.word(), j);
        for a in 0..positions.len() {
            for b in (a + 1)..positions.len() {
                let (inner, outer) = arcs(tw.word(), positions[a], positions[b]);
                let base = without_one(mono, r);
                let m1 = push_traced(&base, inner);
                let m2 = push_traced(&m1, outer);
                out.push((m2, coeff * two));
            }
        }
    }
    // pairs across two traced factors merge them, weight 2/N^2
    let w = mode.merge_weight();
    if w != 0.0 {
        let wq = Complex64::new(2.0 * w, 0.0);
        for r in 0..words.len() {
            let pr = occ(words[r].word(), j);
            if pr.is_empty() {
                continue;
            }
            for s in (r + 1)..words.len() {
                let ps = occ(words[s].word(), j);
                if ps.is_empty() {
                    continue;
                }
                for &p in &pr {
                    for &q in &ps {
                        let u = split_at(words[r].word(), p);
                        let v = split_at(words[s].word(), q);
                        let merged = u.concat(&v);
                        let base = without_two(mono, r, s);
                        out.push((push_traced(&base, merged), coeff * wq));
                    }
                }
            }
        }
    }
}

/// `L_j` (summed over `block`) of a scalar trace polynomial.
pub fn laplacian_scalar(
    f: &ScalarTracePoly,
    block: &[usize],
    mode: LaplaceMode,
) -> ScalarTracePoly {
    let mut acc: Vec<(TraceMonomial, Complex64)> = Vec::new();
    for &j in block {
        for (mono, c) in &f.terms {
            laplace_term_scalar(mono, *c, j as u8, mode, &mut acc);
        }
    }
    ScalarTracePoly::from_terms(acc, f.nvars)
}

/// `L_j` (summed over `block`) of an operator-valued trace polynomial.
pub fn laplacian_operator(
    f: &OperatorTracePoly,
    block: &[usize],
    mode: LaplaceMode,
) -> OperatorTracePoly {
    let two = Complex64::new(2.0, 0.0);
    let mut acc: Vec<(TraceMonomial, Word, Complex64)> = Vec::new();
    for &jj in block {
        let j = jj as u8;
        for (key, c) in &f.terms {
            // traced-part pairs, operator word untouched
            let mut scalar_part: Vec<(TraceMonomial, Complex64)> = Vec::new();
            laplace_term_scalar(&key.mono, *c, j, mode, &mut scalar_part);
            for (m, cc) in scalar_part {
                acc.push((m, key.word.clone(), cc));
            }
            // pairs inside the operator word: cut out the middle as a trace
            let positions = occ(&key.word, j);
            for a in 0..positions.len() {
                for b in (a + 1)..positions.len() {
                    let (p, q) = (positions[a], positions[b]);
                    let middle = Word(key.word.0[p + 1..q].to_vec());
                    let mut rest = key.word.0[..p].to_vec();
                    rest.extend_from_slice(&key.word.0[q + 1..]);
                    acc.push((push_traced(&key.mono, middle), Word(rest), c * two));
                }
            }
            // traced factor x operator word, weight 2/N^2
            let w = mode.merge_weight();
            if w != 0.0 && !positions.is_empty() {
                let wq = Complex64::new(2.0 * w, 0.0);
                for (r, tw) in key.mono.words().iter().enumerate() {
                    for p in occ(tw.word(), j) {
                        let u = split_at(tw.word(), p);
                        for &pos in &positions {
                            let mut new_word = key.word.0[..pos].to_vec();
                            new_word.extend_from_slice(&u.0);
                            new_word.extend_from_slice(&key.word.0[pos + 1..]);
                            acc.push((without_one(&key.mono, r), Word(new_word), c * wq));
                        }
                    }
                }
            }
        }
    }
    OperatorTracePoly::from_terms(acc, f.nvars)
}

/// `exp(t L_block / 2) f` for scalar polynomials. `L` lowers degree by two,
/// so the exponential series terminates after `deg(f)/2 + 1` terms and the
/// result is exact.
pub fn heat_scalar(
    f: &ScalarTracePoly,
    t: f64,
    block: &[usize],
    mode: LaplaceMode,
) -> ScalarTracePoly {
    let mut acc = f.clone();
    let mut g = f.clone();
    let mut k = 1u32;
    loop {
        g = laplacian_scalar(&g, block, mode);
        if g.is_zero() {
            break;
        }
        let w = (t / 2.0) / k as f64;
        g = g.scalar_mul(Complex64::new(w, 0.0));
        acc = acc.add(&g).expect("same variables");
        k += 1;
    }
    acc
}

/// `exp(t L_block / 2) f` for operator-valued polynomials.
pub fn heat_operator(
    f: &OperatorTracePoly,
    t: f64,
    block: &[usize],
    mode: LaplaceMode,
) -> OperatorTracePoly {
    let mut acc = f.clone();
    let mut g = f.clone();
    let mut k = 1u32;
    loop {
        g = laplacian_operator(&g, block, mode);
        if g.is_zero() {
            break;
        }
        let w = (t / 2.0) / k as f64;
        g = g.scalar_mul(Complex64::new(w, 0.0));
        acc = acc.add(&g).expect("same variables");
        k += 1;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tr(letters: &[u8], nv: usize) -> ScalarTracePoly {
        ScalarTracePoly::traced(Word(letters.to_vec()), nv)
    }

    #[test]
    fn laplacian_of_tau_x2_is_two() {
        for mode in [LaplaceMode::FiniteN(3), LaplaceMode::LargeN] {
            let l = laplacian_scalar(&tr(&[0, 0], 1), &[0], mode);
            assert_eq!(l, ScalarTracePoly::constant(Complex64::new(2.0, 0.0), 1));
        }
    }

    #[test]
    fn laplacian_of_tau_x4() {
        // L tau(x^4) = 8 tau(x^2) + 4 tau(x)^2, independent of N
        let l = laplacian_scalar(&tr(&[0, 0, 0, 0], 1), &[0], LaplaceMode::FiniteN(5));
        let expect = tr(&[0, 0], 1)
            .scalar_mul(Complex64::new(8.0, 0.0))
            .add(
                &tr(&[0], 1)
                    .mul(&tr(&[0], 1))
                    .unwrap()
                    .scalar_mul(Complex64::new(4.0, 0.0)),
            )
            .unwrap();
        assert_eq!(l, expect);
    }

    #[test]
    fn laplacian_of_tau_x_squared_product() {
        // L^{(N)} (tau(x)^2) = 2/N^2, large-N limit 0
        let f = tr(&[0], 1).mul(&tr(&[0], 1)).unwrap();
        let l = laplacian_scalar(&f, &[0], LaplaceMode::FiniteN(4));
        assert_eq!(
            l,
            ScalarTracePoly::constant(Complex64::new(2.0 / 16.0, 0.0), 1)
        );
        assert!(laplacian_scalar(&f, &[0], LaplaceMode::LargeN).is_zero());
    }

    #[test]
    fn laplacian_operator_x3() {
        // L x^3 = 4x + 2 tau(x) 1 (any N): degree-lowering internal pairs only
        let f = OperatorTracePoly::from_word(Word(vec![0, 0, 0]), 1);
        let l = laplacian_operator(&f, &[0], LaplaceMode::LargeN);
        let expect = OperatorTracePoly::variable(0, 1)
            .scalar_mul(Complex64::new(4.0, 0.0))
            .add(
                &OperatorTracePoly::from_word(Word::empty(), 1)
                    .mul_scalar_poly(&tr(&[0], 1))
                    .unwrap()
                    .scalar_mul(Complex64::new(2.0, 0.0)),
            )
            .unwrap();
        assert_eq!(l, expect);
    }

    #[test]
    fn heat_fixes_degree_one() {
        let f = tr(&[0], 1);
        let h = heat_scalar(&f, 3.7, &[0], LaplaceMode::FiniteN(4));
        assert_eq!(h, f);
    }

    #[test]
    fn heat_of_tau_x2() {
        // e^{tL/2} tau(x^2) = tau(x^2) + t
        let f = tr(&[0, 0], 1);
        let h = heat_scalar(&f, 0.3, &[0], LaplaceMode::FiniteN(7));
        let expect = f
            .add(&ScalarTracePoly::constant(Complex64::new(0.3, 0.0), 1))
            .unwrap();
        assert_eq!(h, expect);
    }

    #[test]
    fn heat_of_tau_x4_large_n() {
        // e^{tL/2} tau(x^4) = tau(x^4) + 4t tau(x^2) + 2t tau(x)^2 + 2t^2
        let t = 0.7;
        let h = heat_scalar(&tr(&[0, 0, 0, 0], 1), t, &[0], LaplaceMode::LargeN);
        let expect = tr(&[0, 0, 0, 0], 1)
            .add(&tr(&[0, 0], 1).scalar_mul(Complex64::new(4.0 * t, 0.0)))
            .unwrap()
            .add(
                &tr(&[0], 1)
                    .mul(&tr(&[0], 1))
                    .unwrap()
                    .scalar_mul(Complex64::new(2.0 * t, 0.0)),
            )
            .unwrap()
            .add(&ScalarTracePoly::constant(
                Complex64::new(2.0 * t * t, 0.0),
                1,
            ))
            .unwrap();
        assert_eq!(h, expect);
        // at x = 0 this gives the fourth semicircle moment 2t^2
        let x0 = crate::matrix::MatrixTuple::zeros(1, 4);
        let v = h.evaluate(&x0).unwrap();
        assert!((v - Complex64::new(2.0 * t * t, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn gue_fourth_moment_finite_n() {
        // e^{L^{(N)}/2} tau(x^4) at 0 = 2 + 1/N^2
        for n in [2usize, 4, 8] {
            let h = heat_scalar(&tr(&[0, 0, 0, 0], 1), 1.0, &[0], LaplaceMode::FiniteN(n));
            let x0 = crate::matrix::MatrixTuple::zeros(1, n);
            let v = h.evaluate(&x0).unwrap().re;
            let expect = 2.0 + 1.0 / (n * n) as f64;
            assert!((v - expect).abs() < 1e-13, "N={n}: {v} vs {expect}");
        }
    }

    #[test]
    fn partial_block_heat() {
        // x-block heat leaves tau(y^2) alone and moves tau(x^2)
        let f = tr(&[0, 0], 2).add(&tr(&[1, 1], 2)).unwrap();
        let h = heat_scalar(&f, 1.0, &[0], LaplaceMode::LargeN);
        let expect = f
            .add(&ScalarTracePoly::constant(Complex64::ONE, 2))
            .unwrap();
        assert_eq!(h, expect);
    }

    #[test]
    fn semigroup_law_coefficientwise() {
        let f = tr(&[0, 0, 0, 0, 0, 0], 1);
        let mode = LaplaceMode::FiniteN(3);
        let a = heat_scalar(&heat_scalar(&f, 0.4, &[0], mode), 0.6, &[0], mode);
        let b = heat_scalar(&f, 1.0, &[0], mode);
        for (k, c) in &a.terms {
            let d = b.terms.get(k).copied().unwrap_or(Complex64::ZERO);
            assert!((c - d).norm() < 1e-10);
        }
        assert_eq!(a.terms.len(), b.terms.len());
    }

    #[test]
    fn degree_drops_by_two() {
        let f = tr(&[0, 1, 0, 1, 0, 0], 2);
        let l = laplacian_scalar(&f, &[0, 1], LaplaceMode::FiniteN(3));
        assert!(l.degree() <= f.degree() - 2);
    }
}
