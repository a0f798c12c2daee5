//! Scalar- and operator-valued trace polynomials in canonical form.
//!
//! A scalar trace polynomial is a linear combination of products
//! `tau(w_1) ... tau(w_k)` of formal traces of words in self-adjoint
//! variables `x_1, ..., x_m`; an operator-valued one carries an extra
//! (non-traced) word factor. Traced words are stored as the
//! lexicographically least cyclic rotation so that `tau(pq) = tau(qp)`
//! holds structurally, monomials as sorted multisets, and term maps are
//! ordered by (degree, lexicographic) for deterministic iteration.
//! `tau(1) = 1` is simplified away eagerly; the empty operator word is the
//! identity.

mod calculus;
mod parse;

pub use calculus::{heat_operator, heat_scalar, laplacian_operator, laplacian_scalar, LaplaceMode};
pub use parse::{parse_operator, parse_scalar, parse_self_adjoint};

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use num_complex::Complex64;

use crate::error::CoreError;
use crate::matrix::{CMatrix, MatrixTuple};

/// A word in the variables, possibly empty (the identity).
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Word(pub Vec<u8>);

impl Word {
    pub fn empty() -> Self {
        Word(Vec::new())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn reversed(&self) -> Self {
        let mut v = self.0.clone();
        v.reverse();
        Word(v)
    }

    pub fn concat(&self, other: &Word) -> Word {
        let mut v = self.0.clone();
        v.extend_from_slice(&other.0);
        Word(v)
    }

    pub fn max_var(&self) -> usize {
        self.0.iter().map(|&l| l as usize + 1).max().unwrap_or(0)
    }

    /// Positions of letter `j` in the word.
    fn occurrences(&self, j: u8) -> Vec<usize> {
        self.0
            .iter()
            .enumerate()
            .filter_map(|(i, &l)| (l == j).then_some(i))
            .collect()
    }

    pub fn evaluate(&self, x: &MatrixTuple) -> CMatrix {
        let n = x.n;
        let mut acc = CMatrix::identity(n, n);
        for &l in &self.0 {
            acc = acc * &x.mats[l as usize];
        }
        acc
    }
}

impl PartialOrd for Word {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Word {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.0.len(), &self.0).cmp(&(other.0.len(), &other.0))
    }
}

/// A traced word stored as its lexicographically least cyclic rotation.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TracedWord(Word);

impl TracedWord {
    /// Canonicalize: minimal rotation. Returns `None` for the empty word,
    /// since `tau(1) = 1` is simplified away.
    pub fn new(word: Word) -> Option<Self> {
        if word.is_empty() {
            return None;
        }
        let v = &word.0;
        let k = v.len();
        let mut best = 0usize;
        for s in 1..k {
            for i in 0..k {
                match v[(s + i) % k].cmp(&v[(best + i) % k]) {
                    Ordering::Less => {
                        best = s;
                        break;
                    }
                    Ordering::Greater => break,
                    Ordering::Equal => {}
                }
            }
        }
        let rotated: Vec<u8> = (0..k).map(|i| v[(best + i) % k]).collect();
        Some(TracedWord(Word(rotated)))
    }

    pub fn word(&self) -> &Word {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    fn adjoint(&self) -> TracedWord {
        TracedWord::new(self.0.reversed()).expect("nonempty")
    }

    pub fn evaluate(&self, x: &MatrixTuple) -> Complex64 {
        self.0.evaluate(x).trace() / (x.n as f64)
    }
}

/// A sorted multiset of traced words (a product of formal traces).
#[derive(Clone, Debug, PartialEq, Eq, Hash, Default)]
pub struct TraceMonomial(Vec<TracedWord>);

impl TraceMonomial {
    pub fn one() -> Self {
        TraceMonomial(Vec::new())
    }

    pub fn from_words(mut words: Vec<TracedWord>) -> Self {
        words.sort();
        TraceMonomial(words)
    }

    pub fn words(&self) -> &[TracedWord] {
        &self.0
    }

    pub fn degree(&self) -> usize {
        self.0.iter().map(TracedWord::len).sum()
    }

    fn merged(&self, other: &Self) -> Self {
        let mut v = self.0.clone();
        v.extend(other.0.iter().cloned());
        v.sort();
        TraceMonomial(v)
    }

    fn with(&self, extra: TracedWord) -> Self {
        let mut v = self.0.clone();
        v.push(extra);
        v.sort();
        TraceMonomial(v)
    }

    fn without_index(&self, idx: usize) -> Self {
        let mut v = self.0.clone();
        v.remove(idx);
        TraceMonomial(v)
    }

    fn adjoint(&self) -> Self {
        TraceMonomial::from_words(self.0.iter().map(TracedWord::adjoint).collect())
    }

    pub fn evaluate(&self, x: &MatrixTuple) -> Complex64 {
        self.0
            .iter()
            .map(|w| w.evaluate(x))
            .product::<Complex64>()
    }

    pub fn max_var(&self) -> usize {
        self.0.iter().map(|w| w.word().max_var()).max().unwrap_or(0)
    }
}

impl PartialOrd for TraceMonomial {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for TraceMonomial {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.degree(), &self.0).cmp(&(other.degree(), &other.0))
    }
}

/// Key of an operator-valued term: traced part and word factor.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct OpKey {
    pub mono: TraceMonomial,
    pub word: Word,
}

impl OpKey {
    pub fn degree(&self) -> usize {
        self.mono.degree() + self.word.len()
    }
}

impl PartialOrd for OpKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OpKey {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.degree(), &self.mono, &self.word).cmp(&(other.degree(), &other.mono, &other.word))
    }
}

fn insert_term<K: Ord>(map: &mut BTreeMap<K, Complex64>, key: K, coeff: Complex64) {
    if coeff == Complex64::ZERO {
        return;
    }
    let entry = map.entry(key).or_insert(Complex64::ZERO);
    *entry += coeff;
    if *entry == Complex64::ZERO {
        // remove exact cancellations; recompute key is avoided by retain below
    }
}

fn prune<K: Ord + Clone>(map: &mut BTreeMap<K, Complex64>) {
    map.retain(|_, c| *c != Complex64::ZERO);
}

/// Scalar-valued trace polynomial.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ScalarTracePoly {
    pub terms: BTreeMap<TraceMonomial, Complex64>,
    pub nvars: usize,
}

impl ScalarTracePoly {
    pub fn zero(nvars: usize) -> Self {
        Self {
            terms: BTreeMap::new(),
            nvars,
        }
    }

    pub fn constant(c: Complex64, nvars: usize) -> Self {
        let mut terms = BTreeMap::new();
        insert_term(&mut terms, TraceMonomial::one(), c);
        prune(&mut terms);
        Self { terms, nvars }
    }

    /// `tau(w)` for a single word.
    pub fn traced(word: Word, nvars: usize) -> Self {
        match TracedWord::new(word) {
            Some(tw) => {
                let mut terms = BTreeMap::new();
                terms.insert(TraceMonomial::from_words(vec![tw]), Complex64::ONE);
                Self { terms, nvars }
            }
            None => Self::constant(Complex64::ONE, nvars),
        }
    }

    pub fn from_terms(terms: Vec<(TraceMonomial, Complex64)>, nvars: usize) -> Self {
        let mut map = BTreeMap::new();
        for (k, c) in terms {
            insert_term(&mut map, k, c);
        }
        prune(&mut map);
        Self { terms: map, nvars }
    }

    pub fn degree(&self) -> usize {
        self.terms.keys().map(TraceMonomial::degree).max().unwrap_or(0)
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn add(&self, other: &Self) -> Result<Self, CoreError> {
        check_vars(self.nvars, other.nvars)?;
        let mut terms = self.terms.clone();
        for (k, c) in &other.terms {
            insert_term(&mut terms, k.clone(), *c);
        }
        prune(&mut terms);
        Ok(Self {
            terms,
            nvars: self.nvars.max(other.nvars),
        })
    }

    pub fn scalar_mul(&self, c: Complex64) -> Self {
        let mut terms = BTreeMap::new();
        for (k, v) in &self.terms {
            insert_term(&mut terms, k.clone(), v * c);
        }
        prune(&mut terms);
        Self {
            terms,
            nvars: self.nvars,
        }
    }

    pub fn sub(&self, other: &Self) -> Result<Self, CoreError> {
        self.add(&other.scalar_mul(-Complex64::ONE))
    }

    pub fn mul(&self, other: &Self) -> Result<Self, CoreError> {
        check_vars(self.nvars, other.nvars)?;
        let mut terms = BTreeMap::new();
        for (k1, c1) in &self.terms {
            for (k2, c2) in &other.terms {
                insert_term(&mut terms, k1.merged(k2), c1 * c2);
            }
        }
        prune(&mut terms);
        Ok(Self {
            terms,
            nvars: self.nvars.max(other.nvars),
        })
    }

    pub fn adjoint(&self) -> Self {
        let mut terms = BTreeMap::new();
        for (k, c) in &self.terms {
            insert_term(&mut terms, k.adjoint(), c.conj());
        }
        prune(&mut terms);
        Self {
            terms,
            nvars: self.nvars,
        }
    }

    pub fn is_self_adjoint(&self) -> bool {
        let adj = self.adjoint();
        if self.terms.len() != adj.terms.len() {
            return false;
        }
        self.terms.iter().zip(adj.terms.iter()).all(|((k1, c1), (k2, c2))| {
            k1 == k2 && (c1 - c2).norm() <= 1e-12 * (1.0 + c1.norm())
        })
    }

    pub fn evaluate(&self, x: &MatrixTuple) -> Result<Complex64, CoreError> {
        if x.m() < self.nvars {
            return Err(CoreError::VariableMismatch(format!(
                "polynomial in {} variables evaluated on a {}-tuple",
                self.nvars,
                x.m()
            )));
        }
        Ok(self
            .terms
            .iter()
            .map(|(k, c)| c * k.evaluate(x))
            .sum::<Complex64>())
    }

    /// Promote into an operator-valued polynomial with identity word.
    pub fn as_operator(&self) -> OperatorTracePoly {
        let mut terms = BTreeMap::new();
        for (k, c) in &self.terms {
            terms.insert(
                OpKey {
                    mono: k.clone(),
                    word: Word::empty(),
                },
                *c,
            );
        }
        OperatorTracePoly {
            terms,
            nvars: self.nvars,
        }
    }

    pub fn max_var(&self) -> usize {
        self.terms.keys().map(TraceMonomial::max_var).max().unwrap_or(0)
    }
}

/// Operator-valued trace polynomial.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct OperatorTracePoly {
    pub terms: BTreeMap<OpKey, Complex64>,
    pub nvars: usize,
}

impl OperatorTracePoly {
    pub fn zero(nvars: usize) -> Self {
        Self {
            terms: BTreeMap::new(),
            nvars,
        }
    }

    /// The bare word `w` (coefficient one, no traced part).
    pub fn from_word(word: Word, nvars: usize) -> Self {
        let mut terms = BTreeMap::new();
        terms.insert(
            OpKey {
                mono: TraceMonomial::one(),
                word,
            },
            Complex64::ONE,
        );
        Self { terms, nvars }
    }

    pub fn variable(j: usize, nvars: usize) -> Self {
        Self::from_word(Word(vec![j as u8]), nvars)
    }

    pub fn from_terms(terms: Vec<(TraceMonomial, Word, Complex64)>, nvars: usize) -> Self {
        let mut map = BTreeMap::new();
        for (m, w, c) in terms {
            insert_term(&mut map, OpKey { mono: m, word: w }, c);
        }
        prune(&mut map);
        Self { terms: map, nvars }
    }

    pub fn degree(&self) -> usize {
        self.terms.keys().map(OpKey::degree).max().unwrap_or(0)
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn add(&self, other: &Self) -> Result<Self, CoreError> {
        check_vars(self.nvars, other.nvars)?;
        let mut terms = self.terms.clone();
        for (k, c) in &other.terms {
            insert_term(&mut terms, k.clone(), *c);
        }
        prune(&mut terms);
        Ok(Self {
            terms,
            nvars: self.nvars.max(other.nvars),
        })
    }

    pub fn scalar_mul(&self, c: Complex64) -> Self {
        let mut terms = BTreeMap::new();
        for (k, v) in &self.terms {
            insert_term(&mut terms, k.clone(), v * c);
        }
        prune(&mut terms);
        Self {
            terms,
            nvars: self.nvars,
        }
    }

    /// Module action of a scalar trace polynomial.
    pub fn mul_scalar_poly(&self, s: &ScalarTracePoly) -> Result<Self, CoreError> {
        check_vars(self.nvars, s.nvars)?;
        let mut terms = BTreeMap::new();
        for (k1, c1) in &self.terms {
            for (k2, c2) in &s.terms {
                insert_term(
                    &mut terms,
                    OpKey {
                        mono: k1.mono.merged(k2),
                        word: k1.word.clone(),
                    },
                    c1 * c2,
                );
            }
        }
        prune(&mut terms);
        Ok(Self {
            terms,
            nvars: self.nvars.max(s.nvars),
        })
    }

    /// Product of operator-valued polynomials: traced parts multiply as
    /// scalars, word factors concatenate.
    pub fn mul(&self, other: &Self) -> Result<Self, CoreError> {
        check_vars(self.nvars, other.nvars)?;
        let mut terms = BTreeMap::new();
        for (k1, c1) in &self.terms {
            for (k2, c2) in &other.terms {
                insert_term(
                    &mut terms,
                    OpKey {
                        mono: k1.mono.merged(&k2.mono),
                        word: k1.word.concat(&k2.word),
                    },
                    c1 * c2,
                );
            }
        }
        prune(&mut terms);
        Ok(Self {
            terms,
            nvars: self.nvars.max(other.nvars),
        })
    }

    pub fn adjoint(&self) -> Self {
        let mut terms = BTreeMap::new();
        for (k, c) in &self.terms {
            insert_term(
                &mut terms,
                OpKey {
                    mono: k.mono.adjoint(),
                    word: k.word.reversed(),
                },
                c.conj(),
            );
        }
        prune(&mut terms);
        Self {
            terms,
            nvars: self.nvars,
        }
    }

    /// `tau(fg)` for operator-valued `f`, `g`: a scalar trace polynomial.
    pub fn trace_pair(&self, other: &Self) -> Result<ScalarTracePoly, CoreError> {
        check_vars(self.nvars, other.nvars)?;
        let mut terms = BTreeMap::new();
        for (k1, c1) in &self.terms {
            for (k2, c2) in &other.terms {
                let prod = k1.word.concat(&k2.word);
                let mono = match TracedWord::new(prod) {
                    Some(tw) => k1.mono.merged(&k2.mono).with(tw),
                    None => k1.mono.merged(&k2.mono),
                };
                insert_term(&mut terms, mono, c1 * c2);
            }
        }
        prune(&mut terms);
        Ok(ScalarTracePoly {
            terms,
            nvars: self.nvars.max(other.nvars),
        })
    }

    /// Formal trace of `f` itself: `tau(f)` in `TrP^0`.
    pub fn formal_trace(&self) -> ScalarTracePoly {
        let mut terms = BTreeMap::new();
        for (k, c) in &self.terms {
            let mono = match TracedWord::new(k.word.clone()) {
                Some(tw) => k.mono.with(tw),
                None => k.mono.clone(),
            };
            insert_term(&mut terms, mono, *c);
        }
        prune(&mut terms);
        ScalarTracePoly {
            terms,
            nvars: self.nvars,
        }
    }

    pub fn evaluate(&self, x: &MatrixTuple) -> Result<CMatrix, CoreError> {
        if x.m() < self.nvars {
            return Err(CoreError::VariableMismatch(format!(
                "polynomial in {} variables evaluated on a {}-tuple",
                self.nvars,
                x.m()
            )));
        }
        let n = x.n;
        let mut acc = CMatrix::zeros(n, n);
        for (k, c) in &self.terms {
            let scalar = c * k.mono.evaluate(x);
            acc += k.word.evaluate(x) * scalar;
        }
        Ok(acc)
    }

    pub fn max_var(&self) -> usize {
        self.terms
            .keys()
            .map(|k| k.mono.max_var().max(k.word.max_var()))
            .max()
            .unwrap_or(0)
    }
}

/// Element of `NCP ⊗ NCP`: finite combination of word pairs.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct BiWord {
    pub terms: BTreeMap<(Word, Word), Complex64>,
    pub nvars: usize,
}

impl BiWord {
    pub fn zero(nvars: usize) -> Self {
        Self {
            terms: BTreeMap::new(),
            nvars,
        }
    }

    pub fn from_terms(terms: Vec<(Word, Word, Complex64)>, nvars: usize) -> Self {
        let mut map = BTreeMap::new();
        for (a, b, c) in terms {
            insert_term(&mut map, (a, b), c);
        }
        prune(&mut map);
        Self { terms: map, nvars }
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut terms = self.terms.clone();
        for (k, c) in &other.terms {
            insert_term(&mut terms, k.clone(), *c);
        }
        prune(&mut terms);
        Self {
            terms,
            nvars: self.nvars.max(other.nvars),
        }
    }

    /// Right-multiply by `1 ⊗ q` (extend second legs).
    pub fn extend_right(&self, q: &Word) -> Self {
        let mut terms = BTreeMap::new();
        for ((a, b), c) in &self.terms {
            insert_term(&mut terms, (a.clone(), b.concat(q)), *c);
        }
        Self {
            terms,
            nvars: self.nvars,
        }
    }

    /// Left-multiply by `p ⊗ 1` (extend first legs).
    pub fn extend_left(&self, p: &Word) -> Self {
        let mut terms = BTreeMap::new();
        for ((a, b), c) in &self.terms {
            insert_term(&mut terms, (p.concat(a), b.clone()), *c);
        }
        Self {
            terms,
            nvars: self.nvars,
        }
    }

    /// Evaluate `(tau ⊗ tau)` on a matrix tuple.
    pub fn eval_tau_tau(&self, x: &MatrixTuple) -> Complex64 {
        let n = x.n as f64;
        self.terms
            .iter()
            .map(|((a, b), c)| c * (a.evaluate(x).trace() / n) * (b.evaluate(x).trace() / n))
            .sum()
    }
}

/// Free difference quotient of a word with respect to variable `j`:
/// each occurrence `w = a x_j b` contributes `a ⊗ b`.
pub fn free_difference_quotient(w: &Word, j: usize) -> BiWord {
    let mut terms = BTreeMap::new();
    for p in w.occurrences(j as u8) {
        let a = Word(w.0[..p].to_vec());
        let b = Word(w.0[p + 1..].to_vec());
        insert_term(&mut terms, (a, b), Complex64::ONE);
    }
    prune(&mut terms);
    BiWord {
        terms,
        nvars: w.max_var().max(j + 1),
    }
}

/// Cyclic gradient `D_j V` of a scalar trace polynomial, characterized by
/// `d/de V(x + e h e_j) = <D_j V(x), h>` for Hermitian directions `h`.
pub fn cyclic_gradient(v: &ScalarTracePoly, j: usize) -> Result<OperatorTracePoly, CoreError> {
    if j >= v.nvars {
        return Err(CoreError::IndexOutOfRange { index: j, m: v.nvars });
    }
    let mut terms = BTreeMap::new();
    for (mono, c) in &v.terms {
        for (r, tw) in mono.words().iter().enumerate() {
            let w = tw.word();
            for p in w.occurrences(j as u8) {
                let mut rotated = w.0[p + 1..].to_vec();
                rotated.extend_from_slice(&w.0[..p]);
                insert_term(
                    &mut terms,
                    OpKey {
                        mono: mono.without_index(r),
                        word: Word(rotated),
                    },
                    *c,
                );
            }
        }
    }
    prune(&mut terms);
    Ok(OperatorTracePoly {
        terms,
        nvars: v.nvars,
    })
}

fn check_vars(a: usize, b: usize) -> Result<(), CoreError> {
    // Polynomials over fewer variables embed into more; only flag the case
    // where both are explicit and unequal in a way the caller forbade.
    let _ = (a, b);
    Ok(())
}

fn fmt_word(w: &Word, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    if w.is_empty() {
        return write!(f, "1");
    }
    let mut first = true;
    let mut i = 0;
    while i < w.0.len() {
        let l = w.0[i];
        let mut k = 1;
        while i + k < w.0.len() && w.0[i + k] == l {
            k += 1;
        }
        if !first {
            write!(f, " ")?;
        }
        first = false;
        if k == 1 {
            write!(f, "x{}", l + 1)?;
        } else {
            write!(f, "x{}^{}", l + 1, k)?;
        }
        i += k;
    }
    Ok(())
}

impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt_word(self, f)
    }
}

impl fmt::Display for ScalarTracePoly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let mut first = true;
        for (mono, c) in &self.terms {
            if !first {
                write!(f, " + ")?;
            }
            first = false;
            write!(f, "({:.6}{:+.6}i)", c.re, c.im)?;
            for tw in mono.words() {
                write!(f, "*tr({})", tw.word())?;
            }
        }
        Ok(())
    }
}

impl fmt::Display for OperatorTracePoly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let mut first = true;
        for (key, c) in &self.terms {
            if !first {
                write!(f, " + ")?;
            }
            first = false;
            write!(f, "({:.6}{:+.6}i)", c.re, c.im)?;
            for tw in key.mono.words() {
                write!(f, "*tr({})", tw.word())?;
            }
            write!(f, "*[{}]", key.word)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w(letters: &[u8]) -> Word {
        Word(letters.to_vec())
    }

    #[test]
    fn cyclic_identification() {
        // tau(x1 x2) - tau(x2 x1) = 0
        let a = ScalarTracePoly::traced(w(&[0, 1]), 2);
        let b = ScalarTracePoly::traced(w(&[1, 0]), 2);
        assert!(a.sub(&b).unwrap().is_zero());
    }

    #[test]
    fn rotation_minimal_storage() {
        let a = ScalarTracePoly::traced(w(&[0, 1, 0, 1]), 2).scalar_mul(Complex64::new(2.0, 0.0));
        let b = ScalarTracePoly::traced(w(&[1, 0, 1, 0]), 2).scalar_mul(Complex64::new(2.0, 0.0));
        assert_eq!(a, b);
    }

    #[test]
    fn multiset_key_merges() {
        // tau(x1)tau(x2) + tau(x2)tau(x1) = 2 tau(x1)tau(x2)
        let t1 = ScalarTracePoly::traced(w(&[0]), 2);
        let t2 = ScalarTracePoly::traced(w(&[1]), 2);
        let p = t1.mul(&t2).unwrap().add(&t2.mul(&t1).unwrap()).unwrap();
        let expect = t1.mul(&t2).unwrap().scalar_mul(Complex64::new(2.0, 0.0));
        assert_eq!(p, expect);
    }

    #[test]
    fn adjoint_reverses_and_conjugates() {
        // adjoint(i x1 x2) = -i x2 x1
        let f = OperatorTracePoly::from_word(w(&[0, 1]), 2).scalar_mul(Complex64::new(0.0, 1.0));
        let g = OperatorTracePoly::from_word(w(&[1, 0]), 2).scalar_mul(Complex64::new(0.0, -1.0));
        assert_eq!(f.adjoint(), g);
    }

    #[test]
    fn trace_pair_of_variables() {
        let f = OperatorTracePoly::variable(0, 2);
        let g = OperatorTracePoly::variable(1, 2);
        let t = f.trace_pair(&g).unwrap();
        assert_eq!(t, ScalarTracePoly::traced(w(&[0, 1]), 2));
    }

    #[test]
    fn scalar_times_operator() {
        // tau(x1^2) * x1 -> term ({x1 x1}, x1)
        let s = ScalarTracePoly::traced(w(&[0, 0]), 1);
        let f = OperatorTracePoly::variable(0, 1).mul_scalar_poly(&s).unwrap();
        assert_eq!(f.terms.len(), 1);
        let key = f.terms.keys().next().unwrap();
        assert_eq!(key.word, w(&[0]));
        assert_eq!(key.mono.degree(), 2);
    }

    #[test]
    fn evaluate_scalar_examples() {
        // tau(x^2) at identity = 1
        let f = ScalarTracePoly::traced(w(&[0, 0]), 1);
        let x = MatrixTuple::scalar(&[1.0], 4);
        assert_eq!(f.evaluate(&x).unwrap(), Complex64::ONE);

        // tau(x)^2 at diag(1,-1) = 0
        let t = ScalarTracePoly::traced(w(&[0]), 1);
        let f2 = t.mul(&t).unwrap();
        let mut d = MatrixTuple::zeros(1, 2);
        d.mats[0][(0, 0)] = Complex64::new(1.0, 0.0);
        d.mats[0][(1, 1)] = Complex64::new(-1.0, 0.0);
        assert_eq!(f2.evaluate(&d).unwrap(), Complex64::ZERO);

        // tau(x1 x2) with x1 = x2 = diag(2,0): tau = 4/2 = 2
        let g = ScalarTracePoly::traced(w(&[0, 1]), 2);
        let mut x2 = MatrixTuple::zeros(2, 2);
        x2.mats[0][(0, 0)] = Complex64::new(2.0, 0.0);
        x2.mats[1][(0, 0)] = Complex64::new(2.0, 0.0);
        assert_eq!(g.evaluate(&x2).unwrap(), Complex64::new(2.0, 0.0));
    }

    #[test]
    fn evaluate_operator_examples() {
        // tau(x^2) * x at x = diag(2,0): tau = 2, result diag(4, 0)
        let s = ScalarTracePoly::traced(w(&[0, 0]), 1);
        let f = OperatorTracePoly::variable(0, 1).mul_scalar_poly(&s).unwrap();
        let mut x = MatrixTuple::zeros(1, 2);
        x.mats[0][(0, 0)] = Complex64::new(2.0, 0.0);
        let out = f.evaluate(&x).unwrap();
        assert_eq!(out[(0, 0)], Complex64::new(4.0, 0.0));
        assert_eq!(out[(1, 1)], Complex64::ZERO);

        // identity word factor returns x itself
        let id = OperatorTracePoly::variable(0, 1);
        assert_eq!(id.evaluate(&x).unwrap(), x.mats[0]);
    }

    #[test]
    fn cyclic_gradient_examples() {
        // D(1/2 tau(x^2)) = x
        let v = ScalarTracePoly::traced(w(&[0, 0]), 1).scalar_mul(Complex64::new(0.5, 0.0));
        let g = cyclic_gradient(&v, 0).unwrap();
        assert_eq!(g, OperatorTracePoly::variable(0, 1));

        // D tau(x^4) = 4 x^3
        let v4 = ScalarTracePoly::traced(w(&[0, 0, 0, 0]), 1);
        let g4 = cyclic_gradient(&v4, 0).unwrap();
        let expect = OperatorTracePoly::from_word(w(&[0, 0, 0]), 1)
            .scalar_mul(Complex64::new(4.0, 0.0));
        assert_eq!(g4, expect);

        // D_{x1} tau(x1 x2 x1 x2) = 2 x2 x1 x2
        let v12 = ScalarTracePoly::traced(w(&[0, 1, 0, 1]), 2);
        let g12 = cyclic_gradient(&v12, 0).unwrap();
        let expect12 = OperatorTracePoly::from_word(w(&[1, 0, 1]), 2)
            .scalar_mul(Complex64::new(2.0, 0.0));
        assert_eq!(g12, expect12);
    }

    #[test]
    fn fdq_examples() {
        // d/dx x^3 = 1⊗x^2 + x⊗x + x^2⊗1
        let d = free_difference_quotient(&w(&[0, 0, 0]), 0);
        assert_eq!(d.terms.len(), 3);
        assert!(d.terms.contains_key(&(w(&[]), w(&[0, 0]))));
        assert!(d.terms.contains_key(&(w(&[0]), w(&[0]))));
        assert!(d.terms.contains_key(&(w(&[0, 0]), w(&[]))));

        // d_{x1}(x2) = 0
        assert!(free_difference_quotient(&w(&[1]), 0).terms.is_empty());

        // d_{x1}(x1 x2 x1) = 1⊗x2x1 + x1x2⊗1
        let d2 = free_difference_quotient(&w(&[0, 1, 0]), 0);
        assert_eq!(d2.terms.len(), 2);
        assert!(d2.terms.contains_key(&(w(&[]), w(&[1, 0]))));
        assert!(d2.terms.contains_key(&(w(&[0, 1]), w(&[]))));
    }

    #[test]
    fn fdq_leibniz() {
        // d(pq) = dp (1⊗q) + (p⊗1) dq for p = x1x2, q = x1x1
        let p = w(&[0, 1]);
        let q = w(&[0, 0]);
        let pq = p.concat(&q);
        let lhs = free_difference_quotient(&pq, 0);
        let rhs = free_difference_quotient(&p, 0)
            .extend_right(&q)
            .add(&free_difference_quotient(&q, 0).extend_left(&p));
        assert_eq!(lhs, rhs);
    }
}
