//! Potentials `V` with a declared convexity window `[c, C]`, a variable
//! partition into an x-block and a y-block, gradient access, and the
//! closure operations (independent join, linear change of variables,
//! marginal, convolution).
//!
//! Windows are declared and verified empirically against secant ratios
//! `<DV(x) - DV(x'), x - x'> / ||x - x'||^2`; they are not derived
//! symbolically. Only gradient (and value) differences are ever used for
//! sampling, so potentials are defined up to an additive constant.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::CoreError;
use crate::matrix::{gue_tuple, MatrixTuple};
use crate::rng;
use crate::tracepoly::{cyclic_gradient, OperatorTracePoly, ScalarTracePoly};

/// Which variables a gradient is taken with respect to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Block {
    X,
    Y,
    All,
}

#[derive(Clone, Debug)]
pub enum PotentialKind {
    /// `V = 1/2 sum_j ||x_j - shift_j I||^2`.
    Quadratic { shift: Vec<f64> },
    /// A scalar trace polynomial with precomputed cyclic gradients.
    TracePoly {
        v: ScalarTracePoly,
        grads: Vec<OperatorTracePoly>,
    },
    /// `V(x) = base(A^{-1} x)` for an invertible real matrix acting on the
    /// variable indices.
    LinearImage {
        base: Box<PotentialSpec>,
        a: DMatrix<f64>,
        a_inv: DMatrix<f64>,
        a_inv_t: DMatrix<f64>,
        norm_a: f64,
        norm_a_inv: f64,
    },
    /// `V(x, y) = left(x) + right(y)`.
    Join {
        left: Box<PotentialSpec>,
        right: Box<PotentialSpec>,
    },
    /// Law of the kept variables under the base model; its gradient is a
    /// conditional expectation and is only available as an estimate.
    Marginal {
        base: Box<PotentialSpec>,
        keep: Vec<usize>,
    },
}

#[derive(Clone, Debug)]
pub struct PotentialSpec {
    pub kind: PotentialKind,
    /// x-block size; the first `m` variables.
    pub m: usize,
    /// y-block size; the remaining variables.
    pub n_y: usize,
    /// Declared uniform convexity constant.
    pub c: f64,
    /// Declared semi-concavity constant.
    pub big_c: f64,
    /// Optional operator-norm restriction radius for the window claim.
    pub opnorm_radius: Option<f64>,
    /// Human-readable description echoed into reports.
    pub label: String,
}

impl PotentialSpec {
    pub fn nvars(&self) -> usize {
        self.m + self.n_y
    }

    pub fn quadratic(shift: Vec<f64>, m: usize, n_y: usize) -> Self {
        assert_eq!(shift.len(), m + n_y);
        let label = format!("quadratic(shift={shift:?})");
        Self {
            kind: PotentialKind::Quadratic { shift },
            m,
            n_y,
            c: 1.0,
            big_c: 1.0,
            opnorm_radius: None,
            label,
        }
    }

    pub fn from_trace_poly(
        v: ScalarTracePoly,
        m: usize,
        n_y: usize,
        c: f64,
        big_c: f64,
    ) -> Result<Self, CoreError> {
        if !v.is_self_adjoint() {
            return Err(CoreError::NotSelfAdjoint(v.to_string()));
        }
        if v.max_var() > m + n_y {
            return Err(CoreError::VariableMismatch(format!(
                "potential uses {} variables, partition declares {}",
                v.max_var(),
                m + n_y
            )));
        }
        let mut padded = v.clone();
        padded.nvars = m + n_y;
        let grads = (0..m + n_y)
            .map(|j| cyclic_gradient(&padded, j))
            .collect::<Result<Vec<_>, _>>()?;
        let label = format!("tracepoly({padded})");
        Ok(Self {
            kind: PotentialKind::TracePoly { v: padded, grads },
            m,
            n_y,
            c,
            big_c,
            opnorm_radius: None,
            label,
        })
    }

    pub fn with_radius(mut self, r: f64) -> Self {
        self.opnorm_radius = Some(r);
        self
    }

    pub fn with_label(mut self, label: &str) -> Self {
        self.label = label.to_string();
        self
    }

    /// Independent join: `V(x, y) = left(x) + right(y)`; the left block is
    /// the x-block. The window is the envelope of the two windows.
    pub fn join(left: PotentialSpec, right: PotentialSpec) -> Self {
        let c = left.c.min(right.c);
        let big_c = left.big_c.max(right.big_c);
        let m = left.nvars();
        let n_y = right.nvars();
        let radius = match (left.opnorm_radius, right.opnorm_radius) {
            (None, None) => None,
            (a, b) => Some(a.unwrap_or(f64::INFINITY).min(b.unwrap_or(f64::INFINITY))),
        };
        let label = format!("join({}, {})", left.label, right.label);
        Self {
            kind: PotentialKind::Join {
                left: Box::new(left),
                right: Box::new(right),
            },
            m,
            n_y,
            c,
            big_c,
            opnorm_radius: radius,
            label,
        }
    }

    /// Change of variables `x -> A x`: the image potential is
    /// `base(A^{-1} x)`. The window propagates through the squared extreme
    /// singular values: `c / ||A||^2 <= H V <= C ||A^{-1}||^2`.
    pub fn linear_image(base: PotentialSpec, a: DMatrix<f64>) -> Result<Self, CoreError> {
        let k = base.nvars();
        if a.nrows() != k || a.ncols() != k {
            return Err(CoreError::DimensionMismatch(format!(
                "A must be {k}x{k}, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        let a_inv = a
            .clone()
            .try_inverse()
            .ok_or_else(|| CoreError::Singular("linear image matrix".to_string()))?;
        let norm_a = a.clone().singular_values().max();
        let norm_a_inv = a_inv.clone().singular_values().max();
        let c = base.c / (norm_a * norm_a);
        let big_c = base.big_c * norm_a_inv * norm_a_inv;
        let (m, n_y) = (base.m, base.n_y);
        let label = format!("linear_image({})", base.label);
        Ok(Self {
            kind: PotentialKind::LinearImage {
                a_inv_t: a_inv.transpose(),
                a_inv,
                a,
                norm_a,
                norm_a_inv,
                base: Box::new(base),
            },
            m,
            n_y,
            c,
            big_c,
            opnorm_radius: None,
            label,
        })
    }

    /// Marginal of the kept variables. Gradients are conditional
    /// expectations (`marginal_grad`); sampling projects base samples.
    pub fn marginal(base: PotentialSpec, keep: Vec<usize>, m: usize) -> Self {
        let n_y = keep.len() - m;
        let (c, big_c) = (base.c, base.big_c);
        let label = format!("marginal({}, keep={keep:?})", base.label);
        Self {
            kind: PotentialKind::Marginal {
                base: Box::new(base),
                keep,
            },
            m,
            n_y,
            c,
            big_c,
            opnorm_radius: None,
            label,
        }
    }

    /// Convolution semantics: the law of `X + Y` for independent samples of
    /// the two models, realized as the marginal of a rotated join. Window
    /// `(c/2, C/2)`.
    pub fn convolve(v1: PotentialSpec, v2: PotentialSpec) -> Result<Self, CoreError> {
        let k = v1.nvars();
        if v2.nvars() != k {
            return Err(CoreError::VariableMismatch(
                "convolution requires equal variable counts".to_string(),
            ));
        }
        let joined = Self::join(v1, v2);
        let mut a = DMatrix::<f64>::zeros(2 * k, 2 * k);
        for i in 0..k {
            a[(i, i)] = 1.0;
            a[(i, k + i)] = 1.0;
            a[(k + i, i)] = -1.0;
            a[(k + i, k + i)] = 1.0;
        }
        let image = Self::linear_image(joined, a)?;
        Ok(Self::marginal(image, (0..k).collect(), k))
    }

    /// Whether exact gradients are available (everything but marginals).
    pub fn has_exact_grad(&self) -> bool {
        match &self.kind {
            PotentialKind::Marginal { .. } => false,
            PotentialKind::Join { left, right } => {
                left.has_exact_grad() && right.has_exact_grad()
            }
            PotentialKind::LinearImage { base, .. } => base.has_exact_grad(),
            _ => true,
        }
    }

    /// Full gradient `DV` with respect to the normalized inner product.
    pub fn grad_full(&self, x: &MatrixTuple) -> Result<MatrixTuple, CoreError> {
        match &self.kind {
            PotentialKind::Quadratic { shift } => {
                let mut g = x.clone();
                for (gj, &a) in g.mats.iter_mut().zip(shift) {
                    if a != 0.0 {
                        let id = Complex64::new(a, 0.0);
                        for i in 0..x.n {
                            gj[(i, i)] -= id;
                        }
                    }
                }
                Ok(g)
            }
            PotentialKind::TracePoly { grads, .. } => {
                let mats = grads
                    .iter()
                    .map(|g| g.evaluate(x))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(MatrixTuple { mats, n: x.n })
            }
            PotentialKind::LinearImage {
                base,
                a_inv,
                a_inv_t,
                ..
            } => {
                let pre = apply_linear(a_inv, x);
                let g = base.grad_full(&pre)?;
                Ok(apply_linear(a_inv_t, &g))
            }
            PotentialKind::Join { left, right } => {
                let xl = MatrixTuple {
                    mats: x.mats[..left.nvars()].to_vec(),
                    n: x.n,
                };
                let xr = MatrixTuple {
                    mats: x.mats[left.nvars()..].to_vec(),
                    n: x.n,
                };
                Ok(left.grad_full(&xl)?.concat(&right.grad_full(&xr)?))
            }
            PotentialKind::Marginal { .. } => Err(CoreError::Sampler(
                "marginal potentials expose only estimated gradients".to_string(),
            )),
        }
    }

    /// Gradient restricted to a block of the partition.
    pub fn grad(&self, x: &MatrixTuple, block: Block) -> Result<MatrixTuple, CoreError> {
        if x.m() != self.nvars() {
            return Err(CoreError::VariableMismatch(format!(
                "potential over {} variables, point has {}",
                self.nvars(),
                x.m()
            )));
        }
        let full = self.grad_full(x)?;
        Ok(match block {
            Block::All => full,
            Block::X => MatrixTuple {
                mats: full.mats[..self.m].to_vec(),
                n: full.n,
            },
            Block::Y => MatrixTuple {
                mats: full.mats[self.m..].to_vec(),
                n: full.n,
            },
        })
    }

    /// Value of the canonical representative of `V` (defined up to an
    /// additive constant; only differences are meaningful).
    pub fn value(&self, x: &MatrixTuple) -> Result<f64, CoreError> {
        match &self.kind {
            PotentialKind::Quadratic { shift } => {
                let mut acc = 0.0;
                for (xj, &a) in x.mats.iter().zip(shift) {
                    let mut d = xj.clone();
                    for i in 0..x.n {
                        d[(i, i)] -= Complex64::new(a, 0.0);
                    }
                    acc += 0.5 * d.iter().map(|z| z.norm_sqr()).sum::<f64>() / x.n as f64;
                }
                Ok(acc)
            }
            PotentialKind::TracePoly { v, .. } => Ok(v.evaluate(x)?.re),
            PotentialKind::LinearImage { base, a_inv, .. } => {
                base.value(&apply_linear(a_inv, x))
            }
            PotentialKind::Join { left, right } => {
                let xl = MatrixTuple {
                    mats: x.mats[..left.nvars()].to_vec(),
                    n: x.n,
                };
                let xr = MatrixTuple {
                    mats: x.mats[left.nvars()..].to_vec(),
                    n: x.n,
                };
                Ok(left.value(&xl)? + right.value(&xr)?)
            }
            PotentialKind::Marginal { .. } => Err(CoreError::Sampler(
                "marginal potentials have no closed-form value".to_string(),
            )),
        }
    }

    /// Center used to seed chains and pair sampling.
    pub fn center(&self, n: usize) -> MatrixTuple {
        match &self.kind {
            PotentialKind::Quadratic { shift } => MatrixTuple::scalar(shift, n),
            PotentialKind::TracePoly { .. } => MatrixTuple::zeros(self.nvars(), n),
            PotentialKind::LinearImage { base, a, .. } => apply_linear(a, &base.center(n)),
            PotentialKind::Join { left, right } => left.center(n).concat(&right.center(n)),
            PotentialKind::Marginal { base, keep } => base.center(n).select(keep),
        }
    }
}

/// Apply a real matrix mixing the variable indices: `(Ax)_i = sum_j A_ij x_j`.
pub fn apply_linear(a: &DMatrix<f64>, x: &MatrixTuple) -> MatrixTuple {
    let k = x.m();
    let mut out = MatrixTuple::zeros(k, x.n);
    for i in 0..k {
        for j in 0..k {
            let w = a[(i, j)];
            if w != 0.0 {
                out.mats[i] += &x.mats[j] * Complex64::new(w, 0.0);
            }
        }
    }
    out
}

/// Report of an empirical convexity-window check.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WindowReport {
    pub declared_c: f64,
    pub declared_big_c: f64,
    pub min_ratio: f64,
    pub max_ratio: f64,
    pub trials: usize,
    pub tolerance: f64,
    pub pass: bool,
}

/// Sample random pairs and compare secant ratios against the declared
/// window. Points are drawn around the model center at scale `1/sqrt(c)`,
/// respecting the operator-norm restriction when one is declared.
pub fn hessian_window_check(
    v: &PotentialSpec,
    n: usize,
    trials: usize,
    tolerance: f64,
    seed: u64,
) -> Result<WindowReport, CoreError> {
    let mut rng = rng::stream(seed, "window-check", 0);
    let center = v.center(n);
    let scale = 1.0 / v.c.sqrt();
    let mut min_ratio = f64::INFINITY;
    let mut max_ratio = f64::NEG_INFINITY;
    let draw = |rng: &mut rand_chacha::ChaCha12Rng| -> MatrixTuple {
        loop {
            let mut p = center.clone();
            p.axpy(scale, &gue_tuple(v.nvars(), n, 1.0, rng));
            match v.opnorm_radius {
                Some(r) if p.opnorm_inf() > r => continue,
                _ => return p,
            }
        }
    };
    for k in 0..trials {
        let x = draw(&mut rng);
        // alternate between well-separated pairs and short secants
        let xp = if k % 2 == 0 {
            draw(&mut rng)
        } else {
            let mut p = x.clone();
            let mut dir = gue_tuple(v.nvars(), n, 1.0, &mut rng);
            dir.scale(1e-3 / dir.norm2().max(1e-30));
            p.axpy(1.0, &dir);
            p
        };
        let d = x.sub(&xp);
        let dist2 = d.inner(&d);
        if dist2 < 1e-24 {
            continue;
        }
        let gd = v.grad_full(&x)?.sub(&v.grad_full(&xp)?);
        let ratio = gd.inner(&d) / dist2;
        min_ratio = min_ratio.min(ratio);
        max_ratio = max_ratio.max(ratio);
    }
    let pass = min_ratio >= v.c - tolerance && max_ratio <= v.big_c + tolerance;
    Ok(WindowReport {
        declared_c: v.c,
        declared_big_c: v.big_c,
        min_ratio,
        max_ratio,
        trials,
        tolerance,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tracepoly::parse_self_adjoint;

    #[test]
    fn quadratic_gradient() {
        let v = PotentialSpec::quadratic(vec![0.5], 1, 0);
        let mut rng = rng::stream(3, "t", 0);
        let x = gue_tuple(1, 4, 1.0, &mut rng);
        let g = v.grad_full(&x).unwrap();
        let mut expect = x.clone();
        for i in 0..4 {
            expect.mats[0][(i, i)] -= Complex64::new(0.5, 0.0);
        }
        assert!(g.sub(&expect).norm2() < 1e-14);
    }

    #[test]
    fn coupled_gradient() {
        // V = 1/2 tau(x1^2) + 1/2 tau(x2^2) + lambda tau(x1 x2):
        // D_{x1} V = x1 + lambda x2
        let lam = 0.5;
        let v = parse_self_adjoint("0.5*tr(x1^2) + 0.5*tr(x2^2) + 0.5*tr(x1 x2)").unwrap();
        let spec = PotentialSpec::from_trace_poly(v, 1, 1, 1.0 - lam, 1.0 + lam).unwrap();
        let mut rng = rng::stream(4, "t", 0);
        let x = gue_tuple(2, 3, 1.0, &mut rng);
        let g = spec.grad(&x, Block::X).unwrap();
        let expect = &x.mats[0] + &x.mats[1] * Complex64::new(lam, 0.0);
        assert!((g.mats[0].clone() - expect).norm() < 1e-13);
    }

    #[test]
    fn quadratic_window_is_tight() {
        let v = PotentialSpec::quadratic(vec![0.0], 1, 0);
        let rep = hessian_window_check(&v, 4, 40, 1e-9, 11).unwrap();
        assert!(rep.pass);
        assert!((rep.min_ratio - 1.0).abs() < 1e-12);
        assert!((rep.max_ratio - 1.0).abs() < 1e-12);
    }

    #[test]
    fn coupled_window_matches_eigenvalues() {
        let v = parse_self_adjoint("0.5*tr(x1^2) + 0.5*tr(x2^2) + 0.5*tr(x1 x2)").unwrap();
        let spec = PotentialSpec::from_trace_poly(v, 1, 1, 0.5, 1.5).unwrap();
        let rep = hessian_window_check(&spec, 4, 200, 1e-6, 12).unwrap();
        assert!(rep.pass, "{rep:?}");
        assert!(rep.min_ratio >= 0.5 - 1e-9 && rep.max_ratio <= 1.5 + 1e-9);
    }

    #[test]
    fn quartic_window_within_derived_bound() {
        // restricted to ||x||_inf <= R the ratios stay inside [1, 1+12gR^2]
        let g = 0.1;
        let r = 2.0;
        let v = parse_self_adjoint("0.5*tr(x1^2) + 0.1*tr(x1^4)").unwrap();
        let spec = PotentialSpec::from_trace_poly(v, 1, 0, 1.0, 1.0 + 12.0 * g * r * r)
            .unwrap()
            .with_radius(r);
        let rep = hessian_window_check(&spec, 6, 300, 1e-6, 13).unwrap();
        assert!(rep.pass, "{rep:?}");
        assert!(rep.min_ratio >= 1.0 - 1e-9);
    }

    #[test]
    fn linear_image_window_and_chain_rule() {
        // A = 2I halves no axis directions: window becomes (c/4, C/4)
        let base = PotentialSpec::quadratic(vec![0.0], 1, 0);
        let a = DMatrix::from_diagonal_element(1, 1, 2.0);
        let img = PotentialSpec::linear_image(base, a).unwrap();
        assert!((img.c - 0.25).abs() < 1e-15);
        assert!((img.big_c - 0.25).abs() < 1e-15);
        let rep = hessian_window_check(&img, 4, 60, 1e-9, 14).unwrap();
        assert!(rep.pass, "{rep:?}");

        // chain rule vs finite differences of V(A^{-1} x)
        let v = parse_self_adjoint("0.5*tr(x1^2)+0.5*tr(x2^2)+0.5*tr(x1 x2)").unwrap();
        let base2 = PotentialSpec::from_trace_poly(v, 1, 1, 0.5, 1.5).unwrap();
        let mut a2 = DMatrix::<f64>::zeros(2, 2);
        a2[(0, 0)] = 1.0;
        a2[(0, 1)] = 0.3;
        a2[(1, 1)] = 0.8;
        let img2 = PotentialSpec::linear_image(base2, a2).unwrap();
        let mut rng = rng::stream(5, "t", 0);
        let x = gue_tuple(2, 3, 1.0, &mut rng);
        let g = img2.grad_full(&x).unwrap();
        let h = gue_tuple(2, 3, 1.0, &mut rng);
        let eps = 1e-5;
        let mut xp = x.clone();
        xp.axpy(eps, &h);
        let mut xm = x.clone();
        xm.axpy(-eps, &h);
        let fd = (img2.value(&xp).unwrap() - img2.value(&xm).unwrap()) / (2.0 * eps);
        let dir = g.inner(&h);
        assert!((fd - dir).abs() < 1e-6 * (1.0 + dir.abs()), "{fd} vs {dir}");
    }

    #[test]
    fn join_is_blockwise() {
        let left = PotentialSpec::quadratic(vec![0.0], 1, 0);
        let right = PotentialSpec::quadratic(vec![1.0], 1, 0);
        let j = PotentialSpec::join(left, right);
        assert_eq!(j.m, 1);
        assert_eq!(j.n_y, 1);
        assert_eq!(j.c, 1.0);
        assert_eq!(j.big_c, 1.0);
        let mut rng = rng::stream(6, "t", 0);
        let x = gue_tuple(2, 3, 1.0, &mut rng);
        let g = j.grad_full(&x).unwrap();
        assert!((g.mats[0].clone() - x.mats[0].clone()).norm() < 1e-14);
    }

    #[test]
    fn convolve_window() {
        let a = PotentialSpec::quadratic(vec![0.0], 1, 0);
        let b = PotentialSpec::quadratic(vec![0.0], 1, 0);
        let c = PotentialSpec::convolve(a, b).unwrap();
        assert!((c.c - 0.5).abs() < 1e-12);
        assert!((c.big_c - 0.5).abs() < 1e-12);
    }
}
