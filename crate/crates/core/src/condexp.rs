//! Conditional expectations `E[f(X, Y) | Y = y]`, computed two ways: by
//! conditioned sampling (the production path) and through the diffusion
//! semigroup `T_t` realized as the alternating product
//! `T_{t,l} = (P_{2^-l} S_{2^-l})^{2^l t}` of Gaussian smoothing and the
//! gradient-flow pullback `S_t f(x,y) = f(W_t(x,y), y)`,
//! `dW/dt = -1/2 D_x V(W, y)`.
//!
//! Smoothing noise uses common random numbers across evaluation points so
//! that Lipschitz audits measure the map rather than the Monte Carlo
//! noise.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::CoreError;
use crate::matrix::{gue_tuple, CMatrix, MatrixTuple};
use crate::potential::PotentialSpec;
use crate::rng;
use crate::sampler::{mala_chain, ConditionalTarget, SamplerConfig};
use crate::semigroup::InnerCfg;
use crate::tracepoly::OperatorTracePoly;

/// A matrix-valued observable of `(x, y)` with a declared Lipschitz bound
/// in `||.||_2`.
pub enum Observable<'a> {
    TracePoly { f: &'a OperatorTracePoly, lip: f64 },
    Closure {
        f: &'a (dyn Fn(&MatrixTuple) -> CMatrix + Sync),
        lip: f64,
    },
}

impl Observable<'_> {
    pub fn eval(&self, full: &MatrixTuple) -> CMatrix {
        match self {
            Observable::TracePoly { f, .. } => f.evaluate(full).expect("dimensions"),
            Observable::Closure { f, .. } => f(full),
        }
    }

    pub fn lip(&self) -> f64 {
        match self {
            Observable::TracePoly { lip, .. } => *lip,
            Observable::Closure { lip, .. } => *lip,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct OdeCfg {
    /// Upper bound on the step; the actual step also honors `h C <= 1/2`.
    pub max_step: f64,
}

impl Default for OdeCfg {
    fn default() -> Self {
        Self { max_step: 0.125 }
    }
}

/// Integrate the gradient flow `dW/dt = -1/2 D_x V(W, y)` from `x` for
/// time `t` with the classical 4-stage explicit scheme.
pub fn flow_w(
    v: &PotentialSpec,
    x: &MatrixTuple,
    y: &[CMatrix],
    t: f64,
    cfg: &OdeCfg,
) -> Result<MatrixTuple, CoreError> {
    if t == 0.0 {
        return Ok(x.clone());
    }
    let assemble = |w: &MatrixTuple| {
        let mut full = w.clone();
        for ym in y {
            full.mats.push(ym.clone());
        }
        full
    };
    let field = |w: &MatrixTuple| -> Result<MatrixTuple, CoreError> {
        let g = v.grad_full(&assemble(w))?;
        Ok(MatrixTuple {
            mats: g.mats[..v.m].to_vec(),
            n: w.n,
        }
        .scaled(-0.5))
    };
    let h_stable = 0.5 / v.big_c;
    let h = cfg.max_step.min(h_stable);
    if h <= 1e-14 {
        return Err(CoreError::Config("flow step underflow".to_string()));
    }
    let steps = (t / h).ceil() as usize;
    let h = t / steps as f64;
    let mut w = x.clone();
    for _ in 0..steps {
        let k1 = field(&w)?;
        let mut w2 = w.clone();
        w2.axpy(0.5 * h, &k1);
        let k2 = field(&w2)?;
        let mut w3 = w.clone();
        w3.axpy(0.5 * h, &k2);
        let k3 = field(&w3)?;
        let mut w4 = w.clone();
        w4.axpy(h, &k3);
        let k4 = field(&w4)?;
        w.axpy(h / 6.0, &k1);
        w.axpy(h / 3.0, &k2);
        w.axpy(h / 3.0, &k3);
        w.axpy(h / 6.0, &k4);
    }
    Ok(w)
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct McCfg {
    pub paths: usize,
    pub seed: u64,
    /// Dyadic level of the underlying noise increments. Smoothing rounds at
    /// level `l <= fine_level` sum `2^{fine_level - l}` fine increments, so
    /// runs at different levels with the same seed share one Brownian path
    /// per Monte Carlo path and their difference isolates the splitting
    /// error. `None` uses the evaluation level itself.
    pub fine_level: Option<u32>,
}

impl Default for McCfg {
    fn default() -> Self {
        Self {
            paths: 1024,
            seed: 1,
            fine_level: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TtResult {
    pub estimate: CMatrix,
    pub se: f64,
    /// A-priori refinement bound
    /// `(C m^{1/2} / (c (2 - sqrt 2))) 2^{-l/2} ||f||_Lip`.
    pub refinement_bound: f64,
}

/// Evaluate `T_{t,l} f (x, y)` by Monte Carlo over smoothing paths:
/// each path applies, for `2^l t` rounds, a Gaussian kick followed by the
/// flow `W_{2^-l}`; the noise depends only on `(seed, round, path)`.
pub fn tt_apply(
    f: &Observable,
    v: &PotentialSpec,
    x: &MatrixTuple,
    y: &[CMatrix],
    t: f64,
    level: u32,
    mc: &McCfg,
    ode: &OdeCfg,
) -> Result<TtResult, CoreError> {
    let delta = 0.5f64.powi(level as i32);
    let steps_f = t / delta;
    let steps = steps_f.round() as usize;
    if (steps_f - steps as f64).abs() > 1e-9 {
        return Err(CoreError::Config(format!(
            "t = {t} is not dyadic with 2^{level} t integral"
        )));
    }
    let n = x.n;
    let values = tt_values(f, v, x, y, t, level, mc, ode)?;
    let (mean, se) = matrix_mean_se(&values, n);
    let refinement_bound = v.big_c * (v.m as f64).sqrt()
        / (v.c * (2.0 - std::f64::consts::SQRT_2))
        * delta.sqrt()
        * f.lip();
    Ok(TtResult {
        estimate: mean,
        se,
        refinement_bound,
    })
}

/// Per-path values of `T_{t,l} f (x, y)`; paths are indexed
/// deterministically by `(seed, path)`, so runs at different levels with
/// the same seed and `fine_level` are pathwise coupled.
pub fn tt_values(
    f: &Observable,
    v: &PotentialSpec,
    x: &MatrixTuple,
    y: &[CMatrix],
    t: f64,
    level: u32,
    mc: &McCfg,
    ode: &OdeCfg,
) -> Result<Vec<CMatrix>, CoreError> {
    let delta = 0.5f64.powi(level as i32);
    let steps = (t / delta).round() as usize;
    let n = x.n;
    let assemble = |w: &MatrixTuple| {
        let mut full = w.clone();
        for ym in y {
            full.mats.push(ym.clone());
        }
        full
    };
    let fine = mc.fine_level.unwrap_or(level).max(level);
    let per_round = 1usize << (fine - level);
    let fine_var = 0.5f64.powi(fine as i32);
    let mut values: Vec<CMatrix> = Vec::with_capacity(mc.paths);
    for path in 0..mc.paths {
        let mut rng = rng::stream(mc.seed, "tt-path", path as u64);
        // unrolled composition: rightmost operator acts first, so the
        // path applies kick-then-flow `steps` times starting from x
        let mut u = x.clone();
        for _round in 0..steps {
            for _ in 0..per_round {
                let z = gue_tuple(v.m, n, fine_var, &mut rng);
                u.axpy(1.0, &z);
            }
            u = flow_w(v, &u, y, delta, ode)?;
        }
        values.push(f.eval(&assemble(&u)));
    }
    Ok(values)
}

fn matrix_mean_se(values: &[CMatrix], n: usize) -> (CMatrix, f64) {
    let count = values.len();
    let mut mean = CMatrix::zeros(n, n);
    for v in values {
        mean += v;
    }
    mean /= Complex64::new(count as f64, 0.0);
    if count < 4 {
        return (mean, f64::INFINITY);
    }
    let b = (count as f64).sqrt().floor() as usize;
    let l = count / b;
    let mut var_b = 0.0;
    for k in 0..b {
        let mut bm = CMatrix::zeros(n, n);
        for v in &values[k * l..(k + 1) * l] {
            bm += v;
        }
        bm /= Complex64::new(l as f64, 0.0);
        let d = &bm - &mean;
        var_b += d.iter().map(|z| z.norm_sqr()).sum::<f64>() / n as f64;
    }
    var_b /= (b - 1) as f64;
    (mean, (var_b / b as f64).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CondExpMode {
    Direct,
    Semigroup,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CondExpCertificate {
    pub mode: String,
    /// Semigroup mode: the time at which the convergence envelope drops
    /// below tolerance, and the envelope value there.
    pub t_used: Option<f64>,
    pub envelope: Option<f64>,
    pub refinement_bound: Option<f64>,
    pub mc_se: f64,
}

#[derive(Clone, Debug)]
pub struct CondExpResult {
    pub estimate: CMatrix,
    pub se: f64,
    pub certificate: CondExpCertificate,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CondExpCfg {
    pub inner: InnerCfg,
    pub mc: McCfg,
    pub level: u32,
    /// Tolerance driving the semigroup-mode time selection.
    pub envelope_tol: f64,
    pub seed: u64,
}

impl Default for CondExpCfg {
    fn default() -> Self {
        Self {
            inner: InnerCfg {
                burn_in: 256,
                n_samples: 1024,
                thin: 1,
            },
            mc: McCfg {
                paths: 2048,
                seed: 1,
                fine_level: None,
            },
            level: 4,
            envelope_tol: 5e-3,
            seed: 1,
        }
    }
}

/// The convergence envelope of `T_t f -> E[f | y]` in the declared window:
/// `e^{-ct/2} (4 (C/c^2)(6 + 5 sqrt 2) t^{-1/2} + (2/c) ||D_x V(x,y)||)
///  ||f||_Lip`.
pub fn semigroup_envelope(v: &PotentialSpec, dxv_norm: f64, t: f64, lip: f64) -> f64 {
    let c = v.c;
    let big_c = v.big_c;
    (-c * t / 2.0).exp()
        * (4.0 * big_c / (c * c) * (6.0 + 5.0 * std::f64::consts::SQRT_2) / t.sqrt()
            + 2.0 / c * dxv_norm)
        * lip
}

/// Conditional expectation `E[f(X, y) | Y = y]`.
pub fn cond_exp(
    f: &Observable,
    v: &PotentialSpec,
    y: &[CMatrix],
    n: usize,
    mode: CondExpMode,
    cfg: &CondExpCfg,
) -> Result<CondExpResult, CoreError> {
    match mode {
        CondExpMode::Direct => {
            let frozen: Vec<(usize, CMatrix)> = y
                .iter()
                .enumerate()
                .map(|(k, m)| (v.m + k, m.clone()))
                .collect();
            let target = ConditionalTarget::new(v, n, frozen, None);
            let scfg = SamplerConfig {
                burn_in: cfg.inner.burn_in,
                n_samples: cfg.inner.n_samples,
                thin: cfg.inner.thin,
                chains: 1,
                seed: cfg.seed,
                ..Default::default()
            };
            let (kept, _, _, _) = mala_chain(&target, &scfg, 0)?;
            let values: Vec<CMatrix> = kept
                .iter()
                .map(|xf| f.eval(&target.assemble(xf)))
                .collect();
            let (mean, se) = matrix_mean_se(&values, n);
            Ok(CondExpResult {
                estimate: mean,
                se,
                certificate: CondExpCertificate {
                    mode: "direct".to_string(),
                    t_used: None,
                    envelope: None,
                    refinement_bound: None,
                    mc_se: se,
                },
            })
        }
        CondExpMode::Semigroup => {
            // start from the conditional center and pick t from the envelope
            let x0 = MatrixTuple {
                mats: v.center(n).mats[..v.m].to_vec(),
                n,
            };
            let full0 = {
                let mut fl = x0.clone();
                for ym in y {
                    fl.mats.push(ym.clone());
                }
                fl
            };
            let g0 = v.grad_full(&full0)?;
            let dxv_norm = MatrixTuple {
                mats: g0.mats[..v.m].to_vec(),
                n,
            }
            .norm2();
            let delta = 0.5f64.powi(cfg.level as i32);
            let mut t = 1.0;
            while semigroup_envelope(v, dxv_norm, t, f.lip()) > cfg.envelope_tol && t < 256.0 {
                t += 1.0;
            }
            t = (t / delta).ceil() * delta;
            let envelope = semigroup_envelope(v, dxv_norm, t, f.lip());
            let mc = McCfg {
                paths: cfg.mc.paths,
                seed: cfg.seed,
                fine_level: cfg.mc.fine_level,
            };
            let res = tt_apply(f, v, &x0, y, t, cfg.level, &mc, &OdeCfg::default())?;
            Ok(CondExpResult {
                estimate: res.estimate,
                se: res.se,
                certificate: CondExpCertificate {
                    mode: "semigroup".to_string(),
                    t_used: Some(t),
                    envelope: Some(envelope),
                    refinement_bound: Some(res.refinement_bound),
                    mc_se: res.se,
                },
            })
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LipschitzAuditReport {
    pub max_ratio: f64,
    pub bound: f64,
    pub pairs: usize,
    pub pass: bool,
}

/// Empirical Lipschitz constant of `y -> E[f | Y = y]` over sampled pairs,
/// compared to `(1 + C/c) ||f||_Lip`. Estimates share the seed (common
/// random numbers), so the ratio measures the map itself.
pub fn condexp_lipschitz_audit(
    f: &Observable,
    v: &PotentialSpec,
    n: usize,
    pairs: usize,
    cfg: &CondExpCfg,
    tol: f64,
) -> Result<LipschitzAuditReport, CoreError> {
    let mut rng = rng::stream(cfg.seed, "condexp-audit", 0);
    let n_y = v.n_y;
    let mut max_ratio: f64 = 0.0;
    for _ in 0..pairs {
        let y1 = gue_tuple(n_y, n, 1.0, &mut rng);
        let mut y2 = y1.clone();
        y2.axpy(0.5, &gue_tuple(n_y, n, 1.0, &mut rng));
        let g1 = cond_exp(f, v, &y1.mats, n, CondExpMode::Direct, cfg)?;
        let g2 = cond_exp(f, v, &y2.mats, n, CondExpMode::Direct, cfg)?;
        let dy = y1.sub(&y2).norm2();
        if dy < 1e-12 {
            continue;
        }
        let dmat = &g1.estimate - &g2.estimate;
        let dg = (dmat.iter().map(|z| z.norm_sqr()).sum::<f64>() / n as f64).sqrt();
        max_ratio = max_ratio.max(dg / dy);
    }
    let bound = (1.0 + v.big_c / v.c) * f.lip();
    Ok(LipschitzAuditReport {
        max_ratio,
        bound,
        pairs,
        pass: max_ratio <= bound + tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::gue_tuple;

    #[test]
    fn flow_is_exponential_contraction_for_gue() {
        // V = 1/2 ||x||^2: W_t(x) = e^{-t/2} x
        let v = PotentialSpec::quadratic(vec![0.0], 1, 0);
        let mut rng = rng::stream(31, "flow", 0);
        let x = gue_tuple(1, 4, 1.0, &mut rng);
        let t = 1.5;
        let w = flow_w(&v, &x, &[], t, &OdeCfg::default()).unwrap();
        let expect = x.scaled((-t / 2.0f64).exp());
        assert!(w.sub(&expect).norm2() < 2e-6);
        // t = 0 is the identity
        let w0 = flow_w(&v, &x, &[], 0.0, &OdeCfg::default()).unwrap();
        assert_eq!(w0, x);
    }

    #[test]
    fn flow_shifted_quadratic() {
        // V = 1/2 ||x - a||^2: W_t(x) = a + e^{-t/2} (x - a)
        let alpha = 0.9;
        let v = PotentialSpec::quadratic(vec![alpha], 1, 0);
        let mut rng = rng::stream(32, "flow", 0);
        let x = gue_tuple(1, 4, 1.0, &mut rng);
        let t = 2.0;
        let w = flow_w(&v, &x, &[], t, &OdeCfg::default()).unwrap();
        let a = MatrixTuple::scalar(&[alpha], 4);
        let mut expect = a.clone();
        expect.axpy((-t / 2.0f64).exp(), &x.sub(&a));
        assert!(w.sub(&expect).norm2() < 2e-6);
    }

    #[test]
    fn flow_contraction_certificate() {
        // ||W_t(x) - W_t(x')|| <= e^{-ct/2} ||x - x'|| on the quartic model
        let vpoly =
            crate::tracepoly::parse_self_adjoint("0.5*tr(x1^2) + 0.1*tr(x1^4)").unwrap();
        let v = PotentialSpec::from_trace_poly(vpoly, 1, 0, 1.0, 2.2)
            .unwrap()
            .with_radius(2.5);
        let mut rng = rng::stream(33, "flow", 0);
        let x = gue_tuple(1, 4, 0.5, &mut rng);
        let mut xp = x.clone();
        xp.axpy(0.3, &gue_tuple(1, 4, 1.0, &mut rng));
        let t = 1.0;
        let w = flow_w(&v, &x, &[], t, &OdeCfg::default()).unwrap();
        let wp = flow_w(&v, &xp, &[], t, &OdeCfg::default()).unwrap();
        let ratio = w.sub(&wp).norm2() / x.sub(&xp).norm2();
        assert!(
            ratio <= (-v.c * t / 2.0).exp() + 1e-6,
            "ratio {ratio} vs {}",
            (-v.c * t / 2.0).exp()
        );
    }

    #[test]
    fn tt_constant_is_unchanged() {
        let v = PotentialSpec::quadratic(vec![0.0], 1, 0);
        let cmat = CMatrix::identity(4, 4) * Complex64::new(3.0, 0.0);
        let cref = cmat.clone();
        let closure = move |_: &MatrixTuple| cref.clone();
        let f = Observable::Closure {
            f: &closure,
            lip: 0.0,
        };
        let x = MatrixTuple::zeros(1, 4);
        let mc = McCfg {
            paths: 8,
            seed: 2,
            fine_level: None,
        };
        let r = tt_apply(&f, &v, &x, &[], 1.0, 2, &mc, &OdeCfg::default()).unwrap();
        assert!((&r.estimate - &cmat).norm() < 1e-12);
    }

    #[test]
    fn tt_ou_identity_observable() {
        // V = 1/2||x||^2, f(x) = x: T_t f(x) = e^{-t/2} x (OU semigroup);
        // the scheme is exact in expectation for linear f and quadratic V
        let v = PotentialSpec::quadratic(vec![0.0], 1, 0);
        let closure = |full: &MatrixTuple| full.mats[0].clone();
        let f = Observable::Closure {
            f: &closure,
            lip: 1.0,
        };
        let mut rng = rng::stream(34, "tt", 0);
        let x = gue_tuple(1, 4, 1.0, &mut rng);
        let t = 2.0;
        let mc = McCfg {
            paths: 512,
            seed: 3,
            fine_level: None,
        };
        let r = tt_apply(&f, &v, &x, &[], t, 3, &mc, &OdeCfg::default()).unwrap();
        let expect = x.mats[0].clone() * Complex64::new((-t / 2.0f64).exp(), 0.0);
        let err = (&r.estimate - &expect).norm() / (x.n as f64).sqrt();
        assert!(err < 4.0 * r.se + 0.02, "err {err} vs se {}", r.se);
    }

    #[test]
    fn condexp_direct_shifted_mean() {
        // no y-block: E[X] = alpha I for the shifted Gaussian
        let alpha = 0.8;
        let v = PotentialSpec::quadratic(vec![alpha], 1, 0);
        let closure = |full: &MatrixTuple| full.mats[0].clone();
        let f = Observable::Closure {
            f: &closure,
            lip: 1.0,
        };
        let cfg = CondExpCfg {
            seed: 5,
            ..Default::default()
        };
        let r = cond_exp(&f, &v, &[], 6, CondExpMode::Direct, &cfg).unwrap();
        let expect = CMatrix::identity(6, 6) * Complex64::new(alpha, 0.0);
        let err = ((&r.estimate - &expect).iter().map(|z| z.norm_sqr()).sum::<f64>() / 6.0).sqrt();
        assert!(err < 4.0 * r.se + 0.02, "err {err}, se {}", r.se);
    }
}
