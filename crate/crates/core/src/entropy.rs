//! Normalized conditional Fisher information and entropy.
//!
//! With the dimension-independent normalizations, the Fisher information
//! of the noised block `B` at noise level `t` is
//! `I(t) = E || D_B V_t (X~_t, rest) ||_2^2`, estimated by an outer average
//! over chain states with fresh noise and inner conditional estimates of
//! the evolved gradient. Entropy is recovered by quadrature of
//! `h = 1/2 ∫ (m/(1+t) - I(t)) dt + (m/2) log 2 pi e`,
//! with the integral tails closed analytically through the sandwich
//! `m/(a+t) <= I(t) <= min(m/t, I(0))`. The Gaussian-relative quantities
//! use the Ornstein-Uhlenbeck time parameterization, where
//! `|h_g| = 1/2 ∫ I_g(s) ds` with a nonnegative integrand decaying like
//! `e^{-s}`.
//!
//! All reported errors are budgets (4 x standard error, quadrature
//! Richardson estimate, and tail envelope half-widths), never bare point
//! estimates. Inner estimates of `||D||^2` subtract the estimated inner
//! variance so that the squared-norm is unbiased to leading order.

use serde::{Deserialize, Serialize};

use crate::error::CoreError;
use crate::matrix::gue_tuple;
use crate::potential::PotentialSpec;
use crate::rng;
use crate::sampler::{batch_mean_se_real, SampleChain};
use crate::semigroup::{evolved_grad, EvolvedSpec, InnerCfg, TimeMode};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FisherMode {
    /// `I(t) = E ||D_B V_t||^2`.
    Raw,
    /// `I_g(t) = E ||D_B V_t - X~_t||^2 = I - 2m + E||X~_t||^2`.
    GaussianRelative,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScoreEstimate {
    pub estimate: f64,
    pub se: f64,
    pub time: f64,
    pub mode: FisherMode,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct FisherCfg {
    pub outer_k: usize,
    pub inner: InnerCfg,
    pub seed: u64,
    /// Offset into the chain for the outer subsample; grid points use
    /// disjoint offsets so their errors are independent.
    pub offset: usize,
}

impl Default for FisherCfg {
    fn default() -> Self {
        Self {
            outer_k: 64,
            inner: InnerCfg::default(),
            seed: 1,
            offset: 0,
        }
    }
}

/// Variable-block layout of a Fisher/entropy computation: the noised block
/// receives the Gaussian interpolation, the integrated block is summed out
/// by the inner sampler, and everything else is frozen at the outer sample.
#[derive(Clone, Debug)]
pub struct BlockLayout {
    pub noised: Vec<usize>,
    pub integrated: Vec<usize>,
}

impl BlockLayout {
    /// Conditional layout: x-block noised, y-block frozen.
    pub fn conditional(v: &PotentialSpec) -> Self {
        Self {
            noised: (0..v.m).collect(),
            integrated: Vec::new(),
        }
    }

    /// Joint layout: everything noised.
    pub fn joint(v: &PotentialSpec) -> Self {
        Self {
            noised: (0..v.nvars()).collect(),
            integrated: Vec::new(),
        }
    }

    /// Marginal layout for the y-block: y noised, x integrated out.
    pub fn y_marginal(v: &PotentialSpec) -> Self {
        Self {
            noised: (v.m..v.nvars()).collect(),
            integrated: (0..v.m).collect(),
        }
    }

    fn frozen_indices(&self, nvars: usize) -> Vec<usize> {
        (0..nvars)
            .filter(|j| !self.noised.contains(j) && !self.integrated.contains(j))
            .collect()
    }
}

/// Mean of `tau(X_j^2)` over the noised block, the `a` of the sandwich.
pub fn second_moment_scale(chain: &SampleChain, noised: &[usize]) -> f64 {
    let mut acc = 0.0;
    for s in &chain.states {
        for &j in noised {
            acc += (s.mats[j].adjoint() * &s.mats[j]).trace().re / s.n as f64;
        }
    }
    acc / (chain.states.len() * noised.len()) as f64
}

/// Estimate the Fisher information of the noised block at the given time.
pub fn fisher(
    v: &PotentialSpec,
    layout: &BlockLayout,
    chain: &SampleChain,
    time: TimeMode,
    mode: FisherMode,
    cfg: &FisherCfg,
) -> Result<ScoreEstimate, CoreError> {
    let t_raw = match time {
        TimeMode::Raw(t) => t,
        TimeMode::Renormalized(s) => s.exp_m1(),
    };
    let time_label = match time {
        TimeMode::Raw(t) => t,
        TimeMode::Renormalized(s) => s,
    };
    let nvars = v.nvars();
    let frozen_idx = layout.frozen_indices(nvars);

    // exact fast path: t = 0 with nothing to integrate out
    if t_raw <= 0.0 && layout.integrated.is_empty() {
        let series: Vec<f64> = chain
            .states
            .iter()
            .map(|x| {
                let g = v.grad_full(x).expect("exact gradient");
                let gb = g.select(&layout.noised);
                match mode {
                    FisherMode::Raw => gb.inner(&gb),
                    FisherMode::GaussianRelative => {
                        let d = gb.sub(&x.select(&layout.noised));
                        d.inner(&d)
                    }
                }
            })
            .collect();
        let (mean, se, _) = batch_mean_se_real(&series);
        return Ok(ScoreEstimate {
            estimate: mean,
            se,
            time: time_label,
            mode,
        });
    }

    let stride = (chain.states.len() / cfg.outer_k).max(1);
    let mut series = Vec::with_capacity(cfg.outer_k);
    for i in 0..cfg.outer_k {
        let state = &chain.states[(i * stride + cfg.offset) % chain.states.len()];
        let mut noise_rng = rng::stream(cfg.seed, "fisher-noise", i as u64);
        let xb = state.select(&layout.noised);
        let x_tilde = match time {
            TimeMode::Raw(t) => {
                let mut xt = xb.clone();
                if t > 0.0 {
                    xt.axpy(1.0, &gue_tuple(xb.m(), xb.n, t, &mut noise_rng));
                }
                xt
            }
            TimeMode::Renormalized(s) => {
                let mut xt = xb.scaled((-s / 2.0).exp());
                let var = 1.0 - (-s).exp();
                if var > 0.0 {
                    xt.axpy(1.0, &gue_tuple(xb.m(), xb.n, var, &mut noise_rng));
                }
                xt
            }
        };
        let frozen: Vec<_> = frozen_idx
            .iter()
            .map(|&j| (j, state.mats[j].clone()))
            .collect();
        let spec = EvolvedSpec {
            base: v,
            noised: layout.noised.clone(),
            frozen,
        };
        let est = evolved_grad(
            &spec,
            time,
            &x_tilde,
            &cfg.inner,
            rng::subseed(cfg.seed, "fisher-inner", i as u64),
        )?;
        let raw_sq = match mode {
            FisherMode::Raw => est.grad.inner(&est.grad),
            FisherMode::GaussianRelative => {
                let d = est.grad.sub(&x_tilde);
                d.inner(&d)
            }
        };
        // debias: E||D^||^2 = ||D||^2 + Var(D^)
        series.push(raw_sq - est.se * est.se);
    }
    let (mean, se, _) = batch_mean_se_real(&series);
    Ok(ScoreEstimate {
        estimate: mean,
        se,
        time: time_label,
        mode,
    })
}

/// Sandwich envelope for `I(t)` at raw time `t`:
/// `m/(a+t) <= I(t) <= min(m/t, i0)`.
pub fn fisher_sandwich(m: f64, a: f64, i0: f64, t: f64) -> (f64, f64) {
    let lower = m / (a + t);
    let upper = if t > 0.0 { (m / t).min(i0) } else { i0 };
    (lower, upper)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct QuadratureRow {
    pub t: f64,
    pub integrand: f64,
    pub se: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EntropyQuadrature {
    pub rows: Vec<QuadratureRow>,
    pub value: f64,
    /// Total budget: 4*MC + Richardson + tail half-widths.
    pub budget: f64,
    pub mc_budget: f64,
    pub quad_budget: f64,
    pub tail_budget: f64,
    pub label: String,
}

impl EntropyQuadrature {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,integrand,se\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{:.16e},{:.16e},{:.16e}\n",
                r.t, r.integrand, r.se
            ));
        }
        out
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EntropyCfg {
    pub t_min: f64,
    pub t_max: f64,
    pub grid: usize,
    /// Renormalized-time horizon for the Gaussian-relative quadrature.
    pub s_max: f64,
    pub grid_g: usize,
    pub fisher: FisherCfg,
}

impl Default for EntropyCfg {
    fn default() -> Self {
        Self {
            t_min: 1e-3,
            t_max: 1e3,
            grid: 15,
            s_max: 10.0,
            grid_g: 13,
            fisher: FisherCfg::default(),
        }
    }
}

fn trapezoid(ts: &[f64], vals: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 1..ts.len() {
        acc += 0.5 * (vals[i] + vals[i - 1]) * (ts[i] - ts[i - 1]);
    }
    acc
}

fn trapezoid_budget(ts: &[f64], ses: &[f64]) -> f64 {
    // grid points use disjoint outer subsamples and independent seeds, so
    // their errors combine in quadrature under the trapezoid weights
    let k = ts.len();
    let mut acc = 0.0;
    for i in 0..k {
        let w = match i {
            0 => 0.5 * (ts[1] - ts[0]),
            _ if i == k - 1 => 0.5 * (ts[k - 1] - ts[k - 2]),
            _ => 0.5 * (ts[i + 1] - ts[i - 1]),
        };
        acc += (w * ses[i]).powi(2);
    }
    4.0 * acc.sqrt()
}

fn richardson(ts: &[f64], vals: &[f64]) -> f64 {
    if ts.len() < 5 {
        return f64::INFINITY;
    }
    let full = trapezoid(ts, vals);
    let coarse_ts: Vec<f64> = ts.iter().copied().step_by(2).collect();
    let coarse_vals: Vec<f64> = vals.iter().copied().step_by(2).collect();
    let coarse = trapezoid(&coarse_ts, &coarse_vals);
    (full - coarse).abs() / 3.0
}

/// `h^{(N)}` of the noised block (conditionally on the frozen block):
/// adaptive log-spaced quadrature of `(m/(1+t) - I(t))/2` with analytic
/// tails from the Fisher sandwich, plus `(m/2) log 2 pi e`.
pub fn entropy(
    v: &PotentialSpec,
    layout: &BlockLayout,
    chain: &SampleChain,
    cfg: &EntropyCfg,
) -> Result<EntropyQuadrature, CoreError> {
    let m = layout.noised.len() as f64;
    let a = second_moment_scale(chain, &layout.noised);
    let i0 = fisher(
        v,
        layout,
        chain,
        TimeMode::Raw(0.0),
        FisherMode::Raw,
        &cfg.fisher,
    )?;

    let ratio = (cfg.t_max / cfg.t_min).ln();
    let ts: Vec<f64> = (0..cfg.grid)
        .map(|i| cfg.t_min * (ratio * i as f64 / (cfg.grid - 1) as f64).exp())
        .collect();
    let mut rows = Vec::with_capacity(ts.len());
    for (i, &t) in ts.iter().enumerate() {
        let fcfg = FisherCfg {
            seed: rng::subseed(cfg.fisher.seed, "entropy-grid", i as u64),
            offset: i * cfg.fisher.outer_k,
            ..cfg.fisher
        };
        let sc = fisher(v, layout, chain, TimeMode::Raw(t), FisherMode::Raw, &fcfg)?;
        rows.push(QuadratureRow {
            t,
            integrand: m / (1.0 + t) - sc.estimate,
            se: sc.se,
        });
    }
    let vals: Vec<f64> = rows.iter().map(|r| r.integrand).collect();
    let ses: Vec<f64> = rows.iter().map(|r| r.se).collect();
    let interior = trapezoid(&ts, &vals);
    let mc_budget = trapezoid_budget(&ts, &ses);
    let quad_budget = richardson(&ts, &vals);

    // head [0, t_min]: integrand between m/(1+t) - min(m/t, I0) and
    // m/(1+t) - m/(a+t), both integrable in closed form
    let e = cfg.t_min;
    let head_hi = m * (1.0 + e).ln() - m * ((a + e) / a).ln();
    let head_lo = {
        let cut = (m / i0.estimate.max(1e-12)).min(e);
        // below the cut the upper envelope of I is I0, above it m/t
        let int_min_part = i0.estimate * cut
            + if e > cut {
                m * (e / cut).ln()
            } else {
                0.0
            };
        m * (1.0 + e).ln() - int_min_part
    };
    let head_mid = 0.5 * (head_hi + head_lo);
    let head_half = 0.5 * (head_hi - head_lo).abs();

    // tail [t_max, inf): integrand between m/(1+t) - m/t and
    // m/(1+t) - m/(a+t)
    let tmax = cfg.t_max;
    let tail_lo = -m * (1.0 + 1.0 / tmax).ln();
    let tail_hi = -m * ((a + tmax) / (1.0 + tmax)).ln();
    let tail_mid = 0.5 * (tail_hi + tail_lo);
    let tail_half = 0.5 * (tail_hi - tail_lo).abs();

    let tail_budget = 0.5 * (head_half + tail_half);
    let value =
        0.5 * (interior + head_mid + tail_mid) + m / 2.0 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln();
    Ok(EntropyQuadrature {
        rows,
        value,
        budget: 0.5 * (mc_budget + quad_budget) + tail_budget,
        mc_budget: 0.5 * mc_budget,
        quad_budget: 0.5 * quad_budget,
        tail_budget,
        label: format!("h({})", chain.label),
    })
}

/// Gaussian-relative entropy `h_g <= 0` via the nonnegative
/// Ornstein-Uhlenbeck integrand: `h_g = -1/2 ∫_0^inf I_g(s) ds`.
pub fn entropy_g(
    v: &PotentialSpec,
    layout: &BlockLayout,
    chain: &SampleChain,
    cfg: &EntropyCfg,
) -> Result<EntropyQuadrature, CoreError> {
    let m = layout.noised.len() as f64;
    let a = second_moment_scale(chain, &layout.noised);
    // grid: s = 0 plus log-spaced points
    let s_lo = 1e-2;
    let ratio = (cfg.s_max / s_lo).ln();
    let mut ss = vec![0.0];
    ss.extend(
        (0..cfg.grid_g).map(|i| s_lo * (ratio * i as f64 / (cfg.grid_g - 1) as f64).exp()),
    );
    let mut rows = Vec::with_capacity(ss.len());
    for (i, &s) in ss.iter().enumerate() {
        let fcfg = FisherCfg {
            seed: rng::subseed(cfg.fisher.seed, "entropy-g-grid", i as u64),
            offset: i * cfg.fisher.outer_k,
            ..cfg.fisher
        };
        let sc = fisher(
            v,
            layout,
            chain,
            TimeMode::Renormalized(s),
            FisherMode::GaussianRelative,
            &fcfg,
        )?;
        rows.push(QuadratureRow {
            t: s,
            integrand: sc.estimate,
            se: sc.se,
        });
    }
    let vals: Vec<f64> = rows.iter().map(|r| r.integrand).collect();
    let ses: Vec<f64> = rows.iter().map(|r| r.se).collect();
    let interior = trapezoid(&ss, &vals);
    let mc_budget = trapezoid_budget(&ss, &ses);
    let quad_budget = richardson(&ss, &vals);
    // tail: 0 <= ∫_smax^inf I_g <= m a e^{-s_max}
    let tail_hi = m * a * (-cfg.s_max).exp();
    let tail_mid = 0.5 * tail_hi;
    let value = -0.5 * (interior + tail_mid);
    Ok(EntropyQuadrature {
        rows,
        value,
        budget: 0.5 * (mc_budget + quad_budget) + 0.25 * tail_hi,
        mc_budget: 0.5 * mc_budget,
        quad_budget: 0.5 * quad_budget,
        tail_budget: 0.25 * tail_hi,
        label: format!("h_g({})", chain.label),
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LsiVerdict {
    pub abs_hg: f64,
    pub hg_budget: f64,
    pub half_ig0: f64,
    pub ig0_budget: f64,
    pub pass: bool,
}

/// Log-Sobolev-type verdict: `|h_g| <= 1/2 I_g(0)` within budgets.
pub fn lsi_check(
    v: &PotentialSpec,
    layout: &BlockLayout,
    chain: &SampleChain,
    cfg: &EntropyCfg,
) -> Result<LsiVerdict, CoreError> {
    let hg = entropy_g(v, layout, chain, cfg)?;
    let ig0 = fisher(
        v,
        layout,
        chain,
        TimeMode::Raw(0.0),
        FisherMode::GaussianRelative,
        &cfg.fisher,
    )?;
    let abs_hg = hg.value.abs();
    let half_ig0 = 0.5 * ig0.estimate;
    let budget = hg.budget + 2.0 * ig0.se;
    Ok(LsiVerdict {
        abs_hg,
        hg_budget: hg.budget,
        half_ig0,
        ig0_budget: 4.0 * ig0.se,
        pass: abs_hg <= half_ig0 + budget,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdditivityVerdict {
    pub h_joint: f64,
    pub h_cond: f64,
    pub h_marginal: f64,
    pub defect: f64,
    pub budget: f64,
    pub pass: bool,
}

/// Chain rule `h(X, Y) = h(X | Y) + h(Y)` within combined budgets; the
/// marginal entropy integrates the x-block out with the inner sampler.
pub fn entropy_additivity_check(
    v: &PotentialSpec,
    chain: &SampleChain,
    cfg: &EntropyCfg,
) -> Result<AdditivityVerdict, CoreError> {
    let joint = entropy(v, &BlockLayout::joint(v), chain, cfg)?;
    let cond = entropy(v, &BlockLayout::conditional(v), chain, cfg)?;
    let marg = entropy(v, &BlockLayout::y_marginal(v), chain, cfg)?;
    let defect = (joint.value - cond.value - marg.value).abs();
    let budget = joint.budget + cond.budget + marg.budget;
    Ok(AdditivityVerdict {
        h_joint: joint.value,
        h_cond: cond.value,
        h_marginal: marg.value,
        defect,
        budget,
        pass: defect <= budget,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::{sample, SamplerConfig};

    fn gue_chain(n: usize, seed: u64) -> (PotentialSpec, SampleChain) {
        let v = PotentialSpec::quadratic(vec![0.0], 1, 0).with_label("gue");
        let cfg = SamplerConfig::default().with_seed(seed).sized(300, 900, 2);
        let chain = sample(&v, n, &cfg).unwrap();
        (v, chain)
    }

    #[test]
    fn gue_fisher_at_zero() {
        // I(0) = E||X||^2 = m and I_g(0) = 0 for the GUE potential
        let (v, chain) = gue_chain(8, 41);
        let layout = BlockLayout::conditional(&v);
        let cfg = FisherCfg::default();
        let raw = fisher(&v, &layout, &chain, TimeMode::Raw(0.0), FisherMode::Raw, &cfg).unwrap();
        assert!((raw.estimate - 1.0).abs() < 4.0 * raw.se + 0.02, "{raw:?}");
        let rel = fisher(
            &v,
            &layout,
            &chain,
            TimeMode::Raw(0.0),
            FisherMode::GaussianRelative,
            &cfg,
        )
        .unwrap();
        assert!(rel.estimate.abs() < 1e-20, "{rel:?}");
    }

    #[test]
    fn gue_fisher_sandwich_at_positive_t() {
        let (v, chain) = gue_chain(8, 42);
        let layout = BlockLayout::conditional(&v);
        let cfg = FisherCfg {
            outer_k: 24,
            ..Default::default()
        };
        for t in [0.3, 1.0, 4.0] {
            let sc = fisher(&v, &layout, &chain, TimeMode::Raw(t), FisherMode::Raw, &cfg).unwrap();
            // closed form for GUE: I(t) = m/(1+t)
            let expect = 1.0 / (1.0 + t);
            assert!(
                (sc.estimate - expect).abs() < 4.0 * sc.se + 0.02,
                "t={t}: {} vs {expect} (se {})",
                sc.estimate,
                sc.se
            );
        }
    }

    #[test]
    fn shifted_gaussian_relative_integrand() {
        // V = 1/2||x - a||^2: I_g(s) = e^{-s} alpha^2
        let alpha = 1.0;
        let v = PotentialSpec::quadratic(vec![alpha], 1, 0).with_label("shifted");
        let cfg = SamplerConfig::default().with_seed(43).sized(300, 900, 2);
        let chain = sample(&v, 8, &cfg).unwrap();
        let layout = BlockLayout::conditional(&v);
        let fcfg = FisherCfg {
            outer_k: 32,
            ..Default::default()
        };
        for s in [0.5, 1.5] {
            let sc = fisher(
                &v,
                &layout,
                &chain,
                TimeMode::Renormalized(s),
                FisherMode::GaussianRelative,
                &fcfg,
            )
            .unwrap();
            let expect = (-s).exp() * alpha * alpha;
            assert!(
                (sc.estimate - expect).abs() < 4.0 * sc.se + 0.05,
                "s={s}: {} vs {expect}",
                sc.estimate
            );
        }
    }

    #[test]
    fn gue_entropy_closed_form() {
        let (v, chain) = gue_chain(8, 44);
        let layout = BlockLayout::conditional(&v);
        let cfg = EntropyCfg {
            fisher: FisherCfg {
                outer_k: 32,
                ..Default::default()
            },
            grid: 11,
            ..Default::default()
        };
        let h = entropy(&v, &layout, &chain, &cfg).unwrap();
        let expect = 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln();
        assert!(
            (h.value - expect).abs() < h.budget.max(0.02),
            "h = {} vs {expect}, budget {}",
            h.value,
            h.budget
        );
    }
}
