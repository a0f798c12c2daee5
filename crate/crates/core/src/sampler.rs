//! Metropolis-adjusted Langevin sampling of `mu ∝ exp(-N^2 V)` on
//! Hermitian tuples, moment estimation with batched-means errors,
//! Schwinger-Dyson residuals, and concentration checks.
//!
//! The proposal is the Tr-coordinate Langevin step
//! `x' = x - (delta/2) N DV(x) + sqrt(delta) G` with `G` white in a
//! Tr-orthonormal basis, and the Metropolis correction makes the chain
//! exactly stationary for `mu`. The step is auto-tuned during burn-in to a
//! 50-70% acceptance band and frozen afterwards.

use std::io::{Read, Write};
use std::path::Path;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::CoreError;
use crate::matrix::{standard_noise, CMatrix, MatrixTuple};
use crate::potential::{hessian_window_check, PotentialKind, PotentialSpec};
use crate::rng;
use crate::tracepoly::{free_difference_quotient, Word};

/// Generic target density `∝ exp(-N^2 E(x))` over a tuple of free
/// Hermitian variables. Implementations must provide exact energy
/// differences and gradients.
pub trait GibbsTarget: Sync {
    fn free_vars(&self) -> usize;
    fn n(&self) -> usize;
    fn energy(&self, x: &MatrixTuple) -> f64;
    fn grad(&self, x: &MatrixTuple) -> MatrixTuple;
    /// Declared convexity window of the target.
    fn window(&self) -> (f64, f64);
    fn start(&self) -> MatrixTuple;
    fn opnorm_radius(&self) -> Option<f64> {
        None
    }
}

/// The full model as a target (all variables free).
pub struct FullTarget<'a> {
    pub v: &'a PotentialSpec,
    pub n: usize,
}

impl GibbsTarget for FullTarget<'_> {
    fn free_vars(&self) -> usize {
        self.v.nvars()
    }
    fn n(&self) -> usize {
        self.n
    }
    fn energy(&self, x: &MatrixTuple) -> f64 {
        self.v.value(x).expect("exact value")
    }
    fn grad(&self, x: &MatrixTuple) -> MatrixTuple {
        self.v.grad_full(x).expect("exact gradient")
    }
    fn window(&self) -> (f64, f64) {
        (self.v.c, self.v.big_c)
    }
    fn start(&self) -> MatrixTuple {
        self.v.center(self.n)
    }
    fn opnorm_radius(&self) -> Option<f64> {
        self.v.opnorm_radius
    }
}

/// Gaussian tilt `sum_j ||center_j - x_j||^2 / 2t` on a subset of variables.
#[derive(Clone, Debug)]
pub struct Tilt {
    /// Global variable indices carrying the tilt.
    pub vars: Vec<usize>,
    /// Tilt centers, aligned with `vars`.
    pub centers: Vec<CMatrix>,
    pub t: f64,
}

/// A conditional/tilted view of a model: some variables frozen, optional
/// Gaussian tilt on others. Free variables keep their global order.
pub struct ConditionalTarget<'a> {
    pub v: &'a PotentialSpec,
    pub n: usize,
    pub frozen: Vec<(usize, CMatrix)>,
    pub tilt: Option<Tilt>,
    free: Vec<usize>,
    start: MatrixTuple,
}

impl<'a> ConditionalTarget<'a> {
    pub fn new(
        v: &'a PotentialSpec,
        n: usize,
        frozen: Vec<(usize, CMatrix)>,
        tilt: Option<Tilt>,
    ) -> Self {
        let frozen_idx: Vec<usize> = frozen.iter().map(|(j, _)| *j).collect();
        let free: Vec<usize> = (0..v.nvars()).filter(|j| !frozen_idx.contains(j)).collect();
        let center = v.center(n);
        let mut start = center.select(&free);
        // seed tilted coordinates at their tilt centers
        if let Some(t) = &tilt {
            for (k, &gj) in t.vars.iter().enumerate() {
                if let Some(pos) = free.iter().position(|&f| f == gj) {
                    start.mats[pos] = t.centers[k].clone();
                }
            }
        }
        Self {
            v,
            n,
            frozen,
            tilt,
            free,
            start,
        }
    }

    pub fn free_indices(&self) -> &[usize] {
        &self.free
    }

    pub fn with_start(mut self, start: MatrixTuple) -> Self {
        self.start = start;
        self
    }

    /// Assemble the full variable tuple from the free part.
    pub fn assemble(&self, xfree: &MatrixTuple) -> MatrixTuple {
        let mut full = MatrixTuple::zeros(self.v.nvars(), self.n);
        for (k, &j) in self.free.iter().enumerate() {
            full.mats[j] = xfree.mats[k].clone();
        }
        for (j, m) in &self.frozen {
            full.mats[*j] = m.clone();
        }
        full
    }
}

impl GibbsTarget for ConditionalTarget<'_> {
    fn free_vars(&self) -> usize {
        self.free.len()
    }
    fn n(&self) -> usize {
        self.n
    }
    fn energy(&self, xfree: &MatrixTuple) -> f64 {
        let full = self.assemble(xfree);
        let mut e = self.v.value(&full).expect("exact value");
        if let Some(t) = &self.tilt {
            for (k, &gj) in t.vars.iter().enumerate() {
                let d = &full.mats[gj] - &t.centers[k];
                e += d.iter().map(|z| z.norm_sqr()).sum::<f64>() / (2.0 * t.t * self.n as f64);
            }
        }
        e
    }
    fn grad(&self, xfree: &MatrixTuple) -> MatrixTuple {
        let full = self.assemble(xfree);
        let g = self.v.grad_full(&full).expect("exact gradient");
        let mut gf = g.select(&self.free);
        if let Some(t) = &self.tilt {
            for (k, &gj) in t.vars.iter().enumerate() {
                if let Some(pos) = self.free.iter().position(|&f| f == gj) {
                    gf.mats[pos] += (&full.mats[gj] - &t.centers[k]) / Complex64::new(t.t, 0.0);
                }
            }
        }
        gf
    }
    fn window(&self) -> (f64, f64) {
        let (c, big_c) = (self.v.c, self.v.big_c);
        match &self.tilt {
            Some(t) => (c, big_c + 1.0 / t.t),
            None => (c, big_c),
        }
    }
    fn start(&self) -> MatrixTuple {
        self.start.clone()
    }
    fn opnorm_radius(&self) -> Option<f64> {
        None
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Initial step; auto-tuned during burn-in unless `autotune = false`.
    pub step: f64,
    pub burn_in: usize,
    pub thin: usize,
    /// Kept samples per chain.
    pub n_samples: usize,
    pub chains: usize,
    pub seed: u64,
    pub accept_band: (f64, f64),
    pub autotune: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            step: 0.0, // 0 means: pick from the window and dimension
            burn_in: 500,
            thin: 2,
            n_samples: 2000,
            chains: 2,
            seed: 1,
            accept_band: (0.5, 0.7),
            autotune: true,
        }
    }
}

impl SamplerConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
    pub fn sized(mut self, burn_in: usize, n_samples: usize, thin: usize) -> Self {
        self.burn_in = burn_in;
        self.n_samples = n_samples;
        self.thin = thin;
        self
    }
    pub fn single_chain(mut self) -> Self {
        self.chains = 1;
        self
    }
}

/// Output of one or more merged chains.
#[derive(Clone, Debug)]
pub struct SampleChain {
    pub states: Vec<MatrixTuple>,
    pub accept_rate: f64,
    pub n: usize,
    pub m: usize,
    pub seed: u64,
    pub step_used: f64,
    /// Operator-norm restriction violations observed, if a radius was set.
    pub radius_violations: usize,
    pub label: String,
}

fn initial_step(target: &dyn GibbsTarget, cfg: &SamplerConfig) -> f64 {
    if cfg.step > 0.0 {
        return cfg.step;
    }
    let (_, big_c) = target.window();
    let d = (target.free_vars() * target.n() * target.n()) as f64;
    1.0 / (big_c * target.n() as f64 * d.cbrt().max(1.0))
}

/// Run one MALA chain; returns kept states and the acceptance rate over
/// the sampling (post burn-in) phase.
pub fn mala_chain(
    target: &dyn GibbsTarget,
    cfg: &SamplerConfig,
    chain_index: u64,
) -> Result<(Vec<MatrixTuple>, f64, f64, usize), CoreError> {
    let n = target.n();
    let m = target.free_vars();
    let nf = n as f64;
    let mut rng = rng::stream(cfg.seed, "mala-chain", chain_index);
    let mut delta = initial_step(target, cfg);
    let (_, big_c) = target.window();

    let mut x = target.start();
    // disperse chains around the start
    let mut init_noise = standard_noise(m, n, &mut rng);
    init_noise.scale(0.1 / (target.window().0.sqrt() * nf.sqrt()));
    x.axpy(1.0, &init_noise);
    x.hermitize();

    let mut e_x = target.energy(&x);
    let mut g_x = target.grad(&x);

    let total_steps = cfg.burn_in + cfg.n_samples * cfg.thin;
    let mut kept = Vec::with_capacity(cfg.n_samples);
    let mut accepts_sampling = 0usize;
    let mut steps_sampling = 0usize;
    let mut accepts_window = 0usize;
    let mut window_len = 0usize;
    let mut violations = 0usize;

    for step in 0..total_steps {
        // proposal: x' = x - (delta/2) N DV(x) + sqrt(delta) G
        let mut xp = x.clone();
        xp.axpy(-0.5 * delta * nf, &g_x);
        let noise = standard_noise(m, n, &mut rng);
        xp.axpy(delta.sqrt(), &noise);
        let e_xp = target.energy(&xp);
        let g_xp = target.grad(&xp);

        // q(x'|x) = -N ||x' - x + (delta/2) N DV(x)||_2^2 / (2 delta)
        let mut fwd = xp.sub(&x);
        fwd.axpy(0.5 * delta * nf, &g_x);
        let mut bwd = x.sub(&xp);
        bwd.axpy(0.5 * delta * nf, &g_xp);
        let log_q_fwd = -nf * fwd.inner(&fwd) / (2.0 * delta);
        let log_q_bwd = -nf * bwd.inner(&bwd) / (2.0 * delta);
        let log_alpha = -nf * nf * (e_xp - e_x) + log_q_bwd - log_q_fwd;

        let u: f64 = rand::Rng::random(&mut rng);
        let accept = log_alpha >= 0.0 || u.ln() < log_alpha;
        if accept {
            x = xp;
            e_x = e_xp;
            g_x = g_xp;
        }

        if step < cfg.burn_in {
            if cfg.autotune {
                accepts_window += usize::from(accept);
                window_len += 1;
                if window_len == 32 {
                    let rate = accepts_window as f64 / window_len as f64;
                    if rate > cfg.accept_band.1 {
                        delta *= 1.35;
                    } else if rate < cfg.accept_band.0 {
                        delta /= 1.35;
                    }
                    // stability heuristic: delta * C < 2
                    delta = delta.min(1.9 / big_c);
                    accepts_window = 0;
                    window_len = 0;
                }
            }
        } else {
            steps_sampling += 1;
            accepts_sampling += usize::from(accept);
            if (step - cfg.burn_in + 1) % cfg.thin == 0 {
                if let Some(r) = target.opnorm_radius() {
                    if x.opnorm_inf() > r {
                        violations += 1;
                    }
                }
                kept.push(x.clone());
            }
        }
    }
    let rate = if steps_sampling > 0 {
        accepts_sampling as f64 / steps_sampling as f64
    } else {
        f64::NAN
    };
    Ok((kept, rate, delta, violations))
}

/// Sample the model `V` at matrix size `N`. Joins sample their factors
/// independently, linear images map base samples, marginals project them;
/// other kinds run parallel MALA chains merged in fixed chain order.
pub fn sample(v: &PotentialSpec, n: usize, cfg: &SamplerConfig) -> Result<SampleChain, CoreError> {
    match &v.kind {
        PotentialKind::Join { left, right } => {
            let lcfg = cfg.clone().with_seed(rng::subseed(cfg.seed, "join-left", 0));
            let rcfg = cfg
                .clone()
                .with_seed(rng::subseed(cfg.seed, "join-right", 0));
            let lc = sample(left, n, &lcfg)?;
            let rc = sample(right, n, &rcfg)?;
            let states = lc
                .states
                .iter()
                .zip(rc.states.iter())
                .map(|(a, b)| a.concat(b))
                .collect();
            Ok(SampleChain {
                states,
                accept_rate: 0.5 * (lc.accept_rate + rc.accept_rate),
                n,
                m: v.nvars(),
                seed: cfg.seed,
                step_used: lc.step_used.min(rc.step_used),
                radius_violations: lc.radius_violations + rc.radius_violations,
                label: v.label.clone(),
            })
        }
        PotentialKind::LinearImage { base, a, .. } => {
            let mut chain = sample(base, n, cfg)?;
            chain.states = chain
                .states
                .iter()
                .map(|s| crate::potential::apply_linear(a, s))
                .collect();
            chain.label = v.label.clone();
            Ok(chain)
        }
        PotentialKind::Marginal { base, keep } => {
            let mut chain = sample(base, n, cfg)?;
            chain.states = chain.states.iter().map(|s| s.select(keep)).collect();
            chain.m = keep.len();
            chain.label = v.label.clone();
            Ok(chain)
        }
        _ => {
            // pre-checks: declared window verified empirically on a small
            // sample of pairs; step stability is enforced inside the chain
            let win = hessian_window_check(v, n, 64, 0.05 * (v.big_c - v.c).max(0.05), cfg.seed)?;
            if !win.pass {
                return Err(CoreError::Sampler(format!(
                    "declared window [{}, {}] fails empirical check: observed [{:.6}, {:.6}]",
                    v.c, v.big_c, win.min_ratio, win.max_ratio
                )));
            }
            let target = FullTarget { v, n };
            sample_target(&target, cfg, &v.label)
        }
    }
}

/// Run parallel MALA chains on an arbitrary target and merge them in fixed
/// chain order.
pub fn sample_target(
    target: &dyn GibbsTarget,
    cfg: &SamplerConfig,
    label: &str,
) -> Result<SampleChain, CoreError> {
    let results: Vec<_> = (0..cfg.chains as u64)
        .into_par_iter()
        .map(|i| mala_chain(target, cfg, i))
        .collect::<Result<Vec<_>, _>>()?;
    let mut states = Vec::with_capacity(cfg.chains * cfg.n_samples);
    let mut rate = 0.0;
    let mut step_used = f64::INFINITY;
    let mut violations = 0;
    for (kept, r, d, viol) in results {
        states.extend(kept);
        rate += r / cfg.chains as f64;
        step_used = step_used.min(d);
        violations += viol;
    }
    let measured_steps = cfg.n_samples * cfg.thin;
    if cfg.autotune
        && measured_steps >= 256
        && !(cfg.accept_band.0 - 0.15..=cfg.accept_band.1 + 0.15).contains(&rate)
    {
        return Err(CoreError::Sampler(format!(
            "acceptance rate {rate:.3} outside band {:?} after auto-tuning (step {step_used:.3e})",
            cfg.accept_band
        )));
    }
    Ok(SampleChain {
        states,
        accept_rate: rate,
        n: target.n(),
        m: target.free_vars(),
        seed: cfg.seed,
        step_used,
        radius_violations: violations,
        label: label.to_string(),
    })
}

/// Batched-means mean and standard error of a complex series; also returns
/// an effective-sample-size estimate.
pub fn batch_mean_se(series: &[Complex64]) -> (Complex64, f64, f64) {
    let n = series.len();
    let mean = series.iter().sum::<Complex64>() / n as f64;
    if n < 4 {
        return (mean, f64::INFINITY, 1.0);
    }
    let b = (n as f64).sqrt().floor() as usize; // number of batches
    let l = n / b;
    let used = b * l;
    let mut var_b = 0.0;
    for k in 0..b {
        let bm = series[k * l..(k + 1) * l].iter().sum::<Complex64>() / l as f64;
        var_b += (bm - mean).norm_sqr();
    }
    var_b /= (b - 1) as f64;
    let se = (var_b / b as f64).sqrt();
    let var_iid = series[..used]
        .iter()
        .map(|z| (z - mean).norm_sqr())
        .sum::<f64>()
        / (used - 1) as f64;
    let ess = if var_b > 0.0 {
        (used as f64) * var_iid / (l as f64 * var_b)
    } else {
        used as f64
    };
    (mean, se, ess)
}

/// Same for a real series.
pub fn batch_mean_se_real(series: &[f64]) -> (f64, f64, f64) {
    let z: Vec<Complex64> = series.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    let (m, se, ess) = batch_mean_se(&z);
    (m.re, se, ess)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MomentEntry {
    pub re: f64,
    pub im: f64,
    pub se: f64,
    pub ess: f64,
}

/// Estimated non-commutative moments `E tau(word(X))`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MomentTable {
    pub entries: Vec<(String, MomentEntry)>,
    pub n: usize,
    pub seed: u64,
    pub model: String,
}

impl MomentTable {
    pub fn get(&self, word: &str) -> Option<&MomentEntry> {
        self.entries.iter().find(|(w, _)| w == word).map(|(_, e)| e)
    }

    /// CSV with columns word, re, im, se (17 significant digits).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("word,re,im,se\n");
        for (w, e) in &self.entries {
            out.push_str(&format!("{w},{:.16e},{:.16e},{:.16e}\n", e.re, e.im, e.se));
        }
        out
    }
}

/// Estimate moments of the chain for the given words.
pub fn estimate_moments(chain: &SampleChain, words: &[Word]) -> MomentTable {
    let entries = words
        .iter()
        .map(|w| {
            let series: Vec<Complex64> = chain
                .states
                .iter()
                .map(|x| {
                    if w.is_empty() {
                        Complex64::ONE
                    } else {
                        w.evaluate(x).trace() / x.n as f64
                    }
                })
                .collect();
            let (mean, se, ess) = batch_mean_se(&series);
            (
                w.to_string(),
                MomentEntry {
                    re: mean.re,
                    im: mean.im,
                    se,
                    ess,
                },
            )
        })
        .collect();
    MomentTable {
        entries,
        n: chain.n,
        seed: chain.seed,
        model: chain.label.clone(),
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SdResidual {
    pub residual_re: f64,
    pub residual_im: f64,
    pub se: f64,
}

/// Schwinger-Dyson residual
/// `E tau(D_j V(X) p(X)) - E (tau ⊗ tau)(∂_j p)(X)`,
/// which vanishes exactly in expectation at stationarity for every finite N.
pub fn schwinger_dyson_residual(
    chain: &SampleChain,
    v: &PotentialSpec,
    p: &Word,
    j: usize,
) -> Result<SdResidual, CoreError> {
    if j >= v.nvars() {
        return Err(CoreError::IndexOutOfRange {
            index: j,
            m: v.nvars(),
        });
    }
    let dp = free_difference_quotient(p, j);
    let series: Vec<Complex64> = chain
        .states
        .iter()
        .map(|x| {
            let g = v.grad_full(x).expect("exact gradient");
            let lhs = (&g.mats[j] * p.evaluate(x)).trace() / x.n as f64;
            let rhs = dp.eval_tau_tau(x);
            lhs - rhs
        })
        .collect();
    let (mean, se, _) = batch_mean_se(&series);
    Ok(SdResidual {
        residual_re: mean.re,
        residual_im: mean.im,
        se,
    })
}

/// Universal constant of the epsilon-net concentration bound,
/// `6 sqrt(log 7) + 9 / (6 sqrt(log 7))`.
pub fn theta() -> f64 {
    let s = (7.0f64).ln().sqrt();
    6.0 * s + 9.0 / (6.0 * s)
}

fn ln_factorials(n: usize) -> Vec<f64> {
    let mut v = vec![0.0; n + 1];
    for k in 1..=n {
        v[k] = v[k - 1] + (k as f64).ln();
    }
    v
}

/// Smallest `q` with `P(Bin(n, p) <= q) >= level`.
pub fn binomial_quantile(n: usize, p: f64, level: f64) -> usize {
    if p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    let lf = ln_factorials(n);
    let lp = p.ln();
    let lq = (1.0 - p).ln_1p_free();
    let mut cdf = 0.0;
    for k in 0..=n {
        let lpmf = lf[n] - lf[k] - lf[n - k] + k as f64 * lp + (n - k) as f64 * lq;
        cdf += lpmf.exp();
        if cdf >= level {
            return k;
        }
    }
    n
}

trait Ln1pFree {
    fn ln_1p_free(self) -> f64;
}
impl Ln1pFree for f64 {
    fn ln_1p_free(self) -> f64 {
        // self is already 1 - p here; plain ln is fine away from 0
        self.ln()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConcentrationRow {
    pub delta: f64,
    pub exceedances: usize,
    pub samples: usize,
    pub bound_probability: f64,
    pub allowed_99: usize,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConcentrationReport {
    pub rows: Vec<ConcentrationRow>,
    pub pass: bool,
}

/// Herbst concentration check: empirical one-sided exceedance frequencies
/// of a Lipschitz observable against `exp(-c N^2 delta^2 / 2 K^2)`,
/// tolerating binomial fluctuation at the 99% level.
pub fn herbst_check(
    values: &[f64],
    c: f64,
    n: usize,
    k_lip: f64,
    deltas: &[f64],
) -> ConcentrationReport {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let rows: Vec<ConcentrationRow> = deltas
        .iter()
        .map(|&delta| {
            let bound =
                (-c * (n * n) as f64 * delta * delta / (2.0 * k_lip * k_lip)).exp().min(1.0);
            let exceed = values.iter().filter(|&&v| v - mean >= delta).count();
            let allowed = binomial_quantile(values.len(), bound, 0.99);
            ConcentrationRow {
                delta,
                exceedances: exceed,
                samples: values.len(),
                bound_probability: bound,
                allowed_99: allowed,
                pass: exceed <= allowed,
            }
        })
        .collect();
    let pass = rows.iter().all(|r| r.pass);
    ConcentrationReport { rows, pass }
}

/// Operator-norm concentration check with the explicit net constant:
/// `P(||X_j - E X_j||_inf >= c^{-1/2} (Theta + delta)) <= exp(-N delta^2 / 2)`
/// per component, with the identity as the Lipschitz function.
pub fn opnorm_concentration_check(
    chain: &SampleChain,
    c: f64,
    deltas: &[f64],
) -> ConcentrationReport {
    let mean = crate::matrix::tuple_mean(&chain.states);
    let th = theta();
    let mut rows = Vec::new();
    for &delta in deltas {
        let bound = (-(chain.n as f64) * delta * delta / 2.0).exp().min(1.0);
        let threshold = c.powf(-0.5) * (th + delta);
        let mut exceed = 0usize;
        let mut count = 0usize;
        for s in &chain.states {
            for j in 0..s.m() {
                count += 1;
                let d = &s.mats[j] - &mean.mats[j];
                if d.singular_values().max() >= threshold {
                    exceed += 1;
                }
            }
        }
        let allowed = binomial_quantile(count, bound, 0.99);
        rows.push(ConcentrationRow {
            delta,
            exceedances: exceed,
            samples: count,
            bound_probability: bound,
            allowed_99: allowed,
            pass: exceed <= allowed,
        });
    }
    let pass = rows.iter().all(|r| r.pass);
    ConcentrationReport { rows, pass }
}

const CHAIN_MAGIC: &[u8; 8] = b"GFCHAIN1";

/// Write a chain checkpoint: magic, version (u32), N (u32), m (u32),
/// count (u64), seed (u64), accept rate (f64), then `count * m` row-major
/// complex matrices as little-endian f64 (re, im) pairs.
pub fn write_chain(path: &Path, chain: &SampleChain) -> Result<(), CoreError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(CHAIN_MAGIC)?;
    f.write_all(&1u32.to_le_bytes())?;
    f.write_all(&(chain.n as u32).to_le_bytes())?;
    f.write_all(&(chain.m as u32).to_le_bytes())?;
    f.write_all(&(chain.states.len() as u64).to_le_bytes())?;
    f.write_all(&chain.seed.to_le_bytes())?;
    f.write_all(&chain.accept_rate.to_le_bytes())?;
    for s in &chain.states {
        for m in &s.mats {
            for i in 0..s.n {
                for j in 0..s.n {
                    let z = m[(i, j)];
                    f.write_all(&z.re.to_le_bytes())?;
                    f.write_all(&z.im.to_le_bytes())?;
                }
            }
        }
    }
    Ok(())
}

pub fn read_chain(path: &Path) -> Result<SampleChain, CoreError> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    f.read_exact(&mut magic)?;
    if &magic != CHAIN_MAGIC {
        return Err(CoreError::Sampler("bad checkpoint magic".to_string()));
    }
    let mut b4 = [0u8; 4];
    let mut b8 = [0u8; 8];
    f.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != 1 {
        return Err(CoreError::Sampler(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    f.read_exact(&mut b4)?;
    let n = u32::from_le_bytes(b4) as usize;
    f.read_exact(&mut b4)?;
    let m = u32::from_le_bytes(b4) as usize;
    f.read_exact(&mut b8)?;
    let count = u64::from_le_bytes(b8) as usize;
    f.read_exact(&mut b8)?;
    let seed = u64::from_le_bytes(b8);
    f.read_exact(&mut b8)?;
    let accept_rate = f64::from_le_bytes(b8);
    let mut states = Vec::with_capacity(count);
    for _ in 0..count {
        let mut mats = Vec::with_capacity(m);
        for _ in 0..m {
            let mut mat = CMatrix::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    f.read_exact(&mut b8)?;
                    let re = f64::from_le_bytes(b8);
                    f.read_exact(&mut b8)?;
                    let im = f64::from_le_bytes(b8);
                    mat[(i, j)] = Complex64::new(re, im);
                }
            }
            mats.push(mat);
        }
        states.push(MatrixTuple { mats, n });
    }
    Ok(SampleChain {
        states,
        accept_rate,
        n,
        m,
        seed,
        step_used: 0.0,
        radius_violations: 0,
        label: String::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gue_spec() -> PotentialSpec {
        PotentialSpec::quadratic(vec![0.0], 1, 0).with_label("gue")
    }

    #[test]
    fn gue_second_moment_is_one() {
        let v = gue_spec();
        let cfg = SamplerConfig::default().with_seed(42).sized(400, 1500, 2);
        let chain = sample(&v, 8, &cfg).unwrap();
        let table = estimate_moments(&chain, &[Word(vec![0, 0])]);
        let e = table.get("x1^2").unwrap();
        assert!(
            (e.re - 1.0).abs() < 4.0 * e.se + 0.01,
            "E tau(x^2) = {} +- {}",
            e.re,
            e.se
        );
    }

    #[test]
    fn reproducibility_bitwise() {
        let v = gue_spec();
        let cfg = SamplerConfig::default().with_seed(7).sized(100, 200, 1);
        let a = sample(&v, 4, &cfg).unwrap();
        let b = sample(&v, 4, &cfg).unwrap();
        let ta = estimate_moments(&a, &[Word(vec![0, 0])]);
        let tb = estimate_moments(&b, &[Word(vec![0, 0])]);
        assert_eq!(ta.to_csv(), tb.to_csv());
    }

    #[test]
    fn scalar_gaussian_detailed_balance() {
        // N=1, m=1, V = (c/2) tau(x^2): the sampled variance is 1/c
        let c = 2.0;
        let v = PotentialSpec::from_trace_poly(
            crate::tracepoly::parse_self_adjoint("1.0*tr(x1^2)").unwrap(),
            1,
            0,
            c,
            c,
        )
        .unwrap();
        let cfg = SamplerConfig::default().with_seed(3).sized(500, 4000, 2);
        let chain = sample(&v, 1, &cfg).unwrap();
        let series: Vec<f64> = chain
            .states
            .iter()
            .map(|x| x.mats[0][(0, 0)].re.powi(2))
            .collect();
        let (mean, se, _) = batch_mean_se_real(&series);
        assert!(
            (mean - 1.0 / c).abs() < 4.0 * se + 0.02,
            "var = {mean} +- {se}, expect {}",
            1.0 / c
        );
    }

    #[test]
    fn mean_variance_sandwich() {
        // m/C <= E ||X - EX||^2 <= m/c for the coupled Gaussian
        let v = crate::tracepoly::parse_self_adjoint(
            "0.5*tr(x1^2) + 0.5*tr(x2^2) + 0.5*tr(x1 x2)",
        )
        .unwrap();
        let spec = PotentialSpec::from_trace_poly(v, 1, 1, 0.5, 1.5).unwrap();
        let cfg = SamplerConfig::default().with_seed(9).sized(400, 1500, 2);
        let chain = sample(&spec, 6, &cfg).unwrap();
        let stats = crate::matrix::tuple_stats(&chain.states);
        let m = 2.0;
        assert!(stats.variance2 >= m / 1.5 - 0.3, "{}", stats.variance2);
        assert!(stats.variance2 <= m / 0.5 + 0.3, "{}", stats.variance2);
    }

    #[test]
    fn empty_word_moment_is_one() {
        let v = gue_spec();
        let cfg = SamplerConfig::default().with_seed(5).sized(50, 100, 1);
        let chain = sample(&v, 4, &cfg).unwrap();
        let t = estimate_moments(&chain, &[Word::empty()]);
        let e = &t.entries[0].1;
        assert_eq!(e.re, 1.0);
        assert_eq!(e.im, 0.0);
    }

    #[test]
    fn sd_residual_gue() {
        let v = gue_spec();
        let cfg = SamplerConfig::default().with_seed(11).sized(400, 2500, 2);
        let chain = sample(&v, 8, &cfg).unwrap();
        let r = schwinger_dyson_residual(&chain, &v, &Word(vec![0]), 0).unwrap();
        assert!(
            r.residual_re.abs() < 4.0 * r.se + 0.01,
            "residual {} +- {}",
            r.residual_re,
            r.se
        );
    }

    #[test]
    fn theta_value() {
        assert!((theta() - 9.445053553915045).abs() < 1e-12);
    }

    #[test]
    fn checkpoint_roundtrip() {
        let v = gue_spec();
        let cfg = SamplerConfig::default().with_seed(13).sized(20, 10, 1);
        let chain = sample(&v, 3, &cfg).unwrap();
        let dir = std::env::temp_dir().join("gibbsflow-test-chain.bin");
        write_chain(&dir, &chain).unwrap();
        let back = read_chain(&dir).unwrap();
        assert_eq!(back.n, chain.n);
        assert_eq!(back.m, chain.m);
        assert_eq!(back.states.len(), chain.states.len());
        for (a, b) in chain.states.iter().zip(&back.states) {
            assert_eq!(a, b);
        }
        std::fs::remove_file(dir).ok();
    }

    #[test]
    fn independent_join_factorizes() {
        let left = gue_spec();
        let right = PotentialSpec::quadratic(vec![0.0], 1, 0);
        let j = PotentialSpec::join(left, right);
        let cfg = SamplerConfig::default().with_seed(17).sized(300, 1200, 2);
        let chain = sample(&j, 6, &cfg).unwrap();
        let t = estimate_moments(
            &chain,
            &[Word(vec![0, 1]), Word(vec![0]), Word(vec![1])],
        );
        let e01 = t.get("x1 x2").unwrap();
        let e0 = t.get("x1").unwrap();
        let e1 = t.get("x2").unwrap();
        let prod = e0.re * e1.re;
        assert!(
            (e01.re - prod).abs() < 4.0 * (e01.se + e0.se + e1.se) + 0.02,
            "E tau(x1 x2) = {} vs product {}",
            e01.re,
            prod
        );
    }
}
