//! Transport maps to the GUE law.
//!
//! The renormalized map `F~_{s,t}` solves
//! `d F / ds = 1/2 (D_x V~_s(F, y) - F)` with `F~_{t,t} = x`; pushing the
//! time-t Ornstein-Uhlenbeck interpolation of the model through it yields
//! the time-s one, and the `s -> inf` limit transports to GUE. Infinite
//! endpoints are truncated at a horizon chosen so that the a-priori tail
//! bound stays below a configured target; every evaluation carries an
//! error budget (ODE local-error proxy + inner-estimator noise + tail
//! bound). Inner noise is frozen per map (common random numbers), so the
//! map is a smooth deterministic function given its seed; the residual
//! coupling bias is measured by re-running a subsample with independent
//! noise wherever a check consumes the budget.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::CoreError;
use crate::matrix::{gue_tuple, tuple_mean, CMatrix, MatrixTuple};
use crate::oracles::gue_moment;
use crate::potential::PotentialSpec;
use crate::rng;
use crate::sampler::{batch_mean_se, batch_mean_se_real, theta, SampleChain};
use crate::semigroup::{evolved_grad, EvolvedSpec, InnerCfg, TimeMode};
use crate::tracepoly::Word;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Endpoint {
    Finite(f64),
    Infinite,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TransportCfg {
    pub max_step: f64,
    pub inner: InnerCfg,
    /// Target for the truncation tail bound at infinite endpoints.
    pub tail_bound_target: f64,
    /// Hard cap on the truncation horizon.
    pub horizon_cap: f64,
    pub seed: u64,
}

impl Default for TransportCfg {
    fn default() -> Self {
        Self {
            max_step: 0.25,
            inner: InnerCfg::default(),
            tail_bound_target: 5e-3,
            horizon_cap: 24.0,
            seed: 1,
        }
    }
}

/// Mean/variance data of the base model feeding the tail bounds.
#[derive(Clone, Debug)]
pub struct TransportStats {
    pub mean_x: MatrixTuple,
    pub mean_y: MatrixTuple,
    pub var_x: f64,
    pub var_y: f64,
}

pub fn transport_stats(chain: &SampleChain, m: usize) -> TransportStats {
    let mean = tuple_mean(&chain.states);
    let mean_x = MatrixTuple {
        mats: mean.mats[..m].to_vec(),
        n: mean.n,
    };
    let mean_y = MatrixTuple {
        mats: mean.mats[m..].to_vec(),
        n: mean.n,
    };
    let mut var_x = 0.0;
    let mut var_y = 0.0;
    for s in &chain.states {
        let dx = MatrixTuple {
            mats: s.mats[..m].to_vec(),
            n: s.n,
        }
        .sub(&mean_x);
        var_x += dx.inner(&dx);
        if mean_y.m() > 0 {
            let dy = MatrixTuple {
                mats: s.mats[m..].to_vec(),
                n: s.n,
            }
            .sub(&mean_y);
            var_y += dy.inner(&dy);
        }
    }
    var_x /= chain.states.len() as f64;
    var_y /= chain.states.len() as f64;
    TransportStats {
        mean_x,
        mean_y,
        var_x,
        var_y,
    }
}

#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct MapBudget {
    pub ode: f64,
    pub inner: f64,
    pub tail: f64,
}

impl MapBudget {
    pub fn total(&self) -> f64 {
        self.ode + self.inner + self.tail
    }
}

/// The numerically realized map `F~_{s_target, t_start}`.
pub struct TransportMap<'a> {
    pub v: &'a PotentialSpec,
    pub s_target: Endpoint,
    pub t_start: Endpoint,
    pub stats: TransportStats,
    pub cfg: TransportCfg,
}

fn kappa(v: &PotentialSpec) -> f64 {
    v.big_c.max(1.0 / v.c)
}

impl TransportMap<'_> {
    /// Tail bound for replacing `t = inf` by a horizon `T`:
    /// `||F~_{s,inf}(x,y) - F~_{s,T}(x,y)||`.
    fn tail_bound_t(&self, x: &MatrixTuple, y: &MatrixTuple, big_t: f64) -> f64 {
        let k = kappa(self.v);
        let m = self.v.m as f64;
        let e = (-big_t / 2.0).exp();
        let dy = if y.m() > 0 {
            y.sub(&self.stats.mean_y).norm2().powi(2)
        } else {
            0.0
        };
        let point = (x.inner(x) + dy).sqrt();
        k.sqrt() * e * self.stats.mean_x.norm2()
            + e * (k.powi(3) - 1.0) * k * (point + (m + self.stats.var_y).sqrt())
    }

    /// Tail bound for replacing `s = inf` by a horizon `T`:
    /// `||F~_{T,t}(x,y) - F~_{inf,t}(x,y)||`. The mean term enters with
    /// the bare `e^{-T/2}` factor (it is the image of `E X` under the
    /// remaining flow and survives even when `c = C = 1`, e.g. for
    /// translation models); the Lipschitz-deviation remainder carries the
    /// `(max(C,1/c) - 1) e^{-T}` decay.
    fn tail_bound_s(&self, x: &MatrixTuple, y: &MatrixTuple, big_t: f64, t_start: f64) -> f64 {
        let k = kappa(self.v);
        let m = self.v.m as f64;
        let et = (-t_start).exp();
        let mut dx = x.clone();
        dx.axpy(-(-t_start / 2.0).exp(), &self.stats.mean_x);
        let dy = if y.m() > 0 {
            y.sub(&self.stats.mean_y).norm2().powi(2)
        } else {
            0.0
        };
        let point = (dx.inner(&dx) + dy).sqrt();
        let mean_norm = self.stats.mean_x.norm2();
        (-big_t / 2.0).exp() * mean_norm
            + 0.5
                * (k - 1.0)
                * k.sqrt()
                * (-big_t).exp()
                * (2.0 * mean_norm
                    + k.powf(3.5)
                        * (point
                            + (et * self.stats.var_x + (1.0 - et) * m + self.stats.var_y)
                                .sqrt()
                            + (m + self.stats.var_y).sqrt()))
    }

    fn resolve_horizon<F: Fn(f64) -> f64>(&self, bound: F) -> (f64, f64) {
        let mut big_t = 2.0;
        while bound(big_t) > self.cfg.tail_bound_target && big_t < self.cfg.horizon_cap {
            big_t += 0.5;
        }
        (big_t, bound(big_t))
    }

    /// Evaluate the map at `(x, y)`; `x` must be Hermitian.
    pub fn eval(&self, x: &MatrixTuple, y: &[CMatrix]) -> Result<(MatrixTuple, MapBudget), CoreError> {
        let ytuple = MatrixTuple {
            mats: y.to_vec(),
            n: x.n,
        };
        let mut tail = 0.0;
        let t0 = match self.t_start {
            Endpoint::Finite(t) => t,
            Endpoint::Infinite => {
                let (big_t, b) = self.resolve_horizon(|bt| self.tail_bound_t(x, &ytuple, bt));
                tail += b;
                big_t
            }
        };
        let s1 = match self.s_target {
            Endpoint::Finite(s) => s,
            Endpoint::Infinite => {
                let (big_t, b) =
                    self.resolve_horizon(|bt| self.tail_bound_s(x, &ytuple, bt, t0));
                tail += b;
                big_t
            }
        };
        let (out, mut budget) = self.integrate(x, y, t0, s1)?;
        budget.tail = tail;
        Ok((out, budget))
    }

    /// 4th-order integration of the transport field from `s = t0` to
    /// `s = s1`, with the inner noise frozen to the map seed.
    fn integrate(
        &self,
        x: &MatrixTuple,
        y: &[CMatrix],
        t0: f64,
        s1: f64,
    ) -> Result<(MatrixTuple, MapBudget), CoreError> {
        let span = s1 - t0;
        if span == 0.0 {
            return Ok((x.clone(), MapBudget::default()));
        }
        let h_stable = 0.25 / self.v.big_c.max(1.0);
        let h_abs = self.cfg.max_step.min(h_stable);
        let steps = (span.abs() / h_abs).ceil() as usize;
        let h = span / steps as f64;
        let spec = EvolvedSpec::xblock(self.v, y);
        let seed = self.cfg.seed;
        let mut se_acc = 0.0;
        let mut ode_acc = 0.0;
        let mut f = x.clone();
        let mut s = t0;
        for _ in 0..steps {
            let field = |ss: f64, ff: &MatrixTuple, se: &mut f64| -> Result<MatrixTuple, CoreError> {
                let est = evolved_grad(&spec, TimeMode::Renormalized(ss), ff, &self.cfg.inner, seed)?;
                *se += est.se;
                let mut out = est.grad;
                out.axpy(-1.0, ff);
                out.scale(0.5);
                Ok(out)
            };
            let mut se_step = 0.0;
            let k1 = field(s, &f, &mut se_step)?;
            let mut f2 = f.clone();
            f2.axpy(0.5 * h, &k1);
            let k2 = field(s + 0.5 * h, &f2, &mut se_step)?;
            let mut f3 = f.clone();
            f3.axpy(0.5 * h, &k2);
            let k3 = field(s + 0.5 * h, &f3, &mut se_step)?;
            let mut f4 = f.clone();
            f4.axpy(h, &k3);
            let k4 = field(s + h, &f4, &mut se_step)?;
            f.axpy(h / 6.0, &k1);
            f.axpy(h / 3.0, &k2);
            f.axpy(h / 3.0, &k3);
            f.axpy(h / 6.0, &k4);
            s += h;
            se_acc += h.abs() * se_step / 4.0;
            let mut curv = k1.clone();
            curv.axpy(-1.0, &k2);
            curv.axpy(-1.0, &k3);
            curv.axpy(1.0, &k4);
            ode_acc += curv.norm2() * h.abs() / 6.0;
        }
        Ok((
            f,
            MapBudget {
                ode: ode_acc,
                inner: se_acc,
                tail: 0.0,
            },
        ))
    }

    /// Coupling bias of the frozen inner noise, measured by re-running a
    /// few points with an independent noise stream.
    pub fn coupling_bias(&self, points: &[(MatrixTuple, Vec<CMatrix>)]) -> Result<f64, CoreError> {
        let mut acc: f64 = 0.0;
        for (x, y) in points {
            let (a, _) = self.eval(x, y)?;
            let alt = TransportMap {
                v: self.v,
                s_target: self.s_target,
                t_start: self.t_start,
                stats: self.stats.clone(),
                cfg: TransportCfg {
                    seed: rng::subseed(self.cfg.seed, "coupling-alt", 1),
                    ..self.cfg.clone()
                },
            };
            let (b, _) = alt.eval(x, y)?;
            acc = acc.max(a.sub(&b).norm2());
        }
        Ok(acc)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PushforwardRow {
    pub word: String,
    pub pushed: f64,
    pub pushed_se: f64,
    pub reference: f64,
    pub budget: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PushforwardReport {
    pub rows: Vec<PushforwardRow>,
    pub map_budget: f64,
    pub coupling_bias: f64,
    pub pass: bool,
}

/// Push a subsample of the chain through `F~_{inf,0}` and compare the
/// moments of the image against the exact finite-N GUE values.
pub fn pushforward_to_gue_check(
    v: &PotentialSpec,
    chain: &SampleChain,
    words: &[Word],
    points: usize,
    cfg: &TransportCfg,
) -> Result<PushforwardReport, CoreError> {
    let stats = transport_stats(chain, v.m);
    let map = TransportMap {
        v,
        s_target: Endpoint::Infinite,
        t_start: Endpoint::Finite(0.0),
        stats,
        cfg: cfg.clone(),
    };
    let stride = (chain.states.len() / points).max(1);
    let mut pushed = Vec::with_capacity(points);
    let mut budget_acc = 0.0f64;
    for i in 0..points {
        let state = &chain.states[(i * stride) % chain.states.len()];
        let x = state.select(&(0..v.m).collect::<Vec<_>>());
        let y: Vec<CMatrix> = state.mats[v.m..].to_vec();
        let (img, b) = map.eval(&x, &y)?;
        budget_acc = budget_acc.max(b.total());
        pushed.push(img);
    }
    let bias_points: Vec<_> = (0..2.min(points))
        .map(|i| {
            let state = &chain.states[(i * stride) % chain.states.len()];
            (
                state.select(&(0..v.m).collect::<Vec<_>>()),
                state.mats[v.m..].to_vec(),
            )
        })
        .collect();
    let coupling = map.coupling_bias(&bias_points)?;
    let r_inf = pushed
        .iter()
        .map(MatrixTuple::opnorm_inf)
        .fold(0.0, f64::max);
    let n = chain.n;
    let mut rows = Vec::new();
    for w in words {
        let series: Vec<Complex64> = pushed
            .iter()
            .map(|p| w.evaluate(p).trace() / n as f64)
            .collect();
        let (mean, se, _) = batch_mean_se(&series);
        let deg = w.len();
        let reference = if deg % 2 == 1 {
            0.0
        } else {
            gue_moment(deg / 2, n)
        };
        let map_err = budget_acc + coupling;
        let moment_budget = deg as f64 * r_inf.powi(deg as i32 - 1) * map_err;
        let tol = 4.0 * se + moment_budget;
        rows.push(PushforwardRow {
            word: w.to_string(),
            pushed: mean.re,
            pushed_se: se,
            reference,
            budget: moment_budget,
            pass: (mean.re - reference).abs() <= tol,
        });
    }
    let pass = rows.iter().all(|r| r.pass);
    Ok(PushforwardReport {
        rows,
        map_budget: budget_acc,
        coupling_bias: coupling,
        pass,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LipschitzSeminorms {
    pub full: f64,
    pub dx: f64,
    pub dy: f64,
    pub deviation_from_projection: f64,
    pub bound_full: f64,
    pub bound_dx: f64,
    pub bound_dy: f64,
    pub bound_deviation: f64,
    pub pass: bool,
}

/// Empirical Lipschitz seminorms of `F~_{s,t}` over sampled pairs against
/// the closed-form bounds in `max(C, 1/c)`.
pub fn lipschitz_audit(
    v: &PotentialSpec,
    chain: &SampleChain,
    s: Endpoint,
    t: Endpoint,
    pairs: usize,
    cfg: &TransportCfg,
    slack: f64,
) -> Result<LipschitzSeminorms, CoreError> {
    let stats = transport_stats(chain, v.m);
    let map = TransportMap {
        v,
        s_target: s,
        t_start: t,
        stats,
        cfg: cfg.clone(),
    };
    let n = chain.n;
    let mut rng = rng::stream(cfg.seed, "lip-audit", 0);
    let mut max_full: f64 = 0.0;
    let mut max_dx: f64 = 0.0;
    let mut max_dy: f64 = 0.0;
    let mut max_dev: f64 = 0.0;
    for _ in 0..pairs {
        let x1 = gue_tuple(v.m, n, 1.0 / v.c, &mut rng);
        let mut x2 = x1.clone();
        x2.axpy(0.7, &gue_tuple(v.m, n, 1.0 / v.c, &mut rng));
        let y1 = gue_tuple(v.n_y, n, 1.0 / v.c, &mut rng);
        let mut y2 = y1.clone();
        if v.n_y > 0 {
            y2.axpy(0.7, &gue_tuple(v.n_y, n, 1.0 / v.c, &mut rng));
        }
        let (f11, _) = map.eval(&x1, &y1.mats)?;
        let (f21, _) = map.eval(&x2, &y1.mats)?;
        let dxn = x1.sub(&x2).norm2();
        if dxn > 1e-12 {
            let r = f11.sub(&f21).norm2() / dxn;
            max_dx = max_dx.max(r);
            // deviation seminorm of F - pi_1 in the x direction
            let dev = f11.sub(&f21).sub(&x1.sub(&x2)).norm2() / dxn;
            max_dev = max_dev.max(dev);
        }
        if v.n_y > 0 {
            let (f12, _) = map.eval(&x1, &y2.mats)?;
            let dyn_ = y1.sub(&y2).norm2();
            if dyn_ > 1e-12 {
                max_dy = max_dy.max(f11.sub(&f12).norm2() / dyn_);
            }
            let (f22, _) = map.eval(&x2, &y2.mats)?;
            let dfull = (x1.sub(&x2).norm2().powi(2) + y1.sub(&y2).norm2().powi(2)).sqrt();
            max_full = max_full.max(f11.sub(&f22).norm2() / dfull);
        } else {
            max_full = max_full.max(max_dx);
        }
    }
    let k = kappa(v);
    let decay = |a: Endpoint, b: Endpoint| -> f64 {
        let ea = match a {
            Endpoint::Finite(u) => (-u / 2.0).exp(),
            Endpoint::Infinite => 0.0,
        };
        let eb = match b {
            Endpoint::Finite(u) => (-u / 2.0).exp(),
            Endpoint::Infinite => 0.0,
        };
        (ea - eb).abs()
    };
    let d = decay(s, t);
    let bound_dx = k.sqrt();
    let bound_dy = (v.big_c / v.c - 1.0) * k.powf(1.5) * d;
    let bound_full = k.powf(3.5);
    let bound_dev = (k.powi(3) - 1.0) * k.sqrt() * d;
    let pass = max_dx <= bound_dx + slack
        && max_dy <= bound_dy + slack
        && max_full <= bound_full + slack
        && max_dev <= bound_dev + slack;
    Ok(LipschitzSeminorms {
        full: max_full,
        dx: max_dx,
        dy: max_dy,
        deviation_from_projection: max_dev,
        bound_full,
        bound_dx,
        bound_dy,
        bound_deviation: bound_dev,
        pass,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TalagrandVerdict {
    pub lhs: f64,
    pub lhs_budget: f64,
    pub rhs: f64,
    pub rhs_budget: f64,
    pub slack: f64,
    pub pass: bool,
}

/// Entropy-cost witness: `E ||F(X,Y) - X||^2 <= 2 |h_g(X|Y)|` with `F`
/// the constructed map and `h_g` from the Gaussian-relative quadrature.
pub fn talagrand_check(
    v: &PotentialSpec,
    chain: &SampleChain,
    abs_hg: f64,
    hg_budget: f64,
    points: usize,
    cfg: &TransportCfg,
) -> Result<TalagrandVerdict, CoreError> {
    let stats = transport_stats(chain, v.m);
    let map = TransportMap {
        v,
        s_target: Endpoint::Infinite,
        t_start: Endpoint::Finite(0.0),
        stats,
        cfg: cfg.clone(),
    };
    let stride = (chain.states.len() / points).max(1);
    let mut series = Vec::with_capacity(points);
    let mut budget_acc = 0.0f64;
    let mut disp_max = 0.0f64;
    for i in 0..points {
        let state = &chain.states[(i * stride) % chain.states.len()];
        let x = state.select(&(0..v.m).collect::<Vec<_>>());
        let y: Vec<CMatrix> = state.mats[v.m..].to_vec();
        let (img, b) = map.eval(&x, &y)?;
        let d = img.sub(&x).norm2();
        series.push(d * d);
        budget_acc = budget_acc.max(b.total());
        disp_max = disp_max.max(d);
    }
    let (lhs, se, _) = batch_mean_se_real(&series);
    // first-order propagation of the map budget into the squared norm
    let lhs_budget = 4.0 * se + 2.0 * (disp_max + budget_acc) * budget_acc;
    let rhs = 2.0 * abs_hg;
    let rhs_budget = 2.0 * hg_budget;
    let slack = rhs + rhs_budget - lhs + lhs_budget;
    Ok(TalagrandVerdict {
        lhs,
        lhs_budget,
        rhs,
        rhs_budget,
        slack,
        pass: lhs <= rhs + lhs_budget + rhs_budget,
    })
}

/// Round-trip defect `||G(F(x,y), y) - x||` at sampled chain points.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InverseReport {
    pub max_defect: f64,
    pub budget: f64,
    pub pass: bool,
}

pub fn inverse_map_check(
    v: &PotentialSpec,
    chain: &SampleChain,
    points: usize,
    cfg: &TransportCfg,
) -> Result<InverseReport, CoreError> {
    let stats = transport_stats(chain, v.m);
    let fwd = TransportMap {
        v,
        s_target: Endpoint::Infinite,
        t_start: Endpoint::Finite(0.0),
        stats: stats.clone(),
        cfg: cfg.clone(),
    };
    let bwd = TransportMap {
        v,
        s_target: Endpoint::Finite(0.0),
        t_start: Endpoint::Infinite,
        stats,
        cfg: cfg.clone(),
    };
    let stride = (chain.states.len() / points).max(1);
    let mut max_defect = 0.0f64;
    let mut budget = 0.0f64;
    for i in 0..points {
        let state = &chain.states[(i * stride) % chain.states.len()];
        let x = state.select(&(0..v.m).collect::<Vec<_>>());
        let y: Vec<CMatrix> = state.mats[v.m..].to_vec();
        let (f, bf) = fwd.eval(&x, &y)?;
        let (g, bg) = bwd.eval(&f, &y)?;
        max_defect = max_defect.max(g.sub(&x).norm2());
        let k = kappa(v);
        budget = budget.max(bg.total() + k.sqrt() * bf.total());
    }
    Ok(InverseReport {
        max_defect,
        budget,
        pass: max_defect <= budget + 1e-3,
    })
}

/// Group-law defect `||F~_{s,t}(F~_{t,u}(x)) - F~_{s,u}(x)||` at points.
pub fn group_law_check(
    v: &PotentialSpec,
    chain: &SampleChain,
    times: (f64, f64, f64),
    points: usize,
    cfg: &TransportCfg,
) -> Result<InverseReport, CoreError> {
    let (s, t, u) = times;
    let stats = transport_stats(chain, v.m);
    let make = |a: f64, b: f64| TransportMap {
        v,
        s_target: Endpoint::Finite(a),
        t_start: Endpoint::Finite(b),
        stats: stats.clone(),
        cfg: cfg.clone(),
    };
    let m_st = make(s, t);
    let m_tu = make(t, u);
    let m_su = make(s, u);
    let stride = (chain.states.len() / points).max(1);
    let mut max_defect = 0.0f64;
    let mut budget = 0.0f64;
    for i in 0..points {
        let state = &chain.states[(i * stride) % chain.states.len()];
        let x = state.select(&(0..v.m).collect::<Vec<_>>());
        let y: Vec<CMatrix> = state.mats[v.m..].to_vec();
        let (a, ba) = m_tu.eval(&x, &y)?;
        let (b, bb) = m_st.eval(&a, &y)?;
        let (c, bc) = m_su.eval(&x, &y)?;
        max_defect = max_defect.max(b.sub(&c).norm2());
        budget = budget.max(bb.total() + kappa(v).sqrt() * ba.total() + bc.total());
    }
    Ok(InverseReport {
        max_defect,
        budget,
        pass: max_defect <= budget + 1e-3,
    })
}

/// One stage of the triangular transport: the map for `x_j` given
/// `x_1..x_{j-1}`, with the later variables integrated out.
pub struct TriangularStage<'a> {
    pub v: &'a PotentialSpec,
    /// 0-based index of the transported variable.
    pub j: usize,
    pub stats: TransportStats,
    pub cfg: TransportCfg,
}

impl TriangularStage<'_> {
    fn tail_bound_s(&self, x: &MatrixTuple, big_t: f64) -> f64 {
        let k = kappa(self.v);
        let mut dx = x.clone();
        dx.axpy(-1.0, &self.stats.mean_x);
        let mean_norm = self.stats.mean_x.norm2();
        (-big_t / 2.0).exp() * mean_norm
            + 0.5
                * (k - 1.0)
                * k.sqrt()
                * (-big_t).exp()
                * (2.0 * mean_norm
                    + k.powf(3.5)
                        * (dx.norm2() + 2.0 * (1.0 + self.stats.var_x + self.stats.var_y).sqrt()))
    }

    /// Evaluate `Phi_j` at the first `j+1` variables of `x`.
    pub fn eval(&self, x: &MatrixTuple) -> Result<(MatrixTuple, MapBudget), CoreError> {
        let xj = x.select(&[self.j]);
        let frozen: Vec<(usize, CMatrix)> =
            (0..self.j).map(|i| (i, x.mats[i].clone())).collect();
        let spec = EvolvedSpec {
            base: self.v,
            noised: vec![self.j],
            frozen,
        };
        let mut tail = 0.0;
        let mut big_t = 2.0;
        while self.tail_bound_s(&xj, big_t) > self.cfg.tail_bound_target
            && big_t < self.cfg.horizon_cap
        {
            big_t += 0.5;
        }
        tail += self.tail_bound_s(&xj, big_t);

        let h_stable = 0.25 / self.v.big_c.max(1.0);
        let h_abs = self.cfg.max_step.min(h_stable);
        let steps = (big_t / h_abs).ceil() as usize;
        let h = big_t / steps as f64;
        let mut f = xj.clone();
        let mut s = 0.0;
        let mut se_acc = 0.0;
        let mut ode_acc = 0.0;
        for _ in 0..steps {
            let field = |ss: f64, ff: &MatrixTuple, se: &mut f64| -> Result<MatrixTuple, CoreError> {
                let est =
                    evolved_grad(&spec, TimeMode::Renormalized(ss), ff, &self.cfg.inner, self.cfg.seed)?;
                *se += est.se;
                let mut out = est.grad;
                out.axpy(-1.0, ff);
                out.scale(0.5);
                Ok(out)
            };
            let mut se_step = 0.0;
            let k1 = field(s, &f, &mut se_step)?;
            let mut f2 = f.clone();
            f2.axpy(0.5 * h, &k1);
            let k2 = field(s + 0.5 * h, &f2, &mut se_step)?;
            let mut f3 = f.clone();
            f3.axpy(0.5 * h, &k2);
            let k3 = field(s + 0.5 * h, &f3, &mut se_step)?;
            let mut f4 = f.clone();
            f4.axpy(h, &k3);
            let k4 = field(s + h, &f4, &mut se_step)?;
            f.axpy(h / 6.0, &k1);
            f.axpy(h / 3.0, &k2);
            f.axpy(h / 3.0, &k3);
            f.axpy(h / 6.0, &k4);
            s += h;
            se_acc += h * se_step / 4.0;
            let mut curv = k1.clone();
            curv.axpy(-1.0, &k2);
            curv.axpy(-1.0, &k3);
            curv.axpy(1.0, &k4);
            ode_acc += curv.norm2() * h / 6.0;
        }
        Ok((
            f,
            MapBudget {
                ode: ode_acc,
                inner: se_acc,
                tail,
            },
        ))
    }
}

/// The composed triangular map `Phi(x) = (Phi_1(x_1), ..., Phi_m(x_1..x_m))`.
pub struct TriangularMap<'a> {
    pub stages: Vec<TriangularStage<'a>>,
}

impl TriangularMap<'_> {
    pub fn eval(&self, x: &MatrixTuple) -> Result<(MatrixTuple, MapBudget), CoreError> {
        let mut out = MatrixTuple::zeros(self.stages.len(), x.n);
        let mut budget = MapBudget::default();
        for (j, stage) in self.stages.iter().enumerate() {
            let (phi_j, b) = stage
                .eval(x)
                .map_err(|e| CoreError::Stage {
                    stage: j + 1,
                    message: e.to_string(),
                })?;
            out.mats[j] = phi_j.mats[0].clone();
            budget.ode = budget.ode.max(b.ode);
            budget.inner = budget.inner.max(b.inner);
            budget.tail = budget.tail.max(b.tail);
        }
        Ok((out, budget))
    }
}

/// Build the triangular transport of an m-variable model; stage `j`
/// transports `x_j` given `x_1..x_{j-1}` under the marginal of the first
/// `j` variables (the later ones integrated out by the inner sampler).
pub fn triangular_transport<'a>(
    v: &'a PotentialSpec,
    chain: &SampleChain,
    cfg: &TransportCfg,
) -> Result<TriangularMap<'a>, CoreError> {
    let m = v.nvars();
    let mut stages = Vec::with_capacity(m);
    for j in 0..m {
        // stats of the single transported coordinate and its conditioners
        let mean = tuple_mean(&chain.states);
        let mean_x = mean.select(&[j]);
        let keep_y: Vec<usize> = (0..j).collect();
        let mean_y = mean.select(&keep_y);
        let mut var_x = 0.0;
        let mut var_y = 0.0;
        for s in &chain.states {
            let dx = s.select(&[j]).sub(&mean_x);
            var_x += dx.inner(&dx);
            if j > 0 {
                let dy = s.select(&keep_y).sub(&mean_y);
                var_y += dy.inner(&dy);
            }
        }
        var_x /= chain.states.len() as f64;
        var_y /= chain.states.len() as f64;
        stages.push(TriangularStage {
            v,
            j,
            stats: TransportStats {
                mean_x,
                mean_y,
                var_x,
                var_y,
            },
            cfg: TransportCfg {
                seed: rng::subseed(cfg.seed, "triangular-stage", j as u64),
                ..cfg.clone()
            },
        });
    }
    Ok(TriangularMap { stages })
}

/// Operator-norm audit of a triangular map: the spectra of
/// `Phi_j(X) - (X_j - tau(X_j))` stay within
/// `(max(C,1/c)^3 - 1) max(C,1/c) Theta` on sampled states.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OpnormAuditReport {
    pub max_opnorm: f64,
    pub bound: f64,
    pub pass: bool,
}

pub fn triangular_opnorm_audit(
    map: &TriangularMap,
    chain: &SampleChain,
    points: usize,
) -> Result<OpnormAuditReport, CoreError> {
    let stride = (chain.states.len() / points).max(1);
    let mut max_op = 0.0f64;
    let v = map.stages[0].v;
    for i in 0..points {
        let state = &chain.states[(i * stride) % chain.states.len()];
        let (img, _) = map.eval(state)?;
        for j in 0..map.stages.len() {
            // audit quantity: Phi_j(X) - (X_j - tau(X_j) I)
            let mut d = img.mats[j].clone() - &state.mats[j];
            let tau_xj = state.mats[j].trace() / state.n as f64;
            for k in 0..state.n {
                d[(k, k)] += tau_xj;
            }
            max_op = max_op.max(d.singular_values().max());
        }
    }
    let k = kappa(v);
    let bound = (k.powi(3) - 1.0) * k * theta();
    Ok(OpnormAuditReport {
        max_opnorm: max_op,
        bound,
        pass: max_op <= bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::{sample, SamplerConfig};

    fn quick_cfg(seed: u64) -> TransportCfg {
        TransportCfg {
            max_step: 0.25,
            inner: InnerCfg::sized(48, 96),
            tail_bound_target: 2e-2,
            horizon_cap: 20.0,
            seed,
        }
    }

    #[test]
    fn gue_map_is_identity() {
        // V = 1/2||x||^2: D_x V~_s(x) = x for every s, so the field vanishes
        let v = PotentialSpec::quadratic(vec![0.0], 1, 0).with_label("gue");
        let scfg = SamplerConfig::default().with_seed(51).sized(100, 200, 1);
        let chain = sample(&v, 4, &scfg).unwrap();
        let map = TransportMap {
            v: &v,
            s_target: Endpoint::Finite(2.0),
            t_start: Endpoint::Finite(0.5),
            stats: transport_stats(&chain, 1),
            cfg: quick_cfg(3),
        };
        let x = chain.states[0].clone();
        let (img, _) = map.eval(&x, &[]).unwrap();
        // quadratic potentials make the estimator exact up to the
        // control-variate residual
        assert!(img.sub(&x).norm2() < 2e-2, "{}", img.sub(&x).norm2());
    }

    #[test]
    fn shifted_quadratic_closed_form() {
        // V = 1/2||x - a||^2: F~_{s,t}(x) = x + (e^{-s/2} - e^{-t/2}) a
        let alpha = 1.0;
        let v = PotentialSpec::quadratic(vec![alpha], 1, 0).with_label("shifted");
        let scfg = SamplerConfig::default().with_seed(52).sized(100, 200, 1);
        let chain = sample(&v, 4, &scfg).unwrap();
        let (s, t) = (1.5, 0.25);
        let map = TransportMap {
            v: &v,
            s_target: Endpoint::Finite(s),
            t_start: Endpoint::Finite(t),
            stats: transport_stats(&chain, 1),
            cfg: quick_cfg(4),
        };
        let x = chain.states[1].clone();
        let (img, _) = map.eval(&x, &[]).unwrap();
        let shift = (-s / 2.0f64).exp() - (-t / 2.0f64).exp();
        let mut expect = x.clone();
        expect.axpy(shift, &MatrixTuple::scalar(&[alpha], 4));
        let err = img.sub(&expect).norm2();
        assert!(err < 2e-2, "err {err}");
    }

    #[test]
    fn shifted_quadratic_full_transport() {
        // F = F~_{inf,0}: x -> x - a
        let alpha = 1.0;
        let v = PotentialSpec::quadratic(vec![alpha], 1, 0).with_label("shifted");
        let scfg = SamplerConfig::default().with_seed(53).sized(100, 200, 1);
        let chain = sample(&v, 4, &scfg).unwrap();
        let map = TransportMap {
            v: &v,
            s_target: Endpoint::Infinite,
            t_start: Endpoint::Finite(0.0),
            stats: transport_stats(&chain, 1),
            cfg: TransportCfg {
                tail_bound_target: 2e-3,
                inner: InnerCfg::sized(48, 96),
                ..quick_cfg(5)
            },
        };
        let x = chain.states[2].clone();
        let (img, budget) = map.eval(&x, &[]).unwrap();
        let mut expect = x.clone();
        expect.axpy(-1.0, &MatrixTuple::scalar(&[alpha], 4));
        let err = img.sub(&expect).norm2();
        assert!(
            err < budget.total() + 2e-2,
            "err {err}, budget {}",
            budget.total()
        );
    }
}
