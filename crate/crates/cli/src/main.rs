//! Command-line driver: sampling, moment tables, semigroup point
//! evaluations, conditional expectations, entropy quadratures, transport
//! maps, and the full verification suite.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use gibbsflow_core::condexp::{cond_exp, CondExpCfg, CondExpMode, Observable};
use gibbsflow_core::config::{EnvFingerprint, RunConfig, RunReport};
use gibbsflow_core::entropy::{entropy, entropy_g, BlockLayout, EntropyCfg, FisherCfg};
use gibbsflow_core::matrix::gue_tuple;
use gibbsflow_core::oracles::{gue_moment, quartic_moments};
use gibbsflow_core::sampler::{estimate_moments, sample, write_chain, SamplerConfig};
use gibbsflow_core::semigroup::{evolved_grad, inf_convolve, EvolvedSpec, InnerCfg, TimeMode};
use gibbsflow_core::transport::{
    pushforward_to_gue_check, triangular_opnorm_audit, triangular_transport, TransportCfg,
};
use gibbsflow_core::tracepoly::Word;
use gibbsflow_core::{rng, verify};

#[derive(Parser)]
#[command(
    name = "gibbsflow",
    about = "Convex multi-matrix Gibbs models: sampling, conditional expectation, entropy, transport to GUE",
    version
)]
struct Cli {
    /// Configuration file (TOML; JSON accepted).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample the configured model and write a chain checkpoint.
    Sample {
        /// Matrix size; defaults to the first grid entry.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Estimate moments and write CSV/JSON tables with an oracle column.
    Moments {
        #[arg(long)]
        n: Option<usize>,
        /// Maximum word degree.
        #[arg(long, default_value_t = 6)]
        max_degree: usize,
    },
    /// Point evaluations of the semigroup operators (JSON to stdout).
    Semigroup {
        #[arg(long)]
        n: Option<usize>,
        /// Evolution time.
        #[arg(long, default_value_t = 1.0)]
        t: f64,
        /// Use the renormalized (Ornstein-Uhlenbeck) parameterization.
        #[arg(long)]
        renormalized: bool,
    },
    /// Conditional expectation of the first x variable given a sampled y.
    Condexp {
        #[arg(long)]
        n: Option<usize>,
        /// direct | semigroup
        #[arg(long, default_value = "direct")]
        mode: String,
    },
    /// Entropy quadratures (CSV rows plus a JSON summary).
    Entropy {
        #[arg(long)]
        n: Option<usize>,
        /// Compute the Gaussian-relative entropy instead.
        #[arg(long)]
        relative: bool,
    },
    /// Transport pushforward report for the configured model.
    Transport {
        #[arg(long)]
        n: Option<usize>,
    },
    /// Triangular transport audit for the configured model.
    Triangular {
        #[arg(long)]
        n: Option<usize>,
    },
    /// Run the verification suite.
    Verify {
        /// Run only checks whose name contains this substring.
        #[arg(long)]
        check: Option<String>,
    },
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path).with_context(|| "loading config")?,
        None => RunConfig::default(),
    };
    cfg.apply_env();
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.display().to_string();
    }
    if let Some(threads) = cli.threads {
        cfg.threads = threads;
    }
    if cfg.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build_global()
            .ok();
    }
    let out_dir = if cfg.out.is_empty() {
        PathBuf::from("out")
    } else {
        PathBuf::from(&cfg.out)
    };
    std::fs::create_dir_all(&out_dir)?;

    match cli.command {
        Command::Sample { n } => {
            let n = n.unwrap_or(cfg.grid.n_values[0]);
            let spec = cfg.model.build()?;
            let chain = sample(&spec, n, &sampler_cfg(&cfg))?;
            let path = out_dir.join(format!("chain_n{n}.bin"));
            write_chain(&path, &chain)?;
            println!(
                "sampled {} states at N={n} (acceptance {:.3}, step {:.3e}) -> {}",
                chain.states.len(),
                chain.accept_rate,
                chain.step_used,
                path.display()
            );
        }
        Command::Moments { n, max_degree } => {
            let n = n.unwrap_or(cfg.grid.n_values[0]);
            let spec = cfg.model.build()?;
            let chain = sample(&spec, n, &sampler_cfg(&cfg))?;
            let words: Vec<Word> = (1..=max_degree).map(|k| Word(vec![0; k])).collect();
            let table = estimate_moments(&chain, &words);
            // oracle column: quartic potentials get the spectral-density
            // moments, the pure quadratic gets finite-N GUE
            let oracle: Vec<Option<f64>> = (1..=max_degree)
                .map(|k| oracle_moment(&cfg, k, n))
                .collect();
            let mut csv = String::from("word,re,im,se,oracle\n");
            for ((w, e), o) in table.entries.iter().zip(&oracle) {
                let oracle_s = o.map_or(String::new(), |v| format!("{v:.16e}"));
                csv.push_str(&format!(
                    "{w},{:.16e},{:.16e},{:.16e},{oracle_s}\n",
                    e.re, e.im, e.se
                ));
            }
            let path = out_dir.join(format!("moments_n{n}.csv"));
            std::fs::write(&path, &csv)?;
            std::fs::write(
                out_dir.join(format!("moments_n{n}.json")),
                serde_json::to_string_pretty(&table)?,
            )?;
            println!("{csv}");
            println!("wrote {}", path.display());
        }
        Command::Semigroup { n, t, renormalized } => {
            let n = n.unwrap_or(cfg.grid.n_values[0]);
            let spec = cfg.model.build()?;
            let mut rng = rng::stream(cfg.seed, "cli-semigroup", 0);
            let x = gue_tuple(spec.m, n, 1.0, &mut rng);
            let y: Vec<_> = gue_tuple(spec.n_y, n, 1.0, &mut rng).mats;
            let q = inf_convolve(&spec, t, &x, &y)?;
            let es = EvolvedSpec::xblock(&spec, &y);
            let mode = if renormalized {
                TimeMode::Renormalized(t)
            } else {
                TimeMode::Raw(t)
            };
            let inner = InnerCfg::sized(cfg.semigroup.inner_burn_in, cfg.semigroup.inner_samples);
            let est = evolved_grad(&es, mode, &x, &inner, cfg.seed)?;
            let payload = serde_json::json!({
                "t": t,
                "renormalized": renormalized,
                "qt": {
                    "value_shift": q.value_shift,
                    "iterations": q.iterations,
                    "grad_norm": q.grad.norm2(),
                },
                "evolved_grad": {
                    "norm": est.grad.norm2(),
                    "se": est.se,
                    "control_variate_weight": est.theta,
                },
            });
            println!("{}", serde_json::to_string_pretty(&payload)?);
        }
        Command::Condexp { n, mode } => {
            let n = n.unwrap_or(cfg.grid.n_values[0]);
            let spec = cfg.model.build()?;
            if spec.n_y == 0 {
                bail!("condexp needs a model with a y-block (n > 0)");
            }
            let mode = match mode.as_str() {
                "direct" => CondExpMode::Direct,
                "semigroup" => CondExpMode::Semigroup,
                other => bail!("unknown mode `{other}` (direct|semigroup)"),
            };
            let mut rng = rng::stream(cfg.seed, "cli-condexp", 0);
            let y = gue_tuple(spec.n_y, n, 1.0, &mut rng);
            let closure = |full: &gibbsflow_core::MatrixTuple| full.mats[0].clone();
            let f = Observable::Closure {
                f: &closure,
                lip: 1.0,
            };
            let ccfg = CondExpCfg {
                seed: cfg.seed,
                ..Default::default()
            };
            let r = cond_exp(&f, &spec, &y.mats, n, mode, &ccfg)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&serde_json::json!({
                    "estimate_trace": r.estimate.trace().re / n as f64,
                    "se": r.se,
                    "certificate": r.certificate,
                }))?
            );
        }
        Command::Entropy { n, relative } => {
            let n = n.unwrap_or(cfg.grid.n_values[0]);
            let spec = cfg.model.build()?;
            let chain = sample(&spec, n, &sampler_cfg(&cfg))?;
            let ecfg = EntropyCfg {
                t_min: cfg.entropy.t_min,
                t_max: cfg.entropy.t_max,
                grid: cfg.entropy.grid,
                s_max: cfg.entropy.s_max,
                grid_g: cfg.entropy.grid_g,
                fisher: FisherCfg {
                    outer_k: cfg.entropy.outer_k,
                    inner: InnerCfg::sized(
                        cfg.semigroup.inner_burn_in,
                        cfg.semigroup.inner_samples,
                    ),
                    seed: cfg.seed,
                    offset: 0,
                },
            };
            let layout = BlockLayout::conditional(&spec);
            let q = if relative {
                entropy_g(&spec, &layout, &chain, &ecfg)?
            } else {
                entropy(&spec, &layout, &chain, &ecfg)?
            };
            let path = out_dir.join(format!("entropy_n{n}.csv"));
            std::fs::write(&path, q.to_csv())?;
            println!(
                "{}",
                serde_json::to_string_pretty(&serde_json::json!({
                    "value": q.value,
                    "budget": q.budget,
                    "mc_budget": q.mc_budget,
                    "quad_budget": q.quad_budget,
                    "tail_budget": q.tail_budget,
                    "csv": path.display().to_string(),
                }))?
            );
        }
        Command::Transport { n } => {
            let n = n.unwrap_or(cfg.grid.n_values[0]);
            let spec = cfg.model.build()?;
            let chain = sample(&spec, n, &sampler_cfg(&cfg))?;
            let tcfg = TransportCfg {
                max_step: cfg.transport.max_step,
                inner: InnerCfg::sized(
                    cfg.semigroup.inner_burn_in,
                    cfg.semigroup.inner_samples,
                ),
                tail_bound_target: cfg.transport.tail_bound_target,
                horizon_cap: cfg.transport.horizon_cap,
                seed: cfg.seed,
            };
            let words: Vec<Word> = (1..=4).map(|k| Word(vec![0; k])).collect();
            let report =
                pushforward_to_gue_check(&spec, &chain, &words, cfg.transport.points, &tcfg)?;
            let path = out_dir.join(format!("transport_n{n}.json"));
            std::fs::write(&path, serde_json::to_string_pretty(&report)?)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Triangular { n } => {
            let n = n.unwrap_or(cfg.grid.n_values[0]);
            let mut spec = cfg.model.build()?;
            // triangular transport treats every variable as an x variable
            spec.m += spec.n_y;
            spec.n_y = 0;
            let chain = sample(&spec, n, &sampler_cfg(&cfg))?;
            let tcfg = TransportCfg {
                max_step: cfg.transport.max_step,
                inner: InnerCfg::sized(
                    cfg.semigroup.inner_burn_in,
                    cfg.semigroup.inner_samples,
                ),
                tail_bound_target: cfg.transport.tail_bound_target,
                horizon_cap: cfg.transport.horizon_cap,
                seed: cfg.seed,
            };
            let map = triangular_transport(&spec, &chain, &tcfg)?;
            let audit = triangular_opnorm_audit(&map, &chain, 3)?;
            println!("{}", serde_json::to_string_pretty(&audit)?);
        }
        Command::Verify { check } => {
            let t0 = std::time::Instant::now();
            let verdicts = verify::run_all(cfg.seed, check.as_deref());
            if verdicts.is_empty() {
                bail!("no check matches the filter");
            }
            for v in &verdicts {
                println!(
                    "{} {:<from_width$}  value {:+.6e}  budget {:.3e}  ({:.1}s)",
                    if v.pass { "PASS" } else { "FAIL" },
                    v.name,
                    v.value,
                    v.budget,
                    v.seconds,
                    from_width = 30
                );
            }
            let pass = verdicts.iter().all(|v| v.pass);
            let report = RunReport {
                package: "gibbsflow".to_string(),
                version: env!("CARGO_PKG_VERSION").to_string(),
                seed: cfg.seed,
                environment: EnvFingerprint::current(rayon::current_num_threads()),
                config: serde_json::to_value(&cfg)?,
                verdicts,
                pass,
                seconds: t0.elapsed().as_secs_f64(),
            };
            let path = out_dir.join("verify_report.json");
            std::fs::write(&path, serde_json::to_string_pretty(&report)?)?;
            println!(
                "{}: report -> {}",
                if pass { "ALL PASS" } else { "FAILURES" },
                path.display()
            );
            if !pass {
                std::process::exit(1);
            }
        }
    }
    Ok(())
}

fn sampler_cfg(cfg: &RunConfig) -> SamplerConfig {
    SamplerConfig {
        burn_in: cfg.sampler.burn_in,
        n_samples: cfg.sampler.n_samples,
        thin: cfg.sampler.thin,
        chains: cfg.sampler.chains,
        seed: cfg.seed,
        ..Default::default()
    }
}

/// Reference moment for the CSV comparison column: the quartic spectral
/// density for `1/2 tr(x^2) + g tr(x^4)` potentials, finite-N GUE for the
/// pure quadratic, nothing otherwise.
fn oracle_moment(cfg: &RunConfig, degree: usize, n: usize) -> Option<f64> {
    if degree % 2 == 1 {
        return Some(0.0);
    }
    let text = cfg.model.potential.replace(' ', "");
    if text == "0.5*tr(x1^2)" {
        return Some(gue_moment(degree / 2, n));
    }
    if let Some(rest) = text.strip_prefix("0.5*tr(x1^2)+") {
        if let Some(gs) = rest.strip_suffix("*tr(x1^4)") {
            if let Ok(g) = gs.parse::<f64>() {
                return quartic_moments(g, degree).get(degree / 2).copied();
            }
        }
    }
    None
}
