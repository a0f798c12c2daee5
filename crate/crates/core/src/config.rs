//! Run configuration (TOML with typed sections; JSON accepted as an
//! alternative) and the run report emitted by the CLI.
//!
//! Every key has a default, so `gibbsflow verify` runs without a config
//! file. Environment variables with the `GIBBSFLOW_` prefix override the
//! top-level scalars (`GIBBSFLOW_SEED`, `GIBBSFLOW_OUT`,
//! `GIBBSFLOW_THREADS`).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::CoreError;
use crate::potential::PotentialSpec;
use crate::tracepoly::parse_self_adjoint;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelCfg {
    /// Potential text, e.g. `0.5*tr(x1^2) + 0.1*tr(x1^4)`; empty selects
    /// the built-in standard quadratic in `m + n` variables.
    pub potential: String,
    pub m: usize,
    pub n: usize,
    pub c: f64,
    #[serde(rename = "C")]
    pub big_c: f64,
    /// Operator-norm restriction radius for the declared window (0 = none).
    pub radius: f64,
}

impl Default for ModelCfg {
    fn default() -> Self {
        Self {
            potential: "0.5*tr(x1^2) + 0.1*tr(x1^4)".to_string(),
            m: 1,
            n: 0,
            c: 1.0,
            big_c: 2.2,
            radius: 2.6,
        }
    }
}

impl ModelCfg {
    pub fn build(&self) -> Result<PotentialSpec, CoreError> {
        let v = parse_self_adjoint(&self.potential)?;
        let mut spec = PotentialSpec::from_trace_poly(v, self.m, self.n, self.c, self.big_c)?;
        if self.radius > 0.0 {
            spec = spec.with_radius(self.radius);
        }
        Ok(spec)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct GridCfg {
    pub n_values: Vec<usize>,
}

impl Default for GridCfg {
    fn default() -> Self {
        Self {
            n_values: vec![4, 8, 16],
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerSection {
    pub burn_in: usize,
    pub n_samples: usize,
    pub thin: usize,
    pub chains: usize,
}

impl Default for SamplerSection {
    fn default() -> Self {
        Self {
            burn_in: 500,
            n_samples: 2000,
            thin: 2,
            chains: 2,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct SemigroupSection {
    pub inner_burn_in: usize,
    pub inner_samples: usize,
    pub trotter_samples: usize,
}

impl Default for SemigroupSection {
    fn default() -> Self {
        Self {
            inner_burn_in: 96,
            inner_samples: 192,
            trotter_samples: 8,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct EntropySection {
    pub t_min: f64,
    pub t_max: f64,
    pub grid: usize,
    pub s_max: f64,
    pub grid_g: usize,
    pub outer_k: usize,
}

impl Default for EntropySection {
    fn default() -> Self {
        Self {
            t_min: 1e-3,
            t_max: 1e3,
            grid: 15,
            s_max: 10.0,
            grid_g: 13,
            outer_k: 64,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct TransportSection {
    pub max_step: f64,
    pub tail_bound_target: f64,
    pub horizon_cap: f64,
    pub points: usize,
}

impl Default for TransportSection {
    fn default() -> Self {
        Self {
            max_step: 0.25,
            tail_bound_target: 5e-3,
            horizon_cap: 24.0,
            points: 24,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub out: String,
    /// Worker threads; 0 uses all available.
    pub threads: usize,
    pub model: ModelCfg,
    pub grid: GridCfg,
    pub sampler: SamplerSection,
    pub semigroup: SemigroupSection,
    pub entropy: EntropySection,
    pub transport: TransportSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CoreError> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg: RunConfig = if path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("json"))
            || text.trim_start().starts_with('{')
        {
            serde_json::from_str(&text)
                .map_err(|e| CoreError::Config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text)
                .map_err(|e| CoreError::Config(format!("{}: {e}", path.display())))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&mut self) -> Result<(), CoreError> {
        if self.grid.n_values.is_empty() {
            return Err(CoreError::Config("empty N grid".to_string()));
        }
        if !self.grid.n_values.windows(2).all(|w| w[0] < w[1]) {
            return Err(CoreError::Config("N grid must be ascending".to_string()));
        }
        if self.model.c <= 0.0 || self.model.big_c < self.model.c {
            return Err(CoreError::Config(
                "window must satisfy 0 < c <= C".to_string(),
            ));
        }
        if self.seed == 0 {
            self.seed = 1;
        }
        Ok(())
    }

    pub fn apply_env(&mut self) {
        if let Ok(s) = std::env::var("GIBBSFLOW_SEED") {
            if let Ok(v) = s.parse() {
                self.seed = v;
            }
        }
        if let Ok(s) = std::env::var("GIBBSFLOW_OUT") {
            self.out = s;
        }
        if let Ok(s) = std::env::var("GIBBSFLOW_THREADS") {
            if let Ok(v) = s.parse() {
                self.threads = v;
            }
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Verdict {
    pub name: String,
    pub pass: bool,
    pub value: f64,
    pub budget: f64,
    pub detail: String,
    pub seconds: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunReport {
    pub package: String,
    pub version: String,
    pub seed: u64,
    pub environment: EnvFingerprint,
    pub config: serde_json::Value,
    pub verdicts: Vec<Verdict>,
    pub pass: bool,
    pub seconds: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EnvFingerprint {
    pub os: String,
    pub arch: String,
    pub threads: usize,
}

impl EnvFingerprint {
    pub fn current(threads: usize) -> Self {
        Self {
            os: std::env::consts::OS.to_string(),
            arch: std::env::consts::ARCH.to_string(),
            threads,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_build() {
        let cfg = RunConfig::default();
        let spec = cfg.model.build().unwrap();
        assert_eq!(spec.m, 1);
        assert_eq!(spec.c, 1.0);
    }

    #[test]
    fn toml_and_json_roundtrip() {
        let toml_text = r#"
seed = 7
[model]
potential = "0.5*tr(x1^2)"
m = 1
n = 0
c = 1.0
C = 1.0
radius = 0.0
[grid]
n_values = [4, 8]
"#;
        let cfg: RunConfig = toml::from_str(toml_text).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.grid.n_values, vec![4, 8]);
        let json = serde_json::to_string(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back.seed, 7);
        assert_eq!(back.model.potential, "0.5*tr(x1^2)");
    }

    #[test]
    fn rejects_descending_grid() {
        let mut cfg = RunConfig {
            grid: GridCfg {
                n_values: vec![8, 4],
            },
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
