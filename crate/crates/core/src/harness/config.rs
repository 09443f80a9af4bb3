//! JSON sweep configuration.
//!
//! Relative file paths resolve against the directory holding the config.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fixed_point::SolverConfig;
use crate::loss::LossModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Fixed-point predictions over the grid.
    Theory,
    /// Simulated fits next to fixed-point predictions.
    Erm,
    /// `Erm` repeated over a grid of trigger-direction variances, one CSV each.
    EigenSweep,
    /// Population-risk minimizer (eigen-pair covariance only).
    Population,
    /// Fixed-point predictions plus the four-term split of σ².
    Decompose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum CovarianceConfig {
    Isotropic {
        #[serde(default = "one")]
        scale: f64,
    },
    EigenPair {
        s_mu_sq: f64,
        s_v_sq: f64,
        #[serde(default = "one")]
        s_rest_sq: f64,
    },
    /// Diagonal spectrum; μ and v sit on `mu_index` and `v_index`. `p` is
    /// the spectrum length.
    Spectrum {
        eigenvalues: Vec<f64>,
        #[serde(default)]
        mu_index: usize,
        #[serde(default = "one_usize")]
        v_index: usize,
    },
    /// CSV moments. Without `trigger`, v is the minimum-eigenvalue direction.
    Dense {
        mean: PathBuf,
        cov: PathBuf,
        #[serde(default)]
        trigger: Option<PathBuf>,
    },
}

fn one() -> f64 {
    1.0
}

fn one_usize() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaPreset {
    /// 0.5
    Synthetic,
    /// 1e-4
    Cifar,
}

impl LambdaPreset {
    pub fn value(self) -> f64 {
        match self {
            LambdaPreset::Synthetic => 0.5,
            LambdaPreset::Cifar => 1e-4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LambdaConfig {
    Value(f64),
    Preset(LambdaPreset),
}

impl LambdaConfig {
    pub fn value(self) -> f64 {
        match self {
            LambdaConfig::Value(x) => x,
            LambdaConfig::Preset(p) => p.value(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Linspace {
    pub start: f64,
    pub stop: f64,
    pub num: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridConfig {
    List(Vec<f64>),
    Linspace { linspace: Linspace },
}

impl GridConfig {
    pub fn values(&self) -> Vec<f64> {
        match self {
            GridConfig::List(v) => v.clone(),
            GridConfig::Linspace { linspace: l } => match l.num {
                0 => Vec::new(),
                1 => vec![l.start],
                k => (0..k)
                    .map(|i| l.start + (l.stop - l.start) * i as f64 / (k - 1) as f64)
                    .collect(),
            },
        }
    }
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig::Linspace {
            linspace: Linspace {
                start: 0.0,
                stop: 1.5,
                num: 20,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    pub fn values(&self) -> Vec<T> {
        match self {
            OneOrMany::One(x) => vec![x.clone()],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverOverrides {
    pub tol: Option<f64>,
    pub nodes: Option<usize>,
    pub damping: Option<f64>,
    pub max_iter: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum EvalConfig {
    #[default]
    Analytic,
    Empirical { n_test: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub mode: Mode,
    pub loss: LossModel,
    pub covariance: CovarianceConfig,
    /// `‖μ‖` for structured covariances; ignored for dense input.
    #[serde(default = "one")]
    pub norm_mu: f64,
    /// Dimension for isotropic and eigen-pair covariances.
    #[serde(default)]
    pub p: Option<usize>,
    pub n: OneOrMany<usize>,
    #[serde(default = "default_phi")]
    pub phi: OneOrMany<f64>,
    pub lambda: LambdaConfig,
    #[serde(default)]
    pub alpha_grid: GridConfig,
    #[serde(default = "default_alpha_test")]
    pub alpha_test: f64,
    /// Trigger-direction variances for `eigen_sweep`.
    #[serde(default)]
    pub s_v_sq_grid: Option<Vec<f64>>,
    #[serde(default = "one_usize")]
    pub reps: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub solver: SolverOverrides,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default = "default_output")]
    pub output: PathBuf,
}

fn default_phi() -> OneOrMany<f64> {
    OneOrMany::One(0.05)
}

fn default_alpha_test() -> f64 {
    0.5
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

fn cfg_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl SweepConfig {
    /// Parses and resolves relative paths against `path`'s directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| cfg_err(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: SweepConfig = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        let dir = path.parent().unwrap_or_else(|| Path::new("."));
        cfg.resolve_paths(dir);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, dir: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        if let CovarianceConfig::Dense { mean, cov, trigger } = &mut self.covariance {
            fix(mean);
            fix(cov);
            if let Some(t) = trigger {
                fix(t);
            }
        }
        fix(&mut self.output);
    }

    pub fn solver_config(&self) -> SolverConfig {
        let mut s = SolverConfig::default();
        if let Some(t) = self.solver.tol {
            s.tol = t;
        }
        if let Some(k) = self.solver.nodes {
            s.gh_nodes = k;
        }
        if let Some(d) = self.solver.damping {
            s.damping = d;
        }
        if let Some(m) = self.solver.max_iter {
            s.max_iter = m;
        }
        s
    }

    /// Grid, count and mode checks that need no file access.
    pub fn check_static(&self) -> Result<()> {
        let alphas = self.alpha_grid.values();
        if alphas.is_empty() {
            return Err(cfg_err("alpha_grid is empty"));
        }
        if alphas.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
            return Err(cfg_err("alpha_grid entries must be finite and >= 0"));
        }
        let phis = self.phi.values();
        if phis.is_empty() || phis.iter().any(|x| !(x.is_finite() && (0.0..0.5).contains(x))) {
            return Err(cfg_err("phi must be non-empty with entries in [0, 0.5)"));
        }
        let ns = self.n.values();
        if ns.is_empty() || ns.contains(&0) {
            return Err(cfg_err("n must be non-empty with entries >= 1"));
        }
        let lambda = self.lambda.value();
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(cfg_err("lambda must be finite and > 0"));
        }
        if !(self.alpha_test.is_finite() && self.alpha_test >= 0.0) {
            return Err(cfg_err("alpha_test must be finite and >= 0"));
        }
        if self.reps < 1 {
            return Err(cfg_err("reps must be >= 1"));
        }
        if !(self.norm_mu.is_finite() && self.norm_mu > 0.0) {
            return Err(cfg_err("norm_mu must be finite and > 0"));
        }
        if let EvalConfig::Empirical { n_test: 0 } = self.eval {
            return Err(cfg_err("eval.empirical.n_test must be >= 1"));
        }
        self.solver_config().validate().map_err(|e| cfg_err(format!("solver: {e}")))?;
        match &self.covariance {
            CovarianceConfig::Isotropic { .. } | CovarianceConfig::EigenPair { .. } => {
                if self.p.is_none_or(|p| p < 2) {
                    return Err(cfg_err("p >= 2 is required for isotropic and eigen_pair covariances"));
                }
            }
            CovarianceConfig::Spectrum { .. } | CovarianceConfig::Dense { .. } => {
                if self.p.is_some() {
                    return Err(cfg_err("p is implied by the covariance input and must be omitted"));
                }
            }
        }
        match self.mode {
            Mode::EigenSweep => {
                if !matches!(self.covariance, CovarianceConfig::EigenPair { .. }) {
                    return Err(cfg_err("eigen_sweep requires an eigen_pair covariance"));
                }
                let grid = self.s_v_sq_grid.as_deref().unwrap_or(&[]);
                if grid.is_empty() || grid.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
                    return Err(cfg_err("eigen_sweep requires a non-empty s_v_sq_grid of positive values"));
                }
            }
            Mode::Population if !matches!(self.covariance, CovarianceConfig::EigenPair { .. }) => {
                return Err(cfg_err("population mode requires an eigen_pair covariance"));
            }
            _ => {}
        }
        if self.mode != Mode::EigenSweep && self.s_v_sq_grid.is_some() {
            return Err(cfg_err("s_v_sq_grid is only used by eigen_sweep"));
        }
        Ok(())
    }
}
