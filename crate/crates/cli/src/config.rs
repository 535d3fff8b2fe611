//! Experiment configuration files (TOML).

use std::path::{Path, PathBuf};

use ergobound::bounds::YoungPair;
use ergobound::isampler::{ISamplerConfig, RateChoice};
use ergobound::mg1::{MG1Config, ServiceLaw};
use ergobound::verify::{CouplingKind, TRAJECTORY_CAP};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Mg1,
    Isampler,
    CustomDiscrete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    /// Seed for Monte Carlo checks; the `--seed` flag takes precedence.
    #[serde(default)]
    pub seed: Option<u64>,
    /// Run the declared checks and fail the run when one does not hold.
    #[serde(default = "default_true")]
    pub verify: bool,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub bound: BoundConfig,
    pub mg1: Option<Mg1Section>,
    pub isampler: Option<IsamplerSection>,
    pub discrete: Option<DiscreteSection>,
    pub coupling: Option<CouplingSection>,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Relative paths resolve against the config file's directory.
    #[serde(default)]
    pub dir: Option<PathBuf>,
    /// Prepended to every artifact file name.
    #[serde(default)]
    pub prefix: String,
    #[serde(default = "default_true")]
    pub svg: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: None,
            prefix: String::new(),
            svg: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundConfig {
    #[serde(default = "default_nmax")]
    pub nmax: usize,
    /// Horizon of the exact oracle and of the dominance check.
    #[serde(default = "default_exact_nmax")]
    pub exact_nmax: usize,
    #[serde(default)]
    pub young: YoungPair,
    /// Compare two starting states instead of a start against `π`
    /// (finite kernels only).
    #[serde(default)]
    pub y: Option<usize>,
}

fn default_nmax() -> usize {
    1000
}

fn default_exact_nmax() -> usize {
    200
}

impl Default for BoundConfig {
    fn default() -> Self {
        BoundConfig {
            nmax: default_nmax(),
            exact_nmax: default_exact_nmax(),
            young: YoungPair::default(),
            y: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Mg1Section {
    pub rho: f64,
    #[serde(default = "default_b_tail")]
    pub b_tail: f64,
    #[serde(default = "default_alpha_tail")]
    pub alpha_tail: f64,
    /// Small sets `{0..=x0}`; `1` is the atom.
    #[serde(default = "default_x0s")]
    pub x0s: Vec<usize>,
    #[serde(default = "default_mg1_x")]
    pub x: usize,
    #[serde(default)]
    pub truncation: Option<usize>,
}

fn default_b_tail() -> f64 {
    1.0
}

fn default_alpha_tail() -> f64 {
    2.5
}

fn default_x0s() -> Vec<usize> {
    vec![1]
}

fn default_mg1_x() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IsamplerSection {
    pub r: f64,
    pub alpha: f64,
    pub eta_star: f64,
    #[serde(default = "default_grid_n")]
    pub grid_n: usize,
    #[serde(default = "default_start")]
    pub x: f64,
    #[serde(default)]
    pub rate_choice: RateChoice,
}

fn default_grid_n() -> usize {
    400
}

fn default_start() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscreteSection {
    /// CSV matrix, one row per state, no header.
    pub kernel: PathBuf,
    /// Small set `{0..=x0}`.
    pub x0: usize,
    pub x: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingSection {
    pub replicas: usize,
    pub x: usize,
    pub y: usize,
    /// Small set used for the coupling; defaults to the first configured one.
    #[serde(default)]
    pub x0: Option<usize>,
    #[serde(default = "default_kind")]
    pub kind: CouplingKindName,
    #[serde(default = "default_cap")]
    pub cap: usize,
}

fn default_kind() -> CouplingKindName {
    CouplingKindName::Ordered
}

fn default_cap() -> usize {
    TRAJECTORY_CAP
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CouplingKindName {
    Ordered,
    Independent,
}

impl From<CouplingKindName> for CouplingKind {
    fn from(k: CouplingKindName) -> Self {
        match k {
            CouplingKindName::Ordered => CouplingKind::Ordered,
            CouplingKindName::Independent => CouplingKind::Independent,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| CliError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config; relative paths inside it are resolved
    /// against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| match e {
            CliError::Parse(msg) => CliError::Parse(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(d) = cfg.discrete.as_mut() {
            if d.kernel.is_relative() {
                d.kernel = base.join(&d.kernel);
            }
        }
        if let Some(dir) = cfg.output.dir.as_mut() {
            if dir.is_relative() {
                *dir = base.join(&*dir);
            }
        }
        Ok(cfg)
    }

    /// Checks everything that can be checked before any computation.
    pub fn validate(&self) -> Result<()> {
        let sections = [
            ("mg1", self.mg1.is_some(), ExperimentKind::Mg1),
            ("isampler", self.isampler.is_some(), ExperimentKind::Isampler),
            ("discrete", self.discrete.is_some(), ExperimentKind::CustomDiscrete),
        ];
        for (name, present, kind) in sections {
            if present != (kind == self.kind) {
                return Err(CliError::invalid(
                    "exactly the section matching `kind` is present",
                    if present {
                        format!("[{name}] given for kind {:?}", self.kind)
                    } else {
                        format!("[{name}] missing")
                    },
                ));
            }
        }
        let b = &self.bound;
        if b.nmax == 0 {
            return Err(CliError::invalid("bound.nmax >= 1", "nmax = 0"));
        }
        if b.exact_nmax == 0 || b.exact_nmax > b.nmax {
            return Err(CliError::invalid(
                "1 <= bound.exact_nmax <= bound.nmax",
                format!("exact_nmax = {}, nmax = {}", b.exact_nmax, b.nmax),
            ));
        }
        b.young.validate()?;
        if b.y.is_some() && self.kind == ExperimentKind::Isampler {
            return Err(CliError::invalid("bound.y only for finite kernels", "kind = isampler"));
        }
        if let Some(m) = &self.mg1 {
            if m.x0s.is_empty() {
                return Err(CliError::invalid("mg1.x0s non-empty", "x0s = []"));
            }
            for &x0 in &m.x0s {
                m.model(x0)?;
            }
        }
        if let Some(s) = &self.isampler {
            s.model()?;
        }
        if let Some(c) = &self.coupling {
            if self.kind == ExperimentKind::Isampler {
                return Err(CliError::invalid("[coupling] only for finite kernels", "kind = isampler"));
            }
            if c.replicas == 0 {
                return Err(CliError::invalid("coupling.replicas >= 1", "replicas = 0"));
            }
        }
        Ok(())
    }
}

impl Mg1Section {
    pub fn service(&self) -> Result<ServiceLaw> {
        Ok(ServiceLaw::new(self.b_tail, self.alpha_tail)?)
    }

    pub fn model(&self, x0: usize) -> Result<MG1Config> {
        let cfg = MG1Config::from_traffic(self.rho, self.service()?, x0, self.x, self.truncation)?;
        cfg.service.mean()?;
        Ok(cfg)
    }
}

impl IsamplerSection {
    pub fn model(&self) -> Result<ISamplerConfig> {
        let mut cfg = ISamplerConfig::new(self.r, self.alpha, self.eta_star)?;
        cfg.grid_n = self.grid_n;
        cfg.start_x = self.x;
        cfg.rate_choice = self.rate_choice;
        cfg.validate()?;
        Ok(cfg)
    }
}
