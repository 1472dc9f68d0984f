//! Experiment configuration files.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use renv_core::hybrid::IndexFn;
use renv_core::{ScalarFn, ScalarFn2};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Parse(String),
    #[error("field `{field}`: {message}")]
    Field { field: String, message: String },
    #[error("action `{action}` is not available for model `{model}`")]
    Unsupported { action: &'static str, model: &'static str },
}

impl ConfigError {
    pub fn field(field: &str, message: impl Into<String>) -> Self {
        ConfigError::Field { field: field.to_string(), message: message.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Verify,
    Simulate,
    Stationary,
    Xi,
}

impl Action {
    pub fn name(self) -> &'static str {
        match self {
            Action::Verify => "verify",
            Action::Simulate => "simulate",
            Action::Stationary => "stationary",
            Action::Xi => "xi",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub name: Option<String>,
    pub action: Action,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Simulated time horizon.
    #[serde(default)]
    pub t_end: Option<f64>,
    /// Time step of diffusion schemes.
    #[serde(default)]
    pub dt: Option<f64>,
    /// Largest queue length per site, or grid size for finite differences.
    #[serde(default)]
    pub truncation: Option<u32>,
    /// Keep every k-th simulated state in the trajectory file.
    #[serde(default)]
    pub record_every: Option<u64>,
    /// Threshold override for the `stationary` L1 comparison.
    #[serde(default)]
    pub tolerance: Option<f64>,
    #[serde(default)]
    pub expect: Option<Expectation>,
    #[serde(default)]
    pub output: Option<PathBuf>,
    pub model: ModelConfig,
}

/// Known answer for the `xi` action.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expectation {
    #[serde(default)]
    pub xi: Option<f64>,
    #[serde(default)]
    pub xi_tolerance: Option<f64>,
    #[serde(default)]
    pub divergent: Option<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum ModelConfig {
    #[serde(rename = "jackson")]
    Jackson(JacksonConfig),
    #[serde(rename = "exclusion")]
    Exclusion(ExclusionConfig),
    #[serde(rename = "hybrid.lambda")]
    Lambda(LambdaConfig),
    #[serde(rename = "hybrid.mu")]
    Mu(MuConfig),
    #[serde(rename = "hybrid.wedge")]
    Wedge(WedgeConfig),
    #[serde(rename = "hybrid.switch")]
    Switch(SwitchConfig),
    #[serde(rename = "hybrid.twocomp")]
    TwoComp(TwoCompConfig),
    #[serde(rename = "ouenv.B")]
    OuB(OuBConfig),
    #[serde(rename = "ouenv.C")]
    OuC(OuCConfig),
    #[serde(rename = "ouenv.D")]
    OuD(OuDConfig),
}

impl ModelConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            ModelConfig::Jackson(_) => "jackson",
            ModelConfig::Exclusion(_) => "exclusion",
            ModelConfig::Lambda(_) => "hybrid.lambda",
            ModelConfig::Mu(_) => "hybrid.mu",
            ModelConfig::Wedge(_) => "hybrid.wedge",
            ModelConfig::Switch(_) => "hybrid.switch",
            ModelConfig::TwoComp(_) => "hybrid.twocomp",
            ModelConfig::OuB(_) => "ouenv.B",
            ModelConfig::OuC(_) => "ouenv.C",
            ModelConfig::OuD(_) => "ouenv.D",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
    pub routing: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JacksonConfig {
    pub networks: Vec<NetworkConfig>,
    pub alpha: Vec<f64>,
    pub sigma: Vec<f64>,
    /// Environment jump intensities, one row per environment state.
    pub tau: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Convention {
    #[default]
    PlainOutOfHeavy,
    NoJumpsOutOfHeavy,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExclusionConfig {
    pub width: usize,
    pub height: usize,
    pub beta: f64,
    pub tau: f64,
    pub phi: f64,
    pub lambda: f64,
    pub mu: f64,
    #[serde(default)]
    pub alpha: Option<Vec<f64>>,
    #[serde(default)]
    pub sigma: Option<Vec<f64>>,
    #[serde(default)]
    pub convention: Convention,
}

/// A real function of one variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Profile {
    Constant { value: f64 },
    /// `c0 + c1 x + c2 x^2 + ...`
    Polynomial { coefficients: Vec<f64> },
    /// `(at - x)^(-power)`
    InverseGap { at: f64, power: f64 },
    /// `intercept + coefficient / x`
    Reciprocal { intercept: f64, coefficient: f64 },
    /// `scale exp(rate x)`
    Exponential { scale: f64, rate: f64 },
    /// `positive` for `x > 0`, `negative` otherwise.
    Sign { positive: f64, negative: f64 },
}

impl Profile {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Profile::Constant { value } => *value,
            Profile::Polynomial { coefficients } => coefficients.iter().rev().fold(0.0, |acc, c| acc * x + c),
            Profile::InverseGap { at, power } => (at - x).powf(-power),
            Profile::Reciprocal { intercept, coefficient } => intercept + coefficient / x,
            Profile::Exponential { scale, rate } => scale * (rate * x).exp(),
            Profile::Sign { positive, negative } => {
                if x > 0.0 {
                    *positive
                } else {
                    *negative
                }
            }
        }
    }

    pub fn to_fn(&self) -> ScalarFn {
        let p = self.clone();
        Arc::new(move |x| p.eval(x))
    }
}

fn one() -> Profile {
    Profile::Constant { value: 1.0 }
}

/// A real function of the pair `(lambda, mu)`: `c0 + c_lambda lambda + c_mu mu`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Affine2 {
    pub c0: f64,
    #[serde(default)]
    pub c_lambda: f64,
    #[serde(default)]
    pub c_mu: f64,
}

impl Affine2 {
    pub fn to_fn(&self) -> ScalarFn2 {
        let a = self.clone();
        Arc::new(move |l, m| a.c0 + a.c_lambda * l + a.c_mu * m)
    }
}

fn affine_one() -> Affine2 {
    Affine2 { c0: 1.0, c_lambda: 0.0, c_mu: 0.0 }
}

/// Queue-length weights `scale ratio^n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Geometric {
    pub scale: f64,
    #[serde(default = "unit")]
    pub ratio: f64,
}

fn unit() -> f64 {
    1.0
}

impl Geometric {
    pub fn to_fn(&self) -> IndexFn {
        let g = self.clone();
        Arc::new(move |n| g.scale * g.ratio.powi(n as i32))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LambdaConfig {
    pub eps: f64,
    pub beta: Geometric,
    #[serde(default = "one")]
    pub sigma: Profile,
    #[serde(default = "one")]
    pub alpha: Profile,
    /// `euler` or `adjusted`.
    #[serde(default)]
    pub scheme: renv_core::hybrid::Scheme,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MuConfig {
    pub b: f64,
    #[serde(default = "one")]
    pub sigma: Profile,
    #[serde(default = "one")]
    pub alpha: Profile,
    #[serde(default)]
    pub scheme: renv_core::hybrid::Scheme,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WedgeConfig {
    pub theta: f64,
    #[serde(default = "affine_one")]
    pub sigma: Affine2,
    #[serde(default = "affine_one")]
    pub alpha: Affine2,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwitchConfig {
    pub lo: f64,
    pub hi: f64,
    #[serde(default = "one")]
    pub sigma: Profile,
    #[serde(default = "one")]
    pub alpha: Profile,
    #[serde(default = "one")]
    pub q: Profile,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoCompConfig {
    pub b: f64,
    pub d: usize,
    #[serde(default = "one")]
    pub sigma: Profile,
    #[serde(default = "one")]
    pub alpha: Profile,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rectangle {
    pub z: [f64; 2],
    pub x: [f64; 2],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OuBConfig {
    pub b: f64,
    #[serde(default)]
    pub rectangle: Option<Rectangle>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OuCConfig {
    #[serde(default)]
    pub rectangle: Option<Rectangle>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OuDConfig {
    pub a: f64,
    pub b: f64,
    #[serde(default)]
    pub rectangle: Option<Rectangle>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        Self::from_toml(&text)
    }

    /// Shape checks that do not need the model crates.
    fn check(&self) -> Result<(), ConfigError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(ConfigError::field("schema_version", format!("expected {SCHEMA_VERSION}, got {}", self.schema_version)));
        }
        if let Some(dt) = self.dt {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(ConfigError::field("dt", "must be positive"));
            }
        }
        if let Some(t) = self.t_end {
            if !(t > 0.0 && t.is_finite()) {
                return Err(ConfigError::field("t_end", "must be positive"));
            }
        }
        if self.record_every == Some(0) {
            return Err(ConfigError::field("record_every", "must be at least 1"));
        }
        if let Some(tol) = self.tolerance {
            if !(tol > 0.0 && tol.is_finite()) {
                return Err(ConfigError::field("tolerance", "must be positive"));
            }
        }
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(1)
    }
}
