//! Built-in experiment configs.

use crate::config::{ConfigError, ExperimentConfig};

pub struct Fixture {
    pub id: &'static str,
    pub about: &'static str,
    pub toml: &'static str,
}

macro_rules! fixture {
    ($id:literal, $about:literal) => {
        Fixture { id: $id, about: $about, toml: include_str!(concat!("../fixtures/", $id, ".toml")) }
    };
}

pub static FIXTURES: &[Fixture] = &[
    fixture!("thm-2.1-two-site", "tandem queues in a two-state environment: per-state and partial balance"),
    fixture!("eq-2.3-single-environment", "one environment state reduces to the Jackson product form"),
    fixture!("rem-2.1-frozen-slice", "frozen queues: environment-only slices solved exactly"),
    fixture!("thm-3.1-pair", "heavy particle on two sites: exact stationary law"),
    fixture!("thm-3.1-grid-2x2", "heavy particle on a 2x2 grid: exact stationary law"),
    fixture!("thm-5.1-lambda-queue", "queue with diffusing arrival rate, sigma = 1/(1 - lambda)"),
    fixture!("sec-5a1-lambda-divergent", "diffusing arrival rate with sigma = 1: infinite normalizer"),
    fixture!("thm-5.2-mu-queue", "queue with diffusing service rate"),
    fixture!("thm-5.3-wedge", "arrival and service rates diffusing in a wedge"),
    fixture!("thm-5.4-switch", "Brownian motion with switching drift on [-1, 1]"),
    fixture!("sec-5c-two-component", "two-component diffusion, infinite normalizer"),
    fixture!("thm-6.1-model-B-rectangle", "OU base, Brownian environment with drift"),
    fixture!("thm-6.1-model-C-rectangle", "OU base, OU environment"),
    fixture!("thm-6.1-model-D-rectangle", "OU base, CIR environment"),
];

pub fn find(id: &str) -> Option<&'static Fixture> {
    FIXTURES.iter().find(|f| f.id == id)
}

impl Fixture {
    pub fn config(&self) -> Result<ExperimentConfig, ConfigError> {
        ExperimentConfig::from_toml(self.toml)
    }
}
