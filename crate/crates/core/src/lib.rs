//! Continuous-time Markov processes in a random environment.
//!
//! A combined process `(Z(t), X(t))` superposes two kinds of moves: the base
//! process evolves under the current environment `z` (time-scaled by
//! `alpha(z)`), and the environment evolves with its own dynamics, slowed or
//! sped up by `sigma(z) / m(z, x)` where `m(z, .)` is the density of the base
//! invariant measure. The resulting invariant measure has the product form
//! `m(z, x) / sigma(z)` against the environment's own invariant measure.
//!
//! This crate builds such processes for several model families and checks the
//! product-form claims three ways: exact balance algebra on finite state
//! spaces, adjoint residuals and quadrature for diffusions, and Monte Carlo
//! simulation.
//!
//! Module map:
//! - [`ctmc`]: generator assembly, stationary solve, balance residuals, Gillespie simulation
//! - [`jackson`]: Jackson networks whose parameters depend on the environment
//! - [`exclusion`]: finite-lattice exclusion with a heavy particle as environment
//! - [`sde`]: reflected Euler-Maruyama, Skorohod map, thinning
//! - [`hybrid`]: queues with diffusing parameters, drift switching, two-component Wiener model
//! - [`ouenv`]: Ornstein-Uhlenbeck base process with a diffusing volatility
//! - [`stationarity`]: histograms, distances, statistical tests and reports
//!
//! The crate is `no_std` and needs only `alloc`.

#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod ctmc;
pub mod exclusion;
pub mod hybrid;
pub mod jackson;
pub mod linalg;
pub mod ouenv;
pub mod quadrature;
pub mod rng;
pub mod sde;
pub mod special;
pub mod stationarity;

pub use rng::RngStream;

/// Outcome of a normalizing-constant computation.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum Normalizer {
    /// Finite total mass, with an error bound on the numeric value (zero when closed form).
    Finite { value: f64, error_bound: f64 },
    /// The invariant measure has infinite total mass.
    Divergent { reason: alloc::string::String },
}

impl Normalizer {
    pub fn value(&self) -> Option<f64> {
        match self {
            Normalizer::Finite { value, .. } => Some(*value),
            Normalizer::Divergent { .. } => None,
        }
    }

    pub fn is_divergent(&self) -> bool {
        matches!(self, Normalizer::Divergent { .. })
    }
}

/// Shared coefficient function of one variable.
pub type ScalarFn = alloc::sync::Arc<dyn Fn(f64) -> f64 + Send + Sync>;
/// Shared coefficient function of two variables.
pub type ScalarFn2 = alloc::sync::Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

pub fn constant_fn(c: f64) -> ScalarFn {
    alloc::sync::Arc::new(move |_| c)
}
