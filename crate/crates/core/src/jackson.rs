//! Open Jackson networks whose arrival, service and routing parameters depend
//! on a finite environment.

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use thiserror::Error;

use crate::ctmc::{CtmcError, RateKernel};
use crate::linalg::solve_dense;
use crate::Normalizer;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum JacksonError {
    #[error("invalid network: {0}")]
    Invalid(String),
    #[error("I - P is singular, so the traffic equation has no unique solution")]
    SingularRouting,
    #[error("site {site} has zero throughput in environment {env} but holds {count} tasks")]
    ZeroThroughput { env: usize, site: usize, count: u32 },
}

impl From<JacksonError> for CtmcError {
    fn from(e: JacksonError) -> Self {
        CtmcError::Kernel(format!("{e}"))
    }
}

/// Queue lengths, one per site.
pub type QueueState = Vec<u32>;

/// Sites with arrival intensities `lambda`, service intensities `mu` and a
/// substochastic routing matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    lambda: Vec<f64>,
    mu: Vec<f64>,
    routing: Vec<Vec<f64>>,
}

impl NetworkSpec {
    pub fn new(lambda: Vec<f64>, mu: Vec<f64>, routing: Vec<Vec<f64>>) -> Result<Self, JacksonError> {
        let n = lambda.len();
        if n == 0 {
            return Err(JacksonError::Invalid(String::from("network needs at least one site")));
        }
        if mu.len() != n || routing.len() != n || routing.iter().any(|r| r.len() != n) {
            return Err(JacksonError::Invalid(format!("expected {n} sites in mu and an {n}x{n} routing matrix")));
        }
        for (i, &l) in lambda.iter().enumerate() {
            if !(l >= 0.0) || !l.is_finite() {
                return Err(JacksonError::Invalid(format!("arrival intensity at site {i} must be finite and >= 0, got {l}")));
            }
        }
        for (i, &m) in mu.iter().enumerate() {
            if !(m > 0.0) || !m.is_finite() {
                return Err(JacksonError::Invalid(format!("service intensity at site {i} must be finite and > 0, got {m}")));
            }
        }
        for (i, row) in routing.iter().enumerate() {
            if row.iter().any(|p| !(*p >= 0.0)) {
                return Err(JacksonError::Invalid(format!("routing row {i} has a negative entry")));
            }
            let s: f64 = row.iter().sum();
            if s > 1.0 + 1e-12 {
                return Err(JacksonError::Invalid(format!("routing row {i} sums to {s} > 1")));
            }
        }
        let spec = Self { lambda, mu, routing };
        traffic_solve(&spec)?;
        Ok(spec)
    }

    pub fn sites(&self) -> usize {
        self.lambda.len()
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn routing(&self) -> &[Vec<f64>] {
        &self.routing
    }

    /// Probability of leaving the network after service at site `i`.
    pub fn exit_prob(&self, i: usize) -> f64 {
        (1.0 - self.routing[i].iter().sum::<f64>()).max(0.0)
    }

    /// Whether every site can route to every other site.
    pub fn routing_irreducible(&self) -> bool {
        let n = self.sites();
        (0..n).all(|s| {
            let mut seen = vec![false; n];
            let mut stack = vec![s];
            while let Some(i) = stack.pop() {
                for k in 0..n {
                    if self.routing[i][k] > 0.0 && !seen[k] {
                        seen[k] = true;
                        stack.push(k);
                    }
                }
            }
            seen.iter().all(|v| *v)
        })
    }
}

/// Throughputs `rho` solving `rho = lambda + rho P`.
pub fn traffic_solve(spec: &NetworkSpec) -> Result<Vec<f64>, JacksonError> {
    let n = spec.sites();
    // (I - P)^T rho^T = lambda^T
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            a[k * n + i] = if i == k { 1.0 } else { 0.0 } - spec.routing[i][k];
        }
    }
    let mut b = spec.lambda.clone();
    solve_dense(&mut a, &mut b, n).map_err(|_| JacksonError::SingularRouting)?;
    Ok(b)
}

/// Jump rates of a single Jackson network.
#[derive(Debug, Clone)]
pub struct JnKernel {
    spec: NetworkSpec,
}

pub fn jn_rates(spec: &NetworkSpec) -> JnKernel {
    JnKernel { spec: spec.clone() }
}

fn network_transitions(spec: &NetworkSpec, scale: f64, n: &[u32], out: &mut Vec<(QueueState, f64)>) {
    if !(scale > 0.0) {
        return;
    }
    let sites = spec.sites();
    for i in 0..sites {
        if spec.lambda[i] > 0.0 {
            let mut t = n.to_vec();
            t[i] += 1;
            out.push((t, scale * spec.lambda[i]));
        }
        if n[i] >= 1 {
            let exit = spec.mu[i] * spec.exit_prob(i);
            if exit > 0.0 {
                let mut t = n.to_vec();
                t[i] -= 1;
                out.push((t, scale * exit));
            }
            for k in 0..sites {
                let p = spec.routing[i][k];
                if k != i && p > 0.0 {
                    let mut t = n.to_vec();
                    t[i] -= 1;
                    t[k] += 1;
                    out.push((t, scale * spec.mu[i] * p));
                }
            }
        }
    }
}

fn network_predecessors(sites: usize, n: &[u32], out: &mut Vec<QueueState>) {
    for i in 0..sites {
        let mut t = n.to_vec();
        t[i] += 1;
        out.push(t);
        if n[i] >= 1 {
            let mut t = n.to_vec();
            t[i] -= 1;
            out.push(t);
        }
        for k in 0..sites {
            if k != i && n[k] >= 1 {
                let mut t = n.to_vec();
                t[i] += 1;
                t[k] -= 1;
                out.push(t);
            }
        }
    }
}

impl RateKernel for JnKernel {
    type State = QueueState;
    fn transitions(&self, s: &QueueState, out: &mut Vec<(QueueState, f64)>) -> Result<(), CtmcError> {
        network_transitions(&self.spec, 1.0, s, out);
        Ok(())
    }
    fn predecessors(&self, s: &QueueState, out: &mut Vec<QueueState>) -> Result<(), CtmcError> {
        network_predecessors(self.spec.sites(), s, out);
        Ok(())
    }
}

pub type EnvRateFn = Arc<dyn Fn(&[u32], usize, usize) -> f64 + Send + Sync>;
pub type ScaleFn = Arc<dyn Fn(&[u32]) -> f64 + Send + Sync>;

/// Environment jump intensities `tau^(n)(z, z')`.
#[derive(Clone)]
pub enum EnvRates {
    /// Same matrix for every queue state.
    Constant(Vec<Vec<f64>>),
    /// `h(n) * base[z][z']`.
    Factored { h: ScaleFn, base: Vec<Vec<f64>> },
    General(EnvRateFn),
}

impl fmt::Debug for EnvRates {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EnvRates::Constant(m) => f.debug_tuple("Constant").field(m).finish(),
            EnvRates::Factored { base, .. } => f.debug_struct("Factored").field("base", base).finish_non_exhaustive(),
            EnvRates::General(_) => f.write_str("General(..)"),
        }
    }
}

impl EnvRates {
    pub fn rate(&self, n: &[u32], z: usize, z2: usize) -> f64 {
        if z == z2 {
            return 0.0;
        }
        match self {
            EnvRates::Constant(m) => m[z][z2],
            EnvRates::Factored { h, base } => h(n) * base[z][z2],
            EnvRates::General(f) => f(n, z, z2),
        }
    }

    fn scaled(&self, c: f64) -> Self {
        match self {
            EnvRates::Constant(m) => EnvRates::Constant(m.iter().map(|r| r.iter().map(|v| v * c).collect()).collect()),
            EnvRates::Factored { h, base } => EnvRates::Factored {
                h: h.clone(),
                base: base.iter().map(|r| r.iter().map(|v| v * c).collect()).collect(),
            },
            EnvRates::General(f) => {
                let f = f.clone();
                EnvRates::General(Arc::new(move |n, z, z2| c * f(n, z, z2)))
            }
        }
    }
}

/// A network per environment state plus the environment's own dynamics.
#[derive(Debug, Clone)]
pub struct EnvironmentSpec {
    networks: Vec<NetworkSpec>,
    alpha: Vec<f64>,
    sigma: Vec<f64>,
    tau: EnvRates,
    loads: Vec<Vec<f64>>,
}

impl EnvironmentSpec {
    pub fn new(networks: Vec<NetworkSpec>, alpha: Vec<f64>, sigma: Vec<f64>, tau: EnvRates) -> Result<Self, JacksonError> {
        let nz = networks.len();
        if nz == 0 {
            return Err(JacksonError::Invalid(String::from("at least one environment state is required")));
        }
        let sites = networks[0].sites();
        if networks.iter().any(|n| n.sites() != sites) {
            return Err(JacksonError::Invalid(String::from("all environments must have the same sites")));
        }
        if alpha.len() != nz || sigma.len() != nz {
            return Err(JacksonError::Invalid(format!("alpha and sigma need {nz} entries")));
        }
        if alpha.iter().any(|a| !(*a >= 0.0) || !a.is_finite()) {
            return Err(JacksonError::Invalid(String::from("alpha must be finite and >= 0")));
        }
        if sigma.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(JacksonError::Invalid(String::from("sigma must be finite and > 0")));
        }
        let check_matrix = |m: &Vec<Vec<f64>>| -> Result<(), JacksonError> {
            if m.len() != nz || m.iter().any(|r| r.len() != nz) {
                return Err(JacksonError::Invalid(format!("environment rate matrix must be {nz}x{nz}")));
            }
            if m.iter().flatten().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                return Err(JacksonError::Invalid(String::from("environment rates must be finite and >= 0")));
            }
            Ok(())
        };
        match &tau {
            EnvRates::Constant(m) | EnvRates::Factored { base: m, .. } => check_matrix(m)?,
            EnvRates::General(_) => {}
        }
        let mut loads = Vec::with_capacity(nz);
        for net in &networks {
            let rho = traffic_solve(net)?;
            loads.push(rho.iter().zip(&net.mu).map(|(r, m)| r / m).collect());
        }
        Ok(Self { networks, alpha, sigma, tau, loads })
    }

    pub fn env_count(&self) -> usize {
        self.networks.len()
    }

    pub fn sites(&self) -> usize {
        self.networks[0].sites()
    }

    pub fn network(&self, z: usize) -> &NetworkSpec {
        &self.networks[z]
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn tau(&self) -> &EnvRates {
        &self.tau
    }

    /// `rho_i^(z) / mu_i^(z)`.
    pub fn load(&self, z: usize, i: usize) -> f64 {
        self.loads[z][i]
    }

    /// `prod_i (rho_i^(z) / mu_i^(z))^{n_i}`.
    pub fn load_product(&self, z: usize, n: &[u32]) -> f64 {
        let mut p = 1.0;
        for (i, &k) in n.iter().enumerate() {
            p *= powi(self.loads[z][i], k);
        }
        p
    }

    pub fn with_alpha(&self, alpha: Vec<f64>) -> Result<Self, JacksonError> {
        Self::new(self.networks.clone(), alpha, self.sigma.clone(), self.tau.clone())
    }

    pub fn with_sigma(&self, sigma: Vec<f64>) -> Result<Self, JacksonError> {
        Self::new(self.networks.clone(), self.alpha.clone(), sigma, self.tau.clone())
    }

    /// Same environment with every `tau` multiplied by `c`.
    pub fn with_tau_scaled(&self, c: f64) -> Result<Self, JacksonError> {
        Self::new(self.networks.clone(), self.alpha.clone(), self.sigma.clone(), self.tau.scaled(c))
    }

    /// All `(z, n)` with every `n_i <= n_max`.
    pub fn box_states(&self, n_max: u32) -> Vec<(usize, QueueState)> {
        let mut out = Vec::new();
        for z in 0..self.env_count() {
            for n in queue_box(self.sites(), n_max) {
                out.push((z, n));
            }
        }
        out
    }

    /// Queue states in `box_states` at which the environment rates are not
    /// balanced (`sum_z' tau(z, z') != sum_z' tau(z', z)`) or `tau(z, z) != 0`.
    pub fn symmetry_warnings(&self, n_max: u32) -> Vec<String> {
        let nz = self.env_count();
        let mut warnings = Vec::new();
        for n in queue_box(self.sites(), n_max) {
            for z in 0..nz {
                let diag = match &self.tau {
                    EnvRates::Constant(m) => m[z][z],
                    EnvRates::Factored { h, base } => h(&n) * base[z][z],
                    EnvRates::General(f) => f(&n, z, z),
                };
                if diag != 0.0 {
                    warnings.push(format!("tau({z},{z}) = {diag} at n = {n:?}"));
                }
                let out: f64 = (0..nz).map(|z2| self.tau.rate(&n, z, z2)).sum();
                let inn: f64 = (0..nz).map(|z2| self.tau.rate(&n, z2, z)).sum();
                if (out - inn).abs() > 1e-12 * out.abs().max(inn.abs()).max(1.0) {
                    warnings.push(format!("environment {z} at n = {n:?}: outgoing tau sum {out} differs from incoming {inn}"));
                }
            }
        }
        warnings
    }

    /// Routing matrices that are not irreducible.
    pub fn routing_warnings(&self) -> Vec<String> {
        (0..self.env_count())
            .filter(|z| !self.networks[*z].routing_irreducible())
            .map(|z| format!("routing matrix in environment {z} is not irreducible"))
            .collect()
    }
}

fn powi(x: f64, k: u32) -> f64 {
    let mut r = 1.0;
    let mut b = x;
    let mut e = k;
    while e > 0 {
        if e & 1 == 1 {
            r *= b;
        }
        b *= b;
        e >>= 1;
    }
    r
}

/// All vectors of length `sites` with entries in `0..=n_max`, in lexicographic order.
pub fn queue_box(sites: usize, n_max: u32) -> Vec<QueueState> {
    let mut out = vec![vec![0u32; sites]];
    for i in 0..sites {
        let mut next = Vec::with_capacity(out.len() * (n_max as usize + 1));
        for v in &out {
            for k in 0..=n_max {
                let mut w = v.clone();
                w[i] = k;
                next.push(w);
            }
        }
        out = next;
    }
    out
}

/// Rates of the combined chain on `(z, n)`.
#[derive(Debug, Clone)]
pub struct CombinedNetwork {
    env: EnvironmentSpec,
}

pub fn combined_rates(env: &EnvironmentSpec) -> CombinedNetwork {
    CombinedNetwork { env: env.clone() }
}

impl CombinedNetwork {
    pub fn env(&self) -> &EnvironmentSpec {
        &self.env
    }

    /// Task moves only (same environment).
    pub fn base_transitions(&self, s: &(usize, QueueState), out: &mut Vec<((usize, QueueState), f64)>) {
        let (z, n) = s;
        let mut buf = Vec::new();
        network_transitions(&self.env.networks[*z], self.env.alpha[*z], n, &mut buf);
        out.extend(buf.into_iter().map(|(t, r)| ((*z, t), r)));
    }

    /// Environment moves only (same queue state).
    pub fn env_transitions(
        &self,
        s: &(usize, QueueState),
        out: &mut Vec<((usize, QueueState), f64)>,
    ) -> Result<(), JacksonError> {
        let (z, n) = s;
        let nz = self.env.env_count();
        let mut any = false;
        for z2 in 0..nz {
            if z2 != *z && self.env.tau.rate(n, *z, z2) > 0.0 {
                any = true;
            }
        }
        if !any {
            return Ok(());
        }
        let m = self.env.load_product(*z, n);
        if !(m > 0.0) {
            let site = n.iter().enumerate().position(|(i, k)| *k > 0 && self.env.loads[*z][i] == 0.0).unwrap_or(0);
            return Err(JacksonError::ZeroThroughput { env: *z, site, count: n[site] });
        }
        let sg = self.env.sigma[*z];
        for z2 in 0..nz {
            let t = self.env.tau.rate(n, *z, z2);
            if z2 != *z && t > 0.0 {
                out.push(((z2, n.clone()), sg * t / m));
            }
        }
        Ok(())
    }
}

impl RateKernel for CombinedNetwork {
    type State = (usize, QueueState);

    fn transitions(&self, s: &Self::State, out: &mut Vec<(Self::State, f64)>) -> Result<(), CtmcError> {
        self.base_transitions(s, out);
        self.env_transitions(s, out)?;
        Ok(())
    }

    fn predecessors(&self, s: &Self::State, out: &mut Vec<Self::State>) -> Result<(), CtmcError> {
        let (z, n) = s;
        let mut buf = Vec::new();
        network_predecessors(self.env.sites(), n, &mut buf);
        out.extend(buf.into_iter().map(|t| (*z, t)));
        out.extend((0..self.env.env_count()).filter(|z2| z2 != z).map(|z2| (z2, n.clone())));
        Ok(())
    }
}

/// `prod_i (rho_i^(z)/mu_i^(z))^{n_i} / sigma(z)`.
pub fn kappa(env: &EnvironmentSpec, z: usize, n: &[u32]) -> f64 {
    env.load_product(z, n) / env.sigma[z]
}

/// Total mass `sum_{z,n} kappa(z, n) = sum_z prod_i (1 - rho_i/mu_i)^{-1} / sigma(z)`.
pub fn xi(env: &EnvironmentSpec) -> Normalizer {
    let mut total = 0.0;
    for z in 0..env.env_count() {
        let mut p = 1.0;
        for i in 0..env.sites() {
            let r = env.load(z, i);
            if !(r < 1.0) {
                return Normalizer::Divergent { reason: format!("site {i} in environment {z} has load {r} >= 1") };
            }
            p /= 1.0 - r;
        }
        total += p / env.sigma[z];
    }
    Normalizer::Finite { value: total, error_bound: 0.0 }
}

/// Flows at one state split into task moves (1) and environment moves (2).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartialBalance {
    pub task_out: f64,
    pub task_in: f64,
    pub env_out: f64,
    pub env_in: f64,
}

impl PartialBalance {
    pub fn task_residual(&self) -> f64 {
        self.task_out - self.task_in
    }

    pub fn env_residual(&self) -> f64 {
        self.env_out - self.env_in
    }
}

/// Separate balance of task flows and environment flows at `(z, n)` under `nu`.
pub fn partial_balance(
    kernel: &CombinedNetwork,
    nu: impl Fn(usize, &[u32]) -> f64,
    z: usize,
    n: &[u32],
) -> Result<PartialBalance, JacksonError> {
    let s = (z, n.to_vec());
    let mut buf = Vec::new();
    kernel.base_transitions(&s, &mut buf);
    let task_out = nu(z, n) * buf.iter().map(|(_, r)| r).sum::<f64>();
    buf.clear();
    kernel.env_transitions(&s, &mut buf)?;
    let env_out = nu(z, n) * buf.iter().map(|(_, r)| r).sum::<f64>();

    let mut preds = Vec::new();
    network_predecessors(kernel.env.sites(), n, &mut preds);
    preds.sort();
    preds.dedup();
    let mut task_in = 0.0;
    for p in preds.iter().filter(|p| p.as_slice() != n) {
        buf.clear();
        kernel.base_transitions(&(z, p.clone()), &mut buf);
        let r: f64 = buf.iter().filter(|(t, _)| *t == s).map(|(_, r)| *r).sum();
        if r > 0.0 {
            task_in += nu(z, p) * r;
        }
    }
    let mut env_in = 0.0;
    for z2 in (0..kernel.env.env_count()).filter(|z2| *z2 != z) {
        buf.clear();
        kernel.env_transitions(&(z2, n.to_vec()), &mut buf)?;
        let r: f64 = buf.iter().filter(|(t, _)| *t == s).map(|(_, r)| *r).sum();
        if r > 0.0 {
            env_in += nu(z2, n) * r;
        }
    }
    Ok(PartialBalance { task_out, task_in, env_out, env_in })
}

/// Exit-rate growth diagnostics over a sample of states.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NonExplosionReport {
    /// Largest total exit rate `R(z, n)` on the sample.
    pub max_exit_rate: f64,
    /// Largest environment part `sigma(z) sum_z' tau (mu/rho)^n` on the sample.
    pub max_env_exit_rate: f64,
    pub argmax_env_exit: (usize, Vec<u32>),
    /// Growth test on the environment part: its maximum over the outer half of
    /// the sample (by total queue length) does not exceed the inner-half maximum.
    pub env_exit_bounded: bool,
    /// For factored rates `h(n) tau_bar`: the same growth test applied to
    /// `sup_z h(n) prod_i (mu/rho)^{n_i}`, with finite row sums of `tau_bar`.
    pub factored_condition: Option<bool>,
}

fn growth_bounded(samples: &[(u64, f64)]) -> bool {
    if samples.is_empty() {
        return true;
    }
    let mut sizes: Vec<u64> = samples.iter().map(|s| s.0).collect();
    sizes.sort_unstable();
    let median = sizes[(sizes.len() - 1) / 2];
    let inner = samples.iter().filter(|s| s.0 <= median).map(|s| s.1).fold(0.0, f64::max);
    let outer = samples.iter().filter(|s| s.0 > median).map(|s| s.1).fold(0.0, f64::max);
    outer.is_finite() && outer <= inner * (1.0 + 1e-9)
}

pub fn nonexplosion_report(env: &EnvironmentSpec, sample: &[(usize, QueueState)]) -> NonExplosionReport {
    let nz = env.env_count();
    let mut max_exit_rate = 0.0f64;
    let mut max_env = 0.0f64;
    let mut argmax = sample.first().cloned().unwrap_or((0, vec![0; env.sites()]));
    let mut env_growth = Vec::with_capacity(sample.len());
    for (z, n) in sample {
        let z = *z;
        let inv = 1.0 / env.load_product(z, n);
        let tau_sum: f64 = (0..nz).map(|z2| env.tau.rate(n, z, z2)).sum();
        let env_part = if tau_sum > 0.0 { env.sigma[z] * tau_sum * inv } else { 0.0 };
        let task_part: f64 = (0..env.sites())
            .map(|i| env.networks[z].lambda[i] + if n[i] >= 1 { env.networks[z].mu[i] } else { 0.0 })
            .sum::<f64>()
            * env.alpha[z];
        max_exit_rate = max_exit_rate.max(env_part + task_part);
        if env_part > max_env || (env_part.is_nan() && !max_env.is_nan()) {
            max_env = env_part;
            argmax = (z, n.clone());
        }
        env_growth.push((n.iter().map(|k| *k as u64).sum(), env_part));
    }
    let factored_condition = match &env.tau {
        EnvRates::Factored { h, base } => {
            let rows_finite = base.iter().all(|r| r.iter().sum::<f64>().is_finite());
            let mut seen: Vec<&QueueState> = sample.iter().map(|s| &s.1).collect();
            seen.sort();
            seen.dedup();
            let vals: Vec<(u64, f64)> = seen
                .iter()
                .map(|n| {
                    let s = (0..nz).map(|z| 1.0 / env.load_product(z, n)).fold(0.0, f64::max);
                    (n.iter().map(|k| *k as u64).sum(), h(n) * s)
                })
                .collect();
            Some(rows_finite && growth_bounded(&vals))
        }
        _ => None,
    };
    NonExplosionReport {
        max_exit_rate,
        max_env_exit_rate: max_env,
        argmax_env_exit: argmax,
        env_exit_bounded: growth_bounded(&env_growth),
        factored_condition,
    }
}
