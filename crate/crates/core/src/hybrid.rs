//! Hybrid models: queues whose rates diffuse, a Brownian motion with switching
//! drift, and a two-component Wiener model.
//!
//! Each family has a closed-form invariant density `kappa`, residual checks of
//! the weak invariance equation, and a joint simulator that alternates a
//! reflected Euler step for the continuous part with thinned jumps for the
//! discrete part.

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

#[allow(unused_imports)]
use num_traits::Float;
use thiserror::Error;

use crate::quadrature::{integrate, QuadError, QuadOptions, QuadResult};
use crate::rng::RngStream;
use crate::sde::{euler_reflect_step, fold, folded_gaussian_density, thinning_step, Fold, Interval, SdeError};
use crate::{Normalizer, ScalarFn, ScalarFn2};

/// Coefficient indexed by queue length.
pub type IndexFn = Arc<dyn Fn(u32) -> f64 + Send + Sync>;

/// Finite-difference step for residual checks.
pub const FD_STEP: f64 = 1e-4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HybridError {
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error("point outside the state space: {0}")]
    Domain(String),
    #[error("non-finite coefficient: {0}")]
    NonFinite(String),
    #[error(transparent)]
    Sde(#[from] SdeError),
    #[error(transparent)]
    Quad(#[from] QuadError),
    #[error("jump budget of {0} events exhausted")]
    Budget(u64),
    /// Expected jumps in one step above [`MAX_STEP_INTENSITY`]; the path has
    /// left the range where the step size makes sense.
    #[error("jump intensity {0} per step; reduce dt")]
    Stiff(f64),
}

pub const MAX_STEP_INTENSITY: f64 = 1e6;

/// Largest diffusive move of one wedge substep.
pub const WEDGE_MOVE: f64 = 0.05;
const MAX_SUBSTEPS: u32 = 1_000_000;

type Result<T> = core::result::Result<T, HybridError>;

fn positive_on(name: &str, f: &ScalarFn, pts: impl Iterator<Item = f64>) -> Result<()> {
    for p in pts {
        let v = f(p);
        if !(v > 0.0) || !v.is_finite() {
            return Err(HybridError::Invalid(format!("{name}({p}) = {v} must be positive and finite")));
        }
    }
    Ok(())
}

/// Worst residuals of the two parts of a weak invariance check.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct WieResiduals {
    /// Continuous part, scaled by `max(1, |g|)`.
    pub diffusion_max: f64,
    /// Discrete balance part, relative.
    pub recurrence_max: f64,
}

impl WieResiduals {
    fn zero() -> Self {
        Self { diffusion_max: 0.0, recurrence_max: 0.0 }
    }

    pub fn max(&self) -> f64 {
        self.diffusion_max.max(self.recurrence_max)
    }
}

fn rel_diff(a: f64, b: f64) -> f64 {
    let s = a.abs().max(b.abs());
    if s == 0.0 {
        0.0
    } else {
        (a - b).abs() / s
    }
}

fn d1(g: &impl Fn(f64) -> f64, x: f64) -> f64 {
    (g(x + FD_STEP) - g(x - FD_STEP)) / (2.0 * FD_STEP)
}

fn d2(g: &impl Fn(f64) -> f64, x: f64) -> f64 {
    (g(x + FD_STEP) - 2.0 * g(x) + g(x - FD_STEP)) / (FD_STEP * FD_STEP)
}

fn nan_max(acc: f64, v: f64) -> f64 {
    if v.is_nan() {
        f64::INFINITY
    } else {
        acc.max(v)
    }
}

// ---------------------------------------------------------------------------
// Queue with diffusing arrival rate.

/// M/M/1 queue with unit service whose arrival rate `lambda` diffuses on
/// `[eps, 1]` with generator `sigma beta(n)^2 / (2 lambda^n) d^2`, reflected
/// at both ends. Queue moves are sped up by `alpha(lambda)`.
#[derive(Clone)]
pub struct LambdaSpec {
    pub eps: f64,
    pub beta: IndexFn,
    pub sigma: ScalarFn,
    pub alpha: ScalarFn,
}

impl fmt::Debug for LambdaSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LambdaSpec").field("eps", &self.eps).finish_non_exhaustive()
    }
}

impl LambdaSpec {
    pub fn new(eps: f64, beta: IndexFn, sigma: ScalarFn, alpha: ScalarFn) -> Result<Self> {
        if !(eps > 0.0 && eps < 1.0) {
            return Err(HybridError::Invalid(format!("eps = {eps} must lie in (0, 1)")));
        }
        let interior = (1..64).map(|k| eps + (1.0 - eps) * k as f64 / 64.0);
        positive_on("sigma", &sigma, interior.clone())?;
        positive_on("alpha", &alpha, interior)?;
        for n in 0..64 {
            let b = beta(n);
            if !(b > 0.0) || !b.is_finite() {
                return Err(HybridError::Invalid(format!("beta({n}) = {b} must be positive")));
            }
        }
        Ok(Self { eps, beta, sigma, alpha })
    }

    pub fn interval(&self) -> Interval {
        Interval::new(self.eps, 1.0).expect("eps < 1")
    }

    /// Partial sum and last term of `sum beta(n)^2 / eps^n` up to `n_max`.
    /// Non-explosion of the joint process wants this series to converge.
    pub fn beta_series(&self, n_max: u32) -> (f64, f64) {
        let mut s = 0.0;
        let mut last = 0.0;
        for n in 0..=n_max {
            let b = (self.beta)(n);
            last = b * b / self.eps.powi(n as i32);
            s += last;
        }
        (s, last)
    }
}

pub fn kappa_lambda(spec: &LambdaSpec, lam: f64, n: u32) -> Result<f64> {
    if !(lam >= spec.eps && lam <= 1.0) {
        return Err(HybridError::Domain(format!("lambda = {lam} outside [{}, 1]", spec.eps)));
    }
    Ok(lam.powi(n as i32) / (spec.sigma)(lam))
}

/// `int_eps^1 lambda^n / sigma(lambda) d lambda`.
pub fn lambda_mass(spec: &LambdaSpec, n: u32, opts: QuadOptions) -> Result<QuadResult> {
    let s = spec.sigma.clone();
    Ok(integrate(move |l| l.powi(n as i32) / s(l), spec.eps, 1.0, opts)?)
}

/// Total mass `int_eps^1 1 / ((1 - lambda) sigma(lambda))`.
///
/// The integral near `lambda = 1` is split into dyadic blocks in `u = 1 - lambda`.
/// Blocks that stop shrinking (ratio near one) signal divergence; otherwise the
/// tail is bounded geometrically by the worst recent ratio.
pub fn xi_lambda(spec: &LambdaSpec, rel_tol: f64) -> Result<Normalizer> {
    let opts = QuadOptions::with_tol(0.0, 1e-12);
    let s = spec.sigma.clone();
    let u0 = (1.0 - spec.eps) / 2.0;
    let main = integrate(|l| 1.0 / ((1.0 - l) * s(l)), spec.eps, 1.0 - u0, opts)?;
    let mut total = main.value;
    let mut err = main.error;
    let mut blocks: Vec<f64> = Vec::new();
    let mut ratios: Vec<f64> = Vec::new();
    const MAX_BLOCKS: usize = 40;
    const WINDOW: usize = 4;
    for k in 0..MAX_BLOCKS {
        let hi = u0 / (1u64 << k) as f64;
        let lo = hi / 2.0;
        let bopts = QuadOptions { abs_tol: 1e-15 * total.abs(), ..opts };
        // close to lambda = 1 the integrand is noisy; keep the estimate and its error
        let b = match integrate(|u| 1.0 / (u * s(1.0 - u)), lo, hi, bopts) {
            Err(QuadError::NonConvergence { value, achieved, .. }) => QuadResult { value, error: achieved, evaluations: 0 },
            other => other?,
        };
        total += b.value;
        err += b.error;
        if let Some(&prev) = blocks.last() {
            ratios.push(if prev > 0.0 { b.value / prev } else { 0.0 });
        }
        blocks.push(b.value);
        if ratios.len() >= WINDOW {
            let r = ratios[ratios.len() - WINDOW..].iter().fold(0.0f64, |a, &v| a.max(v));
            if r < 0.9 {
                let tail = b.value * r / (1.0 - r);
                if tail <= rel_tol * total {
                    return Ok(geometric_tail(total, err, b.value, &ratios, WINDOW));
                }
            }
        }
    }
    let recent = &ratios[ratios.len() - WINDOW..];
    let r = recent.iter().fold(0.0f64, |a, &v| a.max(v));
    if recent.iter().all(|&v| v >= 0.98) {
        return Ok(Normalizer::Divergent {
            reason: String::from("dyadic blocks of 1/((1-lambda) sigma) near lambda = 1 do not shrink"),
        });
    }
    if r < 1.0 {
        return Ok(geometric_tail(total, err, blocks[blocks.len() - 1], &ratios, WINDOW));
    }
    Err(HybridError::Invalid(format!("cannot decide convergence near lambda = 1 (block ratio {r})")))
}

/// Adds the geometric tail extrapolated from the last block ratio; the bound
/// uses the worst ratio in the window.
fn geometric_tail(total: f64, err: f64, last: f64, ratios: &[f64], window: usize) -> Normalizer {
    let recent = &ratios[ratios.len() - window..];
    let r_last = recent[window - 1].max(0.0);
    let r_max = recent.iter().fold(0.0f64, |a, &v| a.max(v));
    let est = last * r_last / (1.0 - r_last);
    let worst = last * r_max / (1.0 - r_max);
    Normalizer::Finite { value: total + est, error_bound: err + (worst - est).abs() + 1e-3 * est }
}

/// Residuals of the weak invariance equation for a candidate density `kappa`
/// on interior points `grid`, for `n <= n_max`.
pub fn wie_check_lambda(
    spec: &LambdaSpec,
    kappa: impl Fn(f64, u32) -> f64,
    grid: &[f64],
    n_max: u32,
) -> WieResiduals {
    let mut out = WieResiduals::zero();
    for &l in grid {
        for n in 0..=n_max {
            let b = (spec.beta)(n);
            let g = |x: f64| (spec.sigma)(x) * b * b / (2.0 * x.powi(n as i32)) * kappa(x, n);
            let r = d2(&g, l).abs() / g(l).abs().max(1.0);
            out.diffusion_max = nan_max(out.diffusion_max, r);
            let ind = if n >= 1 { 1.0 } else { 0.0 };
            let lhs = kappa(l, n) * (l + ind);
            let down = if n >= 1 { kappa(l, n - 1) * l } else { 0.0 };
            let rhs = down + kappa(l, n + 1);
            out.recurrence_max = nan_max(out.recurrence_max, rel_diff(lhs, rhs));
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Queue with diffusing service rate.

/// M/M/1 queue with unit arrivals whose service rate `mu` is a Brownian motion
/// with drift `b` on `[1, inf)`, reflected at 1, run at speed `mu^n sigma(mu)`.
#[derive(Clone)]
pub struct MuSpec {
    pub b: f64,
    pub sigma: ScalarFn,
    pub alpha: ScalarFn,
}

impl fmt::Debug for MuSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MuSpec").field("b", &self.b).finish_non_exhaustive()
    }
}

impl MuSpec {
    pub fn new(b: f64, sigma: ScalarFn, alpha: ScalarFn) -> Result<Self> {
        if !b.is_finite() {
            return Err(HybridError::Invalid(format!("drift b = {b}")));
        }
        let pts = (0..64).map(|k| 1.0 + k as f64 * 0.25);
        positive_on("sigma", &sigma, pts.clone())?;
        positive_on("alpha", &alpha, pts)?;
        Ok(Self { b, sigma, alpha })
    }
}

pub fn kappa_mu(spec: &MuSpec, mu: f64, n: u32) -> Result<f64> {
    if !(mu >= 1.0) || !mu.is_finite() {
        return Err(HybridError::Domain(format!("mu = {mu} below 1")));
    }
    Ok((2.0 * (mu - 1.0) * spec.b).exp() / (mu.powi(n as i32) * (spec.sigma)(mu)))
}

/// Checks `(1/2) g'' - b g' = 0` for `g = mu^n sigma kappa` by central
/// differences, and the queue balance recurrence
/// `eta(n) (1 + mu 1{n>=1}) = eta(n-1) 1{n>=1} + mu eta(n+1)`.
pub fn wie_check_mu(spec: &MuSpec, kappa: impl Fn(f64, u32) -> f64, grid: &[f64], n_max: u32) -> WieResiduals {
    let mut out = WieResiduals::zero();
    for &m in grid {
        for n in 0..=n_max {
            let g = |x: f64| x.powi(n as i32) * (spec.sigma)(x) * kappa(x, n);
            let r = (0.5 * d2(&g, m) - spec.b * d1(&g, m)).abs() / g(m).abs().max(1.0);
            out.diffusion_max = nan_max(out.diffusion_max, r);
            let ind = if n >= 1 { 1.0 } else { 0.0 };
            let lhs = kappa(m, n) * (1.0 + m * ind);
            let down = if n >= 1 { kappa(m, n - 1) } else { 0.0 };
            let rhs = down + m * kappa(m, n + 1);
            out.recurrence_max = nan_max(out.recurrence_max, rel_diff(lhs, rhs));
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Queue whose two rates diffuse in the wedge 0 < lambda < mu.

/// M/M/1 queue with arrival rate `lambda` and service rate `mu`, where
/// `(lambda, mu)` is a Brownian motion with drift `(theta, theta)` in the wedge
/// `0 < lambda < mu`, normally reflected, run at speed `mu^n sigma / lambda^n`.
#[derive(Clone)]
pub struct WedgeSpec {
    pub theta: f64,
    pub sigma: ScalarFn2,
    pub alpha: ScalarFn2,
}

impl fmt::Debug for WedgeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("WedgeSpec").field("theta", &self.theta).finish_non_exhaustive()
    }
}

impl WedgeSpec {
    pub fn new(theta: f64, sigma: ScalarFn2, alpha: ScalarFn2) -> Result<Self> {
        if !theta.is_finite() {
            return Err(HybridError::Invalid(format!("theta = {theta}")));
        }
        for i in 1..8 {
            for j in (i + 1)..9 {
                let (l, m) = (i as f64 * 0.5, j as f64 * 0.5);
                for (name, f) in [("sigma", &sigma), ("alpha", &alpha)] {
                    let v = f(l, m);
                    if !(v > 0.0) || !v.is_finite() {
                        return Err(HybridError::Invalid(format!("{name}({l}, {m}) = {v} must be positive")));
                    }
                }
            }
        }
        Ok(Self { theta, sigma, alpha })
    }
}

fn wedge_domain(lam: f64, mu: f64) -> Result<()> {
    if !(lam >= 0.0 && mu >= lam) || !mu.is_finite() {
        return Err(HybridError::Domain(format!("({lam}, {mu}) outside the closed wedge 0 <= lambda <= mu")));
    }
    Ok(())
}

pub fn kappa_wedge(spec: &WedgeSpec, lam: f64, mu: f64, n: u32) -> Result<f64> {
    wedge_domain(lam, mu)?;
    let ratio = if n == 0 { 1.0 } else { (lam / mu).powi(n as i32) };
    Ok(ratio * (2.0 * spec.theta * (lam + mu)).exp() / (spec.sigma)(lam, mu))
}

/// Projection of the covering quadrant onto the wedge.
pub fn wedge_project(a: f64, b: f64) -> (f64, f64) {
    (a.min(b), a.max(b))
}

/// Mirror a point into the closed wedge using the reflections in its two
/// walls. Returns the point and the total displacement at `lambda = 0` and at
/// the diagonal.
pub fn wedge_fold(mut lam: f64, mut mu: f64) -> Result<(f64, f64, f64, f64)> {
    let (mut at_axis, mut at_diag) = (0.0, 0.0);
    for _ in 0..64 {
        if lam < 0.0 {
            at_axis += -2.0 * lam;
            lam = -lam;
        } else if lam > mu {
            at_diag += core::f64::consts::SQRT_2 * (lam - mu);
            core::mem::swap(&mut lam, &mut mu);
        } else {
            return Ok((lam, mu, at_axis, at_diag));
        }
    }
    Err(HybridError::Sde(SdeError::Overshoot { proposal: lam }))
}

/// Checks `(1/2) Lap g - theta (g_lambda + g_mu) = 0` for
/// `g = mu^n sigma kappa / lambda^n` at interior points, and the queue balance
/// with arrivals `lambda` and services `mu`.
pub fn wie_check_wedge(
    spec: &WedgeSpec,
    kappa: impl Fn(f64, f64, u32) -> f64,
    points: &[(f64, f64)],
    n_max: u32,
) -> WieResiduals {
    let mut out = WieResiduals::zero();
    for &(l, m) in points {
        for n in 0..=n_max {
            let g = |x: f64, y: f64| (y / x).powi(n as i32) * (spec.sigma)(x, y) * kappa(x, y, n);
            let gl = |x: f64| g(x, m);
            let gm = |y: f64| g(l, y);
            let r = 0.5 * (d2(&gl, l) + d2(&gm, m)) - spec.theta * (d1(&gl, l) + d1(&gm, m));
            out.diffusion_max = nan_max(out.diffusion_max, r.abs() / g(l, m).abs().max(1.0));
            let ind = if n >= 1 { 1.0 } else { 0.0 };
            let lhs = kappa(l, m, n) * (l + m * ind);
            let down = if n >= 1 { kappa(l, m, n - 1) * l } else { 0.0 };
            let rhs = down + m * kappa(l, m, n + 1);
            out.recurrence_max = nan_max(out.recurrence_max, rel_diff(lhs, rhs));
        }
    }
    out
}

/// Two independent reflected Brownian motions on `[0, inf)` with drift `theta`,
/// projected onto the wedge after every step.
pub fn simulate_wedge_covering(
    theta: f64,
    start: (f64, f64),
    steps: u64,
    dt: f64,
    rng: &mut RngStream,
    mut observe: impl FnMut(f64, f64),
) -> Result<()> {
    let iv = Interval::half_line(0.0);
    let (mut a, mut b) = start;
    for _ in 0..steps {
        a = euler_reflect_step(a, theta, 1.0, dt, rng.gaussian(), &iv)?.x;
        b = euler_reflect_step(b, theta, 1.0, dt, rng.gaussian(), &iv)?.x;
        let (l, m) = wedge_project(a, b);
        observe(l, m);
    }
    Ok(())
}

/// Brownian motion with drift `(theta, theta)` reflected directly in the wedge.
pub fn simulate_wedge_direct(
    theta: f64,
    start: (f64, f64),
    steps: u64,
    dt: f64,
    rng: &mut RngStream,
    mut observe: impl FnMut(f64, f64),
) -> Result<()> {
    let (mut l, mut m) = start;
    wedge_domain(l, m)?;
    let sd = dt.sqrt();
    for _ in 0..steps {
        let pl = l + theta * dt + sd * rng.gaussian();
        let pm = m + theta * dt + sd * rng.gaussian();
        let (a, b, _, _) = wedge_fold(pl, pm)?;
        l = a;
        m = b;
        observe(l, m);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Brownian motion with switching drift.

/// Brownian motion `X` with drift `z` in `{-1, +1}`, reflected in a bounded
/// interval, run at speed `alpha(z)`. The drift flips at rate
/// `sigma(z) exp(-2 z x) q(x)`.
#[derive(Clone)]
pub struct SwitchSpec {
    pub sigma: ScalarFn,
    pub alpha: ScalarFn,
    pub q: ScalarFn,
    pub interval: Interval,
}

impl fmt::Debug for SwitchSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SwitchSpec").field("interval", &self.interval).finish_non_exhaustive()
    }
}

impl SwitchSpec {
    pub fn new(sigma: ScalarFn, alpha: ScalarFn, q: ScalarFn, interval: Interval) -> Result<Self> {
        if !interval.width().is_finite() {
            return Err(HybridError::Invalid(String::from(
                "the x-interval must be bounded; on the whole line the invariant measure has infinite mass",
            )));
        }
        positive_on("sigma", &sigma, [-1.0, 1.0].into_iter())?;
        positive_on("alpha", &alpha, [-1.0, 1.0].into_iter())?;
        let (lo, w) = (interval.lo(), interval.width());
        positive_on("q", &q, (0..=32).map(|k| lo + w * k as f64 / 32.0))?;
        Ok(Self { sigma, alpha, q, interval })
    }

    /// Flip rate out of drift `z` at position `x`.
    pub fn flip_rate(&self, z: f64, x: f64) -> f64 {
        (self.sigma)(z) * (-2.0 * z * x).exp() * (self.q)(x)
    }
}

fn check_sign(z: f64) -> Result<()> {
    if z != 1.0 && z != -1.0 {
        return Err(HybridError::Domain(format!("drift state z = {z} must be +1 or -1")));
    }
    Ok(())
}

pub fn kappa_switch(spec: &SwitchSpec, z: f64, x: f64) -> Result<f64> {
    check_sign(z)?;
    if !spec.interval.contains(x) {
        return Err(HybridError::Domain(format!("x = {x} outside the interval")));
    }
    Ok((2.0 * z * x).exp() / (spec.sigma)(z))
}

/// Closed-form total mass over both drift states.
pub fn xi_switch(spec: &SwitchSpec) -> Normalizer {
    let (lo, hi) = (spec.interval.lo(), spec.interval.hi());
    let value = [1.0f64, -1.0]
        .iter()
        .map(|&z| ((2.0 * z * hi).exp() - (2.0 * z * lo).exp()) / (2.0 * z * (spec.sigma)(z)))
        .sum();
    Normalizer::Finite { value, error_bound: 0.0 }
}

/// Normalized stationary density of `X` alone.
pub fn switch_marginal_density(spec: &SwitchSpec, x: f64) -> f64 {
    let xi = xi_switch(spec).value().unwrap_or(f64::NAN);
    let s: f64 = [1.0f64, -1.0].iter().map(|&z| (2.0 * z * x).exp() / (spec.sigma)(z)).sum();
    s / xi
}

/// Checks `alpha(z) ((1/2) kappa'' - z kappa') = 0` in `x` and the flip
/// balance `kappa(1, x) r(1, x) = kappa(-1, x) r(-1, x)` at points `xs`.
pub fn wie_check_switch(spec: &SwitchSpec, kappa: impl Fn(f64, f64) -> f64, xs: &[f64]) -> WieResiduals {
    let mut out = WieResiduals::zero();
    for &x in xs {
        for z in [1.0, -1.0] {
            let g = |y: f64| kappa(z, y);
            let r = (spec.alpha)(z) * (0.5 * d2(&g, x) - z * d1(&g, x));
            out.diffusion_max = nan_max(out.diffusion_max, r.abs() / g(x).abs().max(1.0));
        }
        let a = kappa(1.0, x) * spec.flip_rate(1.0, x);
        let b = kappa(-1.0, x) * spec.flip_rate(-1.0, x);
        out.recurrence_max = nan_max(out.recurrence_max, rel_diff(a, b));
    }
    out
}

// ---------------------------------------------------------------------------
// Two-component Wiener model.

/// `dX = sqrt(alpha(Z)) Z dW_1` in `R^d` and
/// `dZ = b sigma(Z) dt + sqrt(sigma(Z)) dW_2`, reflected at 0.
#[derive(Clone)]
pub struct TwoCompSpec {
    pub b: f64,
    pub d: usize,
    pub alpha: ScalarFn,
    pub sigma: ScalarFn,
}

impl fmt::Debug for TwoCompSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TwoCompSpec").field("b", &self.b).field("d", &self.d).finish_non_exhaustive()
    }
}

impl TwoCompSpec {
    pub fn new(b: f64, d: usize, alpha: ScalarFn, sigma: ScalarFn) -> Result<Self> {
        if d == 0 || !b.is_finite() {
            return Err(HybridError::Invalid(format!("need d >= 1 and finite b (d = {d}, b = {b})")));
        }
        let pts = (1..64).map(|k| k as f64 * 0.125);
        positive_on("sigma", &sigma, pts.clone())?;
        positive_on("alpha", &alpha, pts)?;
        Ok(Self { b, d, alpha, sigma })
    }

    /// Points of `z_grid` where `c < z^2 alpha(z)` or `sigma(z) < C (1 + z^2)` fails.
    pub fn growth_violations(&self, c: f64, cap: f64, z_grid: &[f64]) -> Vec<String> {
        let mut out = Vec::new();
        for &z in z_grid {
            let a = z * z * (self.alpha)(z);
            if !(c < a) {
                out.push(format!("z = {z}: z^2 alpha(z) = {a} is not above {c}"));
            }
            let s = (self.sigma)(z);
            if !(s < cap * (1.0 + z * z)) {
                out.push(format!("z = {z}: sigma(z) = {s} is not below {}", cap * (1.0 + z * z)));
            }
        }
        out
    }
}

/// Density in `z`; constant in `x`.
pub fn kappa_twocomp(spec: &TwoCompSpec, z: f64) -> Result<f64> {
    if !(z >= 0.0) || !z.is_finite() {
        return Err(HybridError::Domain(format!("z = {z} below 0")));
    }
    Ok((2.0 * spec.b * z).exp() / (spec.sigma)(z))
}

/// Always divergent: the density does not decay in `x`.
pub fn xi_twocomp(spec: &TwoCompSpec) -> Normalizer {
    let mut reason = format!("Lebesgue measure in x on R^{} has infinite mass", spec.d);
    if spec.b >= 0.0 {
        reason.push_str("; exp(2 b z) / sigma(z) is not integrable in z either unless sigma grows fast");
    }
    Normalizer::Divergent { reason }
}

/// Checks `(1/2) (sigma kappa)'' - b (sigma kappa)' = 0` in `z`.
pub fn wie_check_twocomp(spec: &TwoCompSpec, kappa: impl Fn(f64) -> f64, zs: &[f64]) -> WieResiduals {
    let mut out = WieResiduals::zero();
    for &z in zs {
        let g = |y: f64| (spec.sigma)(y) * kappa(y);
        let r = 0.5 * d2(&g, z) - spec.b * d1(&g, z);
        out.diffusion_max = nan_max(out.diffusion_max, r.abs() / g(z).abs().max(1.0));
    }
    out
}

// ---------------------------------------------------------------------------
// Joint simulation.

#[derive(Debug, Clone)]
pub enum HybridModel {
    Lambda(LambdaSpec),
    Mu(MuSpec),
    Wedge(WedgeSpec),
    Switch(SwitchSpec),
    TwoComp(TwoCompSpec),
}

/// Joint state. Queue models keep their rate(s) in `env` and the queue length
/// in `queue`; the switch model keeps `z` in `env[0]` and `x` in `base[0]`; the
/// two-component model keeps `z` in `env[0]` and `x` in `base`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointState {
    pub t: f64,
    pub env: [f64; 2],
    pub queue: u32,
    pub base: Vec<f64>,
    /// Cumulative push at the lower wall (at `lambda = 0` for the wedge).
    pub local_lo: f64,
    /// Cumulative push at the upper wall (at the diagonal for the wedge).
    pub local_hi: f64,
    pub jumps: u64,
}

impl HybridModel {
    pub fn name(&self) -> &'static str {
        match self {
            HybridModel::Lambda(_) => "lambda-diffusion",
            HybridModel::Mu(_) => "mu-diffusion",
            HybridModel::Wedge(_) => "wedge",
            HybridModel::Switch(_) => "switch",
            HybridModel::TwoComp(_) => "two-component",
        }
    }

    /// A fixed interior starting point.
    pub fn initial_state(&self) -> JointState {
        let (env, base) = match self {
            HybridModel::Lambda(s) => ([(s.eps + 1.0) / 2.0, 0.0], vec![]),
            HybridModel::Mu(_) => ([1.5, 0.0], vec![]),
            HybridModel::Wedge(_) => ([0.5, 1.0], vec![]),
            HybridModel::Switch(s) => ([1.0, 0.0], vec![(s.interval.lo() + s.interval.hi()) / 2.0]),
            HybridModel::TwoComp(s) => ([1.0, 0.0], vec![0.0; s.d]),
        };
        JointState { t: 0.0, env, queue: 0, base, local_lo: 0.0, local_hi: 0.0, jumps: 0 }
    }
}

/// Discretization of the continuous coordinate between jumps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// Reflected Euler-Maruyama.
    #[default]
    Euler,
    /// Reflected Euler proposal accepted by a Metropolis test against the
    /// conditional density `kappa(., n)`. Applies to the one-dimensional rate
    /// models; the others fall back to Euler.
    Adjusted,
}

/// Metropolis-adjusted reflected Euler step with target density `target`.
fn adjusted_step(
    x: f64,
    coef: impl Fn(f64) -> (f64, f64),
    target: impl Fn(f64) -> f64,
    iv: &Interval,
    dt: f64,
    rng: &mut RngStream,
) -> Result<Fold> {
    let (b, s) = coef(x);
    let f = euler_reflect_step(x, b, s, dt, rng.gaussian(), iv)?;
    let u = rng.uniform();
    let y = f.x;
    let (b2, s2) = coef(y);
    let sq = dt.sqrt();
    let fwd = folded_gaussian_density(iv, x + b * dt, s * sq, y);
    let back = folded_gaussian_density(iv, y + b2 * dt, s2 * sq, x);
    let ratio = target(y) * back / (target(x) * fwd);
    if u < ratio {
        Ok(f)
    } else {
        Ok(Fold { x, dl: 0.0, du: 0.0 })
    }
}

fn finite(name: &str, v: f64, st: &JointState) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(HybridError::NonFinite(format!("{name} = {v} at env {:?}, queue {}", st.env, st.queue)))
    }
}

fn queue_jumps(
    st: &mut JointState,
    up: f64,
    down: f64,
    t0: f64,
    dt: f64,
    rng: &mut RngStream,
) -> Result<u64> {
    if (up + down) * dt > MAX_STEP_INTENSITY {
        return Err(HybridError::Stiff((up + down) * dt));
    }
    let q = &mut st.queue;
    Ok(thinning_step(up + down, t0, t0 + dt, rng, |_, u| {
        if u < up {
            *q += 1;
            Ok(true)
        } else if *q >= 1 {
            *q -= 1;
            Ok(true)
        } else {
            Ok(false)
        }
    })?)
}

/// One splitting step: diffuse the continuous coordinates with the current
/// discrete state's coefficients, then thin jumps with the new continuous value.
pub fn step_model(model: &HybridModel, st: &mut JointState, dt: f64, scheme: Scheme, rng: &mut RngStream) -> Result<()> {
    let t0 = st.t;
    let n = st.queue;
    let jumps = match model {
        HybridModel::Lambda(s) => {
            let lam = st.env[0];
            let b = (s.beta)(n);
            let d = finite("diffusion", (s.sigma)(lam) * b * b / lam.powi(n as i32), st)?;
            let f = match scheme {
                Scheme::Euler => euler_reflect_step(lam, 0.0, d.sqrt(), dt, rng.gaussian(), &s.interval())?,
                Scheme::Adjusted => adjusted_step(
                    lam,
                    |l| (0.0, ((s.sigma)(l) * b * b / l.powi(n as i32)).sqrt()),
                    |l| l.powi(n as i32) / (s.sigma)(l),
                    &s.interval(),
                    dt,
                    rng,
                )?,
            };
            st.env[0] = f.x;
            st.local_lo += f.dl;
            st.local_hi += f.du;
            let a = finite("alpha", (s.alpha)(f.x), st)?;
            queue_jumps(st, a * f.x, a, t0, dt, rng)?
        }
        HybridModel::Mu(s) => {
            let mu = st.env[0];
            let d = finite("diffusion", mu.powi(n as i32) * (s.sigma)(mu), st)?;
            let iv = Interval::half_line(1.0);
            let f = match scheme {
                Scheme::Euler => euler_reflect_step(mu, s.b * d, d.sqrt(), dt, rng.gaussian(), &iv)?,
                Scheme::Adjusted => adjusted_step(
                    mu,
                    |m| {
                        let d = m.powi(n as i32) * (s.sigma)(m);
                        (s.b * d, d.sqrt())
                    },
                    |m| (2.0 * (m - 1.0) * s.b).exp() / (m.powi(n as i32) * (s.sigma)(m)),
                    &iv,
                    dt,
                    rng,
                )?,
            };
            st.env[0] = f.x;
            st.local_lo += f.dl;
            let a = finite("alpha", (s.alpha)(f.x), st)?;
            queue_jumps(st, a, a * f.x, t0, dt, rng)?
        }
        HybridModel::Wedge(s) => {
            // substeps keep the diffusive move near WEDGE_MOVE where (m/l)^n is large
            let mut rem = dt;
            let mut subs = 0u32;
            while rem > 0.0 {
                let (l, m) = (st.env[0], st.env[1]);
                let d = finite("diffusion", (m / l).powi(n as i32) * (s.sigma)(l, m), st)?;
                let h = rem.min(WEDGE_MOVE * WEDGE_MOVE / d);
                subs += 1;
                if subs > MAX_SUBSTEPS || !(h > 0.0) {
                    return Err(HybridError::Stiff(d * dt));
                }
                let sd = (d * h).sqrt();
                let pl = l + s.theta * d * h + sd * rng.gaussian();
                let pm = m + s.theta * d * h + sd * rng.gaussian();
                let (l2, m2, ax, dg) = wedge_fold(pl, pm)?;
                st.env = [l2, m2];
                st.local_lo += ax;
                st.local_hi += dg;
                rem = if h == rem { 0.0 } else { rem - h };
            }
            let (l2, m2) = (st.env[0], st.env[1]);
            let a = finite("alpha", (s.alpha)(l2, m2), st)?;
            queue_jumps(st, a * l2, a * m2, t0, dt, rng)?
        }
        HybridModel::Switch(s) => {
            let z = st.env[0];
            let a = (s.alpha)(z);
            let f = euler_reflect_step(st.base[0], a * z, a.sqrt(), dt, rng.gaussian(), &s.interval)?;
            st.base[0] = f.x;
            st.local_lo += f.dl;
            st.local_hi += f.du;
            let (up, dn) = (s.flip_rate(1.0, f.x), s.flip_rate(-1.0, f.x));
            let bound = finite("flip rate", up.max(dn), st)?;
            let zc = &mut st.env[0];
            thinning_step(bound, t0, t0 + dt, rng, |_, u| {
                let r = if *zc > 0.0 { up } else { dn };
                if u < r {
                    *zc = -*zc;
                    Ok(true)
                } else {
                    Ok(false)
                }
            })?
        }
        HybridModel::TwoComp(s) => {
            let z = st.env[0];
            let a = finite("alpha", (s.alpha)(z), st)?;
            let sx = a.sqrt() * z * dt.sqrt();
            for x in st.base.iter_mut() {
                *x += sx * rng.gaussian();
            }
            let sg = finite("sigma", (s.sigma)(z), st)?;
            let f = euler_reflect_step(z, s.b * sg, sg.sqrt(), dt, rng.gaussian(), &Interval::half_line(0.0))?;
            st.env[0] = f.x;
            st.local_lo += f.dl;
            0
        }
    };
    st.jumps += jumps;
    st.t = t0 + dt;
    Ok(())
}

/// Runs `steps` reflected Euler splitting steps from `init`, calling `observe` after each.
pub fn simulate_model(
    model: &HybridModel,
    init: JointState,
    steps: u64,
    dt: f64,
    max_jumps: u64,
    rng: &mut RngStream,
    observe: impl FnMut(&JointState),
) -> Result<JointState> {
    simulate_model_with(model, init, steps, dt, max_jumps, Scheme::Euler, rng, observe)
}

#[allow(clippy::too_many_arguments)]
pub fn simulate_model_with(
    model: &HybridModel,
    init: JointState,
    steps: u64,
    dt: f64,
    max_jumps: u64,
    scheme: Scheme,
    rng: &mut RngStream,
    mut observe: impl FnMut(&JointState),
) -> Result<JointState> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(SdeError::Step(dt).into());
    }
    let mut st = init;
    match model {
        HybridModel::Lambda(s) => st.env[0] = fold(&s.interval(), st.env[0])?.x,
        HybridModel::Mu(_) => st.env[0] = fold(&Interval::half_line(1.0), st.env[0])?.x,
        HybridModel::Wedge(_) => wedge_domain(st.env[0], st.env[1])?,
        HybridModel::Switch(s) => {
            check_sign(st.env[0])?;
            if st.base.len() != 1 {
                return Err(HybridError::Invalid(String::from("switch state needs one base coordinate")));
            }
            st.base[0] = fold(&s.interval, st.base[0])?.x;
        }
        HybridModel::TwoComp(s) => {
            if st.base.len() != s.d {
                return Err(HybridError::Invalid(format!("base state needs {} coordinates", s.d)));
            }
            st.env[0] = fold(&Interval::half_line(0.0), st.env[0])?.x;
        }
    }
    for _ in 0..steps {
        step_model(model, &mut st, dt, scheme, rng)?;
        if st.jumps > max_jumps {
            return Err(HybridError::Budget(max_jumps));
        }
        observe(&st);
    }
    Ok(st)
}

/// States recorded every `record_every` steps, starting with `init`.
pub fn simulate_path(
    model: &HybridModel,
    init: JointState,
    steps: u64,
    dt: f64,
    record_every: u64,
    rng: &mut RngStream,
) -> Result<Vec<JointState>> {
    let every = record_every.max(1);
    let mut out = vec![init.clone()];
    let mut k = 0u64;
    simulate_model(model, init, steps, dt, u64::MAX, rng, |s| {
        k += 1;
        if k.is_multiple_of(every) || k == steps {
            out.push(s.clone());
        }
    })?;
    Ok(out)
}
