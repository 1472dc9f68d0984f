//! Euler-Maruyama with mirror reflection, the discrete Skorohod map, and
//! thinning for state-dependent jump intensities.

use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use thiserror::Error;

use crate::rng::RngStream;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SdeError {
    #[error("invalid interval: {0}")]
    Interval(&'static str),
    #[error("non-finite proposal from x = {x}, drift = {drift}, diffusion = {diffusion}, dt = {dt}")]
    NonFinite { x: f64, drift: f64, diffusion: f64, dt: f64 },
    #[error("time step must be positive and finite, got {0}")]
    Step(f64),
    #[error("proposal {proposal} needs more than 2^20 mirror folds; reduce dt")]
    Overshoot { proposal: f64 },
    #[error("intensity {intensity} exceeds thinning bound {bound} at t = {t}")]
    BoundExceeded { intensity: f64, bound: f64, t: f64 },
}

/// Interval with reflecting finite endpoints; infinite endpoints are allowed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    lo: f64,
    hi: f64,
}

impl Interval {
    /// Every finite endpoint reflects.
    pub fn new(lo: f64, hi: f64) -> Result<Self, SdeError> {
        if lo.is_nan() || hi.is_nan() || !(lo < hi) {
            return Err(SdeError::Interval("need lo < hi"));
        }
        if lo == f64::INFINITY || hi == f64::NEG_INFINITY {
            return Err(SdeError::Interval("endpoints out of order"));
        }
        Ok(Self { lo, hi })
    }

    pub fn real_line() -> Self {
        Self { lo: f64::NEG_INFINITY, hi: f64::INFINITY }
    }

    pub fn half_line(lo: f64) -> Self {
        Self { lo, hi: f64::INFINITY }
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn reflect_lo(&self) -> bool {
        self.lo.is_finite()
    }

    pub fn reflect_hi(&self) -> bool {
        self.hi.is_finite()
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }
}

/// Position after reflection and the pushes applied at each end.
///
/// `x = p + dl - du` holds exactly up to rounding: `dl` is the total upward
/// displacement applied at `lo` (twice the overshoot for a single mirror).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fold {
    pub x: f64,
    pub dl: f64,
    pub du: f64,
}

/// Cap on mirror images per fold.
pub const MAX_FOLDS: usize = 1 << 20;

/// Mirror `p` back into the interval, repeatedly if needed.
pub fn fold(iv: &Interval, p: f64) -> Result<Fold, SdeError> {
    let mut x = p;
    let mut dl = 0.0;
    let mut du = 0.0;
    let mut n = 0;
    while x < iv.lo || x > iv.hi {
        if x < iv.lo {
            let d = 2.0 * (iv.lo - x);
            x = iv.lo + (iv.lo - x);
            dl += d;
        } else {
            let d = 2.0 * (x - iv.hi);
            x = iv.hi - (x - iv.hi);
            du += d;
        }
        n += 1;
        if n > MAX_FOLDS {
            return Err(SdeError::Overshoot { proposal: p });
        }
    }
    Ok(Fold { x, dl, du })
}

/// Density at `y` of `fold(mean + sd * N(0, 1))`, summing the mirror images.
pub fn folded_gaussian_density(iv: &Interval, mean: f64, sd: f64, y: f64) -> f64 {
    let phi = |p: f64| {
        let u = (p - mean) / sd;
        (-0.5 * u * u).exp() / (sd * core::f64::consts::TAU.sqrt())
    };
    match (iv.reflect_lo(), iv.reflect_hi()) {
        (false, false) => phi(y),
        (true, false) => phi(y) + phi(2.0 * iv.lo - y),
        (false, true) => phi(y) + phi(2.0 * iv.hi - y),
        (true, true) => {
            let w = iv.width();
            if sd > 5.0 * w {
                return 1.0 / w;
            }
            let period = 2.0 * w;
            let mut total = 0.0;
            for base in [y, 2.0 * iv.lo - y] {
                let k0 = ((mean - 12.0 * sd - base) / period).floor() as i64 - 1;
                let k1 = ((mean + 12.0 * sd - base) / period).ceil() as i64 + 1;
                for k in k0..=k1 {
                    total += phi(base + k as f64 * period);
                }
            }
            total
        }
    }
}

/// One Euler-Maruyama step `p = x + drift dt + diffusion sqrt(dt) xi`, folded
/// into the interval.
pub fn euler_reflect_step(x: f64, drift: f64, diffusion: f64, dt: f64, xi: f64, iv: &Interval) -> Result<Fold, SdeError> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(SdeError::Step(dt));
    }
    let p = x + drift * dt + diffusion * dt.sqrt() * xi;
    if !p.is_finite() {
        return Err(SdeError::NonFinite { x, drift, diffusion, dt });
    }
    fold(iv, p)
}

/// Discrete Skorohod map on `[0, inf)`: `l_k = max(0, -z0 - min_{j<=k} w_j)`
/// and `z_k = z0 + w_k + l_k`.
pub fn skorohod_map(w: &[f64], z0: f64) -> (Vec<f64>, Vec<f64>) {
    let mut z = Vec::with_capacity(w.len());
    let mut l = Vec::with_capacity(w.len());
    let mut inf = f64::INFINITY;
    for &wk in w {
        inf = inf.min(wk);
        let lk = (-z0 - inf).max(0.0);
        l.push(lk);
        z.push(z0 + wk + lk);
    }
    (z, l)
}

/// Reflected path sampled every `record_every` steps.
#[derive(Debug, Clone, PartialEq)]
pub struct ReflectedPath {
    pub dt: f64,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    /// Cumulative push at the lower end.
    pub local_lo: Vec<f64>,
    /// Cumulative push at the upper end.
    pub local_hi: Vec<f64>,
}

/// Runs `steps` reflected Euler steps and calls `observe(t, x)` after each.
/// Returns the final state and the total pushes `(x, L, U)`.
#[allow(clippy::too_many_arguments)]
pub fn run_reflected(
    drift: impl Fn(f64) -> f64,
    diffusion: impl Fn(f64) -> f64,
    iv: &Interval,
    x0: f64,
    steps: u64,
    dt: f64,
    rng: &mut RngStream,
    mut observe: impl FnMut(f64, f64),
) -> Result<(f64, f64, f64), SdeError> {
    let mut x = x0;
    let mut l = 0.0;
    let mut u = 0.0;
    for k in 0..steps {
        let f = euler_reflect_step(x, drift(x), diffusion(x), dt, rng.gaussian(), iv)?;
        x = f.x;
        l += f.dl;
        u += f.du;
        observe((k + 1) as f64 * dt, x);
    }
    Ok((x, l, u))
}

#[allow(clippy::too_many_arguments)]
pub fn simulate_reflected(
    drift: impl Fn(f64) -> f64,
    diffusion: impl Fn(f64) -> f64,
    iv: &Interval,
    x0: f64,
    t_end: f64,
    dt: f64,
    rng: &mut RngStream,
    record_every: usize,
) -> Result<ReflectedPath, SdeError> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(SdeError::Step(dt));
    }
    let start = fold(iv, x0)?.x;
    let steps = (t_end / dt).round() as u64;
    let every = record_every.max(1) as u64;
    let mut path = ReflectedPath { dt, times: Vec::new(), values: Vec::new(), local_lo: Vec::new(), local_hi: Vec::new() };
    path.times.push(0.0);
    path.values.push(start);
    path.local_lo.push(0.0);
    path.local_hi.push(0.0);
    let mut x = start;
    let mut l = 0.0;
    let mut u = 0.0;
    for k in 1..=steps {
        let f = euler_reflect_step(x, drift(x), diffusion(x), dt, rng.gaussian(), iv)?;
        x = f.x;
        l += f.dl;
        u += f.du;
        if k % every == 0 || k == steps {
            path.times.push(k as f64 * dt);
            path.values.push(x);
            path.local_lo.push(l);
            path.local_hi.push(u);
        }
    }
    Ok(path)
}

/// Thinning over `[t0, t1)` with marks: candidates arrive at rate `bound`
/// and `on_candidate(t, u)` receives `u` uniform on `[0, bound)`. It applies
/// the jump whose rate interval contains `u`, if any, and reports whether a
/// jump happened. Returns the number of accepted jumps.
pub fn thinning_step(
    bound: f64,
    t0: f64,
    t1: f64,
    rng: &mut RngStream,
    mut on_candidate: impl FnMut(f64, f64) -> Result<bool, SdeError>,
) -> Result<u64, SdeError> {
    let mut accepted = 0;
    if !(bound > 0.0) {
        return Ok(0);
    }
    let mut t = t0;
    loop {
        t += rng.exp1() / bound;
        if t >= t1 {
            return Ok(accepted);
        }
        let u = rng.uniform() * bound;
        if on_candidate(t, u)? {
            accepted += 1;
        }
    }
}

/// Jump times on `[t0, t1)` of a point process with intensity `intensity(t)`,
/// sampled by thinning a rate-`bound` Poisson process.
pub fn thinning_jumps(
    bound: f64,
    mut intensity: impl FnMut(f64) -> f64,
    t0: f64,
    t1: f64,
    rng: &mut RngStream,
) -> Result<Vec<f64>, SdeError> {
    let mut out = Vec::new();
    thinning_step(bound, t0, t1, rng, |t, u| {
        let lam = intensity(t);
        if lam > bound * (1.0 + 1e-12) {
            return Err(SdeError::BoundExceeded { intensity: lam, bound, t });
        }
        if u < lam {
            out.push(t);
            return Ok(true);
        }
        Ok(false)
    })?;
    Ok(out)
}
