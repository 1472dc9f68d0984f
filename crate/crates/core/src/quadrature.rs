//! Adaptive Gauss-Kronrod quadrature in one and two dimensions.

use alloc::vec::Vec;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuadError {
    #[error("quadrature did not converge: estimate {value:e}, achieved error {achieved:e}, requested {requested:e}")]
    NonConvergence { value: f64, achieved: f64, requested: f64 },
    #[error("integrand returned a non-finite value at {at}")]
    NonFinite { at: f64 },
    #[error("integrand failed: {0}")]
    Integrand(alloc::string::String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_subdivisions: usize,
}

impl Default for QuadOptions {
    fn default() -> Self {
        Self { abs_tol: 1e-12, rel_tol: 1e-12, max_subdivisions: 2000 }
    }
}

impl QuadOptions {
    pub fn with_tol(abs_tol: f64, rel_tol: f64) -> Self {
        Self { abs_tol, rel_tol, ..Self::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadResult {
    pub value: f64,
    pub error: f64,
    pub evaluations: usize,
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
// Gauss weights for the odd-indexed Kronrod nodes 1, 3, 5, 7
const WG: [f64; 4] = [0.129_484_966_168_869_7, 0.279_705_391_489_276_7, 0.381_830_050_505_118_9, 0.417_959_183_673_469_4];

fn gk15<E>(f: &mut impl FnMut(f64) -> Result<f64, E>, a: f64, b: f64) -> Result<(f64, f64), QuadError>
where
    E: core::fmt::Display,
{
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut eval = |x: f64| -> Result<f64, QuadError> {
        let v = f(x).map_err(|e| QuadError::Integrand(alloc::format!("{e}")))?;
        if !v.is_finite() {
            return Err(QuadError::NonFinite { at: x });
        }
        Ok(v)
    };
    let fc = eval(c)?;
    let mut kron = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for k in 0..7 {
        let dx = h * XGK[k];
        let s = eval(c - dx)? + eval(c + dx)?;
        kron += WGK[k] * s;
        if k % 2 == 1 {
            gauss += WG[k / 2] * s;
        }
    }
    Ok((kron * h, ((kron - gauss) * h).abs()))
}

/// Adaptive integration of a fallible integrand over a finite interval.
pub fn try_integrate<E: core::fmt::Display>(
    mut f: impl FnMut(f64) -> Result<f64, E>,
    a: f64,
    b: f64,
    opts: QuadOptions,
) -> Result<QuadResult, QuadError> {
    if a == b {
        return Ok(QuadResult { value: 0.0, error: 0.0, evaluations: 0 });
    }
    let mut segments: Vec<(f64, f64, f64, f64)> = Vec::new();
    let (v, e) = gk15(&mut f, a, b)?;
    segments.push((a, b, v, e));
    let mut evaluations = 15;
    loop {
        let value: f64 = segments.iter().map(|s| s.2).sum();
        let error: f64 = segments.iter().map(|s| s.3).sum();
        let target = opts.abs_tol.max(opts.rel_tol * value.abs());
        if error <= target {
            return Ok(QuadResult { value, error, evaluations });
        }
        if segments.len() >= opts.max_subdivisions {
            return Err(QuadError::NonConvergence { value, achieved: error, requested: target });
        }
        let (worst, _) = segments
            .iter()
            .enumerate()
            .fold((0, -1.0), |best, (i, s)| if s.3 > best.1 { (i, s.3) } else { best });
        let (lo, hi, _, _) = segments.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            // interval exhausted at machine resolution
            return Err(QuadError::NonConvergence { value, achieved: error, requested: target });
        }
        let (v1, e1) = gk15(&mut f, lo, mid)?;
        let (v2, e2) = gk15(&mut f, mid, hi)?;
        evaluations += 30;
        segments.push((lo, mid, v1, e1));
        segments.push((mid, hi, v2, e2));
    }
}

pub fn integrate(f: impl FnMut(f64) -> f64, a: f64, b: f64, opts: QuadOptions) -> Result<QuadResult, QuadError> {
    let mut f = f;
    try_integrate(|x| Ok::<f64, core::convert::Infallible>(f(x)), a, b, opts)
}

/// Integral over `[a, inf)` via the map `x = a + t / (1 - t)`.
pub fn integrate_to_infinity(mut f: impl FnMut(f64) -> f64, a: f64, opts: QuadOptions) -> Result<QuadResult, QuadError> {
    integrate(
        |t| {
            let s = 1.0 - t;
            let x = a + t / s;
            let v = f(x);
            if v == 0.0 {
                0.0
            } else {
                v / (s * s)
            }
        },
        0.0,
        1.0,
        opts,
    )
}

/// Integral over the whole real line via `x = t / (1 - t^2)`.
pub fn integrate_real_line(mut f: impl FnMut(f64) -> f64, opts: QuadOptions) -> Result<QuadResult, QuadError> {
    integrate(
        |t| {
            let s = 1.0 - t * t;
            let x = t / s;
            let v = f(x);
            if v == 0.0 {
                0.0
            } else {
                v * (1.0 + t * t) / (s * s)
            }
        },
        -1.0,
        1.0,
        opts,
    )
}

/// Nested adaptive integration of `f(z, x)` over `[z0, z1] x [x0, x1]`.
///
/// The inner tolerance is tightened relative to the outer one so that the
/// reported error bounds the total.
pub fn integrate_rect(
    mut f: impl FnMut(f64, f64) -> f64,
    z_range: (f64, f64),
    x_range: (f64, f64),
    opts: QuadOptions,
) -> Result<QuadResult, QuadError> {
    try_integrate_rect(|z, x| Ok::<f64, core::convert::Infallible>(f(z, x)), z_range, x_range, opts)
}

pub fn try_integrate_rect<E: core::fmt::Display>(
    mut f: impl FnMut(f64, f64) -> Result<f64, E>,
    z_range: (f64, f64),
    x_range: (f64, f64),
    opts: QuadOptions,
) -> Result<QuadResult, QuadError> {
    let inner_opts = QuadOptions {
        abs_tol: opts.abs_tol * 0.1 / (z_range.1 - z_range.0).abs().max(1.0),
        rel_tol: opts.rel_tol * 0.1,
        max_subdivisions: opts.max_subdivisions,
    };
    let mut inner_err = 0.0f64;
    let mut evaluations = 0usize;
    let outer = try_integrate(
        |z| {
            let r = try_integrate(|x| f(z, x), x_range.0, x_range.1, inner_opts)?;
            inner_err = inner_err.max(r.error);
            evaluations += r.evaluations;
            Ok::<f64, QuadError>(r.value)
        },
        z_range.0,
        z_range.1,
        opts,
    )?;
    Ok(QuadResult {
        value: outer.value,
        error: outer.error + inner_err * (z_range.1 - z_range.0).abs(),
        evaluations,
    })
}
