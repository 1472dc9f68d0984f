//! Ornstein-Uhlenbeck base process whose volatility `z` is itself a diffusion.
//!
//! The combined generator is
//! `R phi = alpha(z) [a(x) phi_x + z^2/2 phi_xx] + sigma(z)/m(z, x) [c(z) phi_z + C(z)/2 phi_zz]`
//! and the candidate invariant density is `m(z, x) w(z) / sigma(z)`.

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::f64::consts::PI;
use core::fmt;

#[allow(unused_imports)]
use num_traits::Float;
use thiserror::Error;

use crate::ctmc::{build_generator, stationary_solve, CtmcError, RateKernel, StateSpace};
use crate::quadrature::{integrate, integrate_real_line, integrate_rect, integrate_to_infinity, QuadError, QuadOptions};
use crate::rng::RngStream;
use crate::sde::{euler_reflect_step, Interval, SdeError};
use crate::special::{ln_bessel_i, ln_gamma, SpecialError};
use crate::{constant_fn, ScalarFn, ScalarFn2};

/// Central difference step for adjoint residuals.
pub const RESIDUAL_STEP: f64 = 1e-4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OuError {
    #[error("invalid parameters: {0}")]
    Params(String),
    #[error("base density m({z}, {x}) = {m:e} underflows; 1/m overflows")]
    DensityUnderflow { z: f64, x: f64, m: f64 },
    #[error("time step {dt} too large: per-step move {moved} exceeds 10% of the {axis} width {width}")]
    StepTooLarge { dt: f64, axis: &'static str, moved: f64, width: f64 },
    #[error(transparent)]
    Quad(#[from] QuadError),
    #[error(transparent)]
    Special(#[from] SpecialError),
    #[error(transparent)]
    Sde(#[from] SdeError),
    #[error(transparent)]
    Ctmc(#[from] CtmcError),
}

type Result<T> = core::result::Result<T, OuError>;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "model")]
pub enum OuModel {
    /// Reflected Brownian motion with drift `b` as volatility.
    B { b: f64 },
    /// Ornstein-Uhlenbeck volatility.
    C,
    /// Cox-Ingersoll-Ross volatility `a (b - z) dt + sqrt(z) dW`.
    D { a: f64, b: f64 },
}

impl OuModel {
    pub fn letter(&self) -> &'static str {
        match self {
            OuModel::B { .. } => "B",
            OuModel::C => "C",
            OuModel::D { .. } => "D",
        }
    }

    /// Rectangle `(z-interval, x-interval)` used when none is given.
    pub fn default_rectangle(&self) -> (Interval, Interval) {
        let x = Interval::new(-1.0, 1.0).expect("static");
        let z = match self {
            OuModel::C => Interval::new(1.0, 2.0),
            _ => Interval::new(0.5, 2.0),
        }
        .expect("static");
        (z, x)
    }
}

/// Coefficients of a combined diffusion on a rectangle.
#[derive(Clone)]
pub struct CombinedDiffusionSpec {
    pub model: Option<OuModel>,
    pub a: ScalarFn,
    pub c: ScalarFn,
    pub cap_c: ScalarFn,
    pub m: ScalarFn2,
    pub w: ScalarFn,
    pub alpha: ScalarFn,
    pub sigma: ScalarFn,
    pub z_range: Interval,
    pub x_range: Interval,
}

impl fmt::Debug for CombinedDiffusionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CombinedDiffusionSpec")
            .field("model", &self.model)
            .field("z_range", &self.z_range)
            .field("x_range", &self.x_range)
            .finish_non_exhaustive()
    }
}

impl CombinedDiffusionSpec {
    pub fn with_rectangle(mut self, z_range: Interval, x_range: Interval) -> Self {
        self.z_range = z_range;
        self.x_range = x_range;
        self
    }

    pub fn with_alpha(mut self, alpha: ScalarFn) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn with_sigma(mut self, sigma: ScalarFn) -> Self {
        self.sigma = sigma;
        self
    }

    fn bounded(&self) -> bool {
        self.z_range.width().is_finite() && self.x_range.width().is_finite()
    }
}

pub fn make_model(which: OuModel) -> Result<CombinedDiffusionSpec> {
    let (c, cap_c, w): (ScalarFn, ScalarFn, ScalarFn) = match which {
        OuModel::B { b } => {
            if !b.is_finite() {
                return Err(OuError::Params(format!("b = {b}")));
            }
            (constant_fn(b), constant_fn(1.0), Arc::new(move |z: f64| (2.0 * b * z).exp()))
        }
        OuModel::C => (Arc::new(|z: f64| -z), constant_fn(1.0), Arc::new(|z: f64| (-z * z).exp())),
        OuModel::D { a, b } => {
            if !(a >= 0.0 && b > 0.0) {
                return Err(OuError::Params(format!("need a >= 0 and b > 0, got a = {a}, b = {b}")));
            }
            let q = 2.0 * a * b - 1.0;
            (
                Arc::new(move |z: f64| a * (b - z)),
                Arc::new(|z: f64| z.max(0.0)),
                Arc::new(move |z: f64| z.powf(q) * (-2.0 * a * z).exp()),
            )
        }
    };
    let (z_range, x_range) = which.default_rectangle();
    Ok(CombinedDiffusionSpec {
        model: Some(which),
        a: Arc::new(|x: f64| -x),
        c,
        cap_c,
        m: Arc::new(|z: f64, x: f64| (-(x * x) / (z * z)).exp()),
        w,
        alpha: constant_fn(1.0),
        sigma: constant_fn(1.0),
        z_range,
        x_range,
    })
}

/// Test function with analytic partial derivatives.
pub trait TestFunction {
    fn id(&self) -> String;
    fn value(&self, z: f64, x: f64) -> f64;
    fn dz(&self, z: f64, x: f64) -> f64;
    fn dzz(&self, z: f64, x: f64) -> f64;
    fn dx(&self, z: f64, x: f64) -> f64;
    fn dxx(&self, z: f64, x: f64) -> f64;
}

/// `cos(j pi (z - z1) / |J|) cos(k pi (x - x1) / |I|)`; its normal derivative
/// vanishes on every edge of the rectangle.
#[derive(Debug, Clone, Copy)]
pub struct NeumannCosine {
    pub j: u32,
    pub k: u32,
    z0: f64,
    wz: f64,
    x0: f64,
    wx: f64,
}

impl NeumannCosine {
    pub fn new(j: u32, k: u32, z_range: &Interval, x_range: &Interval) -> Self {
        Self { j, k, z0: z_range.lo(), wz: z_range.width(), x0: x_range.lo(), wx: x_range.width() }
    }

    fn parts(&self, z: f64, x: f64) -> (f64, f64, f64, f64, f64, f64) {
        let fz = self.j as f64 * PI / self.wz;
        let fx = self.k as f64 * PI / self.wx;
        let (sz, cz) = (fz * (z - self.z0)).sin_cos();
        let (sx, cx) = (fx * (x - self.x0)).sin_cos();
        (fz, cz, sz, fx, cx, sx)
    }
}

impl TestFunction for NeumannCosine {
    fn id(&self) -> String {
        format!("cos[{},{}]", self.j, self.k)
    }
    fn value(&self, z: f64, x: f64) -> f64 {
        let (_, cz, _, _, cx, _) = self.parts(z, x);
        cz * cx
    }
    fn dz(&self, z: f64, x: f64) -> f64 {
        let (fz, _, sz, _, cx, _) = self.parts(z, x);
        -fz * sz * cx
    }
    fn dzz(&self, z: f64, x: f64) -> f64 {
        let (fz, cz, _, _, cx, _) = self.parts(z, x);
        -fz * fz * cz * cx
    }
    fn dx(&self, z: f64, x: f64) -> f64 {
        let (_, cz, _, fx, _, sx) = self.parts(z, x);
        -fx * cz * sx
    }
    fn dxx(&self, z: f64, x: f64) -> f64 {
        let (_, cz, _, fx, cx, _) = self.parts(z, x);
        -fx * fx * cz * cx
    }
}

/// `z^pz x^px`.
#[derive(Debug, Clone, Copy)]
pub struct Monomial {
    pub pz: u32,
    pub px: u32,
}

fn mono(v: f64, p: u32, order: u32) -> f64 {
    if order > p {
        return 0.0;
    }
    let mut coef = 1.0;
    for i in 0..order {
        coef *= (p - i) as f64;
    }
    coef * v.powi((p - order) as i32)
}

impl TestFunction for Monomial {
    fn id(&self) -> String {
        let pow = |v: &str, p: u32| match p {
            0 => String::new(),
            1 => String::from(v),
            p => format!("{v}^{p}"),
        };
        match (self.pz, self.px) {
            (0, 0) => String::from("1"),
            (pz, 0) => pow("z", pz),
            (0, px) => pow("x", px),
            (pz, px) => format!("{} {}", pow("z", pz), pow("x", px)),
        }
    }
    fn value(&self, z: f64, x: f64) -> f64 {
        mono(z, self.pz, 0) * mono(x, self.px, 0)
    }
    fn dz(&self, z: f64, x: f64) -> f64 {
        mono(z, self.pz, 1) * mono(x, self.px, 0)
    }
    fn dzz(&self, z: f64, x: f64) -> f64 {
        mono(z, self.pz, 2) * mono(x, self.px, 0)
    }
    fn dx(&self, z: f64, x: f64) -> f64 {
        mono(z, self.pz, 0) * mono(x, self.px, 1)
    }
    fn dxx(&self, z: f64, x: f64) -> f64 {
        mono(z, self.pz, 0) * mono(x, self.px, 2)
    }
}

/// Closure test function differentiated by central differences with step
/// `1e-5` scaled by the coordinate magnitude.
pub struct FdFunction<F> {
    pub name: String,
    pub f: F,
}

fn fd_step(v: f64) -> f64 {
    1e-5 * v.abs().max(1.0)
}

impl<F: Fn(f64, f64) -> f64> TestFunction for FdFunction<F> {
    fn id(&self) -> String {
        self.name.clone()
    }
    fn value(&self, z: f64, x: f64) -> f64 {
        (self.f)(z, x)
    }
    fn dz(&self, z: f64, x: f64) -> f64 {
        let h = fd_step(z);
        ((self.f)(z + h, x) - (self.f)(z - h, x)) / (2.0 * h)
    }
    fn dzz(&self, z: f64, x: f64) -> f64 {
        let h = fd_step(z);
        ((self.f)(z + h, x) - 2.0 * (self.f)(z, x) + (self.f)(z - h, x)) / (h * h)
    }
    fn dx(&self, z: f64, x: f64) -> f64 {
        let h = fd_step(x);
        ((self.f)(z, x + h) - (self.f)(z, x - h)) / (2.0 * h)
    }
    fn dxx(&self, z: f64, x: f64) -> f64 {
        let h = fd_step(x);
        ((self.f)(z, x + h) - 2.0 * (self.f)(z, x) + (self.f)(z, x - h)) / (h * h)
    }
}

/// The six Neumann cosines used for the quadrature check.
pub fn neumann_family(spec: &CombinedDiffusionSpec) -> Vec<NeumannCosine> {
    [(0, 1), (1, 0), (1, 1), (0, 2), (2, 0), (2, 1)]
        .iter()
        .map(|&(j, k)| NeumannCosine::new(j, k, &spec.z_range, &spec.x_range))
        .collect()
}

fn base_density(spec: &CombinedDiffusionSpec, z: f64, x: f64) -> Result<f64> {
    let m = (spec.m)(z, x);
    if !(m >= 1e-300) {
        return Err(OuError::DensityUnderflow { z, x, m });
    }
    Ok(m)
}

#[allow(non_snake_case)]
pub fn apply_R(spec: &CombinedDiffusionSpec, phi: &dyn TestFunction, z: f64, x: f64) -> Result<f64> {
    let m = base_density(spec, z, x)?;
    let base = (spec.a)(x) * phi.dx(z, x) + 0.5 * z * z * phi.dxx(z, x);
    let env = (spec.c)(z) * phi.dz(z, x) + 0.5 * (spec.cap_c)(z) * phi.dzz(z, x);
    Ok((spec.alpha)(z) * base + (spec.sigma)(z) / m * env)
}

fn c1(g: impl Fn(f64) -> f64, v: f64) -> f64 {
    (g(v + RESIDUAL_STEP) - g(v - RESIDUAL_STEP)) / (2.0 * RESIDUAL_STEP)
}

fn c2(g: impl Fn(f64) -> f64, v: f64) -> f64 {
    (g(v + RESIDUAL_STEP) - 2.0 * g(v) + g(v - RESIDUAL_STEP)) / (RESIDUAL_STEP * RESIDUAL_STEP)
}

/// `-(a m)_x + (z^2/2) m_xx` for a candidate base density `m`.
pub fn adjoint_residual_base_with(spec: &CombinedDiffusionSpec, m: impl Fn(f64, f64) -> f64, z: f64, x: f64) -> f64 {
    -c1(|y| (spec.a)(y) * m(z, y), x) + 0.5 * z * z * c2(|y| m(z, y), x)
}

pub fn adjoint_residual_base(spec: &CombinedDiffusionSpec, z: f64, x: f64) -> f64 {
    adjoint_residual_base_with(spec, |z, x| (spec.m)(z, x), z, x)
}

/// `-(c w)_z + (C w)_zz / 2` for a candidate environment density `w`.
pub fn adjoint_residual_env_with(spec: &CombinedDiffusionSpec, w: impl Fn(f64) -> f64, z: f64) -> f64 {
    -c1(|y| (spec.c)(y) * w(y), z) + 0.5 * c2(|y| (spec.cap_c)(y) * w(y), z)
}

pub fn adjoint_residual_env(spec: &CombinedDiffusionSpec, z: f64) -> f64 {
    adjoint_residual_env_with(spec, |z| (spec.w)(z), z)
}

pub fn kappa_density(spec: &CombinedDiffusionSpec, z: f64, x: f64) -> f64 {
    (spec.m)(z, x) * (spec.w)(z) / (spec.sigma)(z)
}

/// One quadrature evaluation of `int R phi d kappa`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct WieRecord {
    pub model: String,
    pub phi_id: String,
    pub integral: f64,
    pub tolerance: f64,
}

fn model_name(spec: &CombinedDiffusionSpec) -> String {
    spec.model.map(|m| String::from(m.letter())).unwrap_or_else(|| String::from("custom"))
}

/// `int R phi kappa dz dx` over the rectangle for each test function.
pub fn wie_quadrature(spec: &CombinedDiffusionSpec, family: &[&dyn TestFunction], opts: QuadOptions) -> Result<Vec<WieRecord>> {
    if !spec.bounded() {
        return Err(OuError::Params(String::from("quadrature needs a bounded rectangle")));
    }
    let z_r = (spec.z_range.lo(), spec.z_range.hi());
    let x_r = (spec.x_range.lo(), spec.x_range.hi());
    let mut out = Vec::with_capacity(family.len());
    for phi in family {
        let mut bad = None;
        let r = integrate_rect(
            |z, x| match apply_R(spec, *phi, z, x) {
                Ok(v) => v * kappa_density(spec, z, x),
                Err(e) => {
                    bad = Some(e);
                    0.0
                }
            },
            z_r,
            x_r,
            opts,
        )?;
        if let Some(e) = bad {
            return Err(e);
        }
        out.push(WieRecord { model: model_name(spec), phi_id: phi.id(), integral: r.value, tolerance: r.error });
    }
    Ok(out)
}

pub fn max_abs_integral(records: &[WieRecord]) -> f64 {
    records.iter().fold(0.0f64, |a, r| a.max(r.integral.abs()))
}

/// `int_z int_R (-2 x^2 + z^2) e^{-x^2/z^2} dx w(z) dz` over the z-range: the
/// `phi = x^2` action averages to zero under each Gaussian section.
pub fn conditional_mean_identity(spec: &CombinedDiffusionSpec, opts: QuadOptions) -> Result<f64> {
    let mut err = None;
    let r = integrate(
        |z| match integrate_real_line(|x| (-2.0 * x * x + z * z) * (spec.m)(z, x), opts) {
            Ok(v) => v.value * (spec.w)(z) / (spec.sigma)(z),
            Err(e) => {
                err = Some(e);
                0.0
            }
        },
        spec.z_range.lo(),
        spec.z_range.hi(),
        opts,
    )?;
    if let Some(e) = err {
        return Err(e.into());
    }
    Ok(r.value)
}

/// Normalized Ornstein-Uhlenbeck transition density: mean `x e^{-t}`,
/// variance `z^2 (1 - e^{-2t}) / 2`.
pub fn density_ou(t: f64, x: f64, x2: f64, z: f64) -> f64 {
    let s = 1.0 - (-2.0 * t).exp();
    let d = x2 - x * (-t).exp();
    (-(d * d) / (z * z * s)).exp() / (PI.sqrt() * z.abs() * s.sqrt())
}

/// The same density without the `sqrt(1 - e^{-2t})` factor.
pub fn density_ou_unnormalized(t: f64, x: f64, x2: f64, z: f64) -> f64 {
    density_ou(t, x, x2, z) * (1.0 - (-2.0 * t).exp()).sqrt()
}

/// Cox-Ingersoll-Ross transition density for `a (b - z) dt + sqrt(z) dW`.
pub fn density_cir(t: f64, z: f64, z2: f64, a: f64, b: f64) -> Result<f64> {
    if !(t > 0.0 && z > 0.0 && z2 > 0.0 && a > 0.0 && b > 0.0) {
        return Err(OuError::Params(format!("need positive t, z, z', a, b (got {t}, {z}, {z2}, {a}, {b})")));
    }
    let e = (-a * t).exp();
    let c = 2.0 * a / (1.0 - e);
    let q = 2.0 * a * b - 1.0;
    let u = c * z * e;
    let v = c * z2;
    let ln_i = ln_bessel_i(q, 2.0 * (u * v).sqrt(), 1e-12)?;
    Ok((c.ln() - u - v + 0.5 * q * (v / u).ln() + ln_i).exp())
}

/// Gamma density with shape `2ab` and rate `2a`, the normalized `w` of model D.
pub fn gamma_density(z: f64, a: f64, b: f64) -> f64 {
    let k = 2.0 * a * b;
    let r = 2.0 * a;
    (k * r.ln() + (k - 1.0) * z.ln() - r * z - ln_gamma(k)).exp()
}

/// Transition density of Brownian motion with drift `b` reflected at 0, in
/// the spectral form with a leading term `2b e^{2bz} / (e^{2bz} - 1)`.
pub fn density_reflected_bm(t: f64, z: f64, z2: f64, b: f64) -> Result<f64> {
    let lead = 2.0 * b * (2.0 * b * z).exp() / ((2.0 * b * z).exp() - 1.0);
    let spectral = integrate_to_infinity(
        |s| {
            let f1 = s * (s * z).cos() + b * (s * z).sin();
            let f2 = s * (s * z2).cos() + b * (s * z2).sin();
            (-s * s * t / 2.0).exp() / (s * s + b * b) * f1 * f2
        },
        0.0,
        QuadOptions::with_tol(1e-12, 1e-10),
    )?;
    Ok(lead + 2.0 / PI * (b * (z2 - z) - b * b * t / 2.0).exp() * spectral.value)
}

/// Outcome of the normalization gate on the reflected Brownian density.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GateOutcome {
    pub enabled: bool,
    /// Mass over `[0, L]` for the two truncation lengths tried.
    pub masses: [f64; 2],
    pub lengths: [f64; 2],
    pub detail: String,
}

/// Integrates the density over `[0, L]` for two lengths; the oracle is
/// enabled only if both masses are within `tol` of one.
pub fn reflected_bm_gate(t: f64, z: f64, b: f64, tol: f64) -> GateOutcome {
    let lengths = [10.0, 20.0];
    let mut masses = [f64::NAN; 2];
    let mut detail = String::new();
    for (i, &l) in lengths.iter().enumerate() {
        let mut err = None;
        let r = integrate(
            |y| match density_reflected_bm(t, z, y, b) {
                Ok(v) => v,
                Err(e) => {
                    err = Some(e);
                    f64::NAN
                }
            },
            0.0,
            l,
            QuadOptions { max_subdivisions: 400, ..QuadOptions::with_tol(1e-9, 1e-9) },
        );
        match (r, err) {
            (Ok(v), None) => masses[i] = v.value,
            (_, Some(e)) => detail = format!("density failed: {e}"),
            (Err(e), None) => detail = format!("quadrature failed: {e}"),
        }
    }
    let enabled = masses.iter().all(|m| (m - 1.0).abs() <= tol);
    if detail.is_empty() {
        detail = if enabled {
            String::from("normalized")
        } else {
            format!("mass over [0, {}] = {}, over [0, {}] = {}; oracle disabled", lengths[0], masses[0], lengths[1], masses[1])
        };
    }
    GateOutcome { enabled, masses, lengths, detail }
}

/// Joint state of the rectangle system with its four boundary pushes.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RectState {
    pub t: f64,
    pub z: f64,
    pub x: f64,
    pub lx: f64,
    pub ux: f64,
    pub lz: f64,
    pub uz: f64,
}

fn coefficients(spec: &CombinedDiffusionSpec, z: f64, x: f64) -> Result<(f64, f64, f64, f64)> {
    let m = base_density(spec, z, x)?;
    let al = (spec.alpha)(z);
    let sg = (spec.sigma)(z);
    let bx = al * (spec.a)(x);
    let sx = al.sqrt() * z.abs();
    let bz = sg * (spec.c)(z) / m;
    let sz = (sg * (spec.cap_c)(z).max(0.0) / m).sqrt();
    Ok((bx, sx, bz, sz))
}

/// Checks on a 33 x 33 grid that one Euler step moves less than 10% of each width.
pub fn check_step(spec: &CombinedDiffusionSpec, dt: f64) -> Result<()> {
    let (wz, wx) = (spec.z_range.width(), spec.x_range.width());
    let mut worst = (0.0f64, 0.0f64);
    for i in 0..=32 {
        for j in 0..=32 {
            let z = spec.z_range.lo() + wz * i as f64 / 32.0;
            let x = spec.x_range.lo() + wx * j as f64 / 32.0;
            let (bx, sx, bz, sz) = coefficients(spec, z, x)?;
            worst.0 = worst.0.max(bz.abs() * dt + sz * dt.sqrt());
            worst.1 = worst.1.max(bx.abs() * dt + sx * dt.sqrt());
        }
    }
    if worst.0 > 0.1 * wz {
        return Err(OuError::StepTooLarge { dt, axis: "z", moved: worst.0, width: wz });
    }
    if worst.1 > 0.1 * wx {
        return Err(OuError::StepTooLarge { dt, axis: "x", moved: worst.1, width: wx });
    }
    Ok(())
}

/// Reflected Euler scheme for the pair on the rectangle, drifts and
/// diffusions read off the generator. Calls `observe` after each step.
pub fn simulate_rect_system(
    spec: &CombinedDiffusionSpec,
    start: (f64, f64),
    steps: u64,
    dt: f64,
    rng: &mut RngStream,
    mut observe: impl FnMut(&RectState),
) -> Result<RectState> {
    if !spec.bounded() {
        return Err(OuError::Params(String::from("simulation needs a bounded rectangle")));
    }
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(SdeError::Step(dt).into());
    }
    check_step(spec, dt)?;
    let (z0, x0) = start;
    if !spec.z_range.contains(z0) || !spec.x_range.contains(x0) {
        return Err(OuError::Params(format!("start ({z0}, {x0}) outside the rectangle")));
    }
    let mut st = RectState { t: 0.0, z: z0, x: x0, lx: 0.0, ux: 0.0, lz: 0.0, uz: 0.0 };
    for k in 1..=steps {
        let (bx, sx, bz, sz) = coefficients(spec, st.z, st.x)?;
        let fx = euler_reflect_step(st.x, bx, sx, dt, rng.gaussian(), &spec.x_range)?;
        let fz = euler_reflect_step(st.z, bz, sz, dt, rng.gaussian(), &spec.z_range)?;
        st.x = fx.x;
        st.lx += fx.dl;
        st.ux += fx.du;
        st.z = fz.x;
        st.lz += fz.dl;
        st.uz += fz.du;
        st.t = k as f64 * dt;
        observe(&st);
    }
    Ok(st)
}

/// Euler scheme for `a (b - z) dt + sqrt(z) dW` on the half-line with full
/// truncation: the drift and diffusion see `max(z, 0)`, and `max(z, 0)` is observed.
pub fn simulate_cir_full_truncation(
    a: f64,
    b: f64,
    z0: f64,
    steps: u64,
    dt: f64,
    rng: &mut RngStream,
    mut observe: impl FnMut(f64),
) -> Result<f64> {
    if !(a >= 0.0 && b > 0.0 && z0 >= 0.0) {
        return Err(OuError::Params(format!("need a >= 0, b > 0, z0 >= 0 (got {a}, {b}, {z0})")));
    }
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(SdeError::Step(dt).into());
    }
    let sq = dt.sqrt();
    let mut z = z0;
    for _ in 0..steps {
        let zp = z.max(0.0);
        z += a * (b - zp) * dt + zp.sqrt() * sq * rng.gaussian();
        observe(z.max(0.0));
    }
    Ok(z.max(0.0))
}

/// Upwind finite-difference generator of `R` on the cell centres of an
/// `nz x nx` grid, with moves off the grid removed (reflection).
#[derive(Clone)]
pub struct FdGrid {
    spec: CombinedDiffusionSpec,
    pub nz: usize,
    pub nx: usize,
}

impl FdGrid {
    pub fn new(spec: &CombinedDiffusionSpec, nz: usize, nx: usize) -> Result<Self> {
        if !spec.bounded() || nz < 2 || nx < 2 {
            return Err(OuError::Params(String::from("need a bounded rectangle and at least 2 x 2 cells")));
        }
        Ok(Self { spec: spec.clone(), nz, nx })
    }

    pub fn hz(&self) -> f64 {
        self.spec.z_range.width() / self.nz as f64
    }

    pub fn hx(&self) -> f64 {
        self.spec.x_range.width() / self.nx as f64
    }

    pub fn centre(&self, i: usize, j: usize) -> (f64, f64) {
        (self.spec.z_range.lo() + (i as f64 + 0.5) * self.hz(), self.spec.x_range.lo() + (j as f64 + 0.5) * self.hx())
    }

    /// `kappa` at cell centres, normalized to sum one, in row-major `(i, j)` order.
    pub fn kappa_on_grid(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.nz * self.nx);
        for i in 0..self.nz {
            for j in 0..self.nx {
                let (z, x) = self.centre(i, j);
                v.push(kappa_density(&self.spec, z, x));
            }
        }
        let s: f64 = v.iter().sum();
        v.iter().map(|p| p / s).collect()
    }
}

fn upwind(drift: f64, diff: f64, h: f64) -> (f64, f64) {
    let d = 0.5 * diff / (h * h);
    (d + drift.max(0.0) / h, d + (-drift).max(0.0) / h)
}

impl RateKernel for FdGrid {
    type State = (usize, usize);
    fn transitions(&self, s: &(usize, usize), out: &mut Vec<((usize, usize), f64)>) -> core::result::Result<(), CtmcError> {
        let (i, j) = *s;
        let (z, x) = self.centre(i, j);
        let (bx, sx, bz, sz) = coefficients(&self.spec, z, x).map_err(|e| CtmcError::Kernel(format!("{e}")))?;
        let (zu, zd) = upwind(bz, sz * sz, self.hz());
        let (xu, xd) = upwind(bx, sx * sx, self.hx());
        if i + 1 < self.nz {
            out.push(((i + 1, j), zu));
        }
        if i > 0 {
            out.push(((i - 1, j), zd));
        }
        if j + 1 < self.nx {
            out.push(((i, j + 1), xu));
        }
        if j > 0 {
            out.push(((i, j - 1), xd));
        }
        Ok(())
    }
}

/// Stationary law of the finite-difference chain against normalized `kappa`
/// at the cell centres. Returns `(l1 distance, solve residual)`.
pub fn fd_cross_check(spec: &CombinedDiffusionSpec, nz: usize, nx: usize) -> Result<(f64, f64)> {
    let grid = FdGrid::new(spec, nz, nx)?;
    let states: Vec<(usize, usize)> = (0..nz).flat_map(|i| (0..nx).map(move |j| (i, j))).collect();
    let space = StateSpace::from_states(states)?;
    let built = build_generator(&space, &grid)?;
    let st = stationary_solve(&built.generator)?;
    let target = grid.kappa_on_grid();
    Ok((st.pi.l1_distance(&target), st.residual))
}

/// `n` evenly spaced interior points of an interval.
pub fn interior_grid(iv: &Interval, n: usize) -> Vec<f64> {
    let (lo, w) = (iv.lo(), iv.width());
    (1..=n).map(|k| lo + w * k as f64 / (n + 1) as f64).collect()
}

/// Worst pointwise base and environment adjoint residuals on an interior grid.
pub fn adjoint_residual_max(spec: &CombinedDiffusionSpec, n: usize) -> (f64, f64) {
    let zs = interior_grid(&spec.z_range, n);
    let xs = interior_grid(&spec.x_range, n);
    let mut base = 0.0f64;
    let mut env = 0.0f64;
    for &z in &zs {
        env = env.max(adjoint_residual_env(spec, z).abs());
        for &x in &xs {
            base = base.max(adjoint_residual_base(spec, z, x).abs());
        }
    }
    (base, env)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn model_densities() {
        let b0 = make_model(OuModel::B { b: 0.0 }).unwrap();
        assert_eq!((b0.w)(3.7), 1.0);
        assert_eq!(kappa_density(&b0, 1.3, 0.0), 1.0);
        let d = make_model(OuModel::D { a: 1.0, b: 1.0 }).unwrap();
        assert!(close((d.w)(0.7), 0.7 * (-1.4f64).exp(), 1e-16));
        assert!(close(kappa_density(&d, 1.0, 0.0), (-2.0f64).exp(), 1e-16));
        let c = make_model(OuModel::C).unwrap();
        assert!(close((c.w)(1.0), 0.36787944117144233, 1e-16));
        assert!(close(kappa_density(&c, 1.0, 0.0), (-1.0f64).exp(), 1e-16));
        assert!(make_model(OuModel::D { a: 1.0, b: 0.0 }).is_err());
        assert!(make_model(OuModel::D { a: -1.0, b: 1.0 }).is_err());
    }

    #[test]
    fn generator_examples() {
        let c = make_model(OuModel::C).unwrap();
        let one = Monomial { pz: 0, px: 0 };
        assert_eq!(apply_R(&c, &one, 1.4, 0.3).unwrap(), 0.0);
        let x2 = Monomial { pz: 0, px: 2 };
        assert!(close(apply_R(&c, &x2, 1.0, 0.5).unwrap(), 0.5, 1e-15));
        let b = make_model(OuModel::B { b: 0.7 }).unwrap();
        let z = Monomial { pz: 1, px: 0 };
        assert!(close(apply_R(&b, &z, 2.0, 0.0).unwrap(), 0.7, 1e-15));
        assert!(matches!(apply_R(&c, &x2, 0.01, 1.0), Err(OuError::DensityUnderflow { .. })));
    }

    #[test]
    fn finite_difference_function_matches_analytic() {
        let c = make_model(OuModel::C).unwrap();
        let fd = FdFunction { name: String::from("fd"), f: |z: f64, x: f64| (z * x).sin() + z * z };
        // analytic: phi_x = z cos(zx), phi_xx = -z^2 sin(zx), phi_z = x cos(zx) + 2z, phi_zz = -x^2 sin(zx) + 2
        let (z, x) = (1.3, 0.4);
        let m = (-(x * x) / (z * z)).exp();
        let exact = -x * z * (z * x).cos() + 0.5 * z * z * (-z * z * (z * x).sin())
            + (1.0 / m) * (-z * (x * (z * x).cos() + 2.0 * z) + 0.5 * (-x * x * (z * x).sin() + 2.0));
        assert!(close(apply_R(&c, &fd, z, x).unwrap(), exact, 1e-5));
    }

    #[test]
    fn neumann_cosines_have_zero_normal_derivative() {
        let c = make_model(OuModel::C).unwrap();
        for f in neumann_family(&c) {
            for t in [1.0, 1.3, 1.9] {
                assert!(f.dz(1.0, t * 0.5 - 0.5).abs() < 1e-14 && f.dz(2.0, 0.1).abs() < 1e-14);
                assert!(f.dx(t, -1.0).abs() < 1e-14 && f.dx(t, 1.0).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn adjoint_residuals_and_controls() {
        for model in [OuModel::B { b: -0.5 }, OuModel::C, OuModel::D { a: 1.0, b: 1.0 }] {
            let s = make_model(model).unwrap();
            let (base, env) = adjoint_residual_max(&s, 25);
            assert!(base < 1e-6 && env < 1e-6, "{model:?}: {base} {env}");
        }
        let c = make_model(OuModel::C).unwrap();
        assert!(adjoint_residual_base(&c, 1.0, 0.7).abs() < 1e-6);
        assert!(adjoint_residual_base_with(&c, |_, x| (-x * x).exp(), 2.0, 0.7).abs() > 1e-3);
        let d = make_model(OuModel::D { a: 1.0, b: 1.0 }).unwrap();
        assert!(adjoint_residual_env(&d, 0.7).abs() < 1e-6);
        assert!(adjoint_residual_env_with(&d, |z| z.powf(1.1) * (-2.0 * z).exp(), 0.7).abs() > 1e-3);
        let b = make_model(OuModel::B { b: 0.8 }).unwrap();
        assert!(adjoint_residual_env_with(&b, |z| (1.7 * z).exp(), 1.2).abs() > 1e-3);
    }

    #[test]
    fn ou_density_normalized_balanced_and_stationary() {
        for &(t, z, x) in &[(0.1, 1.0, 0.3), (1.0, 2.0, -1.0), (5.0, 0.5, 2.0)] {
            let m = integrate_real_line(|y| density_ou(t, x, y, z), QuadOptions::default()).unwrap();
            assert!(close(m.value, 1.0, 1e-10), "{}", m.value);
        }
        assert!(close(density_ou(60.0, 0.0, 0.0, 1.0), 1.0 / PI.sqrt(), 1e-12));
        let m = |x: f64| (-x * x).exp();
        let (t, x, y) = (1.0, 0.5, -0.2);
        assert!(close(m(x) * density_ou(t, x, y, 1.0), m(y) * density_ou(t, y, x, 1.0), 1e-12));
        let ck = integrate_real_line(|u| density_ou(0.5, 0.3, u, 1.0) * density_ou(0.5, u, -0.4, 1.0), QuadOptions::default()).unwrap();
        assert!(close(ck.value, density_ou(1.0, 0.3, -0.4, 1.0), 1e-8));
        // the unnormalized form loses mass sqrt(1 - e^{-2t})
        let u = integrate_real_line(|y| density_ou_unnormalized(1.0, 0.0, y, 1.0), QuadOptions::default()).unwrap();
        assert!(close(u.value, (1.0 - (-2.0f64).exp()).sqrt(), 1e-10));
    }

    #[test]
    fn cir_density_mass_limit_and_chapman_kolmogorov() {
        let m = integrate_to_infinity(|y| density_cir(1.0, 1.0, y, 1.0, 1.0).unwrap(), 0.0, QuadOptions::default()).unwrap();
        assert!(close(m.value, 1.0, 1e-8), "{}", m.value);
        for k in 1..40 {
            let y = 0.1 * k as f64;
            assert!(close(density_cir(50.0, 1.0, y, 1.0, 1.0).unwrap(), gamma_density(y, 1.0, 1.0), 1e-6));
        }
        let ck = integrate_to_infinity(
            |y| density_cir(0.5, 1.0, y, 1.0, 1.0).unwrap() * density_cir(0.5, y, 0.8, 1.0, 1.0).unwrap(),
            0.0,
            QuadOptions::default(),
        )
        .unwrap();
        assert!(close(ck.value, density_cir(1.0, 1.0, 0.8, 1.0, 1.0).unwrap(), 1e-6));
        // order between -1 and 0
        let m = integrate_to_infinity(|y| density_cir(1.0, 0.5, y, 1.0, 0.3).unwrap(), 0.0, QuadOptions::with_tol(1e-10, 1e-10)).unwrap();
        assert!(close(m.value, 1.0, 1e-6), "{}", m.value);
        assert!(density_cir(1.0, 0.0, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn reflected_bm_gate_reports_outcome() {
        let g = reflected_bm_gate(1.0, 0.5, -1.0, 1e-6);
        assert!(g.masses.iter().all(|m| m.is_finite()) || !g.enabled);
        assert!(!g.detail.is_empty());
    }

    #[test]
    fn quadrature_wie_and_negative_controls() {
        let c = make_model(OuModel::C).unwrap();
        let fam = neumann_family(&c);
        let refs: Vec<&dyn TestFunction> = fam.iter().map(|f| f as &dyn TestFunction).collect();
        let recs = wie_quadrature(&c, &refs, QuadOptions::with_tol(1e-11, 1e-11)).unwrap();
        assert!(max_abs_integral(&recs) < 1e-6, "{recs:?}");
        let one = Monomial { pz: 0, px: 0 };
        assert_eq!(wie_quadrature(&c, &[&one], QuadOptions::default()).unwrap()[0].integral, 0.0);
        let x2 = Monomial { pz: 0, px: 2 };
        let z1 = Monomial { pz: 1, px: 0 };
        let bad = wie_quadrature(&c, &[&x2, &z1], QuadOptions::with_tol(1e-11, 1e-11)).unwrap();
        assert!(bad.iter().all(|r| r.integral.abs() > 1e-3), "{bad:?}");
        let lop = c.clone().with_rectangle(Interval::new(1.0, 2.0).unwrap(), Interval::new(-1.0, 0.5).unwrap());
        let x1 = Monomial { pz: 0, px: 1 };
        assert!(wie_quadrature(&lop, &[&x1], QuadOptions::default()).unwrap()[0].integral.abs() > 1e-3);
    }

    #[test]
    fn conditional_mean_identity_vanishes() {
        let c = make_model(OuModel::C).unwrap();
        assert!(conditional_mean_identity(&c, QuadOptions::with_tol(1e-13, 1e-12)).unwrap().abs() < 1e-8);
    }

    #[test]
    fn step_check_rejects_large_dt() {
        let c = make_model(OuModel::C).unwrap();
        assert!(check_step(&c, 1e-3).is_ok());
        assert!(matches!(check_step(&c, 0.1), Err(OuError::StepTooLarge { .. })));
    }

    #[test]
    fn rect_local_times_monotone_and_on_boundary() {
        let c = make_model(OuModel::C).unwrap();
        let mut rng = RngStream::new(4);
        let mut prev = RectState { t: 0.0, z: 1.5, x: 0.0, lx: 0.0, ux: 0.0, lz: 0.0, uz: 0.0 };
        simulate_rect_system(&c, (1.5, 0.0), 20_000, 1e-3, &mut rng, |s| {
            assert!(s.lx >= prev.lx && s.ux >= prev.ux && s.lz >= prev.lz && s.uz >= prev.uz);
            assert!(c.z_range.contains(s.z) && c.x_range.contains(s.x));
            if s.lx > prev.lx {
                assert!(s.x < -0.7);
            }
            if s.uz > prev.uz {
                assert!(s.z > 1.7);
            }
            prev = *s;
        })
        .unwrap();
        assert!(prev.lx + prev.ux + prev.lz + prev.uz > 0.0);
    }
}
