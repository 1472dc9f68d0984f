//! Exclusion process with births and deaths on a finite lattice, driven by a
//! heavy particle whose position is the environment.
//!
//! A configuration is a bitmask `x` over the sites plus the index `z` of the
//! heavy particle's position within the allowed set.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use thiserror::Error;

use crate::ctmc::{build_generator, stationary_solve, CtmcError, RateKernel, StateSpace};

/// Largest lattice for which the full generator is assembled.
pub const MAX_EXACT_SITES: usize = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExclusionError {
    #[error("invalid lattice: {0}")]
    Invalid(String),
    #[error("invalid parameters: {0}")]
    Params(String),
    #[error(transparent)]
    Ctmc(#[from] CtmcError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatticeSpec {
    coords: Vec<[i32; 2]>,
    /// Symmetric jump weights, `beta[i][j] = beta[j][i]`, zero diagonal.
    beta: Vec<Vec<f64>>,
    /// Site indices the heavy particle may occupy.
    heavy: Vec<usize>,
    /// Heavy-particle jump rates between positions of `heavy`.
    tau: Vec<Vec<f64>>,
}

impl LatticeSpec {
    /// `bonds` are unordered `(i, j, beta)` triples; `tau` is indexed by
    /// position in `heavy` and must be symmetric with zero diagonal.
    pub fn new(coords: Vec<[i32; 2]>, bonds: &[(usize, usize, f64)], heavy: Vec<usize>, tau: Vec<Vec<f64>>) -> Result<Self, ExclusionError> {
        let spec = Self::new_unchecked(coords, bonds, heavy, tau)?;
        let t = &spec.tau;
        for a in 0..t.len() {
            if t[a][a] != 0.0 {
                return Err(ExclusionError::Invalid(format!("tau diagonal at heavy position {a} must be 0")));
            }
            for b in 0..a {
                if t[a][b] != t[b][a] {
                    return Err(ExclusionError::Invalid(format!("tau must be symmetric: tau[{a}][{b}] = {} but tau[{b}][{a}] = {}", t[a][b], t[b][a])));
                }
            }
        }
        Ok(spec)
    }

    /// Like [`LatticeSpec::new`] but accepts an asymmetric `tau`.
    pub fn new_unchecked(
        coords: Vec<[i32; 2]>,
        bonds: &[(usize, usize, f64)],
        heavy: Vec<usize>,
        tau: Vec<Vec<f64>>,
    ) -> Result<Self, ExclusionError> {
        let n = coords.len();
        if n == 0 || n > 31 {
            return Err(ExclusionError::Invalid(format!("site count must be in 1..=31, got {n}")));
        }
        for (k, c) in coords.iter().enumerate() {
            if coords[..k].contains(c) {
                return Err(ExclusionError::Invalid(format!("duplicate site {c:?}")));
            }
        }
        let mut beta = vec![vec![0.0; n]; n];
        for &(i, j, w) in bonds {
            if i >= n || j >= n {
                return Err(ExclusionError::Invalid(format!("bond ({i}, {j}) refers to a missing site")));
            }
            if i == j {
                return Err(ExclusionError::Invalid(format!("bond ({i}, {i}) is a self-loop")));
            }
            if !(w >= 0.0) || !w.is_finite() {
                return Err(ExclusionError::Invalid(format!("bond weight {w} must be finite and >= 0")));
            }
            beta[i][j] += w;
            beta[j][i] += w;
        }
        if heavy.is_empty() {
            return Err(ExclusionError::Invalid(String::from("heavy particle needs at least one allowed site")));
        }
        for (k, &h) in heavy.iter().enumerate() {
            if h >= n || heavy[..k].contains(&h) {
                return Err(ExclusionError::Invalid(format!("heavy site {h} is missing or repeated")));
            }
        }
        let nt = heavy.len();
        if tau.len() != nt || tau.iter().any(|r| r.len() != nt) {
            return Err(ExclusionError::Invalid(format!("tau must be {nt}x{nt}")));
        }
        if tau.iter().flatten().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(ExclusionError::Invalid(String::from("tau entries must be finite and >= 0")));
        }
        Ok(Self { coords, beta, heavy, tau })
    }

    /// Nearest-neighbour `width x height` grid, every site allowed for the
    /// heavy particle, which jumps to neighbours at rate `tau`.
    pub fn grid(width: usize, height: usize, beta: f64, tau: f64) -> Result<Self, ExclusionError> {
        let mut coords = Vec::new();
        for y in 0..height {
            for x in 0..width {
                coords.push([x as i32, y as i32]);
            }
        }
        let n = coords.len();
        let mut bonds = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                let d = (coords[i][0] - coords[j][0]).abs() + (coords[i][1] - coords[j][1]).abs();
                if d == 1 {
                    bonds.push((i, j, beta));
                }
            }
        }
        let mut t = vec![vec![0.0; n]; n];
        for &(i, j, _) in &bonds {
            t[i][j] = tau;
            t[j][i] = tau;
        }
        Self::new(coords, &bonds, (0..n).collect(), t)
    }

    pub fn sites(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[[i32; 2]] {
        &self.coords
    }

    pub fn beta(&self, i: usize, j: usize) -> f64 {
        self.beta[i][j]
    }

    pub fn heavy_sites(&self) -> &[usize] {
        &self.heavy
    }

    pub fn tau(&self, a: usize, b: usize) -> f64 {
        self.tau[a][b]
    }

    /// Every configuration, heavy position major.
    pub fn all_configs(&self) -> Vec<Config> {
        let mut out = Vec::with_capacity(self.heavy.len() << self.sites());
        for z in 0..self.heavy.len() {
            for x in 0..(1u32 << self.sites()) {
                out.push(Config { z, x });
            }
        }
        out
    }
}

/// Heavy position `z` (index into the allowed set) and occupancy bitmask `x`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Config {
    pub z: usize,
    pub x: u32,
}

impl Config {
    pub fn occupied(&self, site: usize) -> bool {
        self.x >> site & 1 == 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeavyParams {
    pub phi: f64,
    pub lambda: f64,
    pub mu: f64,
    /// Per heavy position.
    pub alpha: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl HeavyParams {
    pub fn uniform(phi: f64, lambda: f64, mu: f64, positions: usize) -> Self {
        Self { phi, lambda, mu, alpha: vec![1.0; positions], sigma: vec![1.0; positions] }
    }

    pub fn validate(&self, lattice: &LatticeSpec) -> Result<(), ExclusionError> {
        if !(self.lambda > 0.0 && self.mu > 0.0) || !self.lambda.is_finite() || !self.mu.is_finite() {
            return Err(ExclusionError::Params(format!("birth and death rates must be positive, got {} and {}", self.lambda, self.mu)));
        }
        if !self.phi.is_finite() {
            return Err(ExclusionError::Params(String::from("phi must be finite")));
        }
        let nt = lattice.heavy.len();
        if self.alpha.len() != nt || self.sigma.len() != nt {
            return Err(ExclusionError::Params(format!("alpha and sigma need {nt} entries")));
        }
        if self.alpha.iter().chain(&self.sigma).any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(ExclusionError::Params(String::from("alpha and sigma must be finite and positive")));
        }
        Ok(())
    }
}

/// Single-site marginals `(P(0), P(1), Q(0), Q(1))`: `P` away from the heavy
/// particle, `Q` at its site.
pub fn marginals(p: &HeavyParams) -> (f64, f64, f64, f64) {
    let e = p.phi.exp();
    let s = p.lambda + p.mu;
    let t = p.lambda * e + p.mu;
    (p.mu / s, p.lambda / s, p.mu / t, p.lambda * e / t)
}

/// Density of the invariant law at heavy site `z` relative to the plain
/// Bernoulli product.
pub fn density_m(lattice: &LatticeSpec, p: &HeavyParams, c: &Config) -> f64 {
    let occ = c.occupied(lattice.heavy[c.z]);
    (p.lambda + p.mu) / (p.lambda * p.phi.exp() + p.mu) * if occ { p.phi.exp() } else { 1.0 }
}

/// Plain Bernoulli product weight `prod_i P(x_i)`.
pub fn gamma_weight(lattice: &LatticeSpec, p: &HeavyParams, x: u32) -> f64 {
    let (p0, p1, _, _) = marginals(p);
    (0..lattice.sites()).map(|i| if x >> i & 1 == 1 { p1 } else { p0 }).product()
}

/// Invariant law of the light particles with the heavy particle fixed at `z`.
pub fn product_measure(lattice: &LatticeSpec, p: &HeavyParams, c: &Config) -> f64 {
    let (p0, p1, q0, q1) = marginals(p);
    let hz = lattice.heavy[c.z];
    (0..lattice.sites())
        .map(|i| {
            let occ = c.x >> i & 1 == 1;
            match (i == hz, occ) {
                (true, true) => q1,
                (true, false) => q0,
                (false, true) => p1,
                (false, false) => p0,
            }
        })
        .product()
}

/// `e^{x_z phi} prod_i P(x_i) / sigma(z)`.
pub fn kappa(lattice: &LatticeSpec, p: &HeavyParams, c: &Config) -> f64 {
    let occ = c.occupied(lattice.heavy[c.z]);
    let e = if occ { p.phi.exp() } else { 1.0 };
    e * gamma_weight(lattice, p, c.x) / p.sigma[c.z]
}

/// How light-particle jumps touching the heavy site are read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum JumpConvention {
    /// Jumps into the heavy site at `beta e^phi`, jumps out of it at `beta`.
    #[default]
    PlainOutOfHeavy,
    /// Jumps into the heavy site at `beta e^phi`, no jumps out of it.
    NoJumpsOutOfHeavy,
}

/// Combined rates on configurations.
#[derive(Debug, Clone)]
pub struct ExclusionKernel {
    lattice: LatticeSpec,
    params: HeavyParams,
    convention: JumpConvention,
}

pub fn combined_kernel(lattice: &LatticeSpec, params: &HeavyParams, convention: JumpConvention) -> Result<ExclusionKernel, ExclusionError> {
    params.validate(lattice)?;
    Ok(ExclusionKernel { lattice: lattice.clone(), params: params.clone(), convention })
}

impl ExclusionKernel {
    /// Light-particle moves with the heavy particle at position `z`, unscaled by `alpha`.
    pub fn light_transitions(&self, z: usize, x: u32, scale: f64, out: &mut Vec<(u32, f64)>) {
        let l = &self.lattice;
        let p = &self.params;
        let hz = l.heavy[z];
        let e = p.phi.exp();
        let n = l.sites();
        for i in 0..n {
            let occ = x >> i & 1 == 1;
            if occ {
                out.push((x & !(1 << i), scale * p.mu));
                if i == hz && self.convention == JumpConvention::NoJumpsOutOfHeavy {
                    continue;
                }
                for j in 0..n {
                    let b = l.beta[i][j];
                    if b > 0.0 && x >> j & 1 == 0 {
                        let r = if j == hz { b * e } else { b };
                        out.push((x & !(1 << i) | (1 << j), scale * r));
                    }
                }
            } else {
                let r = if i == hz { p.lambda * e } else { p.lambda };
                out.push((x | (1 << i), scale * r));
            }
        }
    }

    pub fn lattice(&self) -> &LatticeSpec {
        &self.lattice
    }

    pub fn params(&self) -> &HeavyParams {
        &self.params
    }
}

impl RateKernel for ExclusionKernel {
    type State = Config;

    fn transitions(&self, c: &Config, out: &mut Vec<(Config, f64)>) -> Result<(), CtmcError> {
        let mut buf = Vec::new();
        self.light_transitions(c.z, c.x, self.params.alpha[c.z], &mut buf);
        out.extend(buf.into_iter().map(|(x, r)| (Config { z: c.z, x }, r)));
        let occ = c.occupied(self.lattice.heavy[c.z]);
        let damp = if occ { (-self.params.phi).exp() } else { 1.0 };
        let sg = self.params.sigma[c.z];
        for (z2, &t) in self.lattice.tau[c.z].iter().enumerate() {
            if z2 != c.z && t > 0.0 {
                out.push((Config { z: z2, x: c.x }, sg * t * damp));
            }
        }
        Ok(())
    }

    fn predecessors(&self, c: &Config, out: &mut Vec<Config>) -> Result<(), CtmcError> {
        let n = self.lattice.sites();
        for i in 0..n {
            out.push(Config { z: c.z, x: c.x ^ (1 << i) });
            for j in 0..n {
                if (c.x >> i & 1) != (c.x >> j & 1) {
                    out.push(Config { z: c.z, x: c.x ^ (1 << i) ^ (1 << j) });
                }
            }
        }
        out.extend((0..self.lattice.heavy.len()).filter(|z| *z != c.z).map(|z| Config { z, x: c.x }));
        Ok(())
    }
}

/// `(L^(z) g)(x)` for the light-particle generator at heavy position `z`.
pub fn base_action(kernel: &ExclusionKernel, z: usize, g: impl Fn(u32) -> f64, x: u32) -> f64 {
    let mut buf = Vec::new();
    kernel.light_transitions(z, x, 1.0, &mut buf);
    let gx = g(x);
    buf.iter().map(|(y, r)| r * (g(*y) - gx)).sum()
}

/// `(A f)(z) = sum_z' tau(z, z') (f(z') - f(z))`.
pub fn env_action(lattice: &LatticeSpec, f: impl Fn(usize) -> f64, z: usize) -> f64 {
    lattice.tau[z].iter().enumerate().map(|(z2, t)| t * (f(z2) - f(z))).sum()
}

/// Result of comparing the exact stationary law with normalized `kappa`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactCheck {
    pub states: usize,
    pub l1_error: f64,
    /// `||pi Q||_inf` of the solved vector.
    pub solve_residual: f64,
    /// `||kappa Q||_inf` of the normalized candidate.
    pub kappa_residual: f64,
}

pub fn exact_check(lattice: &LatticeSpec, params: &HeavyParams, convention: JumpConvention) -> Result<ExactCheck, ExclusionError> {
    if lattice.sites() > MAX_EXACT_SITES {
        return Err(ExclusionError::Invalid(format!("exact check supports at most {MAX_EXACT_SITES} sites")));
    }
    let kernel = combined_kernel(lattice, params, convention)?;
    let space = StateSpace::from_states(lattice.all_configs())?;
    let g = build_generator(&space, &kernel)?;
    let st = stationary_solve(&g.generator)?;
    let w: Vec<f64> = space.states().iter().map(|c| kappa(lattice, params, c)).collect();
    let total: f64 = w.iter().sum();
    let cand: Vec<f64> = w.iter().map(|v| v / total).collect();
    Ok(ExactCheck {
        states: space.len(),
        l1_error: st.pi.l1_distance(&cand),
        solve_residual: st.residual,
        kappa_residual: g.generator.residual(&cand),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctmc::{balance_residual, generator_action};
    use core::f64::consts::LN_2;

    fn pair(tau12: f64, tau21: f64) -> LatticeSpec {
        LatticeSpec::new_unchecked(vec![[0, 0], [1, 0]], &[(0, 1, 1.0)], vec![0, 1], vec![vec![0.0, tau12], vec![tau21, 0.0]]).unwrap()
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-14
    }

    #[test]
    fn marginal_examples() {
        let (p0, p1, q0, q1) = marginals(&HeavyParams::uniform(0.0, 1.0, 3.0, 1));
        assert!(close(p1, 0.25) && close(p0, 0.75) && close(q1, p1) && close(q0, p0));
        let (_, p1, _, q1) = marginals(&HeavyParams::uniform(LN_2, 1.0, 1.0, 1));
        assert!(close(p1, 0.5) && close(q1, 2.0 / 3.0));
    }

    #[test]
    fn density_examples() {
        let l = pair(1.0, 1.0);
        let p = HeavyParams::uniform(LN_2, 1.0, 1.0, 2);
        assert!(close(density_m(&l, &p, &Config { z: 0, x: 1 }), 4.0 / 3.0));
        assert!(close(density_m(&l, &p, &Config { z: 0, x: 2 }), 2.0 / 3.0));
        let avg = 0.5 * density_m(&l, &p, &Config { z: 0, x: 0 }) + 0.5 * density_m(&l, &p, &Config { z: 0, x: 1 });
        assert!(close(avg, 1.0));
        let flat = HeavyParams::uniform(0.0, 1.0, 1.0, 2);
        assert_eq!(density_m(&l, &flat, &Config { z: 1, x: 3 }), 1.0);
    }

    #[test]
    fn product_measure_examples() {
        let l = pair(1.0, 1.0);
        let p = HeavyParams::uniform(LN_2, 1.0, 1.0, 2);
        let w = |x| product_measure(&l, &p, &Config { z: 0, x });
        assert!(close(w(0b11), 1.0 / 3.0));
        assert!(close(w(0b01), 1.0 / 3.0));
        assert!(close(w(0b10), 1.0 / 6.0));
        assert!(close(w(0b00), 1.0 / 6.0));
    }

    #[test]
    fn kappa_examples() {
        let one = LatticeSpec::new(vec![[0, 0]], &[], vec![0], vec![vec![0.0]]).unwrap();
        let p = HeavyParams::uniform(LN_2, 1.0, 1.0, 1);
        assert!(close(kappa(&one, &p, &Config { z: 0, x: 1 }), 1.0));
        let l = pair(1.0, 1.0);
        let p = HeavyParams::uniform(LN_2, 2.0, 1.0, 2);
        for z in 0..2 {
            let tot: f64 = (0..4).map(|x| kappa(&l, &p, &Config { z, x })).sum();
            for x in 0..4 {
                let c = Config { z, x };
                assert!(close(kappa(&l, &p, &c) / tot, product_measure(&l, &p, &c)));
            }
        }
    }

    #[test]
    fn kernel_rate_examples() {
        let l = pair(1.0, 1.0);
        let p = HeavyParams::uniform(LN_2, 1.0, 1.0, 2);
        let k = combined_kernel(&l, &p, JumpConvention::default()).unwrap();
        // heavy at site 0, occupied: environment exit damped by e^{-phi}
        assert!(close(k.rate(&Config { z: 0, x: 0b01 }, &Config { z: 1, x: 0b01 }).unwrap(), 0.5));
        // light particle at site 1 jumps into the empty heavy site 0
        assert!(close(k.rate(&Config { z: 0, x: 0b10 }, &Config { z: 0, x: 0b01 }).unwrap(), 2.0));
        // and back out at plain rate
        assert!(close(k.rate(&Config { z: 0, x: 0b01 }, &Config { z: 0, x: 0b10 }).unwrap(), 1.0));
        let alt = combined_kernel(&l, &p, JumpConvention::NoJumpsOutOfHeavy).unwrap();
        assert_eq!(alt.rate(&Config { z: 0, x: 0b01 }, &Config { z: 0, x: 0b10 }).unwrap(), 0.0);
    }

    #[test]
    fn exact_check_pair() {
        let l = pair(1.0, 1.0);
        let r = exact_check(&l, &HeavyParams::uniform(LN_2, 1.0, 1.0, 2), JumpConvention::default()).unwrap();
        assert!(r.l1_error < 1e-10, "{r:?}");
        let r = exact_check(&l, &HeavyParams::uniform(0.0, 1.0, 2.0, 2), JumpConvention::default()).unwrap();
        assert!(r.l1_error < 1e-10, "{r:?}");
    }

    #[test]
    fn asymmetric_tau_fails() {
        let r = exact_check(&pair(1.0, 3.0), &HeavyParams::uniform(LN_2, 1.0, 1.0, 2), JumpConvention::default()).unwrap();
        assert!(r.l1_error > 1e-3, "{r:?}");
        assert!(LatticeSpec::new(vec![[0, 0], [1, 0]], &[(0, 1, 1.0)], vec![0, 1], vec![vec![0.0, 1.0], vec![3.0, 0.0]]).is_err());
    }

    #[test]
    fn alternative_reading_fails() {
        let r = exact_check(&pair(1.0, 1.0), &HeavyParams::uniform(LN_2, 1.0, 1.0, 2), JumpConvention::NoJumpsOutOfHeavy).unwrap();
        assert!(r.l1_error > 1e-3, "{r:?}");
    }

    #[test]
    fn base_generator_preserves_product_measure() {
        let l = LatticeSpec::grid(3, 1, 0.7, 1.0).unwrap();
        let p = HeavyParams::uniform(0.4, 1.3, 0.8, 3);
        let k = combined_kernel(&l, &p, JumpConvention::default()).unwrap();
        for z in 0..3 {
            for target in 0..8u32 {
                let g = |x: u32| if x == target { 1.0 } else { 0.0 } + 0.1 * x as f64;
                let s: f64 = (0..8).map(|x| base_action(&k, z, g, x) * product_measure(&l, &p, &Config { z, x })).sum();
                assert!(s.abs() < 1e-12, "z={z} target={target}: {s}");
            }
        }
    }

    #[test]
    fn env_generator_sums_to_zero() {
        let l = LatticeSpec::grid(2, 2, 1.0, 0.6).unwrap();
        let f = |z: usize| (z * z) as f64 + 0.3;
        let s: f64 = (0..4).map(|z| env_action(&l, f, z)).sum();
        assert!(s.abs() < 1e-14);
    }

    #[test]
    fn full_generator_annihilates_kappa() {
        let l = LatticeSpec::grid(2, 1, 1.0, 1.5).unwrap();
        let p = HeavyParams { phi: -0.6, lambda: 0.9, mu: 1.4, alpha: vec![1.0, 2.0], sigma: vec![0.5, 3.0] };
        let k = combined_kernel(&l, &p, JumpConvention::default()).unwrap();
        let all = l.all_configs();
        for target in &all {
            let phi = |c: &Config| if c == target { 1.0 } else { 0.0 };
            let s: f64 = all.iter().map(|c| generator_action(&k, phi, c).unwrap() * kappa(&l, &p, c)).sum();
            assert!(s.abs() < 1e-10, "{target:?}: {s}");
        }
        for c in &all {
            assert!(balance_residual(|s: &Config| kappa(&l, &p, s), &k, c).unwrap().abs() < 1e-12);
        }
    }

    #[test]
    fn kappa_independent_of_alpha() {
        let l = pair(1.0, 1.0);
        let a = HeavyParams::uniform(0.3, 1.0, 2.0, 2);
        let mut b = a.clone();
        b.alpha = vec![5.0, 0.2];
        for c in l.all_configs() {
            assert_eq!(kappa(&l, &a, &c), kappa(&l, &b, &c));
        }
    }
}
