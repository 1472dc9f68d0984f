use renv_core::ouenv::*;
use renv_core::quadrature::{integrate_rect, QuadOptions};
use renv_core::sde::Interval;
use renv_core::stationarity::{tv_distance, ComparisonReport, Histogram, Statistic};
use renv_core::{Normalizer, RngStream};

use super::{run_jobs, runtime, steps, Job};
use crate::config::{Action, ConfigError, ExperimentConfig, ModelConfig, Rectangle};
use crate::output::{num, Entry, Outcome, Table};
use crate::RunError;

pub fn build(model: &ModelConfig) -> Result<CombinedDiffusionSpec, ConfigError> {
    let (which, rect) = match model {
        ModelConfig::OuB(c) => (OuModel::B { b: c.b }, c.rectangle),
        ModelConfig::OuC(c) => (OuModel::C, c.rectangle),
        ModelConfig::OuD(c) => (OuModel::D { a: c.a, b: c.b }, c.rectangle),
        _ => unreachable!("not an ouenv model"),
    };
    let spec = make_model(which).map_err(|e| ConfigError::field("model", e.to_string()))?;
    match rect {
        None => Ok(spec),
        Some(Rectangle { z, x }) => {
            let zi = Interval::new(z[0], z[1]).map_err(|e| ConfigError::field("model.rectangle.z", e.to_string()))?;
            let xi = Interval::new(x[0], x[1]).map_err(|e| ConfigError::field("model.rectangle.x", e.to_string()))?;
            Ok(spec.with_rectangle(zi, xi))
        }
    }
}

pub fn run(cfg: &ExperimentConfig, action: Action, seed: u64) -> Result<Outcome, RunError> {
    let spec = build(&cfg.model)?;
    let name = cfg.model.kind();
    match action {
        Action::Verify => verify(&spec, name),
        Action::Xi => {
            let (z, x) = (&spec.z_range, &spec.x_range);
            let r = integrate_rect(|z, x| kappa_density(&spec, z, x), (z.lo(), z.hi()), (x.lo(), x.hi()), QuadOptions::with_tol(1e-12, 1e-10))
                .map_err(runtime)?;
            let n = Normalizer::Finite { value: r.value, error_bound: r.error };
            Ok(Outcome { entries: vec![super::hybrid::xi_entry(name, &n, cfg)], tables: vec![] })
        }
        Action::Stationary => {
            let n = cfg.truncation.unwrap_or(60) as usize;
            let (l1, residual) = fd_cross_check(&spec, n, n).map_err(runtime)?;
            Ok(Outcome {
                entries: vec![
                    Entry::Check(ComparisonReport::new(name, "finite_difference_l1", Statistic::L1, l1, cfg.tolerance.unwrap_or(0.05)).with_samples((n * n) as u64, None)),
                    Entry::note(name, format!("{n}x{n} grid, solve residual {residual:e}")),
                ],
                tables: vec![],
            })
        }
        Action::Simulate => simulate(&spec, name, cfg, seed),
    }
}

fn verify(spec: &CombinedDiffusionSpec, name: &str) -> Result<Outcome, RunError> {
    let opts = QuadOptions::with_tol(1e-11, 1e-11);
    let mut jobs: Vec<Job<'_>> = Vec::new();
    jobs.push(Box::new(move || {
        let fam = neumann_family(spec);
        let refs: Vec<&dyn TestFunction> = fam.iter().map(|f| f as &dyn TestFunction).collect();
        let recs = wie_quadrature(spec, &refs, opts).map_err(runtime)?;
        let mut out = Outcome::default();
        out.entries.push(Entry::Check(
            ComparisonReport::new(name, "wie_quadrature_neumann", Statistic::MaxResidual, max_abs_integral(&recs), 1e-6).with_samples(recs.len() as u64, None),
        ));
        let mut t = Table::new("wie_quadrature.csv", &["phi", "integral", "tolerance"]);
        for r in &recs {
            t.push(vec![r.phi_id.clone(), num(r.integral), num(r.tolerance)]);
        }
        out.tables.push(t);
        Ok(out)
    }));
    jobs.push(Box::new(move || {
        let x2 = Monomial { pz: 0, px: 2 };
        let z1 = Monomial { pz: 1, px: 0 };
        let bad = wie_quadrature(spec, &[&x2, &z1], opts).map_err(runtime)?;
        let entries = bad
            .iter()
            .map(|r| Entry::Check(ComparisonReport::negative_control(name, &format!("non_neumann_control_{}", r.phi_id), Statistic::MaxResidual, r.integral.abs(), 1e-3)))
            .collect();
        Ok(Outcome { entries, tables: vec![] })
    }));
    jobs.push(Box::new(move || {
        let (base, env) = adjoint_residual_max(spec, 40);
        let zs = interior_grid(&spec.z_range, 20);
        let xs = interior_grid(&spec.x_range, 20);
        let m = spec.m.clone();
        let w = spec.w.clone();
        let mut bad_base = 0.0f64;
        let mut bad_env = 0.0f64;
        for &z in &zs {
            bad_env = bad_env.max(adjoint_residual_env_with(spec, |z| w(z) * (0.3 * z).exp(), z).abs());
            for &x in &xs {
                bad_base = bad_base.max(adjoint_residual_base_with(spec, |z, x| m(z, x) * (1.0 + 0.3 * x * x), z, x).abs());
            }
        }
        Ok(Outcome {
            entries: vec![
                Entry::Check(ComparisonReport::new(name, "adjoint_residual_base", Statistic::MaxResidual, base, 1e-6)),
                Entry::Check(ComparisonReport::new(name, "adjoint_residual_env", Statistic::MaxResidual, env, 1e-6)),
                Entry::Check(ComparisonReport::negative_control(name, "perturbed_m_control", Statistic::MaxResidual, bad_base, 1e-3)),
                Entry::Check(ComparisonReport::negative_control(name, "perturbed_w_control", Statistic::MaxResidual, bad_env, 1e-3)),
            ],
            tables: vec![],
        })
    }));
    run_jobs(jobs)
}

fn simulate(spec: &CombinedDiffusionSpec, name: &str, cfg: &ExperimentConfig, seed: u64) -> Result<Outcome, RunError> {
    let dt = cfg.dt.unwrap_or(1e-3);
    let n = steps(cfg.t_end.unwrap_or(1e3), dt);
    let every = cfg.record_every.unwrap_or(1000);
    let burn = n / 100;
    let (zr, xr) = (&spec.z_range, &spec.x_range);
    let mut hist = Histogram::uniform_2d((zr.lo(), zr.hi(), 20), (xr.lo(), xr.hi(), 20)).map_err(runtime)?;
    let mut traj = Table::new("trajectory.csv", &["t", "z", "x", "local_x_lo", "local_x_hi", "local_z_lo", "local_z_hi"]);
    let start = ((zr.lo() + zr.hi()) / 2.0, (xr.lo() + xr.hi()) / 2.0);
    let mut rng = RngStream::new(seed);
    let mut k = 0u64;
    simulate_rect_system(spec, start, n, dt, &mut rng, |s| {
        k += 1;
        if k.is_multiple_of(every) {
            traj.push(vec![num(s.t), num(s.z), num(s.x), num(s.lx), num(s.ux), num(s.lz), num(s.uz)]);
        }
        if k > burn {
            hist.add(&[s.z, s.x], 1.0);
        }
    })
    .map_err(runtime)?;
    let target = hist.expected_masses(|p| kappa_density(spec, p[0], p[1]), QuadOptions::with_tol(1e-12, 1e-10)).map_err(runtime)?;
    let emp = hist.probabilities().map_err(runtime)?;
    let tv = tv_distance(&emp, &target).map_err(runtime)?;
    let mut occ = Table::new("occupation.csv", &["z_lo", "z_hi", "x_lo", "x_hi", "occupation", "kappa_normalized"]);
    for (b, (e, t)) in emp.iter().zip(&target).enumerate() {
        let bb = hist.bin_bounds(b);
        occ.push(vec![num(bb[0].0), num(bb[0].1), num(bb[1].0), num(bb[1].1), num(*e), num(*t)]);
    }
    Ok(Outcome {
        entries: vec![Entry::Check(ComparisonReport::new(name, "occupation_tv", Statistic::Tv, tv, 0.05).with_samples(n - burn, Some(seed)))],
        tables: vec![occ, traj],
    })
}
