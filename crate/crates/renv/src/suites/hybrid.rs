use renv_core::hybrid::*;
use renv_core::quadrature::{integrate, QuadOptions};
use renv_core::sde::Interval;
use renv_core::stationarity::{tv_distance, ComparisonReport, Histogram, Statistic};
use renv_core::{Normalizer, RngStream};

use super::{run_jobs, runtime, steps, Job};
use crate::config::{Action, ConfigError, ExperimentConfig, ModelConfig};
use crate::output::{num, Entry, Outcome, Table};
use crate::{unsupported, RunError};

const DIFFUSION_TOL: f64 = 1e-6;
const RECURRENCE_TOL: f64 = 1e-10;

/// Normalizer line, checked against the config's expectation when present.
pub fn xi_entry(model: &str, n: &Normalizer, cfg: &ExperimentConfig) -> Entry {
    let pass = match &cfg.expect {
        None => true,
        Some(e) => {
            let div_ok = e.divergent.map(|d| d == n.is_divergent()).unwrap_or(true);
            let val_ok = match (e.xi, n) {
                (None, _) => true,
                (Some(x), Normalizer::Finite { value, error_bound }) => (value - x).abs() <= e.xi_tolerance.unwrap_or(1e-8).max(*error_bound),
                (Some(_), Normalizer::Divergent { .. }) => false,
            };
            div_ok && val_ok
        }
    };
    Entry::normalizer(model, n, pass)
}

fn invalid(e: HybridError) -> ConfigError {
    ConfigError::field("model", e.to_string())
}

pub fn build(model: &ModelConfig) -> Result<(HybridModel, Scheme), ConfigError> {
    Ok(match model {
        ModelConfig::Lambda(c) => {
            (HybridModel::Lambda(LambdaSpec::new(c.eps, c.beta.to_fn(), c.sigma.to_fn(), c.alpha.to_fn()).map_err(invalid)?), c.scheme)
        }
        ModelConfig::Mu(c) => (HybridModel::Mu(MuSpec::new(c.b, c.sigma.to_fn(), c.alpha.to_fn()).map_err(invalid)?), c.scheme),
        ModelConfig::Wedge(c) => (HybridModel::Wedge(WedgeSpec::new(c.theta, c.sigma.to_fn(), c.alpha.to_fn()).map_err(invalid)?), Scheme::Euler),
        ModelConfig::Switch(c) => {
            let iv = Interval::new(c.lo, c.hi).map_err(|e| ConfigError::field("model.lo", e.to_string()))?;
            (HybridModel::Switch(SwitchSpec::new(c.sigma.to_fn(), c.alpha.to_fn(), c.q.to_fn(), iv).map_err(invalid)?), Scheme::Euler)
        }
        ModelConfig::TwoComp(c) => (HybridModel::TwoComp(TwoCompSpec::new(c.b, c.d, c.alpha.to_fn(), c.sigma.to_fn()).map_err(invalid)?), Scheme::Euler),
        _ => unreachable!("not a hybrid model"),
    })
}

pub fn run(cfg: &ExperimentConfig, action: Action, seed: u64) -> Result<Outcome, RunError> {
    let (model, scheme) = build(&cfg.model)?;
    let name = cfg.model.kind();
    match action {
        Action::Verify => verify(&model, name, cfg.truncation),
        Action::Xi => {
            let n = match &model {
                HybridModel::Lambda(s) => xi_lambda(s, 1e-10).map_err(runtime)?,
                HybridModel::Switch(s) => xi_switch(s),
                HybridModel::TwoComp(s) => xi_twocomp(s),
                _ => return Err(unsupported(action, cfg)),
            };
            Ok(Outcome { entries: vec![xi_entry(name, &n, cfg)], tables: vec![] })
        }
        Action::Simulate => simulate(&model, name, scheme, cfg, seed),
        Action::Stationary => Err(unsupported(action, cfg)),
    }
}

fn wie_entries(name: &str, ok: WieResiduals, bad: WieResiduals, recurrence_control: bool) -> Outcome {
    let bad_value = if recurrence_control { bad.recurrence_max } else { bad.diffusion_max };
    Outcome {
        entries: vec![
            Entry::Check(ComparisonReport::new(name, "wie_diffusion", Statistic::MaxResidual, ok.diffusion_max, DIFFUSION_TOL)),
            Entry::Check(ComparisonReport::new(name, "wie_recurrence", Statistic::MaxResidual, ok.recurrence_max, RECURRENCE_TOL)),
            Entry::Check(ComparisonReport::negative_control(name, "perturbed_kappa_control", Statistic::MaxResidual, bad_value, 1e-3)),
        ],
        tables: vec![],
    }
}

fn line(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (1..=n).map(|k| lo + (hi - lo) * k as f64 / (n + 1) as f64).collect()
}

fn verify(model: &HybridModel, name: &str, truncation: Option<u32>) -> Result<Outcome, RunError> {
    let mut jobs: Vec<Job<'_>> = Vec::new();
    match model {
        HybridModel::Lambda(s) => {
            let n_max = truncation.unwrap_or(15);
            jobs.push(Box::new(move || {
                let grid = line(s.eps, 1.0, 59);
                let k = |l: f64, n: u32| kappa_lambda(s, l, n).unwrap_or(f64::NAN);
                let ok = wie_check_lambda(s, k, &grid, n_max);
                let bad = wie_check_lambda(s, |l, n| k(l, n) * (1.0 + 0.1 * n as f64), &grid, n_max);
                Ok(wie_entries(name, ok, bad, true))
            }));
            jobs.push(Box::new(move || {
                let n = xi_lambda(s, 1e-10).map_err(runtime)?;
                Ok(Outcome { entries: vec![Entry::normalizer(name, &n, true)], tables: vec![] })
            }));
        }
        HybridModel::Mu(s) => {
            let n_max = truncation.unwrap_or(20);
            jobs.push(Box::new(move || {
                let grid = line(1.0, 10.0, 899);
                let k = |m: f64, n: u32| kappa_mu(s, m, n).unwrap_or(f64::NAN);
                let ok = wie_check_mu(s, k, &grid, n_max);
                let bad = wie_check_mu(s, |m, n| k(m, n) * m.powf(0.1), &grid, n_max);
                Ok(wie_entries(name, ok, bad, false))
            }));
        }
        HybridModel::Wedge(s) => {
            let n_max = truncation.unwrap_or(10);
            jobs.push(Box::new(move || {
                let pts: Vec<(f64, f64)> = (1..10).flat_map(|i| (1..10).map(move |j| (0.2 * i as f64, 0.2 * i as f64 + 0.15 * j as f64))).collect();
                let k = |l: f64, m: f64, n: u32| kappa_wedge(s, l, m, n).unwrap_or(f64::NAN);
                let ok = wie_check_wedge(s, k, &pts, n_max);
                let bad = wie_check_wedge(s, |l, m, n| k(l, m, n) * (1.0 + 0.1 * n as f64), &pts, n_max);
                Ok(wie_entries(name, ok, bad, true))
            }));
        }
        HybridModel::Switch(s) => {
            jobs.push(Box::new(move || {
                let xs = line(s.interval.lo(), s.interval.hi(), 39);
                let k = |z: f64, x: f64| kappa_switch(s, z, x).unwrap_or(f64::NAN);
                let ok = wie_check_switch(s, k, &xs);
                let bad = wie_check_switch(s, |z, x| k(z, x) * (1.0 + 0.2 * z), &xs);
                Ok(wie_entries(name, ok, bad, true))
            }));
            jobs.push(Box::new(move || Ok(Outcome { entries: vec![Entry::normalizer(name, &xi_switch(s), true)], tables: vec![] })));
        }
        HybridModel::TwoComp(s) => {
            jobs.push(Box::new(move || {
                let zs = line(0.0, 5.0, 99);
                let k = |z: f64| kappa_twocomp(s, z).unwrap_or(f64::NAN);
                let ok = wie_check_twocomp(s, k, &zs);
                let bad = wie_check_twocomp(s, |z| k(z) * (0.1 * z).exp(), &zs);
                let mut out = wie_entries(name, ok, bad, false);
                out.entries.push(Entry::normalizer(name, &xi_twocomp(s), true));
                for v in s.growth_violations(0.5, 2.0, &zs) {
                    out.entries.push(Entry::note(name, v));
                }
                Ok(out)
            }));
        }
    }
    run_jobs(jobs)
}

fn trajectory_table(model: &HybridModel) -> Table {
    let d = model.initial_state().base.len();
    let mut header = vec![String::from("t"), String::from("env_0"), String::from("env_1"), String::from("queue")];
    header.extend((0..d).map(|i| format!("base_{i}")));
    header.extend(["local_lo", "local_hi", "jumps"].map(String::from));
    Table { file: String::from("trajectory.csv"), header, rows: vec![] }
}

fn state_row(s: &JointState) -> Vec<String> {
    let mut r = vec![num(s.t), num(s.env[0]), num(s.env[1]), s.queue.to_string()];
    r.extend(s.base.iter().map(|v| num(*v)));
    r.extend([num(s.local_lo), num(s.local_hi), s.jumps.to_string()]);
    r
}

const LAMBDA_BINS: usize = 10;
const N_CAP: u32 = 10;

/// Target cell masses of the lambda model on `LAMBDA_BINS` rate bins times
/// queue lengths `0..N_CAP`, the last column collecting `n >= N_CAP`.
fn lambda_target(s: &LambdaSpec, xi: f64) -> Result<Vec<f64>, RunError> {
    let w = (1.0 - s.eps) / LAMBDA_BINS as f64;
    let mut out = Vec::with_capacity(LAMBDA_BINS * (N_CAP as usize + 1));
    for b in 0..LAMBDA_BINS {
        let (lo, hi) = (s.eps + w * b as f64, s.eps + w * (b + 1) as f64);
        for n in 0..=N_CAP {
            let f = |l: f64| {
                let k = l.powi(n as i32) / (s.sigma)(l);
                if n < N_CAP {
                    k
                } else {
                    k / (1.0 - l)
                }
            };
            out.push(integrate(f, lo, hi, QuadOptions::default()).map_err(runtime)?.value / xi);
        }
    }
    Ok(out)
}

fn simulate(model: &HybridModel, name: &str, scheme: Scheme, cfg: &ExperimentConfig, seed: u64) -> Result<Outcome, RunError> {
    let dt = cfg.dt.unwrap_or(0.01);
    let n = steps(cfg.t_end.unwrap_or(1e3), dt);
    let every = cfg.record_every.unwrap_or(100);
    let burn = n / 100;
    let mut rng = RngStream::new(seed);
    let mut traj = trajectory_table(model);
    let init = model.initial_state();
    traj.push(state_row(&init));

    let lambda_xi = match model {
        HybridModel::Lambda(s) => xi_lambda(s, 1e-10).map_err(runtime)?.value(),
        _ => None,
    };
    let mut cells = vec![0.0; LAMBDA_BINS * (N_CAP as usize + 1)];
    let mut switch_hist = match model {
        HybridModel::Switch(s) => Some(Histogram::uniform_1d(s.interval.lo(), s.interval.hi(), 20).map_err(runtime)?),
        _ => None,
    };
    let mut k = 0u64;
    let last = simulate_model_with(model, init, n, dt, u64::MAX, scheme, &mut rng, |s| {
        k += 1;
        if k.is_multiple_of(every) {
            traj.push(state_row(s));
        }
        if k <= burn {
            return;
        }
        match model {
            HybridModel::Lambda(l) => {
                let b = (((s.env[0] - l.eps) / (1.0 - l.eps)) * LAMBDA_BINS as f64).floor().clamp(0.0, LAMBDA_BINS as f64 - 1.0) as usize;
                cells[b * (N_CAP as usize + 1) + s.queue.min(N_CAP) as usize] += 1.0;
            }
            HybridModel::Switch(_) => {
                if let Some(h) = switch_hist.as_mut() {
                    h.add(&[s.base[0]], 1.0);
                }
            }
            _ => {}
        }
    })
    .map_err(runtime)?;

    let mut entries = vec![Entry::note(name, format!("{n} steps of {dt}, {} jumps, scheme {scheme:?}", last.jumps))];
    match model {
        HybridModel::Lambda(s) => {
            if let Some(xi) = lambda_xi {
                let target = lambda_target(s, xi)?;
                let tot: f64 = cells.iter().sum();
                let emp: Vec<f64> = cells.iter().map(|c| c / tot).collect();
                let tv = tv_distance(&emp, &target).map_err(runtime)?;
                entries.push(Entry::Check(ComparisonReport::new(name, "occupation_tv", Statistic::Tv, tv, 0.08).with_samples(n - burn, Some(seed))));
            } else {
                entries.push(Entry::note(name, "normalizer diverges; occupation not compared"));
            }
        }
        HybridModel::Switch(s) => {
            if let Some(h) = switch_hist {
                let target = h.expected_masses(|p| switch_marginal_density(s, p[0]), QuadOptions::default()).map_err(runtime)?;
                let tv = tv_distance(&h.probabilities().map_err(runtime)?, &target).map_err(runtime)?;
                entries.push(Entry::Check(ComparisonReport::new(name, "position_marginal_tv", Statistic::Tv, tv, 0.05).with_samples(n - burn, Some(seed))));
            }
        }
        _ => {}
    }
    Ok(Outcome { entries, tables: vec![traj] })
}
