use renv_core::ctmc::{balance_residual, build_generator, gillespie_simulate, occupation_measure, stationary_solve, StateSpace, DEFAULT_MAX_EVENTS};
use renv_core::jackson::{combined_rates, kappa, partial_balance, traffic_solve, xi, EnvRates, EnvironmentSpec, NetworkSpec, QueueState};
use renv_core::stationarity::{tv_distance, ComparisonReport, Statistic};
use renv_core::{Normalizer, RngStream};

use super::{run_jobs, runtime, Job};
use crate::config::{Action, ConfigError, ExperimentConfig, JacksonConfig};
use crate::output::{num, Entry, Outcome, Table};
use crate::RunError;

const MODEL: &str = "jackson";
const EXACT: f64 = 1e-10;

pub fn build(c: &JacksonConfig) -> Result<EnvironmentSpec, ConfigError> {
    let nets = c
        .networks
        .iter()
        .enumerate()
        .map(|(k, n)| {
            NetworkSpec::new(n.lambda.clone(), n.mu.clone(), n.routing.clone())
                .map_err(|e| ConfigError::field(&format!("model.networks[{k}]"), e.to_string()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    EnvironmentSpec::new(nets, c.alpha.clone(), c.sigma.clone(), EnvRates::Constant(c.tau.clone()))
        .map_err(|e| ConfigError::field("model", e.to_string()))
}

pub fn run(cfg: &ExperimentConfig, c: &JacksonConfig, action: Action, seed: u64) -> Result<Outcome, RunError> {
    let env = build(c)?;
    let n_max = cfg.truncation.unwrap_or(6);
    match action {
        Action::Verify => verify(&env, n_max),
        Action::Xi => {
            let n = xi(&env);
            Ok(Outcome { entries: vec![super::hybrid::xi_entry(MODEL, &n, cfg)], tables: vec![] })
        }
        Action::Stationary => stationary(&env, n_max, cfg.tolerance.unwrap_or(0.05)),
        Action::Simulate => simulate(&env, cfg.t_end.unwrap_or(1e4), seed),
    }
}

fn state_row(z: usize, n: &[u32]) -> Vec<String> {
    let mut r = vec![z.to_string()];
    r.extend(n.iter().map(|v| v.to_string()));
    r
}

fn state_header(sites: usize, tail: &[&str]) -> Vec<String> {
    let mut h = vec![String::from("z")];
    h.extend((0..sites).map(|i| format!("n_{i}")));
    h.extend(tail.iter().map(|s| s.to_string()));
    h
}

fn verify(env: &EnvironmentSpec, n_max: u32) -> Result<Outcome, RunError> {
    let states = env.box_states(n_max);
    let count = states.len() as u64;
    let mut jobs: Vec<Job<'_>> = Vec::new();

    jobs.push(Box::new(|| {
        let k = combined_rates(env);
        let mut worst = 0.0f64;
        let mut worst_bad = 0.0f64;
        for s in &states {
            let r = balance_residual(|t: &(usize, QueueState)| kappa(env, t.0, &t.1), &k, s).map_err(runtime)?;
            worst = worst.max(r.abs());
            let tilt = |t: &(usize, QueueState)| kappa(env, t.0, &t.1) * (1.0 + 0.1 * t.1[0] as f64 + 0.2 * t.0 as f64);
            worst_bad = worst_bad.max(balance_residual(tilt, &k, s).map_err(runtime)?.abs());
        }
        Ok(Outcome {
            entries: vec![
                Entry::Check(ComparisonReport::new(MODEL, "wie_per_state", Statistic::MaxResidual, worst, EXACT).with_samples(count, None)),
                Entry::Check(ComparisonReport::negative_control(MODEL, "tilted_kappa_control", Statistic::MaxResidual, worst_bad, 1e-3)),
            ],
            tables: vec![],
        })
    }));

    jobs.push(Box::new(|| {
        let k = combined_rates(env);
        let (mut task, mut envr) = (0.0f64, 0.0f64);
        for (z, n) in &states {
            let p = partial_balance(&k, |z, n| kappa(env, z, n), *z, n).map_err(runtime)?;
            task = task.max(p.task_residual().abs());
            envr = envr.max(p.env_residual().abs());
        }
        Ok(Outcome {
            entries: vec![
                Entry::Check(ComparisonReport::new(MODEL, "partial_balance_task", Statistic::MaxResidual, task, EXACT).with_samples(count, None)),
                Entry::Check(ComparisonReport::new(MODEL, "partial_balance_env", Statistic::MaxResidual, envr, EXACT).with_samples(count, None)),
            ],
            tables: vec![],
        })
    }));

    if env.env_count() == 1 {
        jobs.push(Box::new(|| {
            let net = env.network(0);
            let rho = traffic_solve(net).map_err(runtime)?;
            let Normalizer::Finite { value: total, .. } = xi(env) else {
                return Ok(Outcome { entries: vec![Entry::note(MODEL, "single environment is not sub-critical; product form not checked")], tables: vec![] });
            };
            let mut worst = 0.0f64;
            for (z, n) in &states {
                let pf: f64 = (0..env.sites())
                    .map(|i| {
                        let r = rho[i] / net.mu()[i];
                        (1.0 - r) * r.powi(n[i] as i32)
                    })
                    .product();
                worst = worst.max((kappa(env, *z, n) / total - pf).abs());
            }
            Ok(Outcome {
                entries: vec![Entry::Check(ComparisonReport::new(MODEL, "single_environment_product_form", Statistic::AbsError, worst, 1e-14).with_samples(count, None))],
                tables: vec![],
            })
        }));
    }

    if env.alpha().iter().all(|a| *a == 0.0) && env.env_count() > 1 {
        jobs.push(Box::new(|| {
            let k = combined_rates(env);
            let mut worst = 0.0f64;
            for n in env.box_states(n_max).into_iter().filter(|(z, _)| *z == 0).map(|(_, n)| n) {
                let space = StateSpace::from_states((0..env.env_count()).map(|z| (z, n.clone()))).map_err(runtime)?;
                let st = stationary_solve(&build_generator(&space, &k).map_err(runtime)?.generator).map_err(runtime)?;
                let w: Vec<f64> = space.states().iter().map(|(z, n)| kappa(env, *z, n)).collect();
                let tot: f64 = w.iter().sum();
                let exp: Vec<f64> = w.iter().map(|v| v / tot).collect();
                worst = worst.max(st.pi.l1_distance(&exp));
            }
            Ok(Outcome { entries: vec![Entry::Check(ComparisonReport::new(MODEL, "frozen_slice_l1", Statistic::L1, worst, EXACT))], tables: vec![] })
        }));
    }

    let mut out = run_jobs(jobs)?;
    for w in env.routing_warnings().into_iter().chain(env.symmetry_warnings(n_max.min(3))) {
        out.entries.push(Entry::note(MODEL, w));
    }
    Ok(out)
}

fn normalized_kappa(env: &EnvironmentSpec, states: &[(usize, QueueState)]) -> Vec<f64> {
    let w: Vec<f64> = states.iter().map(|(z, n)| kappa(env, *z, n)).collect();
    let tot: f64 = w.iter().sum();
    w.into_iter().map(|v| v / tot).collect()
}

fn stationary(env: &EnvironmentSpec, n_max: u32, tol: f64) -> Result<Outcome, RunError> {
    let k = combined_rates(env);
    let space = StateSpace::from_states(env.box_states(n_max)).map_err(runtime)?;
    let built = build_generator(&space, &k).map_err(runtime)?;
    let st = stationary_solve(&built.generator).map_err(runtime)?;
    let target = normalized_kappa(env, space.states());
    let l1 = st.pi.l1_distance(&target);
    let mut t = Table { file: String::from("stationary.csv"), header: state_header(env.sites(), &["pi", "kappa_normalized"]), rows: vec![] };
    for (i, (z, n)) in space.states().iter().enumerate() {
        let mut r = state_row(*z, n);
        r.push(num(st.pi.as_slice()[i]));
        r.push(num(target[i]));
        t.push(r);
    }
    Ok(Outcome {
        entries: vec![
            Entry::Check(ComparisonReport::new(MODEL, "truncated_stationary_l1", Statistic::L1, l1, tol).with_samples(space.len() as u64, None)),
            Entry::note(MODEL, format!("{} states, {} transitions leaving the box dropped, solve residual {:e}", space.len(), built.dropped, st.residual)),
        ],
        tables: vec![t],
    })
}

fn simulate(env: &EnvironmentSpec, t_end: f64, seed: u64) -> Result<Outcome, RunError> {
    let k = combined_rates(env);
    let mut rng = RngStream::new(seed);
    let traj = gillespie_simulate(&k, (0usize, vec![0u32; env.sites()]), t_end, &mut rng, DEFAULT_MAX_EVENTS).map_err(runtime)?;
    let occ = occupation_measure(&traj, 0.01 * t_end).map_err(runtime)?;
    let states: Vec<(usize, QueueState)> = occ.keys().cloned().collect();
    let total: f64 = occ.values().sum();
    let emp: Vec<f64> = occ.values().map(|v| v / total).collect();
    let target = normalized_kappa(env, &states);
    let mut entries = Vec::new();
    let events = traj.events.len() as u64;
    if xi(env).is_divergent() {
        entries.push(Entry::note(MODEL, "normalizer diverges; occupation not compared"));
    } else {
        let tv = tv_distance(&emp, &target).map_err(runtime)?;
        entries.push(Entry::Check(ComparisonReport::new(MODEL, "occupation_tv", Statistic::Tv, tv, 0.05).with_samples(events, Some(rng.seed()))));
    }
    if traj.budget_exhausted {
        entries.push(Entry::note(MODEL, format!("event budget exhausted at {events} events")));
    }
    let mut t = Table { file: String::from("occupation.csv"), header: state_header(env.sites(), &["occupation", "kappa_normalized"]), rows: vec![] };
    for (i, (z, n)) in states.iter().enumerate() {
        let mut r = state_row(*z, n);
        r.push(num(emp[i]));
        r.push(num(target[i]));
        t.push(r);
    }
    Ok(Outcome { entries, tables: vec![t] })
}
