use renv_core::ctmc::{build_generator, gillespie_simulate, occupation_measure, stationary_solve, StateSpace, DEFAULT_MAX_EVENTS};
use renv_core::exclusion::{combined_kernel, exact_check, kappa, Config, HeavyParams, JumpConvention, LatticeSpec, MAX_EXACT_SITES};
use renv_core::stationarity::{tv_distance, ComparisonReport, Statistic};
use renv_core::{Normalizer, RngStream};

use super::{run_jobs, runtime, Job};
use crate::config::{Action, ConfigError, Convention, ExclusionConfig, ExperimentConfig};
use crate::output::{num, Entry, Outcome, Table};
use crate::RunError;

const MODEL: &str = "exclusion";
const EXACT: f64 = 1e-10;

pub fn build(c: &ExclusionConfig) -> Result<(LatticeSpec, HeavyParams, JumpConvention), ConfigError> {
    if c.width * c.height > MAX_EXACT_SITES {
        return Err(ConfigError::field("model.width", format!("at most {MAX_EXACT_SITES} sites are supported")));
    }
    let lattice = LatticeSpec::grid(c.width, c.height, c.beta, c.tau).map_err(|e| ConfigError::field("model", e.to_string()))?;
    let k = lattice.heavy_sites().len();
    let mut p = HeavyParams::uniform(c.phi, c.lambda, c.mu, k);
    if let Some(a) = &c.alpha {
        p.alpha = a.clone();
    }
    if let Some(s) = &c.sigma {
        p.sigma = s.clone();
    }
    p.validate(&lattice).map_err(|e| ConfigError::field("model", e.to_string()))?;
    let conv = match c.convention {
        Convention::PlainOutOfHeavy => JumpConvention::PlainOutOfHeavy,
        Convention::NoJumpsOutOfHeavy => JumpConvention::NoJumpsOutOfHeavy,
    };
    Ok((lattice, p, conv))
}

pub fn run(cfg: &ExperimentConfig, c: &ExclusionConfig, action: Action, seed: u64) -> Result<Outcome, RunError> {
    let (lattice, p, conv) = build(c)?;
    match action {
        Action::Verify => verify(&lattice, &p, conv),
        Action::Stationary => stationary(&lattice, &p, conv, cfg.tolerance.unwrap_or(EXACT)),
        Action::Xi => {
            let total: f64 = lattice.all_configs().iter().map(|s| kappa(&lattice, &p, s)).sum();
            let n = Normalizer::Finite { value: total, error_bound: 0.0 };
            Ok(Outcome { entries: vec![super::hybrid::xi_entry(MODEL, &n, cfg)], tables: vec![] })
        }
        Action::Simulate => simulate(&lattice, &p, conv, cfg.t_end.unwrap_or(1e4), seed),
    }
}

/// Same lattice with the heavy jump rate between the first bonded pair of
/// heavy positions made asymmetric.
fn asymmetric(lattice: &LatticeSpec) -> Option<LatticeSpec> {
    let heavy = lattice.heavy_sites().to_vec();
    let k = heavy.len();
    let mut tau: Vec<Vec<f64>> = (0..k).map(|a| (0..k).map(|b| lattice.tau(a, b)).collect()).collect();
    let (a, b) = (0..k).flat_map(|a| (0..k).map(move |b| (a, b))).find(|&(a, b)| a != b && tau[a][b] > 0.0)?;
    tau[a][b] *= 3.0;
    let n = lattice.sites();
    let bonds: Vec<(usize, usize, f64)> =
        (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))).filter(|&(i, j)| lattice.beta(i, j) > 0.0).map(|(i, j)| (i, j, lattice.beta(i, j))).collect();
    LatticeSpec::new_unchecked(lattice.coords().to_vec(), &bonds, heavy, tau).ok()
}

fn verify(lattice: &LatticeSpec, p: &HeavyParams, conv: JumpConvention) -> Result<Outcome, RunError> {
    let mut jobs: Vec<Job<'_>> = Vec::new();
    jobs.push(Box::new(move || {
        let r = exact_check(lattice, p, conv).map_err(runtime)?;
        let n = r.states as u64;
        Ok(Outcome {
            entries: vec![
                Entry::Check(ComparisonReport::new(MODEL, "exact_stationary_l1", Statistic::L1, r.l1_error, EXACT).with_samples(n, None)),
                Entry::Check(ComparisonReport::new(MODEL, "kappa_balance", Statistic::MaxResidual, r.kappa_residual, EXACT).with_samples(n, None)),
            ],
            tables: vec![],
        })
    }));
    jobs.push(Box::new(move || {
        let Some(bad) = asymmetric(lattice) else {
            return Ok(Outcome { entries: vec![Entry::note(MODEL, "fewer than two heavy positions; asymmetric control skipped")], tables: vec![] });
        };
        let r = exact_check(&bad, p, conv).map_err(runtime)?;
        Ok(Outcome { entries: vec![Entry::Check(ComparisonReport::negative_control(MODEL, "asymmetric_tau_control", Statistic::L1, r.l1_error, 1e-3))], tables: vec![] })
    }));
    run_jobs(jobs)
}

fn normalized_kappa(lattice: &LatticeSpec, p: &HeavyParams, states: &[Config]) -> Vec<f64> {
    let w: Vec<f64> = states.iter().map(|s| kappa(lattice, p, s)).collect();
    let tot: f64 = w.iter().sum();
    w.into_iter().map(|v| v / tot).collect()
}

fn config_table(file: &str, lattice: &LatticeSpec, states: &[Config], cols: [(&str, &[f64]); 2]) -> Table {
    let mut header = vec!["z", "heavy_site"];
    let sites: Vec<String> = (0..lattice.sites()).map(|i| format!("x_{i}")).collect();
    header.extend(sites.iter().map(|s| s.as_str()));
    header.extend([cols[0].0, cols[1].0]);
    let mut t = Table::new(file, &header);
    for (k, s) in states.iter().enumerate() {
        let mut r = vec![s.z.to_string(), lattice.heavy_sites()[s.z].to_string()];
        r.extend((0..lattice.sites()).map(|i| u8::from(s.occupied(i)).to_string()));
        r.push(num(cols[0].1[k]));
        r.push(num(cols[1].1[k]));
        t.push(r);
    }
    t
}

fn stationary(lattice: &LatticeSpec, p: &HeavyParams, conv: JumpConvention, tol: f64) -> Result<Outcome, RunError> {
    let k = combined_kernel(lattice, p, conv).map_err(runtime)?;
    let space = StateSpace::from_states(lattice.all_configs()).map_err(runtime)?;
    let built = build_generator(&space, &k).map_err(runtime)?;
    let st = stationary_solve(&built.generator).map_err(runtime)?;
    let target = normalized_kappa(lattice, p, space.states());
    let l1 = st.pi.l1_distance(&target);
    let t = config_table("stationary.csv", lattice, space.states(), [("pi", st.pi.as_slice()), ("kappa_normalized", &target)]);
    Ok(Outcome {
        entries: vec![Entry::Check(ComparisonReport::new(MODEL, "stationary_l1", Statistic::L1, l1, tol).with_samples(space.len() as u64, None))],
        tables: vec![t],
    })
}

fn simulate(lattice: &LatticeSpec, p: &HeavyParams, conv: JumpConvention, t_end: f64, seed: u64) -> Result<Outcome, RunError> {
    let k = combined_kernel(lattice, p, conv).map_err(runtime)?;
    let mut rng = RngStream::new(seed);
    let traj = gillespie_simulate(&k, Config { z: 0, x: 0 }, t_end, &mut rng, DEFAULT_MAX_EVENTS).map_err(runtime)?;
    let occ = occupation_measure(&traj, 0.01 * t_end).map_err(runtime)?;
    let states = lattice.all_configs();
    let total: f64 = occ.values().sum();
    let emp: Vec<f64> = states.iter().map(|s| occ.get(s).copied().unwrap_or(0.0) / total).collect();
    let target = normalized_kappa(lattice, p, &states);
    let tv = tv_distance(&emp, &target).map_err(runtime)?;
    let mut entries = vec![Entry::Check(
        ComparisonReport::new(MODEL, "occupation_tv", Statistic::Tv, tv, 0.05).with_samples(traj.events.len() as u64, Some(seed)),
    )];
    if traj.budget_exhausted {
        entries.push(Entry::note(MODEL, "event budget exhausted"));
    }
    Ok(Outcome { entries, tables: vec![config_table("occupation.csv", lattice, &states, [("occupation", &emp), ("kappa_normalized", &target)])] })
}
