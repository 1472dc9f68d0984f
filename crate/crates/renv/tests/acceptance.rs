use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use renv::config::{Action, ExperimentConfig};
use renv::fixtures::{find, FIXTURES};
use renv::output::{Entry, Outcome};
use renv_core::ouenv::{density_cir, density_ou, make_model, reflected_bm_gate, simulate_cir_full_truncation, OuModel};
use renv_core::quadrature::{integrate_real_line, integrate_to_infinity, QuadOptions};
use renv_core::sde::{run_reflected, Interval};
use renv_core::stationarity::{BatchMeans, ComparisonReport};
use renv_core::RngStream;

type Verdict = Result<String, String>;
type Criterion = (&'static str, fn() -> Verdict);

fn config(id: &str, action: Option<Action>) -> ExperimentConfig {
    let mut c = find(id).unwrap_or_else(|| panic!("no fixture {id}")).config().unwrap();
    if let Some(a) = action {
        c.action = a;
    }
    c
}

fn timed(c: &ExperimentConfig) -> Result<(Outcome, Duration), String> {
    let t = Instant::now();
    let out = renv::execute(c, c.seed()).map_err(|e| e.to_string())?;
    Ok((out, t.elapsed()))
}

fn check<'a>(out: &'a Outcome, test: &str) -> Result<&'a ComparisonReport, String> {
    out.entries
        .iter()
        .find_map(|e| match e {
            Entry::Check(c) if c.test == test => Some(c),
            _ => None,
        })
        .ok_or_else(|| format!("no `{test}` check in report"))
}

/// Named checks must all pass; returns their values.
fn require(out: &Outcome, tests: &[&str]) -> Result<String, String> {
    let mut parts = Vec::new();
    for t in tests {
        let c = check(out, t)?;
        if !c.pass {
            return Err(format!("{t} = {:e} vs threshold {:e}", c.value.abs(), c.threshold.abs()));
        }
        parts.push(format!("{t}={:.2e}", c.value.abs()));
    }
    Ok(parts.join(" "))
}

fn within(label: &str, elapsed: Duration, limit: Duration) -> Result<(), String> {
    if elapsed < limit {
        Ok(())
    } else {
        Err(format!("{label} took {elapsed:.2?}, limit {limit:?}"))
    }
}

fn two_site_balance() -> Verdict {
    let (out, dt) = timed(&config("thm-2.1-two-site", None))?;
    within("verify", dt, Duration::from_secs(1))?;
    let s = require(&out, &["wie_per_state", "partial_balance_task", "partial_balance_env", "tilted_kappa_control"])?;
    Ok(format!("{s} in {dt:.2?}"))
}

fn jackson_degenerate() -> Verdict {
    let (single, _) = timed(&config("eq-2.3-single-environment", None))?;
    let a = require(&single, &["single_environment_product_form", "wie_per_state"])?;
    let (frozen, _) = timed(&config("rem-2.1-frozen-slice", None))?;
    let b = require(&frozen, &["frozen_slice_l1"])?;
    Ok(format!("{a} {b}"))
}

fn exclusion_exact() -> Verdict {
    let t = Instant::now();
    let mut parts = Vec::new();
    for id in ["thm-3.1-pair", "thm-3.1-grid-2x2"] {
        let (out, _) = timed(&config(id, None))?;
        parts.push(format!("{id}: {}", require(&out, &["exact_stationary_l1", "kappa_balance", "asymmetric_tau_control"])?));
    }
    within("exclusion fixtures", t.elapsed(), Duration::from_secs(10))?;
    Ok(parts.join("; "))
}

fn hybrid_formulas() -> Verdict {
    let mut parts = Vec::new();
    for id in ["thm-5.1-lambda-queue", "thm-5.2-mu-queue", "thm-5.3-wedge", "thm-5.4-switch", "sec-5c-two-component"] {
        let (out, _) = timed(&config(id, None))?;
        require(&out, &["wie_diffusion", "wie_recurrence", "perturbed_kappa_control"])?;
        let c = check(&out, "wie_diffusion")?;
        parts.push(format!("{}={:.1e}", c.model, c.value));
    }
    let (xi, _) = timed(&config("thm-5.1-lambda-queue", Some(Action::Xi)))?;
    match &xi.entries[..] {
        [Entry::Normalizer { status: "finite", value: Some(v), pass: true, .. }] if (v - 0.5).abs() < 1e-8 => parts.push(format!("xi={v}")),
        other => return Err(format!("xi for sigma = 1/(1 - lambda): {other:?}")),
    }
    let (div, _) = timed(&config("sec-5a1-lambda-divergent", None))?;
    match &div.entries[..] {
        [Entry::Normalizer { status: "divergent", pass: true, .. }] => parts.push(String::from("xi(sigma=1)=divergent")),
        other => return Err(format!("xi for sigma = 1: {other:?}")),
    }
    Ok(parts.join(" "))
}

const OU_FIXTURES: [&str; 3] = ["thm-6.1-model-B-rectangle", "thm-6.1-model-C-rectangle", "thm-6.1-model-D-rectangle"];

fn ou_quadrature() -> Verdict {
    let t = Instant::now();
    let mut parts = Vec::new();
    for id in OU_FIXTURES {
        let (out, _) = timed(&config(id, None))?;
        require(&out, &["wie_quadrature_neumann", "non_neumann_control_x^2", "non_neumann_control_z"])?;
        parts.push(format!("{:.1e}", check(&out, "wie_quadrature_neumann")?.value));
    }
    within("quadrature", t.elapsed(), Duration::from_secs(30))?;
    Ok(format!("max |int R phi d kappa| B/C/D = {}", parts.join("/")))
}

fn ou_adjoint() -> Verdict {
    let mut parts = Vec::new();
    for id in OU_FIXTURES {
        let (out, _) = timed(&config(id, None))?;
        parts.push(require(&out, &["adjoint_residual_base", "adjoint_residual_env", "perturbed_m_control", "perturbed_w_control"])?);
    }
    Ok(parts.join("; "))
}

fn monte_carlo() -> Verdict {
    let t = Instant::now();
    let c = config("thm-6.1-model-C-rectangle", Some(Action::Simulate));
    if c.dt != Some(1e-3) || c.t_end != Some(1e4) {
        return Err(String::from("model C fixture is not 1e7 steps of 1e-3"));
    }
    let (out, _) = timed(&c)?;
    let tv = require(&out, &["occupation_tv"])?;

    let z = 2.0;
    let mut rng = RngStream::new(9);
    let mut ou = BatchMeans::new(20_000);
    let mut k = 0;
    run_reflected(|x| -x, |_| z, &Interval::real_line(), 0.0, 4_000_000, 1e-3, &mut rng, |_, x| {
        k += 1;
        if k > 10_000 {
            ou.push(x * x);
        }
    })
    .map_err(|e| e.to_string())?;
    let ou_z = (ou.mean() - z * z / 2.0).abs() / ou.standard_error();

    let (a, b) = (1.0, 1.0);
    let mut rng = RngStream::new(10);
    let (mut m1, mut m2) = (BatchMeans::new(20_000), BatchMeans::new(20_000));
    let mut k = 0;
    simulate_cir_full_truncation(a, b, 1.0, 4_000_000, 1e-3, &mut rng, |v| {
        k += 1;
        if k > 10_000 {
            m1.push(v);
            m2.push(v * v);
        }
    })
    .map_err(|e| e.to_string())?;
    // Gamma(2ab, 2a): mean b, second moment b^2 + b / (2a)
    let z1 = (m1.mean() - b).abs() / m1.standard_error();
    let z2 = (m2.mean() - (b * b + b / (2.0 * a))).abs() / m2.standard_error();
    within("Monte Carlo", t.elapsed(), Duration::from_secs(300))?;
    let s = format!("{tv}, OU var {:.2} SE, CIR moments {z1:.2}/{z2:.2} SE in {:.1?}", ou_z, t.elapsed());
    if ou_z < 3.0 && z1 < 3.0 && z2 < 3.0 {
        Ok(s)
    } else {
        Err(s)
    }
}

fn density_oracles() -> Verdict {
    let q = QuadOptions::default();
    let err = |e: renv_core::quadrature::QuadError| e.to_string();
    let mut worst_mass = 0.0f64;
    for &(t, z, x) in &[(0.1, 1.0, 0.3), (1.0, 2.0, -1.0), (5.0, 0.5, 2.0)] {
        worst_mass = worst_mass.max((integrate_real_line(|y| density_ou(t, x, y, z), q).map_err(err)?.value - 1.0).abs());
    }
    let ck = integrate_real_line(|u| density_ou(0.5, 0.3, u, 1.0) * density_ou(0.5, u, -0.4, 1.0), q).map_err(err)?.value;
    let ck_err = (ck - density_ou(1.0, 0.3, -0.4, 1.0)).abs();

    let cir = |t: f64, z: f64, y: f64| density_cir(t, z, y, 1.0, 1.0).unwrap_or(f64::NAN);
    let cir_mass = (integrate_to_infinity(|y| cir(1.0, 1.0, y), 0.0, q).map_err(err)?.value - 1.0).abs();
    let d = make_model(OuModel::D { a: 1.0, b: 1.0 }).map_err(|e| e.to_string())?;
    let w_total = integrate_to_infinity(|y| (d.w)(y), 0.0, q).map_err(err)?.value;
    let mut limit_err = 0.0f64;
    for k in 1..40 {
        let y = 0.1 * k as f64;
        limit_err = limit_err.max((cir(50.0, 1.0, y) - (d.w)(y) / w_total).abs());
    }
    let gate = reflected_bm_gate(1.0, 0.5, -1.0, 1e-6);
    println!("    reflected BM density gate: enabled = {}, {}", gate.enabled, gate.detail);
    let s = format!("OU mass {worst_mass:.1e}, OU CK {ck_err:.1e}, CIR mass {cir_mass:.1e}, CIR limit {limit_err:.1e}, gate enabled = {}", gate.enabled);
    if worst_mass < 1e-10 && ck_err < 1e-8 && cir_mass < 1e-8 && limit_err < 1e-6 {
        Ok(s)
    } else {
        Err(s)
    }
}

fn fd_cross_validation() -> Verdict {
    let c = config("thm-6.1-model-C-rectangle", Some(Action::Stationary));
    if c.truncation != Some(60) {
        return Err(String::from("model C fixture grid is not 60x60"));
    }
    let (out, _) = timed(&c)?;
    require(&out, &["finite_difference_l1"])
}

fn same_files(a: &Path, b: &Path) -> Result<usize, String> {
    let mut names: Vec<_> = fs::read_dir(a).map_err(|e| e.to_string())?.map(|e| e.unwrap().file_name()).collect();
    names.sort();
    for n in &names {
        let x = fs::read(a.join(n)).map_err(|e| e.to_string())?;
        let y = fs::read(b.join(n)).map_err(|e| format!("{n:?}: {e}"))?;
        if x != y {
            return Err(format!("{n:?} differs between reruns"));
        }
    }
    Ok(names.len())
}

fn reproducibility() -> Verdict {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut runs: Vec<ExperimentConfig> = FIXTURES.iter().map(|f| f.config().unwrap()).collect();
    for (id, t_end) in [("thm-2.1-two-site", 2000.0), ("thm-3.1-grid-2x2", 2000.0), ("thm-5.1-lambda-queue", 500.0), ("thm-6.1-model-C-rectangle", 100.0)] {
        let mut c = config(id, Some(Action::Simulate));
        c.t_end = Some(t_end);
        runs.push(c);
    }
    runs.push(config("thm-6.1-model-C-rectangle", Some(Action::Stationary)));
    let mut files = 0;
    for (i, c) in runs.iter().enumerate() {
        let a = dir.path().join(format!("{i}a"));
        let b = dir.path().join(format!("{i}b"));
        renv::run(c, c.seed(), &a).map_err(|e| e.to_string())?;
        renv::run(c, c.seed(), &b).map_err(|e| e.to_string())?;
        files += same_files(&a, &b)?;
    }
    Ok(format!("{} runs, {files} files byte-identical", runs.len()))
}

#[test]
fn acceptance_criteria() {
    let criteria: [Criterion; 10] = [
        ("two-site WIE and partial balances", two_site_balance),
        ("Jackson degenerate cases", jackson_degenerate),
        ("exclusion exact stationary law", exclusion_exact),
        ("hybrid kappa formulas and normalizers", hybrid_formulas),
        ("OU quadrature WIE", ou_quadrature),
        ("OU adjoint residuals", ou_adjoint),
        ("Monte Carlo stationarity", monte_carlo),
        ("density oracles", density_oracles),
        ("finite-difference cross-validation", fd_cross_validation),
        ("reproducibility", reproducibility),
    ];
    let mut failed = Vec::new();
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let v = f();
        let tag = if v.is_ok() { "PASS" } else { "FAIL" };
        let detail = v.as_ref().unwrap_or_else(|e| e);
        println!("[{tag}] {} {name}: {detail} ({:.2?})", i + 1, t.elapsed());
        if v.is_err() {
            failed.push(i + 1);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
