use renv_core::ouenv::*;
use renv_core::quadrature::QuadOptions;
use renv_core::sde::{run_reflected, Interval};
use renv_core::stationarity::{tv_distance, BatchMeans, Histogram};
use renv_core::RngStream;

fn models() -> Vec<CombinedDiffusionSpec> {
    [OuModel::B { b: -0.5 }, OuModel::C, OuModel::D { a: 1.0, b: 1.0 }].into_iter().map(|m| make_model(m).unwrap()).collect()
}

#[test]
fn neumann_family_integrates_to_zero_on_each_rectangle() {
    let opts = QuadOptions::with_tol(1e-11, 1e-11);
    for spec in models() {
        let fam = neumann_family(&spec);
        let refs: Vec<&dyn TestFunction> = fam.iter().map(|f| f as &dyn TestFunction).collect();
        let recs = wie_quadrature(&spec, &refs, opts).unwrap();
        let worst = max_abs_integral(&recs);
        println!("{:?}: max |int R phi d kappa| = {worst:e}", spec.model);
        assert!(worst < 1e-6);
        let x2 = Monomial { pz: 0, px: 2 };
        let z1 = Monomial { pz: 1, px: 0 };
        let bad = wie_quadrature(&spec, &[&x2, &z1], opts).unwrap();
        assert!(max_abs_integral(&bad) > 1e-3, "{bad:?}");
    }
}

#[test]
fn model_c_occupation_matches_kappa() {
    let spec = make_model(OuModel::C).unwrap();
    let mut hist = Histogram::uniform_2d((1.0, 2.0, 20), (-1.0, 1.0, 20)).unwrap();
    let mut rng = RngStream::new(7);
    let mut k = 0u64;
    simulate_rect_system(&spec, (1.5, 0.0), 10_000_000, 1e-3, &mut rng, |s| {
        k += 1;
        if k > 100_000 {
            hist.add(&[s.z, s.x], 1.0);
        }
    })
    .unwrap();
    let target = hist.expected_masses(|p| kappa_density(&spec, p[0], p[1]), QuadOptions::with_tol(1e-12, 1e-10)).unwrap();
    let tv = tv_distance(&hist.probabilities().unwrap(), &target).unwrap();
    println!("model C TV = {tv}");
    assert!(tv < 0.05);
}

#[test]
fn frozen_volatility_gives_truncated_gaussian() {
    let spec = make_model(OuModel::C).unwrap().with_sigma(renv_core::constant_fn(0.0));
    let mut hist = Histogram::uniform_1d(-1.0, 1.0, 20).unwrap();
    let mut rng = RngStream::new(8);
    let end = simulate_rect_system(&spec, (1.5, 0.0), 2_000_000, 1e-3, &mut rng, |s| hist.add(&[s.x], 1.0)).unwrap();
    assert_eq!(end.z, 1.5);
    let target = hist.expected_masses(|p| (-(p[0] * p[0]) / 2.25).exp(), QuadOptions::default()).unwrap();
    let s: f64 = target.iter().sum();
    let target: Vec<f64> = target.iter().map(|t| t / s).collect();
    let tv = tv_distance(&hist.probabilities().unwrap(), &target).unwrap();
    assert!(tv < 0.05, "TV {tv}");
}

#[test]
fn ou_variance_matches_half_z_squared() {
    let z = 2.0;
    let mut rng = RngStream::new(9);
    let mut bm = BatchMeans::new(20_000);
    let mut k = 0;
    run_reflected(|x| -x, |_| z, &Interval::real_line(), 0.0, 4_000_000, 1e-3, &mut rng, |_, x| {
        k += 1;
        if k > 10_000 {
            bm.push(x * x);
        }
    })
    .unwrap();
    println!("OU second moment {} +- {}", bm.mean(), bm.standard_error());
    assert!((bm.mean() - z * z / 2.0).abs() < 3.0 * bm.standard_error());
}

#[test]
fn cir_moments_match_gamma() {
    let (a, b) = (1.0, 1.0);
    let mut rng = RngStream::new(10);
    let mut m1 = BatchMeans::new(20_000);
    let mut m2 = BatchMeans::new(20_000);
    let mut k = 0;
    simulate_cir_full_truncation(a, b, 1.0, 4_000_000, 1e-3, &mut rng, |z| {
        k += 1;
        if k > 10_000 {
            m1.push(z);
            m2.push(z * z);
        }
    })
    .unwrap();
    // Gamma(shape 2ab, rate 2a): mean b, second moment b^2 + b / (2a)
    let (e1, e2) = (b, b * b + b / (2.0 * a));
    println!("CIR moments {} +- {}, {} +- {}", m1.mean(), m1.standard_error(), m2.mean(), m2.standard_error());
    assert!((m1.mean() - e1).abs() < 3.0 * m1.standard_error());
    assert!((m2.mean() - e2).abs() < 3.0 * m2.standard_error());
}

#[test]
fn finite_difference_chain_matches_kappa() {
    let spec = make_model(OuModel::C).unwrap();
    let (l1, residual) = fd_cross_check(&spec, 60, 60).unwrap();
    println!("FD 60x60 L1 = {l1}, residual = {residual:e}");
    assert!(l1 < 0.05);
}

#[test]
fn reflected_bm_gate_outcome_is_reported() {
    let g = reflected_bm_gate(1.0, 0.5, -1.0, 1e-6);
    println!("reflected BM gate: enabled = {}, {}", g.enabled, g.detail);
}
