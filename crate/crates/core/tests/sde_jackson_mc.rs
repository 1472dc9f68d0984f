use std::collections::BTreeMap;

use renv_core::ctmc::{gillespie_simulate, occupation_measure};
use renv_core::jackson::{combined_rates, kappa, EnvRates, EnvironmentSpec, NetworkSpec};
use renv_core::sde::{euler_reflect_step, run_reflected, skorohod_map, Interval};
use renv_core::special::normal_cdf;
use renv_core::stationarity::{ks_critical_1pct, ks_statistic, BatchMeans};
use renv_core::RngStream;

#[test]
fn folded_walk_has_the_law_of_abs_w() {
    let n = 100_000;
    let iv = Interval::half_line(0.0);
    let mut rng = RngStream::new(31);
    let mut samples: Vec<f64> = (0..n)
        .map(|_| {
            let mut z = 0.0;
            for _ in 0..100 {
                z = euler_reflect_step(z, 0.0, 1.0, 0.01, rng.gaussian(), &iv).unwrap().x;
            }
            z
        })
        .collect();
    let d = ks_statistic(&mut samples, |x| 2.0 * normal_cdf(x) - 1.0);
    println!("KS D = {d}, 1% critical = {}", ks_critical_1pct(n));
    assert!(d < ks_critical_1pct(n));
}

#[test]
fn skorohod_identity_holds_pathwise() {
    let mut rng = RngStream::new(32);
    let mut w = Vec::new();
    let mut acc = 0.0;
    for _ in 0..10_000 {
        acc += 0.01 * rng.gaussian();
        w.push(acc);
    }
    let (z, l) = skorohod_map(&w, 0.05);
    for k in 0..w.len() {
        assert!(z[k] >= -1e-15);
        assert!((z[k] - (0.05 + w[k] + l[k])).abs() < 1e-12);
        if k > 0 && z[k] > 1e-12 {
            assert_eq!(l[k], l[k - 1]);
        }
    }
}

#[test]
fn reflected_drifted_bm_has_mean_half() {
    let mut rng = RngStream::new(33);
    let mut bm = BatchMeans::new(20_000);
    let mut k = 0;
    run_reflected(|_| -1.0, |_| 1.0, &Interval::half_line(0.0), 0.0, 4_000_000, 1e-3, &mut rng, |_, z| {
        k += 1;
        if k > 10_000 {
            bm.push(z);
        }
    })
    .unwrap();
    println!("reflected BM mean {} +- {}", bm.mean(), bm.standard_error());
    assert!((bm.mean() - 0.5).abs() < 3.0 * bm.standard_error());
}

#[test]
fn gillespie_occupation_matches_kappa() {
    let net = |l: f64| NetworkSpec::new(vec![l, 0.0], vec![2.0, 2.0], vec![vec![0.0, 0.5], vec![0.0, 0.0]]).unwrap();
    let env = EnvironmentSpec::new(
        vec![net(1.0), net(0.6)],
        vec![1.0, 1.0],
        vec![1.0, 2.0],
        EnvRates::Constant(vec![vec![0.0, 1.0], vec![1.0, 0.0]]),
    )
    .unwrap();
    let kernel = combined_rates(&env);
    let mut rng = RngStream::new(34);
    let traj = gillespie_simulate(&kernel, (0usize, vec![0u32, 0]), 250_000.0, &mut rng, 2_000_000).unwrap();
    assert!(traj.events.len() > 1_000_000, "{} events", traj.events.len());
    let occ: BTreeMap<_, f64> = occupation_measure(&traj, 100.0).unwrap();
    let total: f64 = occ.values().sum();
    let weights: Vec<f64> = occ.keys().map(|(z, n)| kappa(&env, *z, n)).collect();
    let wsum: f64 = weights.iter().sum();
    let tv = 0.5 * occ.values().zip(&weights).map(|(o, w)| (o / total - w / wsum).abs()).sum::<f64>();
    println!("Jackson occupation TV = {tv} over {} states", occ.len());
    assert!(tv < 0.05);
}
