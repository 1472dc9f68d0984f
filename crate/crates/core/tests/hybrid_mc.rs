use std::sync::Arc;

use renv_core::constant_fn;
use renv_core::hybrid::*;
use renv_core::quadrature::{integrate, QuadOptions};
use renv_core::sde::Interval;
use renv_core::stationarity::{tv_distance, BatchMeans, Histogram};
use renv_core::RngStream;

const LAMBDA_BINS: usize = 10;
const N_CAP: u32 = 10;

fn lambda_cell(lam: f64, n: u32, eps: f64) -> usize {
    let b = (((lam - eps) / (1.0 - eps)) * LAMBDA_BINS as f64).floor().clamp(0.0, LAMBDA_BINS as f64 - 1.0) as usize;
    b * (N_CAP as usize + 1) + n.min(N_CAP) as usize
}

#[test]
fn lambda_queue_occupation_matches_density() {
    let eps = 0.5;
    let spec = LambdaSpec::new(eps, Arc::new(|_| 0.3), Arc::new(|l| 1.0 / (1.0 - l)), constant_fn(1.0)).unwrap();
    let xi = xi_lambda(&spec, 1e-10).unwrap().value().unwrap();
    let mut target = vec![0.0; LAMBDA_BINS * (N_CAP as usize + 1)];
    let w = (1.0 - eps) / LAMBDA_BINS as f64;
    for b in 0..LAMBDA_BINS {
        let (lo, hi) = (eps + w * b as f64, eps + w * (b + 1) as f64);
        for n in 0..=N_CAP {
            // the last column collects n >= N_CAP, whose density sums to lambda^N_CAP
            let f = |l: f64| if n < N_CAP { l.powi(n as i32) * (1.0 - l) } else { l.powi(N_CAP as i32) };
            target[b * (N_CAP as usize + 1) + n as usize] = integrate(f, lo, hi, QuadOptions::default()).unwrap().value / xi;
        }
    }
    assert!((target.iter().sum::<f64>() - 1.0).abs() < 1e-9);

    let model = HybridModel::Lambda(spec);
    let mut rng = RngStream::new(20);
    let steps = 1_000_000u64;
    let burn = 10_000u64;
    let mut counts = vec![0.0; target.len()];
    let mut k = 0;
    simulate_model_with(&model, model.initial_state(), steps, 0.05, u64::MAX, Scheme::Adjusted, &mut rng, |s| {
        k += 1;
        if k > burn {
            counts[lambda_cell(s.env[0], s.queue, eps)] += 1.0;
        }
    })
    .unwrap();
    let tot: f64 = counts.iter().sum();
    let emp: Vec<f64> = counts.iter().map(|c| c / tot).collect();
    let tv = tv_distance(&emp, &target).unwrap();
    println!("lambda-queue TV = {tv}");
    assert!(tv < 0.08, "TV {tv}");
}

#[test]
fn switch_position_marginal_matches_density() {
    let spec = SwitchSpec::new(
        Arc::new(|z| if z > 0.0 { 1.0 } else { 2.0 }),
        constant_fn(1.0),
        constant_fn(1.0),
        Interval::new(-1.0, 1.0).unwrap(),
    )
    .unwrap();
    let mut hist = Histogram::uniform_1d(-1.0, 1.0, 20).unwrap();
    let model = HybridModel::Switch(spec.clone());
    let mut rng = RngStream::new(21);
    let mut k = 0;
    simulate_model(&model, model.initial_state(), 1_000_000, 1e-3, u64::MAX, &mut rng, |s| {
        k += 1;
        if k > 10_000 {
            hist.add(&s.base, 1.0);
        }
    })
    .unwrap();
    let target = hist.expected_masses(|p| switch_marginal_density(&spec, p[0]), QuadOptions::default()).unwrap();
    let tv = tv_distance(&hist.probabilities().unwrap(), &target).unwrap();
    println!("switch TV = {tv}");
    assert!(tv < 0.08, "TV {tv}");
}

fn wedge_means(covering: bool) -> [(f64, f64); 2] {
    let mut rng = RngStream::new(if covering { 22 } else { 23 });
    let mut bl = BatchMeans::new(10_000);
    let mut bm = BatchMeans::new(10_000);
    let obs = |l: f64, m: f64| {
        bl.push(l);
        bm.push(m);
    };
    if covering {
        simulate_wedge_covering(-1.0, (0.5, 1.0), 2_000_000, 1e-3, &mut rng, obs).unwrap();
    } else {
        simulate_wedge_direct(-1.0, (0.5, 1.0), 2_000_000, 1e-3, &mut rng, obs).unwrap();
    }
    [(bl.mean(), bl.standard_error()), (bm.mean(), bm.standard_error())]
}

#[test]
fn wedge_covering_and_direct_reflection_agree() {
    let cov = wedge_means(true);
    let dir = wedge_means(false);
    for (i, target) in [0.25, 0.75].into_iter().enumerate() {
        let (a, sa) = cov[i];
        let (b, sb) = dir[i];
        println!("wedge coord {i}: covering {a} +- {sa}, direct {b} +- {sb}, exact {target}");
        assert!((a - b).abs() < 3.0 * (sa * sa + sb * sb).sqrt(), "coord {i}: {a} vs {b}");
        assert!((a - target).abs() < 3.0 * sa + 0.01, "coord {i}: {a}");
    }
}
