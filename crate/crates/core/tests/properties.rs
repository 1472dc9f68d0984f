use proptest::prelude::*;

use renv_core::ctmc::{build_generator, StateSpace, TableKernel};
use renv_core::exclusion::{product_measure, Config, HeavyParams, LatticeSpec};
use renv_core::sde::{fold, Interval};
use renv_core::stationarity::tv_distance;

fn normalize(v: Vec<f64>) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}

proptest! {
    #[test]
    fn generator_rows_sum_to_zero(rates in prop::collection::vec(0.0f64..5.0, 30)) {
        let n = 6usize;
        let entries: Vec<(usize, usize, f64)> = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .zip(rates.iter().cycle())
            .map(|((i, j), &r)| (i, j, r))
            .collect();
        let kernel = TableKernel::new(entries).unwrap();
        let space = StateSpace::from_states(0..n).unwrap();
        let g = build_generator(&space, &kernel).unwrap().generator;
        for i in 0..n {
            let row: f64 = g.matrix().row(i).map(|(_, v)| v).sum();
            prop_assert!(row.abs() < 1e-12);
        }
    }

    #[test]
    fn fold_lands_inside_with_exact_pushes(lo in -5.0f64..5.0, w in 0.1f64..3.0, p in -30.0f64..30.0) {
        let iv = Interval::new(lo, lo + w).unwrap();
        let f = fold(&iv, p).unwrap();
        prop_assert!(iv.contains(f.x));
        prop_assert!((f.x - (p + f.dl - f.du)).abs() < 1e-9);
        prop_assert!(f.dl >= 0.0 && f.du >= 0.0);
        let h = Interval::half_line(lo);
        let g = fold(&h, p).unwrap();
        prop_assert!(g.x >= lo && g.du == 0.0);
        prop_assert!((g.x - (p - lo).abs() - lo).abs() < 1e-12);
    }

    #[test]
    fn tv_is_a_bounded_metric(
        a in prop::collection::vec(0.01f64..1.0, 8),
        b in prop::collection::vec(0.01f64..1.0, 8),
        c in prop::collection::vec(0.01f64..1.0, 8),
    ) {
        let (a, b, c) = (normalize(a), normalize(b), normalize(c));
        let ab = tv_distance(&a, &b).unwrap();
        let ba = tv_distance(&b, &a).unwrap();
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert!((ab - ba).abs() < 1e-15);
        prop_assert!(tv_distance(&a, &a).unwrap() == 0.0);
        prop_assert!(ab <= tv_distance(&a, &c).unwrap() + tv_distance(&c, &b).unwrap() + 1e-12);
    }

    #[test]
    fn product_measure_sums_to_one(phi in -2.0f64..2.0, lambda in 0.05f64..3.0, mu in 0.05f64..3.0, w in 1usize..4, h in 1usize..3) {
        let lattice = LatticeSpec::grid(w, h, 1.0, 1.0).unwrap();
        let p = HeavyParams::uniform(phi, lambda, mu, lattice.heavy_sites().len());
        for z in 0..lattice.heavy_sites().len() {
            let total: f64 = (0..(1u32 << lattice.sites())).map(|x| product_measure(&lattice, &p, &Config { z, x })).sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
        }
    }
}
