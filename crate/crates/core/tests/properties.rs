//! Invariants checked on random inputs.

use beltrami::cli::{ExperimentConfig, MetricSpec};
use beltrami::mesh::PeriodicMesh;
use beltrami::metric::Sym3;
use beltrami::oracle::{half_space, FourierOracle};
use beltrami::solver::{closed_spectrum, coclosed_spectrum, Discretization, SolverOptions, Window};
use beltrami::tracking::is_transposition;
use proptest::prelude::*;

fn spd() -> impl Strategy<Value = Sym3> {
    prop::array::uniform6(-0.3f64..0.3).prop_map(|a| Sym3::identity() + Sym3(a))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn oracle_scales_exactly(g in spd(), c in 0.3f64..3.0) {
        let a = FourierOracle::new(g, 1).unwrap();
        let b = FourierOracle::new(g * (c * c), 1).unwrap();
        for (x, y) in a.eigenvalues().iter().zip(b.eigenvalues()) {
            prop_assert!((x / c - y).abs() <= 1e-12 * y.abs().max(1.0));
        }
        for (x, y) in a.closed_eigenvalues().iter().zip(b.closed_eigenvalues()) {
            prop_assert!((x / (c * c) - y).abs() <= 1e-12 * y.abs().max(1.0));
        }
    }

    #[test]
    fn oracle_counts_both_polarizations(g in spd(), k in 1usize..3) {
        let o = FourierOracle::new(g, k).unwrap();
        let values = o.eigenvalues();
        let lattice = half_space(k).len();
        prop_assert_eq!(values.len(), 4 * lattice);
        let positive = values.iter().filter(|v| **v > 0.0).count();
        prop_assert_eq!(positive, 2 * lattice);
        prop_assert!(values.iter().all(|v| v.abs() > 0.0));
    }

    #[test]
    fn mesh_spectrum_scales_with_metric(g in spd(), c in 0.5f64..2.0) {
        let mesh = PeriodicMesh::new(3).unwrap();
        // at this resolution helicity signs of near ties are not resolved,
        // so the curl-curl spectrum |λ| is compared without regrouping
        let opts = SolverOptions { polarization: 0.0, ..SolverOptions::default() };
        let spectra = |s: f64| {
            let d = Discretization::new(&mesh, &mesh.constant_metric(g * (s * s)).unwrap()).unwrap();
            let mut l: Vec<f64> = coclosed_spectrum(&d, Window::Count(4), &opts).unwrap().values().iter().map(|v| v.abs()).collect();
            l.sort_by(f64::total_cmp);
            (l, closed_spectrum(&d, 4, &opts).unwrap().values())
        };
        let (l1, r1) = spectra(1.0);
        let (l, r) = spectra(c);
        for (a, b) in l1.iter().zip(&l) {
            prop_assert!((a / c - b).abs() <= 1e-8 * b.abs());
        }
        for (a, b) in r1.iter().zip(&r) {
            prop_assert!((a / (c * c) - b).abs() <= 1e-8 * b);
        }
    }

    #[test]
    fn adjacent_swaps_are_transpositions(perm in Just((0..8usize).collect::<Vec<_>>()).prop_shuffle(), i in 0usize..7) {
        let mut after = perm.clone();
        after.swap(i, i + 1);
        prop_assert!(is_transposition(&perm, &after, perm[i], perm[i + 1]));
        // any other pair is not the swapped one
        let other = (i + 2) % 8;
        prop_assert!(!is_transposition(&perm, &after, perm[i], perm[other]) || other == i + 1);
    }

    #[test]
    fn config_hash_is_stable_under_round_trip(seed in any::<u64>(), window in 1usize..40, amp in 0.0f64..0.5) {
        let c = ExperimentConfig {
            seed,
            window,
            metric: MetricSpec::Random { amplitude: amp, modes: 6, seed: None },
            ..ExperimentConfig::default()
        };
        let text = serde_json::to_string(&c).unwrap();
        let back = ExperimentConfig::from_json(&text).unwrap();
        prop_assert_eq!(back.hash(), c.hash());
    }
}

#[test]
fn coboundaries_compose_to_zero() {
    for n in 2..6 {
        let mesh = PeriodicMesh::new(n).unwrap();
        assert_eq!(mesh.d1().matmul(&mesh.d0()).max_abs(), 0.0);
        assert_eq!(mesh.euler_characteristic(), 0);
    }
}
