//! Cross-module checks: metric files, oracle against mesh for a general
//! constant metric, and tracking against exact scaling.

use beltrami::cli::MetricSpec;
use beltrami::mesh::PeriodicMesh;
use beltrami::metric::{SmoothSym3, Sym3};
use beltrami::oracle::FourierOracle;
use beltrami::solver::{closed_spectrum, coclosed_spectrum, Discretization, SolverOptions, Window};
use beltrami::tracking::{conformal_path, track, uniform_grid, TrackOptions, Which};

#[test]
fn metric_file_round_trip_reproduces_spectrum() {
    let mesh = PeriodicMesh::new(3).unwrap();
    let g = mesh.sample_metric(&SmoothSym3::random_metric(0.25, 6, 9)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("metric.json");
    std::fs::write(&path, serde_json::to_string(&g.to_json()).unwrap()).unwrap();
    let loaded = MetricSpec::File { path }.field(&mesh, 0).unwrap();
    assert_eq!(loaded, g);
    let opts = SolverOptions::default();
    let a = coclosed_spectrum(&Discretization::new(&mesh, &g).unwrap(), Window::Count(6), &opts).unwrap();
    let b = coclosed_spectrum(&Discretization::new(&mesh, &loaded).unwrap(), Window::Count(6), &opts).unwrap();
    assert_eq!(a.values(), b.values());
}

#[test]
fn anisotropic_constant_metric_matches_oracle() {
    let g = Sym3([1.3, 0.2, -0.1, 0.9, 0.1, 1.1]);
    let mut exact = FourierOracle::new(g, 2).unwrap().eigenvalues();
    exact.sort_by(|a, b| a.abs().total_cmp(&b.abs()));
    let mesh = PeriodicMesh::new(8).unwrap();
    let disc = Discretization::new(&mesh, &mesh.constant_metric(g).unwrap()).unwrap();
    let mut values = coclosed_spectrum(&disc, Window::Count(8), &SolverOptions::default().values_only())
        .unwrap()
        .values();
    values.sort_by(|a, b| a.abs().total_cmp(&b.abs()));
    for (m, e) in values.iter().take(8).zip(&exact) {
        assert!((m.abs() - e.abs()).abs() / e.abs() < 0.05, "{m} vs {e}");
    }
    let mut closed_exact = FourierOracle::new(g, 2).unwrap().closed_eigenvalues();
    closed_exact.sort_by(f64::total_cmp);
    let closed = closed_spectrum(&disc, 6, &SolverOptions::default()).unwrap().values();
    for (m, e) in closed.iter().zip(&closed_exact) {
        // ρ scales like λ², so compare square roots at the same tolerance
        assert!((m.sqrt() - e.sqrt()).abs() / e.sqrt() < 0.05, "{m} vs {e}");
    }
}

#[test]
fn conformal_tracking_has_no_crossings() {
    let mesh = PeriodicMesh::new(3).unwrap();
    let g = mesh.sample_metric(&SmoothSym3::random_metric(0.2, 6, 4)).unwrap();
    let path = conformal_path(&g).unwrap();
    let t = track(&mesh, &path, &uniform_grid(5), 4, Which::Both, &TrackOptions::default()).unwrap();
    assert!(t.unresolved.is_empty());
    assert!(t.all_continuous());
    // scaling preserves the order of the Hodge values at every sample
    let first = t.order_at(0);
    for k in 1..t.snapshots.len() {
        assert_eq!(t.order_at(k), first);
    }
}
