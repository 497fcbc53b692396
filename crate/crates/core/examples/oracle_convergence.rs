//! Compares the mesh spectrum for the identity metric with the exact
//! plane-wave spectrum and estimates the convergence order.

use beltrami::mesh::PeriodicMesh;
use beltrami::metric::Sym3;
use beltrami::oracle::FourierOracle;
use beltrami::solver::{coclosed_spectrum, Discretization, SolverOptions, Window};

fn max_rel_error(n: usize, exact: &[f64]) -> beltrami::Result<f64> {
    let mesh = PeriodicMesh::new(n)?;
    let disc = Discretization::new(&mesh, &mesh.constant_metric(Sym3::identity())?)?;
    let mut values = coclosed_spectrum(&disc, Window::Count(12), &SolverOptions::default().values_only())?.values();
    values.sort_by(|a, b| a.abs().total_cmp(&b.abs()));
    Ok(values
        .iter()
        .zip(exact)
        .map(|(m, e)| (m.abs() - e.abs()).abs() / e.abs())
        .fold(0.0, f64::max))
}

fn main() -> beltrami::Result<()> {
    let oracle = FourierOracle::new(Sym3::identity(), 2)?;
    for c in oracle.clusters().iter().take(6) {
        println!("λ = {:+.6}  multiplicity {}", c.lambda, c.multiplicity);
    }
    let mut exact = oracle.eigenvalues();
    exact.sort_by(|a, b| a.abs().total_cmp(&b.abs()));

    let e8 = max_rel_error(8, &exact)?;
    let e16 = max_rel_error(16, &exact)?;
    println!("max relative error of the 12 smallest: n=8 {e8:.3e}, n=16 {e16:.3e}");
    println!("observed order {:.2}", (e8 / e16).log2());
    Ok(())
}
