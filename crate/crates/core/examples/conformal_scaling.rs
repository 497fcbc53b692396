//! Eigenvalues under constant rescaling of the metric: λ(c²g) = λ/c and
//! ρ(c²g) = ρ/c², exactly for the oracle and on the mesh.

use beltrami::mesh::PeriodicMesh;
use beltrami::metric::{SmoothSym3, Sym3};
use beltrami::oracle::FourierOracle;
use beltrami::solver::{closed_spectrum, coclosed_spectrum, Discretization, SolverOptions, Window};

fn main() -> beltrami::Result<()> {
    let g = Sym3([1.1, 0.2, 0.0, 0.8, -0.1, 1.3]);
    let base = FourierOracle::new(g, 2)?;
    for c in [0.5, 2.0, 3.0] {
        let scaled = FourierOracle::new(g * (c * c), 2)?;
        let dev = base
            .eigenvalues()
            .iter()
            .zip(scaled.eigenvalues())
            .map(|(a, b)| (a / c - b).abs())
            .fold(0.0, f64::max);
        println!("oracle c = {c}: max |λ/c − λ(c²g)| = {dev:.1e}");
    }

    let mesh = PeriodicMesh::new(6)?;
    let g = mesh.sample_metric(&SmoothSym3::random_metric(0.3, 6, 2))?;
    let opts = SolverOptions::default();
    let spectra = |c: f64| -> beltrami::Result<(Vec<f64>, Vec<f64>)> {
        let disc = Discretization::new(&mesh, &g.scaled(c * c)?)?;
        Ok((
            coclosed_spectrum(&disc, Window::Count(6), &opts)?.values(),
            closed_spectrum(&disc, 6, &opts)?.values(),
        ))
    };
    let (l1, r1) = spectra(1.0)?;
    for c in [0.5, 2.0, 3.0] {
        let (l, r) = spectra(c)?;
        let dl = l1.iter().zip(&l).map(|(a, b)| (a / c - b).abs() / b.abs()).fold(0.0, f64::max);
        let dr = r1.iter().zip(&r).map(|(a, b)| (a / (c * c) - b).abs() / b).fold(0.0, f64::max);
        println!("mesh c = {c}: relative deviation coclosed {dl:.1e}, closed {dr:.1e}");
    }
    Ok(())
}
