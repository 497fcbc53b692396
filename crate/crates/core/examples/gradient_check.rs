//! First-order eigenvalue variation along a metric direction against
//! central finite differences, for coclosed and closed mesh eigenvalues.

use beltrami::mesh::PeriodicMesh;
use beltrami::metric::{SmoothSym3, Sym3};
use beltrami::oracle::central_difference;
use beltrami::perturbation::{closed_derivative, coclosed_derivative};
use beltrami::solver::{closed_spectrum, coclosed_spectrum, Discretization, SolverOptions, Window};

fn main() -> beltrami::Result<()> {
    let mesh = PeriodicMesh::new(5)?;
    let g = mesh.sample_metric(&SmoothSym3::random_metric(0.3, 6, 3))?;
    let h = mesh.sample_tensor(&SmoothSym3::random(Sym3::diag(0.2, -0.1, 0.3), 0.4, 6, 103));
    // exact curl-curl eigenpairs, without helicity regrouping
    let opts = SolverOptions {
        polarization: 0.0,
        ..SolverOptions::default()
    };
    let disc = Discretization::new(&mesh, &g)?;
    let at = |s: f64| Discretization::new(&mesh, &g.perturbed(&h, s).expect("small step stays positive"));

    let co = coclosed_spectrum(&disc, Window::Count(4), &opts)?;
    for i in 0..co.pairs.len() {
        let Ok(d) = coclosed_derivative(&disc, &co, i, &h) else { continue };
        let fd = central_difference(
            |s| coclosed_spectrum(&at(s).unwrap(), Window::Count(4), &opts).unwrap().pairs[i].lambda,
            1e-4,
        );
        println!("λ = {:+.5}: formula {d:+.8}, finite difference {fd:+.8}", co.pairs[i].lambda);
    }
    let cl = closed_spectrum(&disc, 4, &opts)?;
    for i in 0..cl.pairs.len() {
        let Ok(d) = closed_derivative(&disc, &cl, i, &h) else { continue };
        let fd = central_difference(|s| closed_spectrum(&at(s).unwrap(), 4, &opts).unwrap().pairs[i].rho, 1e-4);
        println!("ρ = {:.5}: formula {d:+.8}, finite difference {fd:+.8}", cl.pairs[i].rho);
    }
    Ok(())
}
