//! Smallest coclosed (curl) and closed (scalar Laplacian) eigenvalues for a
//! smooth random metric on the flat torus.

use beltrami::mesh::PeriodicMesh;
use beltrami::metric::SmoothSym3;
use beltrami::solver::{closed_spectrum, coclosed_spectrum, Discretization, SolverOptions, Window};

fn main() -> beltrami::Result<()> {
    let mesh = PeriodicMesh::new(8)?;
    let g = mesh.sample_metric(&SmoothSym3::random_metric(0.3, 6, 1))?;
    let disc = Discretization::new(&mesh, &g)?;
    let opts = SolverOptions::default().with_seed(7);

    let co = coclosed_spectrum(&disc, Window::Count(8), &opts)?;
    println!("coclosed eigenvalues (backend {:?})", co.backend);
    for r in co.records() {
        println!("  λ = {:+.6}  sign {:+}  residual {:.1e}  cluster {}", r.lambda, r.sign, r.residual, r.cluster_id);
    }
    let cl = closed_spectrum(&disc, 6, &opts)?;
    println!("closed eigenvalues");
    for p in &cl.pairs {
        println!("  ρ = {:.6}  residual {:.1e}", p.rho, p.residual);
    }
    Ok(())
}
