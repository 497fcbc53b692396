//! Builds the periodic Kuhn mesh, checks that the coboundaries compose to
//! zero and that the curl-curl kernel has the expected dimension.

use beltrami::mesh::PeriodicMesh;
use beltrami::metric::Sym3;
use beltrami::solver::dense_pencil_eigenvalues;

fn main() -> beltrami::Result<()> {
    let mesh = PeriodicMesh::new(3)?;
    println!(
        "V = {}, E = {}, F = {}, T = {}, Euler characteristic {}",
        mesh.num_vertices(),
        mesh.num_edges(),
        mesh.num_faces(),
        mesh.num_tets(),
        mesh.euler_characteristic()
    );
    let dd = mesh.d1().matmul(&mesh.d0());
    println!("max |d1 d0| = {:e}", dd.max_abs());

    let g = mesh.constant_metric(Sym3([1.2, 0.1, 0.0, 0.9, -0.1, 1.1]))?;
    let c = mesh.assemble_curl_curl(&g)?;
    let m = mesh.assemble_mass_1forms(&g)?;
    let values = dense_pencil_eigenvalues(&c, &m);
    let scale = values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let kernel = values.iter().filter(|v| v.abs() < 1e-10 * scale).count();
    println!(
        "curl-curl kernel dimension {kernel} (gradients {} + harmonic 3)",
        mesh.num_vertices() - 1
    );
    Ok(())
}
