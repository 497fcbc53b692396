//! Anisotropic stretch diag(1, 1, (1+t)²): closed and coclosed branches
//! cross, and each crossing is checked against the first-order rates.

use beltrami::mesh::PeriodicMesh;
use beltrami::tracking::{closed_coclosed_experiment, stretch_path, uniform_grid, TrackOptions};

fn main() -> beltrami::Result<()> {
    let mesh = PeriodicMesh::new(8)?;
    let path = stretch_path(&mesh)?;
    let (tracking, report) = closed_coclosed_experiment(&mesh, &path, &uniform_grid(11), 24, &TrackOptions::default())?;
    println!("continuum predictions {:?}", report.predicted);
    for c in &report.crossings {
        println!(
            "t = {:.4} {}/{} x{}: rate differences {:+.4} {:+.4}, finite difference {:+.4}, consistent {}",
            c.event.t,
            c.event.colors[0].label(),
            c.event.colors[1].label(),
            c.multiplicity,
            c.rate_difference[0],
            c.rate_difference[1],
            c.finite_difference,
            c.consistent
        );
    }
    println!(
        "{} mixed crossings, {} avoided, unresolved {:?}, harmonic {:?}",
        report.mixed_crossings(),
        report.avoided.len(),
        report.unresolved,
        tracking.harmonic_dimensions()
    );
    Ok(())
}
