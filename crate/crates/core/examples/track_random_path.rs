//! Tracks coclosed and closed eigenvalue branches along a straight path
//! between two random metrics, then lists the crossings and writes the
//! branch table as CSV.

use beltrami::mesh::PeriodicMesh;
use beltrami::metric::{MetricPath, SmoothSym3};
use beltrami::tracking::{unexplained_order_changes, uniform_grid, Localization, TrackOptions, Tracker, Which};

fn main() -> beltrami::Result<()> {
    let mesh = PeriodicMesh::new(6)?;
    let g0 = mesh.sample_metric(&SmoothSym3::random_metric(0.3, 6, 1))?;
    let g1 = mesh.sample_metric(&SmoothSym3::random_metric(0.3, 6, 1001))?;
    let path = MetricPath::linear(g0, g1)?;
    let opts = TrackOptions {
        localization: Localization::Interpolation,
        ..TrackOptions::default()
    };
    let tracker = Tracker::new(&mesh, &path, 4, Which::Both, opts)?;
    let tracking = tracker.track(&uniform_grid(6))?;
    println!(
        "{} branches, continuous {}, min overlap {:.3}, harmonic dimensions {:?}",
        tracking.branches.len(),
        tracking.all_continuous(),
        tracking.min_core_overlap(),
        tracking.harmonic_dimensions()
    );
    let events = tracker.detect(&tracking, |_, _| true)?;
    for e in &events {
        println!(
            "{:?} at t = {:.4} between {} ({}) and {} ({}), gap {:.2e}",
            e.kind,
            e.t,
            e.branches[0],
            e.colors[0].label(),
            e.branches[1],
            e.colors[1].label(),
            e.gap_min
        );
    }
    println!("unexplained order changes: {:?}", unexplained_order_changes(&tracking, &events));
    let csv = std::env::temp_dir().join("branches.csv");
    std::fs::write(&csv, tracking.branch_csv())?;
    println!("branch table written to {}", csv.display());
    Ok(())
}
