//! Riesz projector, defining function and degeneracy slice scans on the
//! preset operator families.

use beltrami::teytel::{
    codim2_slice_scan, default_shift, defining_function, eigen, isolating_radius, spectral_projector, Contour,
    OperatorFamily, Preset, Slice,
};

fn main() -> beltrami::Result<()> {
    let family = Preset::Random.family();
    let q0 = [0.1, 0.2];
    let (values, _) = eigen(&family, &q0);
    let contour = Contour::new(values[2], isolating_radius(&values, values[2], 1e-9));
    let p = spectral_projector(&family, &q0, contour)?;
    println!(
        "projector: ‖P² − P‖ = {:.1e}, trace {:.12}, commutator {:.1e}",
        p.idempotency_defect(),
        p.trace(),
        p.commutator_defect(&family.operator(&q0))
    );

    let mu = default_shift(&contour);
    let q = [0.12, 0.19];
    let f = defining_function(&family, &q0, &q, contour, mu)?;
    let (moved, _) = eigen(&family, &q);
    println!(
        "defining function eigenvalue {:.12}, resolvent value {:.12}",
        f.eigenvalues()[0],
        1.0 / (mu - moved[2])
    );

    for preset in [Preset::Conic, Preset::ScalarBlock] {
        let fam = preset.family();
        for n in [21, 41] {
            let scan = codim2_slice_scan(&fam, &Slice::coordinate(fam.params(), 0.5), 0, n);
            println!(
                "{:>12} n = {n}: {} component(s), largest diameter {:.4}",
                preset.id(),
                scan.components.len(),
                scan.max_diameter()
            );
        }
    }
    Ok(())
}
