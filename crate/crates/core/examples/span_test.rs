//! The 3x3 determinant test on the λ = 1 plane-wave cluster of the flat
//! torus: some `a` in the grid makes the three derivative matrices span.

use std::f64::consts::PI;

use beltrami::metric::{Domain, MetricField, OneFormField, Sym3};
use beltrami::oracle::FourierOracle;
use beltrami::perturbation::{default_a_grid, sah2_span_test};
use beltrami::quadrature::Quadrature;

fn main() -> beltrami::Result<()> {
    let quad = Quadrature::torus_grid(6, [2.0 * PI; 3]);
    let g = MetricField::constant(Domain::standard_torus(), quad.len(), Sym3::identity())?;
    let oracle = FourierOracle::new(Sym3::identity(), 1)?;
    let fields = oracle.cluster_fields(1.0, 1e-9);
    println!("cluster λ = 1 has multiplicity {}", fields.len());
    let sample = |i: usize| OneFormField::from_samples(quad.points.iter().map(|x| fields[i].eval(x)).collect());
    let report = sah2_span_test(&quad, &g, 1.0, &sample(0), &sample(2), &default_a_grid())?;
    for d in &report.determinants {
        println!("a = {:+.1}: det = {:+.4e}  relative {:.3}", d.a, d.det, d.relative);
    }
    println!("spanning: {}, witness a = {:?}", report.spanning, report.witness_a);
    Ok(())
}
