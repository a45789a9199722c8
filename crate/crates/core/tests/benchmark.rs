//! Full-size ladder benchmark: L = 6, N = 12 soft-core bosons. Slow (the
//! system sector alone has 1.35M states); run with `--ignored`.

mod common;

use std::f64::consts::PI;

use common::ladder;
use weakprobe_core::probe::*;

#[test]
#[ignore]
fn meissner_point_l6_n12() {
    let (m, psi) = ladder(6, 2.5, 2.0 * PI / 3.0, 1.0, 12);
    assert_eq!(m.basis.dim(), 1_352_078);
    let exact = weakprobe_core::linalg::expectation(&psi, &m.chiral_current().unwrap()).unwrap().re;
    assert!(exact > 0.0, "Meissner ground state carries a positive chiral current");
    let probes = probe_all_links(&m, &psi, &LinkProbeOptions::default()).unwrap();
    let p0 = chiral_from_links(&m, &probes, FirstMomentEstimator::P0, Direction::Forward, DEFAULT_DELTA_P).unwrap();
    let pt = chiral_from_links(&m, &probes, FirstMomentEstimator::Ptilde, Direction::Forward, DEFAULT_DELTA_PTILDE).unwrap();
    println!("exact {exact:.5}, p0 {:.5}, ptilde {:.5}", p0.value, pt.value);
    assert!(pt.relative_error.unwrap() < p0.relative_error.unwrap());
    let var = mean_variance_from_links(&probes, 4, 0.2, VarianceAux::Symmetrized).unwrap();
    println!("mean variance exact {:.4}, extracted {:.4}", var.exact.unwrap(), var.value);
    assert!((var.exact.unwrap() - 2.0).abs() < 0.5);
}
