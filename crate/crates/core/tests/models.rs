use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use weakprobe_core::basis::{Basis, ModeSpec};
use weakprobe_core::linalg::{expectation, ground_state, LanczosOptions, StateVector, C64};
use weakprobe_core::models::{
    build_hh_ladder, build_plaquette, build_spin_xy, build_tight_binding, Boundary, LadderSpec, Lattice, Link, PlaquetteSpec,
    SpinCoupling,
};
use weakprobe_core::Error;

fn sorted_eigenvalues(m: &DMatrix<C64>) -> Vec<f64> {
    let mut e: Vec<f64> = m.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
    e.sort_by(|a, b| a.partial_cmp(b).unwrap());
    e
}

/// Single-particle matrix `h_ab = -J_ab`, assembled straight from the links.
fn one_body_matrix(lat: &Lattice) -> DMatrix<C64> {
    let n = lat.sites();
    let mut h = DMatrix::zeros(n, n);
    for l in lat.links() {
        h[(l.from, l.to)] -= l.amplitude;
        h[(l.to, l.from)] -= l.amplitude.conj();
    }
    h
}

fn dense_ground(h: &DMatrix<C64>) -> (f64, DVector<C64>) {
    let eig = h.clone().symmetric_eigen();
    let (i, e) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |a, (i, &e)| if e < a.1 { (i, e) } else { a });
    (e, eig.eigenvectors.column(i).into_owned())
}

#[test]
fn decoupled_legs_spectrum() {
    let m = build_hh_ladder(&LadderSpec::new(2, 1.0, 0.0, 0.0, 0.0), 1).unwrap();
    let e = sorted_eigenvalues(&m.hamiltonian.to_dense());
    for (a, b) in e.iter().zip([-1.0, -1.0, 1.0, 1.0]) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn two_rung_ladder_matches_one_body_oracle() {
    let spec = LadderSpec::new(2, 1.0, 1.0, PI / 2.0, 0.0);
    let m = build_hh_ladder(&spec, 1).unwrap();
    let e = sorted_eigenvalues(&m.hamiltonian.to_dense());
    // independent oracle: the 4x4 hopping matrix written out by hand
    let i = C64::new(0.0, 1.0);
    let one = C64::new(1.0, 0.0);
    let z = C64::new(0.0, 0.0);
    // sites: (L,0)=0, (L,1)=1, (R,0)=2, (R,1)=3; rung 1 carries K e^{-i pi/2} = -i
    let h = -DMatrix::from_row_slice(4, 4, &[z, one, one, z, one, z, z, -i, one, z, z, one, z, i, one, z]);
    let oracle = sorted_eigenvalues(&h);
    for (a, b) in e.iter().zip(&oracle) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

#[test]
fn hard_core_ladder_ground_energy_matches_dense() {
    let spec = LadderSpec::new(3, 1.0, 2.5, 2.0 * PI / 3.0, f64::INFINITY);
    let m = build_hh_ladder(&spec, 3).unwrap();
    assert_eq!(m.basis.dim(), 20);
    let gs = ground_state(&m.hamiltonian, &LanczosOptions::default()).unwrap();
    let (e0, _) = dense_ground(&m.hamiltonian.to_dense());
    assert!((gs.energy - e0).abs() < 1e-8);
}

#[test]
fn zero_flux_currents_vanish() {
    let spec = LadderSpec::new(3, 1.0, 1.3, 0.0, 2.0);
    let m = build_hh_ladder(&spec, 3).unwrap();
    let gs = ground_state(&m.hamiltonian, &LanczosOptions::default()).unwrap();
    assert!(!gs.near_degenerate);
    for (_, _, j) in m.link_currents(&gs.state).unwrap() {
        assert!(j.abs() < 1e-9);
    }
    let jc = expectation(&gs.state, &m.chiral_current().unwrap()).unwrap();
    assert!(jc.re.abs() < 1e-9);
}

#[test]
fn current_of_phase_shifted_superposition() {
    let lat = Lattice::new(2, vec![Link { from: 0, to: 1, amplitude: C64::new(0.8, 0.0) }]).unwrap();
    let m = build_tight_binding(lat, ModeSpec::bosons(2).unwrap(), 1, 0.0).unwrap();
    let b = &m.basis;
    let mut amps = vec![C64::new(0.0, 0.0); 2];
    amps[b.index_of(&[1, 0]).unwrap()] = C64::new(1.0, 0.0);
    amps[b.index_of(&[0, 1]).unwrap()] = C64::new(0.0, 1.0);
    let psi = StateVector::new(b.id(), amps).unwrap();
    let j = m.link_current(0, 1).unwrap();
    assert!((expectation(&psi, &j.operator).unwrap().re - 0.8).abs() < 1e-14);
}

#[test]
fn current_antisymmetry_is_exact() {
    let spec = LadderSpec::new(3, 1.0, 1.7, 0.9, 1.0);
    let m = build_hh_ladder(&spec, 2).unwrap();
    for l in m.lattice.links() {
        let a = m.link_current(l.from, l.to).unwrap().operator.to_dense();
        let b = m.link_current(l.to, l.from).unwrap().operator.to_dense();
        assert_eq!(a, -b);
    }
    assert_eq!(m.link_current(0, 4).unwrap_err(), Error::NotALink(0, 4));
}

#[test]
fn chiral_current_is_the_averaged_link_sum() {
    for boundary in [Boundary::Open, Boundary::Periodic] {
        let spec = LadderSpec {
            boundary,
            ..LadderSpec::new(3, 1.0, 1.7, 0.9, 1.0)
        };
        let m = build_hh_ladder(&spec, 2).unwrap();
        let nlinks = if boundary == Boundary::Open { 2.0 } else { 3.0 };
        let mut sum = DMatrix::<C64>::zeros(m.basis.dim(), m.basis.dim());
        for leg in 0..2 {
            let sign = if leg == 0 { 1.0 } else { -1.0 };
            for (a, b) in spec.leg_links(leg) {
                sum += m.link_current(a, b).unwrap().operator.to_dense() * C64::new(sign / nlinks, 0.0);
            }
        }
        let diff = m.chiral_current().unwrap().to_dense() - sum;
        assert!(diff.iter().all(|v| v.norm() < 1e-12));
    }
}

#[test]
fn single_particle_dimer_variance_is_one() {
    let lat = Lattice::new(2, vec![Link { from: 0, to: 1, amplitude: C64::new(1.0, 0.0) }]).unwrap();
    let m = build_tight_binding(lat, ModeSpec::bosons(2).unwrap(), 1, 0.0).unwrap();
    let gs = ground_state(&m.hamiltonian, &LanczosOptions::default()).unwrap();
    assert!((m.mean_current_variance(&gs.state).unwrap() - 1.0).abs() < 1e-10);
}

#[test]
fn triangle_loop_current_matches_one_body_oracle() {
    let p = PlaquetteSpec::uniform(1.0, PI / 2.0).unwrap();
    let m = build_plaquette(&p, ModeSpec::bosons(3).unwrap(), 1, 0.0).unwrap();
    let gs = ground_state(&m.hamiltonian, &LanczosOptions::default()).unwrap();
    let value = expectation(&gs.state, &m.loop_current().unwrap()).unwrap().re;
    let (_, psi) = dense_ground(&one_body_matrix(&p.lattice().unwrap()));
    // <j_ab> = 2 Im(J_ab conj(psi_a) psi_b) for one particle
    let oracle: f64 = p
        .link_pairs()
        .iter()
        .zip(p.hoppings)
        .map(|(&(a, b), j)| 2.0 * (j * psi[a].conj() * psi[b]).im)
        .sum();
    assert!((value - oracle).abs() < 1e-9, "{value} vs {oracle}");
    assert!(value.abs() > 1e-3);
}

#[test]
fn real_plaquette_has_no_loop_current() {
    let p = PlaquetteSpec::new([C64::new(1.0, 0.0), C64::new(0.7, 0.0), C64::new(1.4, 0.0)], 1.0).unwrap();
    let m = build_plaquette(&p, ModeSpec::bosons(3).unwrap(), 2, 1.0).unwrap();
    let gs = ground_state(&m.hamiltonian, &LanczosOptions::default()).unwrap();
    assert!(expectation(&gs.state, &m.loop_current().unwrap()).unwrap().re.abs() < 1e-9);
}

#[test]
fn lab_frame_loop_current_ignores_phases() {
    let p = PlaquetteSpec::new([C64::from_polar(1.0, 0.3), C64::from_polar(0.7, -0.2), C64::from_polar(1.4, 1.1)], 1.0).unwrap();
    let m = build_plaquette(&p, ModeSpec::bosons(3).unwrap(), 1, 0.0).unwrap();
    let lab = m.lab_loop_current().unwrap().to_dense();
    let q = PlaquetteSpec::new(p.hoppings.map(|h| C64::new(h.norm(), 0.0)), 1.0).unwrap();
    let mq = build_plaquette(&q, ModeSpec::bosons(3).unwrap(), 1, 0.0).unwrap();
    assert_eq!(lab, mq.loop_current().unwrap().to_dense());
}

#[test]
fn two_spin_current_vanishes() {
    let m = build_spin_xy(2, &[SpinCoupling { i: 0, j: 1, value: C64::new(1.0, 0.0) }], &[], 1).unwrap();
    let gs = ground_state(&m.hamiltonian, &LanczosOptions::default()).unwrap();
    let j = m.link_current(0, 1).unwrap();
    assert!(expectation(&gs.state, &j.operator).unwrap().re.abs() < 1e-12);
}

#[test]
fn xy_chain_equals_hard_core_chain() {
    let n = 5;
    let couplings: Vec<SpinCoupling> = (0..n - 1)
        .map(|i| SpinCoupling { i, j: i + 1, value: C64::new(1.0 + 0.1 * i as f64, 0.0) })
        .collect();
    let spin = build_spin_xy(n, &couplings, &[], 2).unwrap();
    let links = couplings.iter().map(|c| Link { from: c.i, to: c.j, amplitude: c.value }).collect();
    let hc = build_tight_binding(Lattice::new(n, links).unwrap(), ModeSpec::hard_core(n).unwrap(), 2, 0.0).unwrap();
    let a = sorted_eigenvalues(&spin.hamiltonian.to_dense());
    let b = sorted_eigenvalues(&hc.hamiltonian.to_dense());
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-10);
    }
}

#[test]
fn non_hermitian_spin_table_is_rejected() {
    let c = [
        SpinCoupling { i: 0, j: 1, value: C64::new(1.0, 0.5) },
        SpinCoupling { i: 1, j: 0, value: C64::new(1.0, 0.5) },
    ];
    assert!(matches!(build_spin_xy(2, &c, &[], 1), Err(Error::NotHermitian(_))));
    let ok = [
        SpinCoupling { i: 0, j: 1, value: C64::new(1.0, 0.5) },
        SpinCoupling { i: 1, j: 0, value: C64::new(1.0, -0.5) },
    ];
    assert!(build_spin_xy(2, &ok, &[], 1).is_ok());
}

/// Kronecker-product spin operators on `n` sites; local basis (up, down).
fn spin_ops(n: usize, site: usize, op: &DMatrix<C64>) -> DMatrix<C64> {
    let id = DMatrix::<C64>::identity(2, 2);
    let mut out = DMatrix::<C64>::identity(1, 1);
    for s in 0..n {
        out = out.kronecker(if s == site { op } else { &id });
    }
    out
}

#[test]
fn spin_ring_current_matches_kronecker_oracle() {
    let one = C64::new(1.0, 0.0);
    let z = C64::new(0.0, 0.0);
    // S+ |down> = |up>
    let sp = DMatrix::from_row_slice(2, 2, &[z, one, z, z]);
    let sm = sp.adjoint();
    let sz = DMatrix::from_row_slice(2, 2, &[C64::new(0.5, 0.0), z, z, C64::new(-0.5, 0.0)]);
    let jval = C64::from_polar(1.0, PI / 6.0); // flux pi/2 around the ring
    let couplings: Vec<SpinCoupling> = (0..3).map(|i| SpinCoupling { i, j: (i + 1) % 3, value: jval }).collect();
    let jz = [(0usize, 1usize, 0.4)];
    let m = build_spin_xy(3, &couplings, &jz, 1).unwrap();
    let gs = ground_state(&m.hamiltonian, &LanczosOptions::default()).unwrap();
    let model_current = expectation(&gs.state, &m.link_current(0, 1).unwrap().operator).unwrap().re;

    let mut h = DMatrix::<C64>::zeros(8, 8);
    for c in &couplings {
        let t = spin_ops(3, c.i, &sp) * spin_ops(3, c.j, &sm) * c.value;
        h -= &t + t.adjoint();
    }
    h -= spin_ops(3, 0, &sz) * spin_ops(3, 1, &sz) * C64::new(0.4, 0.0);
    // one down spin: states with exactly one local index equal to 1
    let idx: Vec<usize> = (0..8usize).filter(|s| s.count_ones() == 1).collect();
    let proj = |a: &DMatrix<C64>| DMatrix::from_fn(3, 3, |r, c| a[(idx[r], idx[c])]);
    let (e0, psi) = dense_ground(&proj(&h));
    assert!((e0 - gs.energy).abs() < 1e-9);
    let t = spin_ops(3, 0, &sp) * spin_ops(3, 1, &sm) * jval;
    let jop = (&t - t.adjoint()) * C64::new(0.0, -1.0);
    let oracle = (psi.adjoint() * proj(&jop) * &psi)[(0, 0)].re;
    assert!((model_current - oracle).abs() < 1e-9, "{model_current} vs {oracle}");
    assert!(oracle.abs() > 1e-3);
}

#[test]
fn soft_core_ladder_with_cap_one_matches_spin_ladder() {
    let spec = LadderSpec { max_occupancy: Some(1), ..LadderSpec::new(3, 1.0, 1.5, 1.1, 2.0) };
    let boson = build_hh_ladder(&spec, 3).unwrap();
    let couplings: Vec<SpinCoupling> =
        boson.lattice.links().iter().map(|l| SpinCoupling { i: l.from, j: l.to, value: l.amplitude }).collect();
    let spin = build_spin_xy(6, &couplings, &[], 3).unwrap();
    let a = sorted_eigenvalues(&boson.hamiltonian.to_dense());
    let b = sorted_eigenvalues(&spin.hamiltonian.to_dense());
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-10);
    }
}

#[test]
fn mott_regime_suppresses_currents_but_not_fluctuations() {
    // unit filling: deep in the Mott state <j^2>/J^2 -> n1(n2+1) + n2(n1+1) = 4
    let spec = |u| LadderSpec::new(3, 1.0, 1.0, PI / 2.0, u);
    let run = |u| {
        let m = build_hh_ladder(&spec(u), 6).unwrap();
        let gs = ground_state(&m.hamiltonian, &LanczosOptions::default()).unwrap();
        let jc = expectation(&gs.state, &m.chiral_current().unwrap()).unwrap().re;
        (jc, m.mean_current_variance(&gs.state).unwrap())
    };
    let (jc_sf, _) = run(0.5);
    let (jc_mott, var_mott) = run(200.0);
    assert!(jc_mott.abs() < 0.05 * jc_sf.abs(), "superfluid {jc_sf}, mott {jc_mott}");
    assert!((var_mott - 4.0).abs() < 0.05, "mott variance {var_mott}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn stationary_states_conserve_density(k in 0.2f64..3.0, flux in -PI..PI, u in 0.0f64..4.0) {
        let spec = LadderSpec::new(3, 1.0, k, flux, u);
        let m = build_hh_ladder(&spec, 3).unwrap();
        let gs = ground_state(&m.hamiltonian, &LanczosOptions::default()).unwrap();
        prop_assume!(!gs.near_degenerate && gs.gap > 1e-4);
        let currents = m.link_currents(&gs.state).unwrap();
        for site in 0..m.lattice.sites() {
            let out: f64 = currents
                .iter()
                .map(|&(a, b, j)| if a == site { j } else if b == site { -j } else { 0.0 })
                .sum();
            prop_assert!(out.abs() < 1e-8, "site {} outflow {}", site, out);
        }
    }

    #[test]
    fn currents_are_gauge_covariant(chi in proptest::collection::vec(-PI..PI, 4), phase in -PI..PI) {
        let base = vec![
            Link { from: 0, to: 1, amplitude: C64::from_polar(1.0, phase) },
            Link { from: 1, to: 2, amplitude: C64::new(0.8, 0.0) },
            Link { from: 2, to: 3, amplitude: C64::from_polar(1.2, -0.4) },
            Link { from: 3, to: 0, amplitude: C64::new(0.9, 0.0) },
            Link { from: 0, to: 2, amplitude: C64::from_polar(0.5, 0.7) },
        ];
        let shifted: Vec<Link> = base
            .iter()
            .map(|l| Link { amplitude: l.amplitude * C64::from_polar(1.0, chi[l.to] - chi[l.from]), ..*l })
            .collect();
        let modes = ModeSpec::bosons(4).unwrap();
        let a = build_tight_binding(Lattice::new(4, base).unwrap(), modes, 2, 1.0).unwrap();
        let b = build_tight_binding(Lattice::new(4, shifted).unwrap(), modes, 2, 1.0).unwrap();
        let ga = ground_state(&a.hamiltonian, &LanczosOptions::default()).unwrap();
        let gb = ground_state(&b.hamiltonian, &LanczosOptions::default()).unwrap();
        prop_assume!(ga.gap > 1e-6);
        prop_assert!((ga.energy - gb.energy).abs() < 1e-10);
        for (x, y) in a.link_currents(&ga.state).unwrap().iter().zip(b.link_currents(&gb.state).unwrap()) {
            prop_assert!((x.2 - y.2).abs() < 1e-10);
        }
    }
}

#[test]
fn sector_dimension_of_benchmark_ladder() {
    assert_eq!(weakprobe_core::basis::sector_dimension(ModeSpec::bosons(12).unwrap(), 12), 1_352_078);
    let small = Basis::sector(ModeSpec::bosons(8).unwrap(), 4).unwrap();
    assert_eq!(small.dim(), 330);
}

/// Twelve bosons on the six-rung ladder: about 1.35 million states.
#[test]
#[ignore = "large benchmark; run with --ignored"]
fn benchmark_ladder_is_meissner_with_positive_chiral_current() {
    let spec = LadderSpec::new(6, 1.0, 2.5, 2.0 * PI / 3.0, 1.0);
    let m = build_hh_ladder(&spec, 12).unwrap();
    let gs = ground_state(&m.hamiltonian, &LanczosOptions::default()).unwrap();
    let jc = expectation(&gs.state, &m.chiral_current().unwrap()).unwrap().re;
    assert!(jc > 0.0, "chiral current {jc}");
}
