use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use weakprobe_core::basis::{Basis, ModeSpec};
use weakprobe_core::linalg::{
    assemble, assemble_hermitian, evolve, expectation, ground_state, Action, LanczosOptions, MonomialTerm, SparseOperator,
    StateVector, C64,
};

fn c(x: f64) -> C64 {
    C64::new(x, 0.0)
}

/// Random hermitian operator built from hopping, density and pair terms.
fn random_hamiltonian(basis: &Basis, seed: u64) -> SparseOperator {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = basis.num_modes();
    let mut terms = Vec::new();
    for a in 0..m {
        for b in 0..m {
            if a != b && rng.gen_bool(0.7) {
                let t = C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5);
                terms.push(MonomialTerm::hop(t, a, b));
                terms.push(MonomialTerm::hop(t.conj(), b, a));
            }
        }
        terms.push(MonomialTerm::number(c(rng.gen::<f64>()), a));
        terms.push(MonomialTerm::new(c(0.3 * rng.gen::<f64>()), vec![(a, Action::Number), (a, Action::Number)]).unwrap());
    }
    assemble_hermitian(basis, &terms).unwrap()
}

fn dense_expm(h: &DMatrix<C64>, t: f64) -> DMatrix<C64> {
    (h * C64::new(0.0, -t)).exp()
}

fn lowest_dense(h: &DMatrix<C64>) -> (f64, f64) {
    let mut e: Vec<f64> = h.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
    e.sort_by(|a, b| a.partial_cmp(b).unwrap());
    (e[0], e.get(1).copied().unwrap_or(f64::INFINITY))
}

#[test]
fn two_site_ground_state() {
    let b = Basis::sector(ModeSpec::bosons(2).unwrap(), 1).unwrap();
    let j = 1.3;
    let h = assemble_hermitian(&b, &[MonomialTerm::hop(c(-j), 0, 1), MonomialTerm::hop(c(-j), 1, 0)]).unwrap();
    let gs = ground_state(&h, &LanczosOptions::default()).unwrap();
    assert!((gs.energy + j).abs() < 1e-12);
    let a = gs.state.amplitudes();
    assert!((a[0].norm() - 0.5f64.sqrt()).abs() < 1e-10);
    assert!((a[0] - a[1]).norm() < 1e-10);
    assert!((gs.gap - 2.0 * j).abs() < 1e-9);
    assert!(!gs.near_degenerate);
}

#[test]
fn onsite_interaction_energy() {
    let b = Basis::sector(ModeSpec::bosons(1).unwrap(), 2).unwrap();
    let u = 2.5;
    let h = assemble_hermitian(
        &b,
        &[
            MonomialTerm::new(c(0.5 * u), vec![(0, Action::Number), (0, Action::Number)]).unwrap(),
            MonomialTerm::number(c(-0.5 * u), 0),
        ],
    )
    .unwrap();
    let gs = ground_state(&h, &LanczosOptions::default()).unwrap();
    assert!((gs.energy - u).abs() < 1e-12);
    assert!(gs.gap.is_infinite());
}

#[test]
fn lanczos_matches_dense_spectrum() {
    for (modes, n, seed) in [(4, 5, 1u64), (5, 3, 2), (3, 6, 3)] {
        let b = Basis::sector(ModeSpec::bosons(modes).unwrap(), n).unwrap();
        let h = random_hamiltonian(&b, seed);
        let (e0, e1) = lowest_dense(&h.to_dense());
        let gs = ground_state(&h, &LanczosOptions { krylov_dim: 12, ..Default::default() }).unwrap();
        assert!((gs.energy - e0).abs() < 1e-8, "{} vs {}", gs.energy, e0);
        assert!((gs.gap - (e1 - e0)).abs() < 1e-7);
        let ex = expectation(&gs.state, &h).unwrap();
        assert!((ex.re - gs.energy).abs() < 1e-9);
        assert!(ex.im.abs() < 1e-10);
    }
}

#[test]
fn degenerate_ground_state_is_flagged() {
    // two decoupled identical dimers hosting one particle
    let b = Basis::sector(ModeSpec::bosons(4).unwrap(), 1).unwrap();
    let mut terms = Vec::new();
    for (p, q) in [(0, 1), (2, 3)] {
        terms.push(MonomialTerm::hop(c(-1.0), p, q));
        terms.push(MonomialTerm::hop(c(-1.0), q, p));
    }
    let h = assemble_hermitian(&b, &terms).unwrap();
    let gs = ground_state(&h, &LanczosOptions::default()).unwrap();
    assert!((gs.energy + 1.0).abs() < 1e-10);
    assert!(gs.near_degenerate);
}

#[test]
fn ground_state_is_seed_deterministic() {
    let b = Basis::sector(ModeSpec::bosons(4).unwrap(), 4).unwrap();
    let h = random_hamiltonian(&b, 11);
    let o = LanczosOptions { seed: 99, ..Default::default() };
    let a = ground_state(&h, &o).unwrap();
    let b2 = ground_state(&h, &o).unwrap();
    assert_eq!(a.energy.to_bits(), b2.energy.to_bits());
    assert_eq!(a.state, b2.state);
}

#[test]
fn non_hermitian_input_is_rejected() {
    let b = Basis::sector(ModeSpec::bosons(2).unwrap(), 1).unwrap();
    let h = assemble(&b, &[MonomialTerm::hop(c(1.0), 0, 1)]).unwrap();
    assert!(ground_state(&h, &LanczosOptions::default()).is_err());
}

#[test]
fn rabi_oscillation() {
    let b = Basis::sector(ModeSpec::bosons(2).unwrap(), 1).unwrap();
    let omega = 0.8;
    let h = assemble_hermitian(&b, &[MonomialTerm::hop(c(omega), 0, 1), MonomialTerm::hop(c(omega), 1, 0)]).unwrap();
    let psi = StateVector::basis_state(&b, 0);
    for t in [0.0, 0.1, 1.0, 3.7] {
        let out = evolve(&psi, &h, t, 1e-12).unwrap();
        let p1 = out.amplitudes()[1].norm_sqr();
        assert!((p1 - (omega * t).sin().powi(2)).abs() < 1e-11, "t = {t}");
    }
}

#[test]
fn zero_duration_is_identity() {
    let b = Basis::sector(ModeSpec::bosons(3).unwrap(), 2).unwrap();
    let h = random_hamiltonian(&b, 5);
    let psi = StateVector::basis_state(&b, 2);
    assert_eq!(evolve(&psi, &h, 0.0, 1e-10).unwrap(), psi);
    assert!(evolve(&psi, &h, -1.0, 1e-10).is_err());
}

#[test]
fn krylov_evolution_matches_dense_exponential() {
    // 4 modes, 5 bosons: 56 states
    let b = Basis::sector(ModeSpec::bosons(4).unwrap(), 5).unwrap();
    let h = random_hamiltonian(&b, 7);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let amps: Vec<C64> = (0..b.dim()).map(|_| C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)).collect();
    let psi = StateVector::new(b.id(), amps).unwrap();
    for t in [0.3, 2.0] {
        let out = evolve(&psi, &h, t, 1e-12).unwrap();
        let v = nalgebra::DVector::from_column_slice(psi.amplitudes());
        let exact = dense_expm(&h.to_dense(), t) * v;
        let err: f64 = out.amplitudes().iter().zip(exact.iter()).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
        assert!(err < 1e-9, "t = {t}: {err:e}");
    }
}

#[test]
fn jordan_wigner_signs_match_fock_enumeration() {
    use weakprobe_core::basis::Statistics;
    // all sectors of 3 fermionic modes, built by hand in the 8-dim Fock space
    let spec = ModeSpec::new(3, Statistics::Fermion, None).unwrap();
    let b = Basis::multi_sector(spec, &[0, 1, 2, 3]).unwrap();
    assert_eq!(b.dim(), 8);
    let annihilate = |occ: &[u32], m: usize| -> Option<(Vec<u32>, f64)> {
        if occ[m] == 0 {
            return None;
        }
        let sign = if occ[..m].iter().sum::<u32>() % 2 == 1 { -1.0 } else { 1.0 };
        let mut o = occ.to_vec();
        o[m] = 0;
        Some((o, sign))
    };
    let create = |occ: &[u32], m: usize| -> Option<(Vec<u32>, f64)> {
        if occ[m] == 1 {
            return None;
        }
        let sign = if occ[..m].iter().sum::<u32>() % 2 == 1 { -1.0 } else { 1.0 };
        let mut o = occ.to_vec();
        o[m] = 1;
        Some((o, sign))
    };
    for (p, q) in [(0, 1), (0, 2), (2, 0), (1, 2)] {
        let op = assemble(&b, &[MonomialTerm::hop(c(1.0), p, q)]).unwrap();
        let mut hand = DMatrix::<C64>::zeros(8, 8);
        for col in 0..8 {
            let s = b.state(col);
            if let Some((s1, x1)) = annihilate(&s, q) {
                if let Some((s2, x2)) = create(&s1, p) {
                    hand[(b.index_of(&s2).unwrap(), col)] += c(x1 * x2);
                }
            }
        }
        assert_eq!(op.to_dense(), hand, "c†_{p} c_{q}");
    }
    // two-mode hopping in the one-particle sector is sign-free
    let b2 = Basis::sector(ModeSpec::fermions(2).unwrap(), 1).unwrap();
    let h = assemble(&b2, &[MonomialTerm::hop(c(-1.0), 0, 1), MonomialTerm::hop(c(-1.0), 1, 0)]).unwrap();
    assert_eq!(h.get(0, 1), c(-1.0));
    // a†_2 a_0 across an occupied mode 1 picks up a minus sign
    let b3 = Basis::sector(ModeSpec::fermions(3).unwrap(), 2).unwrap();
    let op = assemble(&b3, &[MonomialTerm::hop(c(1.0), 2, 0)]).unwrap();
    let from = b3.index_of(&[1, 1, 0]).unwrap();
    let to = b3.index_of(&[0, 1, 1]).unwrap();
    assert_eq!(op.get(to, from), c(-1.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn evolution_is_unitary(seed in 0u64..1000, t in 0.0f64..10.0) {
        let b = Basis::sector(ModeSpec::bosons(3).unwrap(), 3).unwrap();
        let h = random_hamiltonian(&b, seed);
        let psi = StateVector::basis_state(&b, (seed as usize) % b.dim());
        let out = evolve(&psi, &h, t, 1e-10).unwrap();
        prop_assert!((out.norm() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn dagger_completed_terms_are_hermitian(seed in 0u64..1000) {
        let b = Basis::sector(ModeSpec::bosons(3).unwrap(), 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut terms = Vec::new();
        for _ in 0..4 {
            let k = rng.gen_range(1..=4);
            let factors = (0..k)
                .map(|_| {
                    let a = match rng.gen_range(0..3) { 0 => Action::Create, 1 => Action::Annihilate, _ => Action::Number };
                    (rng.gen_range(0..3), a)
                })
                .collect();
            let t = MonomialTerm::new(C64::new(rng.gen(), rng.gen()), factors).unwrap();
            terms.push(t.dagger());
            terms.push(t);
        }
        let op = assemble(&b, &terms).unwrap();
        prop_assert!(op.is_hermitian());
    }

    #[test]
    fn lookup_roundtrips(modes in 1usize..6, n in 0usize..5, hard in proptest::bool::ANY) {
        let spec = if hard { ModeSpec::hard_core(modes).unwrap() } else { ModeSpec::bosons(modes).unwrap() };
        prop_assume!(!hard || n <= modes);
        let b = Basis::sector(spec, n).unwrap();
        prop_assert_eq!(b.dim() as u64, weakprobe_core::basis::sector_dimension(spec, n));
        for i in 0..b.dim() {
            prop_assert_eq!(b.index_of(&b.state(i)).unwrap(), i);
            prop_assert_eq!(b.state(i).iter().sum::<u32>() as usize, n);
            if i > 0 {
                prop_assert!(b.state(i - 1) > b.state(i));
            }
        }
    }
}
