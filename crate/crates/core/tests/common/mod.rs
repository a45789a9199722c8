#![allow(dead_code)]

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use weakprobe_core::basis::{Basis, ModeSpec};
use weakprobe_core::linalg::{ground_state, LanczosOptions, StateVector, C64};
use weakprobe_core::models::{build_hh_ladder, build_tight_binding, LadderSpec, Lattice, Link, Model};
use weakprobe_core::probe::fit::polyfit;
use weakprobe_core::probe::{AncillaCoupling, CouplingSpec, EvolutionMode};

pub fn random_state(basis: &Basis, seed: u64) -> StateVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let amps = (0..basis.dim())
        .map(|_| C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5))
        .collect();
    StateVector::new(basis.id(), amps).unwrap()
}

pub fn ground(model: &Model) -> StateVector {
    ground_state(&model.hamiltonian, &LanczosOptions::default()).unwrap().state
}

pub fn ladder(rungs: usize, k: f64, flux: f64, u: f64, particles: usize) -> (Model, StateVector) {
    let model = build_hh_ladder(&LadderSpec::new(rungs, 1.0, k, flux, u), particles).unwrap();
    let psi = ground(&model);
    (model, psi)
}

/// Slope of `log r` against `log s`.
pub fn loglog_slope(s: &[f64], r: &[f64]) -> f64 {
    let x: Vec<f64> = s.iter().map(|v| v.ln()).collect();
    let y: Vec<f64> = r.iter().map(|v| v.abs().ln()).collect();
    polyfit(&x, &y, 1).unwrap().coefficients[1]
}

/// Logarithmic grid with `n` points from `lo` to `hi`.
pub fn log_points(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64))
        .collect()
}

/// A random small lattice, state and ancilla configuration.
pub fn random_config(seed: u64) -> (Model, StateVector, CouplingSpec) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sites = rng.gen_range(3..=5);
    let mut links = Vec::new();
    for i in 0..sites {
        for j in i + 1..sites {
            if j == i + 1 || rng.gen_bool(0.3) {
                links.push(Link {
                    from: i,
                    to: j,
                    amplitude: C64::from_polar(rng.gen_range(0.5..1.5), rng.gen_range(-PI..PI)),
                });
            }
        }
    }
    let lat = Lattice::new(sites, links).unwrap();
    let (modes, particles) = match seed % 3 {
        0 => (ModeSpec::bosons(sites).unwrap(), rng.gen_range(1..=3)),
        1 => (ModeSpec::hard_core(sites).unwrap(), rng.gen_range(1..sites)),
        _ => (ModeSpec::fermions(sites).unwrap(), rng.gen_range(1..sites)),
    };
    let model = build_tight_binding(lat, modes, particles, rng.gen_range(0.0..2.0)).unwrap();
    let psi = random_state(&model.basis, seed + 1000);
    let ancillas = (0..rng.gen_range(1..=2))
        .map(|_| {
            let a = rng.gen_range(0..sites);
            let b = (a + rng.gen_range(1..sites)) % sites;
            let mut anc = AncillaCoupling::new(vec![
                (a, C64::from_polar(rng.gen_range(0.5..1.2), rng.gen_range(-PI..PI))),
                (b, C64::from_polar(rng.gen_range(0.5..1.2), rng.gen_range(-PI..PI))),
            ]);
            anc.weight = rng.gen_range(0.5..1.5);
            anc
        })
        .collect();
    let mut spec = CouplingSpec::for_model(&model, ancillas);
    spec.mode = EvolutionMode::PulseOnly;
    (model, psi, spec)
}
