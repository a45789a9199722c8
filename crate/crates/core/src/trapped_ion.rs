//! Trapped-ion realization: a thermal phonon mode as ancilla, red-sideband
//! couplings to the spins and spin-current extraction from the change of the
//! phonon distribution.

use std::f64::consts::FRAC_PI_2;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{Basis, ModeSpec, Statistics};
use crate::error::{Error, Result};
use crate::linalg::{assemble, assemble_hermitian, dot, Action, MonomialTerm, StateVector, C64};
use crate::models::{Geometry, Model, Representation};
use crate::perturbation::{predict_fock_ancilla, CouplingLadder, FockMoments};
use crate::probe::fit::polyfit;
use crate::probe::{
    normalize_grid, relative_error, AncillaCoupling, CouplingSpec, Direction, EvolutionMode, ExtractionResult, FitWindow, GridPolicy, ProbeSetup,
    DEFAULT_DURATION,
};

/// Tail mass above which a truncated thermal distribution is flagged.
pub const TAIL_WARNING: f64 = 1e-6;
/// Tail mass targeted by the default truncation.
const TAIL_TARGET: f64 = 1e-8;
/// Channels with `|alpha_n|` below this cannot resolve the current.
pub const ALPHA_THRESHOLD: f64 = 1e-3;

/// Phonon occupation probabilities of the ancilla mode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThermalAncilla {
    pub omega: f64,
    pub temperature: f64,
    pub n_max: usize,
    /// `p_0 .. p_{n_max}`, normalized.
    pub probabilities: Vec<f64>,
    /// Mass of the untruncated distribution above `n_max`.
    pub tail_mass: f64,
    pub warnings: Vec<String>,
}

impl ThermalAncilla {
    /// An arbitrary distribution diagonal in phonon number.
    pub fn from_probabilities(probabilities: Vec<f64>) -> Result<Self> {
        if probabilities.is_empty() || probabilities.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
            return Err(Error::InvalidParameter("phonon probabilities must be finite and >= 0".into()));
        }
        let sum: f64 = probabilities.iter().sum();
        if (sum - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidParameter(format!("phonon probabilities sum to {sum}")));
        }
        Ok(Self {
            omega: f64::NAN,
            temperature: f64::NAN,
            n_max: probabilities.len() - 1,
            probabilities,
            tail_mass: 0.0,
            warnings: Vec::new(),
        })
    }

    /// `p_n`, zero outside the truncation.
    pub fn p(&self, n: isize) -> f64 {
        if n < 0 {
            0.0
        } else {
            self.probabilities.get(n as usize).copied().unwrap_or(0.0)
        }
    }

    /// `(2n+1) p_n - n p_{n-1} - (n+1) p_{n+1}`.
    pub fn alpha(&self, n: usize) -> f64 {
        let (k, nf) = (n as isize, n as f64);
        (2.0 * nf + 1.0) * self.p(k) - nf * self.p(k - 1) - (nf + 1.0) * self.p(k + 1)
    }

    /// `p_n - n p_{n-1} + (n+1) p_{n+1}`.
    pub fn beta(&self, n: usize) -> f64 {
        let (k, nf) = (n as isize, n as f64);
        self.p(k) - nf * self.p(k - 1) + (nf + 1.0) * self.p(k + 1)
    }

    /// Coefficients `(a_n, b_n)` of `<A†A>` and `<AA†>` in `-dP(n)/ds`.
    pub fn rate_coefficients(&self, n: usize) -> (f64, f64) {
        let (k, nf) = (n as isize, n as f64);
        (
            (nf + 1.0) * self.p(k) - nf * self.p(k - 1),
            nf * self.p(k) - (nf + 1.0) * self.p(k + 1),
        )
    }
}

/// Thermal phonon distribution `p_n = exp(-n omega / T) / Z`, renormalized
/// over `0..=n_max`. Without `n_max` the truncation is the larger of 8 and
/// the first level whose tail drops below `1e-8`.
pub fn thermal_distribution(omega: f64, temperature: f64, n_max: Option<usize>) -> Result<ThermalAncilla> {
    if !(omega > 0.0) || !omega.is_finite() {
        return Err(Error::InvalidParameter(format!("mode frequency must be positive, got {omega}")));
    }
    if !(temperature >= 0.0) || !temperature.is_finite() {
        return Err(Error::InvalidParameter(format!("temperature must be >= 0, got {temperature}")));
    }
    let q = if temperature == 0.0 { 0.0 } else { (-omega / temperature).exp() };
    let n_max = n_max.unwrap_or_else(|| {
        let mut n = 0usize;
        // tail above n is q^(n+1)
        while q > 0.0 && q.powi(n as i32 + 1) >= TAIL_TARGET && n < 10_000 {
            n += 1;
        }
        n.max(8)
    });
    let weights: Vec<f64> = (0..=n_max).map(|n| if n == 0 { 1.0 } else { q.powi(n as i32) }).collect();
    let z: f64 = weights.iter().sum();
    let tail_mass = q.powi(n_max as i32 + 1);
    let mut warnings = Vec::new();
    if tail_mass > TAIL_WARNING {
        warnings.push(format!(
            "phonon truncation n_max = {n_max} discards {tail_mass:.2e} of the thermal distribution"
        ));
    }
    Ok(ThermalAncilla {
        omega,
        temperature,
        n_max,
        probabilities: weights.iter().map(|w| w / z).collect(),
        tail_mass,
        warnings,
    })
}

/// Red-sideband drive of one ion.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IonDrive {
    pub ion: usize,
    pub rabi: f64,
    pub lamb_dicke: f64,
    pub phase: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SidebandCoupling {
    pub drives: Vec<IonDrive>,
    /// Overall pulse strength `Omega`.
    pub omega: f64,
}

impl SidebandCoupling {
    /// `lambda_l = Omega^R_l eta_l exp(i phi_l) / (2 Omega)`.
    pub fn coefficients(&self) -> Vec<(usize, C64)> {
        self.drives
            .iter()
            .map(|d| (d.ion, C64::from_polar(d.rabi * d.lamb_dicke / (2.0 * self.omega), d.phase)))
            .collect()
    }
}

/// Drives ions `l1` and `l2` with `(rabi, lamb_dicke)` each, choosing the
/// laser phases so that `A†A = 1 + Sz_1 + Sz_2 + j / |J|` (up to the drive
/// amplitudes) in the requested direction. `Omega` is set so that
/// `|lambda_1 lambda_2| = 1`.
pub fn ion_current_coupling(model: &Model, l1: usize, l2: usize, drives: [(f64, f64); 2], direction: Direction) -> Result<SidebandCoupling> {
    if model.representation != Representation::SpinHolsteinPrimakoff {
        return Err(Error::Unsupported("ion couplings act on spin models".into()));
    }
    for &(rabi, eta) in &drives {
        if !(rabi > 0.0) || !(eta > 0.0) || !rabi.is_finite() || !eta.is_finite() {
            return Err(Error::InvalidParameter("Rabi frequencies and Lamb-Dicke parameters must be positive".into()));
        }
    }
    let (a, b) = match direction {
        Direction::Forward => (l1, l2),
        Direction::Backward => (l2, l1),
    };
    let phi = model.hopping(a, b)?.arg();
    let (da, db) = match direction {
        Direction::Forward => (drives[0], drives[1]),
        Direction::Backward => (drives[1], drives[0]),
    };
    let omega = 0.5 * (da.0 * da.1 * db.0 * db.1).sqrt();
    Ok(SidebandCoupling {
        drives: vec![
            IonDrive {
                ion: a,
                rabi: da.0,
                lamb_dicke: da.1,
                phase: 0.0,
            },
            IonDrive {
                ion: b,
                rabi: db.0,
                lamb_dicke: db.1,
                phase: phi - FRAC_PI_2,
            },
        ],
        omega,
    })
}

/// Coupling spec for a phonon ancilla driven through `sideband`.
pub fn sideband_spec(sideband: &SidebandCoupling, ancilla: &ThermalAncilla, mode: EvolutionMode) -> CouplingSpec {
    CouplingSpec {
        ancillas: vec![AncillaCoupling::new(sideband.coefficients())],
        duration: DEFAULT_DURATION,
        truncation: ancilla.n_max as u32 + 3,
        ancilla_statistics: Statistics::Boson,
        mode,
        ladder: CouplingLadder::Create,
    }
}

/// First-order phonon distribution after the pulse, from `<A†A>` and
/// `<AA†>`.
pub fn predict_thermal_probabilities(ancilla: &ThermalAncilla, x: f64, xr: f64, s: f64) -> Vec<f64> {
    (0..=ancilla.n_max + 1)
        .map(|n| {
            let (a, b) = ancilla.rate_coefficients(n);
            ancilla.p(n as isize) - s * (a * x + b * xr)
        })
        .collect()
}

/// Second-order phonon distribution: the Fock-state expansion averaged over
/// the initial phonon distribution. Entries run up to `n_max + 2`.
pub fn predict_thermal_second_order(ancilla: &ThermalAncilla, moments: &FockMoments, s: f64) -> Result<Vec<f64>> {
    let mut out = vec![0.0; ancilla.n_max + 3];
    for (k, &pk) in ancilla.probabilities.iter().enumerate() {
        if pk == 0.0 {
            continue;
        }
        for (n, p) in predict_fock_ancilla(moments, k, s, 2)?.into_iter().enumerate() {
            out[n] += pk * p;
        }
    }
    Ok(out)
}

/// Mixed-ancilla pulse simulated as an ensemble of Fock initial states.
#[derive(Clone, Debug)]
pub struct ThermalProbe {
    setups: Vec<(usize, f64, ProbeSetup)>,
    n_out: usize,
}

impl ThermalProbe {
    pub fn new(model: &Model, spec: &CouplingSpec, ancilla: &ThermalAncilla) -> Result<Self> {
        if spec.ancillas.len() != 1 || spec.ancilla_statistics != Statistics::Boson {
            return Err(Error::Unsupported("the phonon ancilla is a single bosonic mode".into()));
        }
        if (spec.truncation as usize) < ancilla.n_max + 2 {
            return Err(Error::InvalidParameter(format!(
                "phonon truncation {} must be at least n_max + 2 = {}",
                spec.truncation,
                ancilla.n_max + 2
            )));
        }
        let setups = ancilla
            .probabilities
            .par_iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(k, &p)| Ok((k, p, ProbeSetup::new_at(model, spec, &[k as u32])?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            setups,
            n_out: spec.truncation as usize + 1,
        })
    }

    /// Phonon-number distribution after a pulse of strength `s`.
    pub fn distribution(&self, psi: &StateVector, s: f64) -> Result<Vec<f64>> {
        let parts = self
            .setups
            .par_iter()
            .map(|(_, p, setup)| Ok((*p, setup.simulate(psi, &[s])?)))
            .collect::<Result<Vec<_>>>()?;
        let mut out = vec![0.0; self.n_out];
        for (p, d) in parts {
            for (n, q) in d.probabilities.iter().enumerate() {
                out[n] += p * q;
            }
        }
        Ok(out)
    }

    pub fn sweep(&self, psi: &StateVector, grid: &[f64]) -> Result<Vec<Vec<f64>>> {
        grid.iter().map(|&s| self.distribution(psi, s)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpinCurrentOptions {
    pub channel: usize,
    /// Use both probe directions; otherwise subtract exact densities.
    pub antisymmetric: bool,
    /// Window on the total variation distance between the phonon
    /// distributions before and after the pulse, weighted by
    /// `2 nbar + 1 + n`. At zero temperature this is the depletion `1 - P(0)`.
    pub delta_p: f64,
    pub fit_order: usize,
    pub grid: GridPolicy,
    pub mode: EvolutionMode,
    pub drives: [(f64, f64); 2],
}

impl Default for SpinCurrentOptions {
    fn default() -> Self {
        Self {
            channel: 0,
            antisymmetric: true,
            delta_p: 0.06,
            fit_order: 2,
            grid: GridPolicy {
                s_initial_max: 0.1,
                points_per_decade: 10,
                ..GridPolicy::default()
            },
            mode: EvolutionMode::Full,
            drives: [(1.0, 0.1), (1.0, 0.1)],
        }
    }
}

/// `<j_{l1 l2}>` of a spin model from the phonon statistics of channel
/// `opts.channel`.
pub fn extract_spin_current(model: &Model, psi: &StateVector, l1: usize, l2: usize, ancilla: &ThermalAncilla, opts: &SpinCurrentOptions) -> Result<ExtractionResult> {
    let n = opts.channel;
    let alpha = ancilla.alpha(n);
    if alpha.abs() < ALPHA_THRESHOLD {
        return Err(Error::UnresolvableChannel { n, alpha: alpha.abs() });
    }
    opts.grid.validate()?;
    if opts.fit_order == 0 {
        return Err(Error::InvalidParameter("fit order must be at least 1".into()));
    }
    if !(opts.delta_p > 0.0) {
        return Err(Error::InvalidParameter("window must be positive".into()));
    }
    let dirs: Vec<Direction> = if opts.antisymmetric {
        vec![Direction::Forward, Direction::Backward]
    } else {
        vec![Direction::Forward]
    };
    let mut couplings = Vec::new();
    let mut probes = Vec::new();
    for &d in &dirs {
        let sb = ion_current_coupling(model, l1, l2, opts.drives, d)?;
        probes.push(ThermalProbe::new(model, &sideband_spec(&sb, ancilla, opts.mode), ancilla)?);
        couplings.push(sb.coefficients());
    }
    let mean: f64 = ancilla.probabilities.iter().enumerate().map(|(k, p)| k as f64 * p).sum();
    // second-order terms of a member with k phonons grow like (k + 1) s
    let weight = 2.0 * mean + 1.0 + n as f64;
    let tvd = |p: &[f64]| weight * 0.5 * p.iter().enumerate().map(|(k, q)| (q - ancilla.p(k as isize)).abs()).sum::<f64>();
    let mut grid = normalize_grid(&opts.grid.initial())?;
    let mut series: Vec<Vec<f64>> = vec![Vec::new(); dirs.len()];
    let mut shifts: Vec<f64> = Vec::new();
    let mut block = grid.clone();
    loop {
        let mut block_shift = vec![0.0f64; block.len()];
        for (probe, y) in probes.iter().zip(series.iter_mut()) {
            for (i, p) in probe.sweep(psi, &block)?.iter().enumerate() {
                block_shift[i] = block_shift[i].max(tvd(p));
                y.push(p[n]);
            }
        }
        shifts.extend(block_shift);
        // extend until the window closes inside the grid
        if shifts.last().is_some_and(|&d| d > opts.delta_p) {
            break;
        }
        let Some(ext) = opts.grid.extension(*grid.last().unwrap()) else {
            break;
        };
        grid.extend_from_slice(&ext);
        block = ext;
    }
    let count = shifts.iter().take_while(|&&d| d <= opts.delta_p).count();
    if count < (opts.fit_order + 2).max(3) {
        return Err(Error::WindowEmpty(format!("only {count} points inside the channel window")));
    }
    let y: Vec<f64> = (0..count)
        .map(|i| {
            if opts.antisymmetric {
                0.5 * (series[0][i] - series[1][i])
            } else {
                series[0][i]
            }
        })
        .collect();
    let fit = polyfit(&grid[..count], &y, opts.fit_order)?;
    let slope = fit.coefficients[1];
    let lam = &couplings[0];
    let r12 = lam[0].1.norm() * lam[1].1.norm();
    let magnitude = model.hopping(l1, l2)?.norm();
    let value = if opts.antisymmetric {
        -slope / (alpha * r12) * magnitude
    } else {
        // -dP/ds = a_n <A†A> + b_n <AA†>; remove the single-site parts
        let (a, b) = ancilla.rate_coefficients(n);
        let mut dens = 0.0;
        for &(l, c) in lam {
            let up = site_expectation(model, psi, l, true)?;
            let down = site_expectation(model, psi, l, false)?;
            dens += c.norm_sqr() * (a * up + b * down);
        }
        (-slope - dens) / (alpha * r12) * magnitude
    };
    let exact = {
        let op = model.link_current(l1, l2)?.operator;
        let jpsi = op.apply_to(psi)?;
        dot(psi.amplitudes(), &jpsi).re
    };
    let mut caveats = ancilla.warnings.clone();
    if count == grid.len() {
        caveats.push("estimator did not leave its window within the s grid".to_string());
    }
    Ok(ExtractionResult {
        estimator: format!("ion_channel{n}_{}", if opts.antisymmetric { "antisym" } else { "single" }),
        value,
        window: FitWindow {
            delta_p: opts.delta_p,
            s_min: grid[0],
            s_max: grid[count - 1],
            points: count,
        },
        fit_order: opts.fit_order,
        residual: fit.residual,
        exact: Some(exact),
        relative_error: Some(relative_error(value, exact)),
        caveats,
        sweeps_used: dirs.len(),
    })
}

/// `<S+ S->` (`up = true`) or `<S- S+>` on one site of a spin model.
fn site_expectation(model: &Model, psi: &StateVector, site: usize, up: bool) -> Result<f64> {
    // S+ = a, S- = a†
    let factors = if up {
        vec![(site, Action::Annihilate), (site, Action::Create)]
    } else {
        vec![(site, Action::Create), (site, Action::Annihilate)]
    };
    let op = assemble(&model.basis, &[MonomialTerm { coefficient: C64::new(1.0, 0.0), factors }])?;
    let v = op.apply_to(psi)?;
    Ok(dot(psi.amplitudes(), &v).re)
}

/// The spin model rewritten for hard-core "up" particles, `u† = S+`.
pub fn mapped_particle_model(spin: &Model) -> Result<Model> {
    if spin.representation != Representation::SpinHolsteinPrimakoff {
        return Err(Error::Unsupported("only spin models can be mapped to up-particles".into()));
    }
    let sites = spin.basis.num_modes();
    let down = spin.basis.sectors()[0];
    let basis = Arc::new(Basis::sector(ModeSpec::hard_core(sites)?, sites - down)?);
    let mut terms = Vec::new();
    for t in &spin.terms {
        // a -> u†, a† -> u, n -> 1 - n
        let mut expanded = vec![MonomialTerm::identity(t.coefficient)];
        for &(m, a) in &t.factors {
            let mut next = Vec::with_capacity(2 * expanded.len());
            for e in expanded {
                match a {
                    Action::Create | Action::Annihilate => {
                        let mapped = if a == Action::Create { Action::Annihilate } else { Action::Create };
                        let mut f = e.factors.clone();
                        f.push((m, mapped));
                        next.push(MonomialTerm { coefficient: e.coefficient, factors: f });
                    }
                    Action::Number => {
                        next.push(e.clone());
                        let mut f = e.factors.clone();
                        f.push((m, Action::Number));
                        next.push(MonomialTerm { coefficient: -e.coefficient, factors: f });
                    }
                }
            }
            expanded = next;
        }
        terms.extend(expanded);
    }
    let hamiltonian = assemble_hermitian(&basis, &terms)?;
    Ok(Model {
        basis,
        // -J S+_a S-_b = -J u†_a u_b keeps the hopping table
        lattice: spin.lattice.clone(),
        representation: Representation::Particle,
        geometry: Geometry::Generic,
        terms,
        hamiltonian,
    })
}

/// Carries a spin-model state over to the mapped particle basis.
pub fn map_state_to_particles(spin: &Model, particles: &Model, psi: &StateVector) -> Result<StateVector> {
    if psi.basis_id() != spin.basis.id() {
        return Err(Error::BasisMismatch {
            expected: spin.basis.id(),
            found: psi.basis_id(),
        });
    }
    let mut amps = vec![C64::new(0.0, 0.0); particles.basis.dim()];
    for (i, &a) in psi.amplitudes().iter().enumerate() {
        let occ: Vec<u32> = spin.basis.state(i).iter().map(|&n| 1 - n).collect();
        amps[particles.basis.index_of(&occ)?] = a;
    }
    StateVector::new(particles.basis.id(), amps)
}
