//! Ancilla-based measurement protocol: coupling construction, pulse
//! simulation, sweeps over the coupling strength and the estimators that
//! turn ancilla statistics into currents, variances and correlations.

mod estimators;
pub mod fit;
mod schemes;

pub use estimators::*;
pub use schemes::*;

use std::f64::consts::FRAC_PI_2;

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{compose_with_ancillas_at, AncillaSpec, CompositeBasis, Conservation, Statistics};
use crate::error::{Error, Result};
use crate::linalg::{assemble, assemble_hermitian, evolve, MonomialTerm, OperatorSum, SparseOperator, StateVector, C64};
use crate::models::{Model, Representation};
use crate::perturbation::CouplingLadder;

/// Pulse length used throughout, in units of the inverse leg hopping.
pub const DEFAULT_DURATION: f64 = 0.01;

/// Boundary mass above which a distribution is flagged as leaking.
pub const LEAKAGE_THRESHOLD: f64 = 1e-6;

/// Which way round the phase rule is applied to a link.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// `A†A = n1 + n2 + j_12 / |J|`.
    Forward,
    /// `A†A = n1 + n2 - j_12 / |J|`.
    Backward,
}

impl Direction {
    pub fn sign(self) -> f64 {
        match self {
            Direction::Forward => 1.0,
            Direction::Backward => -1.0,
        }
    }

    pub fn reversed(self) -> Self {
        match self {
            Direction::Forward => Direction::Backward,
            Direction::Backward => Direction::Forward,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvolutionMode {
    /// Evolve under `H + H_cpl`.
    Full,
    /// Evolve under `H_cpl` only.
    PulseOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AncillaCoupling {
    /// `(mode, lambda)` pairs defining `A = sum lambda a`.
    pub coefficients: Vec<(usize, C64)>,
    /// `s_m = weight * s` in a sweep over the scalar `s`.
    pub weight: f64,
}

impl AncillaCoupling {
    pub fn new(coefficients: Vec<(usize, C64)>) -> Self {
        Self {
            coefficients,
            weight: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingSpec {
    pub ancillas: Vec<AncillaCoupling>,
    /// Pulse duration `dt`; `Omega = sqrt(s) / dt`.
    pub duration: f64,
    pub truncation: u32,
    pub ancilla_statistics: Statistics,
    pub mode: EvolutionMode,
    pub ladder: CouplingLadder,
}

impl CouplingSpec {
    /// Coupling spec suited to `model` with the given ancillas.
    pub fn for_model(model: &Model, ancillas: Vec<AncillaCoupling>) -> Self {
        let fermionic = model.basis.modes().iter().any(|m| m.statistics == Statistics::Fermion);
        Self {
            ancillas,
            duration: DEFAULT_DURATION,
            truncation: if fermionic { 1 } else { 2 },
            ancilla_statistics: if fermionic { Statistics::Fermion } else { Statistics::Boson },
            mode: EvolutionMode::Full,
            ladder: match model.representation {
                Representation::Particle => CouplingLadder::Annihilate,
                Representation::SpinHolsteinPrimakoff => CouplingLadder::Create,
            },
        }
    }

    pub fn validate(&self, modes: usize) -> Result<()> {
        if self.ancillas.is_empty() {
            return Err(Error::InvalidParameter("at least one ancilla is required".into()));
        }
        if !(self.duration > 0.0) || !self.duration.is_finite() {
            return Err(Error::InvalidParameter(format!("pulse duration must be positive, got {}", self.duration)));
        }
        for (m, a) in self.ancillas.iter().enumerate() {
            if a.coefficients.is_empty() {
                return Err(Error::InvalidParameter(format!("ancilla {m} has no coupling coefficients")));
            }
            if !(a.weight >= 0.0) || !a.weight.is_finite() {
                return Err(Error::InvalidParameter(format!("ancilla {m} weight must be >= 0")));
            }
            for &(l, c) in &a.coefficients {
                if l >= modes {
                    return Err(Error::InvalidModeIndex { index: l, modes });
                }
                if !c.re.is_finite() || !c.im.is_finite() {
                    return Err(Error::InvalidParameter("coupling coefficients must be finite".into()));
                }
            }
        }
        Ok(())
    }

    pub fn coefficients(&self) -> Vec<Vec<(usize, C64)>> {
        self.ancillas.iter().map(|a| a.coefficients.clone()).collect()
    }

    fn conservation(&self) -> Conservation {
        match self.ladder {
            CouplingLadder::Annihilate => Conservation::Total,
            CouplingLadder::Create => Conservation::Difference,
        }
    }
}

/// `lambda` pairs realizing `A†A = n_a + n_b + j_ab / |J_ab|`, where
/// `(a, b)` is the link taken in the requested direction.
pub fn current_coefficients(model: &Model, l1: usize, l2: usize, direction: Direction) -> Result<Vec<(usize, C64)>> {
    let (a, b) = match direction {
        Direction::Forward => (l1, l2),
        Direction::Backward => (l2, l1),
    };
    let phi = model.hopping(a, b)?.arg();
    Ok(vec![(a, C64::new(1.0, 0.0)), (b, C64::from_polar(1.0, phi - FRAC_PI_2))])
}

/// Equal phases: `A†A = n_1 + n_2 + (a†_1 a_2 + h.c.)`.
pub fn correlator_coefficients(model: &Model, l1: usize, l2: usize) -> Result<Vec<(usize, C64)>> {
    model.hopping(l1, l2)?;
    Ok(vec![(l1, C64::new(1.0, 0.0)), (l2, C64::new(1.0, 0.0))])
}

/// Single-ancilla coupling probing the current on `(l1, l2)`.
pub fn current_coupling(model: &Model, l1: usize, l2: usize, direction: Direction) -> Result<CouplingSpec> {
    let c = current_coefficients(model, l1, l2, direction)?;
    Ok(CouplingSpec::for_model(model, vec![AncillaCoupling::new(c)]))
}

/// Composite basis, Hamiltonian and coupling operators for one coupling
/// configuration.
#[derive(Clone, Debug)]
pub struct ProbeSetup {
    composite: CompositeBasis,
    h_sys: SparseOperator,
    couplings: Vec<SparseOperator>,
    spec: CouplingSpec,
    reachable: u32,
    /// Krylov tolerance of the pulse evolution.
    pub tol: f64,
}

impl ProbeSetup {
    pub fn new(model: &Model, spec: &CouplingSpec) -> Result<Self> {
        Self::with_budget(model, spec, usize::MAX)
    }

    /// Fails with [`Error::DimensionBudget`] if the composite space is larger
    /// than `budget`.
    pub fn with_budget(model: &Model, spec: &CouplingSpec, budget: usize) -> Result<Self> {
        Self::build(model, spec, budget, &vec![0; spec.ancillas.len()])
    }

    /// Setup whose ancillas start in the Fock configuration `initial`.
    pub fn new_at(model: &Model, spec: &CouplingSpec, initial: &[u32]) -> Result<Self> {
        Self::build(model, spec, usize::MAX, initial)
    }

    fn build(model: &Model, spec: &CouplingSpec, budget: usize, initial: &[u32]) -> Result<Self> {
        spec.validate(model.basis.num_modes())?;
        let anc = vec![
            AncillaSpec {
                statistics: spec.ancilla_statistics,
                truncation: spec.truncation
            };
            spec.ancillas.len()
        ];
        let composite = compose_with_ancillas_at(&model.basis, &anc, spec.conservation(), initial)?;
        if composite.dim() > budget {
            return Err(Error::DimensionBudget {
                dim: composite.dim(),
                budget,
            });
        }
        let basis = composite.basis();
        let h_sys = assemble_hermitian(basis, &model.terms)?;
        let action = spec.ladder.action();
        let mut couplings = Vec::with_capacity(spec.ancillas.len());
        for (m, a) in spec.ancillas.iter().enumerate() {
            let b = composite.ancilla_mode(m);
            let mut terms = Vec::with_capacity(2 * a.coefficients.len());
            for &(l, lambda) in &a.coefficients {
                let t = MonomialTerm {
                    coefficient: lambda,
                    factors: vec![(b, crate::linalg::Action::Create), (l, action)],
                };
                terms.push(t.dagger());
                terms.push(t);
            }
            couplings.push(assemble_hermitian(basis, &terms)?);
        }
        let particles = model.basis.sectors()[0] as u32;
        let reachable = match spec.conservation() {
            Conservation::Total => particles,
            _ => {
                let cap = model.basis.spec().and_then(|s| s.capacity()).map(|c| c as u32);
                cap.map_or(u32::MAX, |c| c.saturating_sub(particles))
            }
        };
        Ok(Self {
            composite,
            h_sys,
            couplings,
            spec: spec.clone(),
            reachable,
            tol: 1e-12,
        })
    }

    pub fn spec(&self) -> &CouplingSpec {
        &self.spec
    }

    pub fn composite(&self) -> &CompositeBasis {
        &self.composite
    }

    pub fn dim(&self) -> usize {
        self.composite.dim()
    }

    fn embed(&self, psi: &StateVector) -> Result<Vec<C64>> {
        let sys = self.composite.system();
        if psi.basis_id() != sys.id() {
            return Err(Error::BasisMismatch {
                expected: sys.id(),
                found: psi.basis_id(),
            });
        }
        let mut v = vec![C64::new(0.0, 0.0); self.composite.dim()];
        for (i, &j) in self.composite.embedding().iter().enumerate() {
            v[j] = psi.amplitudes()[i];
        }
        Ok(v)
    }

    /// System plus ancillas after a pulse with strengths `s`.
    pub fn final_state(&self, psi: &StateVector, s: &[f64]) -> Result<StateVector> {
        if s.len() != self.couplings.len() {
            return Err(Error::InvalidParameter(format!(
                "{} coupling strengths for {} ancillas",
                s.len(),
                self.couplings.len()
            )));
        }
        if s.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(Error::InvalidParameter("coupling strengths must be finite and >= 0".into()));
        }
        let v = self.embed(psi)?;
        let start = StateVector::new(self.composite.basis().id(), v)?;
        let dt = self.spec.duration;
        let mut parts: Vec<(f64, &SparseOperator)> = Vec::new();
        if self.spec.mode == EvolutionMode::Full {
            parts.push((1.0, &self.h_sys));
        }
        for (c, &sm) in self.couplings.iter().zip(s) {
            parts.push((sm.sqrt() / dt, c));
        }
        if parts.iter().all(|p| p.0 == 0.0) {
            return Ok(start);
        }
        let h = OperatorSum::new(parts)?;
        evolve(&start, &h, dt, self.tol)
    }

    pub fn simulate(&self, psi: &StateVector, s: &[f64]) -> Result<AncillaDistribution> {
        let out = self.final_state(psi, s)?;
        Ok(self.distribution(&out, s))
    }

    fn distribution(&self, out: &StateVector, s: &[f64]) -> AncillaDistribution {
        let m = self.couplings.len();
        let t = self.spec.truncation;
        let radix = t as usize + 1;
        let mut probs = vec![0.0; radix.pow(m as u32)];
        let mut boundary = 0.0;
        for (i, a) in out.amplitudes().iter().enumerate() {
            let p = a.norm_sqr();
            let mut idx = 0;
            let mut at_boundary = false;
            for n in self.composite.ancilla_occupations(i) {
                idx = idx * radix + n as usize;
                at_boundary |= n == t;
            }
            probs[idx] += p;
            if at_boundary {
                boundary += p;
            }
        }
        let can_leak = self.spec.ancilla_statistics == Statistics::Boson && t < self.reachable;
        AncillaDistribution {
            s: s.to_vec(),
            truncation: t,
            ancillas: m,
            probabilities: probs,
            boundary_mass: boundary,
            leakage_warning: can_leak && boundary > LEAKAGE_THRESHOLD,
        }
    }

    /// Expectation of a system observable in the state post-selected on all
    /// ancillas being empty.
    pub fn conditional_expectation(&self, psi: &StateVector, s: &[f64], observable: &SparseOperator) -> Result<f64> {
        let out = self.final_state(psi, s)?;
        let amps: Vec<C64> = self
            .composite
            .embedding()
            .iter()
            .map(|&j| out.amplitudes()[j])
            .collect();
        let p: f64 = amps.iter().map(|a| a.norm_sqr()).sum();
        if p <= 1e-300 {
            return Err(Error::ZeroProbability);
        }
        let post = StateVector::new(self.composite.system().id(), amps)?;
        Ok(crate::linalg::expectation(&post, observable)?.re)
    }

    /// One distribution per grid point, `s_m = weight_m * s`.
    pub fn sweep(&self, psi: &StateVector, grid: &[f64]) -> Result<ProbeSweep> {
        let grid = normalize_grid(grid)?;
        let weights: Vec<f64> = self.spec.ancillas.iter().map(|a| a.weight).collect();
        let distributions = grid
            .par_iter()
            .map(|&s| {
                let sm: Vec<f64> = weights.iter().map(|w| w * s).collect();
                self.simulate(psi, &sm)
            })
            .collect::<Result<Vec<_>>>()?;
        let warnings = if distributions.iter().any(|d| d.leakage_warning) {
            vec![format!(
                "ancilla truncation {} carries more than {LEAKAGE_THRESHOLD:e} probability at its boundary",
                self.spec.truncation
            )]
        } else {
            Vec::new()
        };
        Ok(ProbeSweep {
            s: grid,
            distributions,
            link: None,
            near_degenerate: false,
            warnings,
        })
    }

    /// Joint sweep over independent strengths of two ancillas.
    pub fn sweep_2d(&self, psi: &StateVector, grid1: &[f64], grid2: &[f64]) -> Result<Vec<AncillaDistribution>> {
        if self.couplings.len() != 2 {
            return Err(Error::InvalidParameter("a two-dimensional sweep needs two ancillas".into()));
        }
        let points: Vec<(f64, f64)> = grid1.iter().flat_map(|&a| grid2.iter().map(move |&b| (a, b))).collect();
        points.par_iter().map(|&(a, b)| self.simulate(psi, &[a, b])).collect()
    }
}

/// Sorts, deduplicates and prepends `s = 0`.
pub fn normalize_grid(grid: &[f64]) -> Result<Vec<f64>> {
    if grid.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
        return Err(Error::InvalidParameter("s grid values must be finite and >= 0".into()));
    }
    let mut g = grid.to_vec();
    g.push(0.0);
    g.sort_by(|a, b| a.partial_cmp(b).unwrap());
    g.dedup();
    Ok(g)
}

/// `0` followed by a geometric grid from `min` to `max`.
pub fn geometric_grid(min: f64, max: f64, points_per_decade: usize) -> Result<Vec<f64>> {
    if !(min > 0.0) || !(max >= min) || points_per_decade == 0 {
        return Err(Error::InvalidParameter(format!("invalid geometric grid [{min}, {max}]")));
    }
    let decades = (max / min).log10();
    let n = (decades * points_per_decade as f64).ceil() as usize;
    let mut g = vec![0.0];
    for i in 0..=n {
        let s = min * 10f64.powf(i as f64 / points_per_decade as f64);
        g.push(s.min(max));
    }
    g.dedup();
    Ok(g)
}

/// Joint ancilla occupation probabilities after one pulse.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AncillaDistribution {
    pub s: Vec<f64>,
    pub truncation: u32,
    pub ancillas: usize,
    /// Mixed-radix table, ancilla 0 most significant.
    pub probabilities: Vec<f64>,
    pub boundary_mass: f64,
    pub leakage_warning: bool,
}

impl AncillaDistribution {
    fn index(&self, occ: &[u32]) -> Option<usize> {
        if occ.len() != self.ancillas || occ.iter().any(|&n| n > self.truncation) {
            return None;
        }
        let radix = self.truncation as usize + 1;
        Some(occ.iter().fold(0, |acc, &n| acc * radix + n as usize))
    }

    /// `P(n_1, ..., n_M)`; zero outside the truncation.
    pub fn p(&self, occ: &[u32]) -> f64 {
        self.index(occ).map_or(0.0, |i| self.probabilities[i])
    }

    /// All ancillas empty.
    pub fn p0(&self) -> f64 {
        self.probabilities[0]
    }

    fn unit(&self, entries: &[(usize, u32)]) -> f64 {
        let mut occ = vec![0u32; self.ancillas];
        for &(m, n) in entries {
            occ[m] = n;
        }
        self.p(&occ)
    }

    /// One particle in ancilla `m`, none elsewhere.
    pub fn p1(&self, m: usize) -> f64 {
        self.unit(&[(m, 1)])
    }

    /// Two particles in ancilla `m`, none elsewhere.
    pub fn p2(&self, m: usize) -> f64 {
        self.unit(&[(m, 2)])
    }

    /// One particle in each of `m1 != m2`, none elsewhere.
    pub fn p11(&self, m1: usize, m2: usize) -> f64 {
        self.unit(&[(m1, 1), (m2, 1)])
    }

    /// Probability of `n` particles in total across the ancillas.
    pub fn total_count(&self, n: u32) -> f64 {
        let radix = self.truncation as usize + 1;
        self.probabilities
            .iter()
            .enumerate()
            .filter(|(i, _)| {
                let mut k = *i;
                let mut total = 0;
                for _ in 0..self.ancillas {
                    total += (k % radix) as u32;
                    k /= radix;
                }
                total == n
            })
            .map(|(_, p)| p)
            .sum()
    }

    pub fn sum(&self) -> f64 {
        self.probabilities.iter().sum()
    }

    /// Replaces the probabilities with frequencies of `shots` multinomial
    /// samples.
    pub fn sample_shots<R: Rng>(&self, shots: u64, rng: &mut R) -> Result<Self> {
        if shots == 0 {
            return Err(Error::InvalidParameter("shot count must be positive".into()));
        }
        let mut remaining = shots;
        let mut mass = 1.0;
        let mut counts = Vec::with_capacity(self.probabilities.len());
        for (i, &p) in self.probabilities.iter().enumerate() {
            let c = if i + 1 == self.probabilities.len() || remaining == 0 {
                remaining
            } else {
                let q = (p.max(0.0) / mass).clamp(0.0, 1.0);
                Binomial::new(remaining, q)
                    .map_err(|e| Error::InvalidParameter(format!("binomial sampling: {e}")))?
                    .sample(rng)
            };
            remaining -= c;
            mass -= p.max(0.0);
            if mass <= 0.0 {
                mass = f64::MIN_POSITIVE;
            }
            counts.push(c);
        }
        Ok(Self {
            probabilities: counts.iter().map(|&c| c as f64 / shots as f64).collect(),
            ..self.clone()
        })
    }
}

/// Metadata of the link probed by a sweep.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkMeta {
    pub from: usize,
    pub to: usize,
    pub magnitude: f64,
    pub phase: f64,
    pub direction: Direction,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeSweep {
    pub s: Vec<f64>,
    pub distributions: Vec<AncillaDistribution>,
    pub link: Option<LinkMeta>,
    pub near_degenerate: bool,
    pub warnings: Vec<String>,
}

impl ProbeSweep {
    pub fn p0(&self) -> Vec<f64> {
        self.distributions.iter().map(|d| d.p0()).collect()
    }

    pub fn p1(&self) -> Vec<f64> {
        self.distributions.iter().map(|d| d.p1(0)).collect()
    }

    pub fn p2(&self) -> Vec<f64> {
        self.distributions.iter().map(|d| d.p2(0)).collect()
    }
}

/// Probe a single link in one direction.
pub fn sweep_link(model: &Model, psi: &StateVector, l1: usize, l2: usize, direction: Direction, grid: &[f64], mode: EvolutionMode) -> Result<ProbeSweep> {
    let mut spec = current_coupling(model, l1, l2, direction)?;
    spec.mode = mode;
    let setup = ProbeSetup::new(model, &spec)?;
    let mut sweep = setup.sweep(psi, grid)?;
    let j = model.hopping(l1, l2)?;
    sweep.link = Some(LinkMeta {
        from: l1,
        to: l2,
        magnitude: j.norm(),
        phase: j.arg(),
        direction,
    });
    Ok(sweep)
}

/// Misclassification rates of the ancilla readout.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionErrorModel {
    /// Empty ancilla reported as occupied.
    pub alpha: f64,
    /// Occupied ancilla reported as empty.
    pub beta: f64,
}

impl DetectionErrorModel {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&alpha) || !(0.0..1.0).contains(&beta) || alpha + beta >= 1.0 {
            return Err(Error::InvalidParameter(format!(
                "detection error rates need 0 <= alpha, beta < 1 and alpha + beta < 1, got ({alpha}, {beta})"
            )));
        }
        Ok(Self { alpha, beta })
    }

    /// `p'(0) = (1 - alpha) p(0) + beta p(n > 0)`; false positives are read
    /// as a single particle.
    pub fn apply(&self, dist: &AncillaDistribution) -> Result<AncillaDistribution> {
        if dist.ancillas != 1 {
            return Err(Error::Unsupported("detection errors are modeled for a single ancilla".into()));
        }
        let p = &dist.probabilities;
        let p0 = p[0];
        let mut out: Vec<f64> = p.iter().map(|&x| (1.0 - self.beta) * x).collect();
        out[0] = (1.0 - self.alpha) * p0 + self.beta * (1.0 - p0);
        if out.len() > 1 {
            out[1] += self.alpha * p0;
        }
        Ok(AncillaDistribution {
            probabilities: out,
            ..dist.clone()
        })
    }

    pub fn invert(&self, dist: &AncillaDistribution) -> Result<AncillaDistribution> {
        if dist.ancillas != 1 {
            return Err(Error::Unsupported("detection errors are modeled for a single ancilla".into()));
        }
        let q = &dist.probabilities;
        let p0 = (q[0] - self.beta) / (1.0 - self.alpha - self.beta);
        let mut out: Vec<f64> = q.iter().map(|&x| x / (1.0 - self.beta)).collect();
        out[0] = p0;
        if out.len() > 1 {
            out[1] = (q[1] - self.alpha * p0) / (1.0 - self.beta);
        }
        Ok(AncillaDistribution {
            probabilities: out,
            ..dist.clone()
        })
    }

    /// Corrects a raw `p'(0)` value.
    pub fn invert_p0(&self, p0_measured: f64) -> f64 {
        (p0_measured - self.beta) / (1.0 - self.alpha - self.beta)
    }
}

/// Assembles a system observable on the model basis.
pub fn system_operator(model: &Model, terms: &[MonomialTerm]) -> Result<SparseOperator> {
    assemble(&model.basis, terms)
}
