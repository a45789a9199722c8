//! Lattice Hamiltonians and current observables: the Harper-Hofstadter
//! ladder, triangular plaquettes and spin-1/2 XY models.
//!
//! Conventions: `H = -sum_{l != l'} J_{ll'} a†_l a_l' + V` with
//! `J_{l'l} = conj(J_{ll'})`, and the current from `l1` to `l2` is
//! `j = -i (J_{l1 l2} a†_l1 a_l2 - h.c.)`. Energies are in units of the leg
//! hopping and hbar = 1.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::basis::{Basis, ModeSpec, Statistics};
use crate::error::{Error, Result};
use crate::linalg::{assemble, assemble_hermitian, dot, expectation, norm_sqr, Action, MonomialTerm, SparseOperator, StateVector, C64};

/// A hopping link carrying amplitude `J_{from,to}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub from: usize,
    pub to: usize,
    pub amplitude: C64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Lattice {
    sites: usize,
    links: Vec<Link>,
}

impl Lattice {
    pub fn new(sites: usize, links: Vec<Link>) -> Result<Self> {
        for (i, l) in links.iter().enumerate() {
            if l.from >= sites || l.to >= sites {
                return Err(Error::InvalidModeIndex {
                    index: l.from.max(l.to),
                    modes: sites,
                });
            }
            if l.from == l.to {
                return Err(Error::InvalidParameter(format!("self-link on site {}", l.from)));
            }
            if !l.amplitude.re.is_finite() || !l.amplitude.im.is_finite() {
                return Err(Error::InvalidParameter("hopping amplitude must be finite".into()));
            }
            let dup = links[..i]
                .iter()
                .any(|m| (m.from == l.from && m.to == l.to) || (m.from == l.to && m.to == l.from));
            if dup {
                return Err(Error::InvalidParameter(format!("link {}-{} given twice", l.from, l.to)));
            }
        }
        Ok(Self { sites, links })
    }

    pub fn sites(&self) -> usize {
        self.sites
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    /// `J_{l1 l2}`, or `None` if the sites are not linked.
    pub fn hopping(&self, l1: usize, l2: usize) -> Option<C64> {
        self.links.iter().find_map(|l| {
            if l.from == l1 && l.to == l2 {
                Some(l.amplitude)
            } else if l.from == l2 && l.to == l1 {
                Some(l.amplitude.conj())
            } else {
                None
            }
        })
    }

    fn linked(&self, l1: usize, l2: usize) -> Result<C64> {
        match self.hopping(l1, l2) {
            Some(j) if j.norm() > 0.0 => Ok(j),
            _ => Err(Error::NotALink(l1, l2)),
        }
    }
}

/// How lattice operators map onto the mode operators of the basis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Representation {
    Particle,
    /// Spin-1/2 with `S+ = a`, `S- = a†`, `Sz = 1/2 - n`; hopping terms read
    /// `-J_{ll'} S+_l S-_l'`.
    SpinHolsteinPrimakoff,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    Open,
    Periodic,
}

/// Two-leg ladder with real leg hopping `J` and rung hopping
/// `K exp(-i flux y)` on rung `y`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LadderSpec {
    pub rungs: usize,
    pub j: f64,
    pub k: f64,
    pub flux: f64,
    /// On-site interaction; `f64::INFINITY` gives hard-core bosons.
    pub u: f64,
    pub boundary: Boundary,
    /// Optional occupation cutoff for soft-core bosons.
    pub max_occupancy: Option<u32>,
}

impl LadderSpec {
    pub fn new(rungs: usize, j: f64, k: f64, flux: f64, u: f64) -> Self {
        Self {
            rungs,
            j,
            k,
            flux,
            u,
            boundary: Boundary::Open,
            max_occupancy: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rungs < 2 {
            return Err(Error::InvalidParameter("a ladder needs at least 2 rungs".into()));
        }
        if self.boundary == Boundary::Periodic && self.rungs < 3 {
            return Err(Error::InvalidParameter("periodic ladders need at least 3 rungs".into()));
        }
        if !(self.j > 0.0) || !self.j.is_finite() {
            return Err(Error::InvalidParameter(format!("leg hopping must be positive, got {}", self.j)));
        }
        if !(self.k >= 0.0) || !self.k.is_finite() {
            return Err(Error::InvalidParameter(format!("rung hopping must be >= 0, got {}", self.k)));
        }
        if !(self.u >= 0.0) {
            return Err(Error::InvalidParameter(format!("interaction must be >= 0, got {}", self.u)));
        }
        if !self.flux.is_finite() {
            return Err(Error::InvalidParameter("flux must be finite".into()));
        }
        Ok(())
    }

    pub fn hard_core(&self) -> bool {
        self.u.is_infinite() || self.max_occupancy == Some(1)
    }

    /// Site index of leg `leg` (0 = L, 1 = R) on rung `y`.
    pub fn site(&self, leg: usize, y: usize) -> usize {
        leg * self.rungs + y
    }

    /// Leg links `(leg, y) -> (leg, y + 1)`, in rung order.
    pub fn leg_links(&self, leg: usize) -> Vec<(usize, usize)> {
        let l = self.rungs;
        let mut v: Vec<(usize, usize)> = (0..l - 1).map(|y| (self.site(leg, y), self.site(leg, y + 1))).collect();
        if self.boundary == Boundary::Periodic {
            v.push((self.site(leg, l - 1), self.site(leg, 0)));
        }
        v
    }

    pub fn lattice(&self) -> Result<Lattice> {
        self.validate()?;
        let mut links = Vec::new();
        for leg in 0..2 {
            for (a, b) in self.leg_links(leg) {
                links.push(Link {
                    from: a,
                    to: b,
                    amplitude: C64::new(self.j, 0.0),
                });
            }
        }
        if self.k > 0.0 {
            for y in 0..self.rungs {
                links.push(Link {
                    from: self.site(0, y),
                    to: self.site(1, y),
                    amplitude: C64::from_polar(self.k, -self.flux * y as f64),
                });
            }
        }
        Lattice::new(2 * self.rungs, links)
    }

    fn mode_spec(&self) -> Result<ModeSpec> {
        let cap = if self.hard_core() { Some(1) } else { self.max_occupancy };
        ModeSpec::new(2 * self.rungs, Statistics::Boson, cap)
    }
}

/// Three sites `0, 1, 2` joined by `J_12`, `J_23`, `J_31`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlaquetteSpec {
    pub hoppings: [C64; 3],
    /// Reference energy `J` for the relative magnitudes.
    pub scale: f64,
}

impl PlaquetteSpec {
    pub fn new(hoppings: [C64; 3], scale: f64) -> Result<Self> {
        if !(scale > 0.0) {
            return Err(Error::InvalidParameter("plaquette energy scale must be positive".into()));
        }
        if hoppings.iter().any(|h| !(h.norm() > 0.0) || !h.norm().is_finite()) {
            return Err(Error::InvalidParameter("all three plaquette hoppings must be non-zero".into()));
        }
        Ok(Self { hoppings, scale })
    }

    /// Uniform magnitude `J` with the flux split evenly over the links.
    pub fn uniform(j: f64, flux: f64) -> Result<Self> {
        let h = C64::from_polar(j, flux / 3.0);
        Self::new([h; 3], j)
    }

    pub fn flux(&self) -> f64 {
        wrap_angle(self.hoppings.iter().map(|h| h.arg()).sum())
    }

    /// `zeta_{12}, zeta_{23}, zeta_{31}`.
    pub fn zetas(&self) -> [f64; 3] {
        self.hoppings.map(|h| h.norm() / self.scale)
    }

    /// Links `(1,2)`, `(2,3)`, `(3,1)` as zero-based site pairs.
    pub fn link_pairs(&self) -> [(usize, usize); 3] {
        [(0, 1), (1, 2), (2, 0)]
    }

    pub fn lattice(&self) -> Result<Lattice> {
        let links = self
            .link_pairs()
            .iter()
            .zip(self.hoppings)
            .map(|(&(a, b), amplitude)| Link { from: a, to: b, amplitude })
            .collect();
        Lattice::new(3, links)
    }
}

/// Maps an angle into `(-pi, pi]`.
pub fn wrap_angle(x: f64) -> f64 {
    let mut y = x.rem_euclid(2.0 * PI);
    if y > PI {
        y -= 2.0 * PI;
    }
    y
}

#[derive(Clone, Debug, PartialEq)]
pub enum Geometry {
    Ladder(LadderSpec),
    Plaquette(PlaquetteSpec),
    Generic,
}

/// A Hamiltonian together with the data needed to rebuild its terms on an
/// extended basis.
#[derive(Clone, Debug)]
pub struct Model {
    pub basis: Arc<Basis>,
    pub lattice: Lattice,
    pub representation: Representation,
    pub geometry: Geometry,
    pub terms: Vec<MonomialTerm>,
    pub hamiltonian: SparseOperator,
}

#[derive(Clone, Debug)]
pub struct LinkCurrent {
    pub from: usize,
    pub to: usize,
    pub magnitude: f64,
    pub phase: f64,
    pub operator: SparseOperator,
}

fn interaction_terms(sites: usize, u: f64, cap: Option<u32>) -> Vec<MonomialTerm> {
    if u == 0.0 || !u.is_finite() || cap == Some(1) {
        return Vec::new();
    }
    (0..sites)
        .flat_map(|m| {
            [
                MonomialTerm {
                    coefficient: C64::new(0.5 * u, 0.0),
                    factors: vec![(m, Action::Number), (m, Action::Number)],
                },
                MonomialTerm::number(C64::new(-0.5 * u, 0.0), m),
            ]
        })
        .collect()
}

fn hopping_terms(lattice: &Lattice, repr: Representation) -> Vec<MonomialTerm> {
    let mut terms = Vec::with_capacity(2 * lattice.links.len());
    for l in &lattice.links {
        let j = l.amplitude;
        match repr {
            Representation::Particle => {
                terms.push(MonomialTerm::hop(-j, l.from, l.to));
                terms.push(MonomialTerm::hop(-j.conj(), l.to, l.from));
            }
            Representation::SpinHolsteinPrimakoff => {
                // S+_l S-_l' = a_l a†_l'
                terms.push(MonomialTerm::hop(-j, l.to, l.from));
                terms.push(MonomialTerm::hop(-j.conj(), l.from, l.to));
            }
        }
    }
    terms
}

/// Tight-binding model on an arbitrary lattice with on-site interaction `u`.
pub fn build_tight_binding(lattice: Lattice, modes: ModeSpec, particles: usize, u: f64) -> Result<Model> {
    if modes.count() != lattice.sites() {
        return Err(Error::InvalidModes(format!(
            "{} modes for a lattice of {} sites",
            modes.count(),
            lattice.sites()
        )));
    }
    if !(u >= 0.0) {
        return Err(Error::InvalidParameter(format!("interaction must be >= 0, got {u}")));
    }
    let basis = Arc::new(Basis::sector(modes, particles)?);
    let mut terms = hopping_terms(&lattice, Representation::Particle);
    terms.extend(interaction_terms(lattice.sites(), u, modes.max_occupancy()));
    let hamiltonian = assemble_hermitian(&basis, &terms)?;
    Ok(Model {
        basis,
        lattice,
        representation: Representation::Particle,
        geometry: Geometry::Generic,
        terms,
        hamiltonian,
    })
}

/// Bose-Hubbard Harper-Hofstadter ladder holding `particles` bosons.
pub fn build_hh_ladder(spec: &LadderSpec, particles: usize) -> Result<Model> {
    let lattice = spec.lattice()?;
    let modes = spec.mode_spec()?;
    let u = if spec.hard_core() { 0.0 } else { spec.u };
    let mut model = build_tight_binding(lattice, modes, particles, u)?;
    model.geometry = Geometry::Ladder(*spec);
    Ok(model)
}

pub fn build_plaquette(spec: &PlaquetteSpec, modes: ModeSpec, particles: usize, u: f64) -> Result<Model> {
    if modes.count() != 3 {
        return Err(Error::InvalidModes("a plaquette has three sites".into()));
    }
    let mut model = build_tight_binding(spec.lattice()?, modes, particles, u)?;
    model.geometry = Geometry::Plaquette(*spec);
    Ok(model)
}

/// One `J_{ll'}` entry of a spin coupling table.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpinCoupling {
    pub i: usize,
    pub j: usize,
    pub value: C64,
}

/// Spin-1/2 model `H = -sum J_{ll'} S+_l S-_l' - sum Jz_{ll'} Sz_l Sz_l'` in
/// the sector with `down` spins pointing down. Entries of `couplings` may be
/// given in one or both orientations; both must then be complex conjugates.
/// Every `jz` entry contributes `-Jz Sz_i Sz_j` once.
pub fn build_spin_xy(sites: usize, couplings: &[SpinCoupling], jz: &[(usize, usize, f64)], down: usize) -> Result<Model> {
    let mut links: Vec<Link> = Vec::new();
    for c in couplings {
        if c.i == c.j {
            return Err(Error::InvalidParameter(format!("self-coupling on site {}", c.i)));
        }
        if let Some(existing) = links.iter().find(|l| l.from == c.j && l.to == c.i) {
            let dev = (existing.amplitude - c.value.conj()).norm();
            if dev > 1e-12 {
                return Err(Error::NotHermitian(dev));
            }
            continue;
        }
        if links.iter().any(|l| l.from == c.i && l.to == c.j) {
            return Err(Error::InvalidParameter(format!("coupling {}-{} given twice", c.i, c.j)));
        }
        links.push(Link {
            from: c.i,
            to: c.j,
            amplitude: c.value,
        });
    }
    let lattice = Lattice::new(sites, links)?;
    let basis = Arc::new(Basis::sector(ModeSpec::spins(sites)?, down)?);
    let mut terms = hopping_terms(&lattice, Representation::SpinHolsteinPrimakoff);
    for &(a, b, v) in jz {
        if a >= sites || b >= sites {
            return Err(Error::InvalidModeIndex {
                index: a.max(b),
                modes: sites,
            });
        }
        if a == b {
            return Err(Error::InvalidParameter("Sz Sz coupling needs two distinct sites".into()));
        }
        // Sz_a Sz_b = 1/4 - n_a/2 - n_b/2 + n_a n_b
        let c = C64::new(-v, 0.0);
        terms.push(MonomialTerm::identity(c * 0.25));
        terms.push(MonomialTerm::number(-c * 0.5, a));
        terms.push(MonomialTerm::number(-c * 0.5, b));
        terms.push(MonomialTerm {
            coefficient: c,
            factors: vec![(a, Action::Number), (b, Action::Number)],
        });
    }
    let hamiltonian = assemble_hermitian(&basis, &terms)?;
    Ok(Model {
        basis,
        lattice,
        representation: Representation::SpinHolsteinPrimakoff,
        geometry: Geometry::Generic,
        terms,
        hamiltonian,
    })
}

impl Model {
    pub fn hopping(&self, l1: usize, l2: usize) -> Result<C64> {
        self.lattice.linked(l1, l2)
    }

    /// Terms of the current operator from `l1` to `l2`. For spin models this
    /// is the spin current `-i (J S+_l1 S-_l2 - h.c.)`.
    pub fn current_terms(&self, l1: usize, l2: usize) -> Result<Vec<MonomialTerm>> {
        let j = self.hopping(l1, l2)?;
        let mi = C64::new(0.0, -1.0);
        Ok(match self.representation {
            Representation::Particle => vec![MonomialTerm::hop(mi * j, l1, l2), MonomialTerm::hop(-mi * j.conj(), l2, l1)],
            Representation::SpinHolsteinPrimakoff => {
                vec![MonomialTerm::hop(mi * j, l2, l1), MonomialTerm::hop(-mi * j.conj(), l1, l2)]
            }
        })
    }

    /// Terms of the correlator `J a†_l1 a_l2 + h.c.` (spin analogue for spin
    /// models).
    pub fn correlator_terms(&self, l1: usize, l2: usize) -> Result<Vec<MonomialTerm>> {
        let j = self.hopping(l1, l2)?;
        Ok(match self.representation {
            Representation::Particle => vec![MonomialTerm::hop(j, l1, l2), MonomialTerm::hop(j.conj(), l2, l1)],
            Representation::SpinHolsteinPrimakoff => vec![MonomialTerm::hop(j, l2, l1), MonomialTerm::hop(j.conj(), l1, l2)],
        })
    }

    /// Current with the Peierls phase dropped: `-i |J| (a†_l1 a_l2 - h.c.)`.
    pub fn lab_current_terms(&self, l1: usize, l2: usize) -> Result<Vec<MonomialTerm>> {
        let m = C64::new(self.hopping(l1, l2)?.norm(), 0.0);
        let mi = C64::new(0.0, -1.0);
        Ok(match self.representation {
            Representation::Particle => vec![MonomialTerm::hop(mi * m, l1, l2), MonomialTerm::hop(-mi * m, l2, l1)],
            Representation::SpinHolsteinPrimakoff => vec![MonomialTerm::hop(mi * m, l2, l1), MonomialTerm::hop(-mi * m, l1, l2)],
        })
    }

    pub fn lab_correlator_terms(&self, l1: usize, l2: usize) -> Result<Vec<MonomialTerm>> {
        let m = C64::new(self.hopping(l1, l2)?.norm(), 0.0);
        Ok(match self.representation {
            Representation::Particle => vec![MonomialTerm::hop(m, l1, l2), MonomialTerm::hop(m, l2, l1)],
            Representation::SpinHolsteinPrimakoff => vec![MonomialTerm::hop(m, l2, l1), MonomialTerm::hop(m, l1, l2)],
        })
    }

    pub fn link_current(&self, l1: usize, l2: usize) -> Result<LinkCurrent> {
        let j = self.hopping(l1, l2)?;
        let operator = assemble_hermitian(&self.basis, &self.current_terms(l1, l2)?)?;
        Ok(LinkCurrent {
            from: l1,
            to: l2,
            magnitude: j.norm(),
            phase: j.arg(),
            operator,
        })
    }

    pub fn number(&self, site: usize) -> Result<SparseOperator> {
        assemble(&self.basis, &[MonomialTerm::number(C64::new(1.0, 0.0), site)])
    }

    fn ladder(&self) -> Result<&LadderSpec> {
        match &self.geometry {
            Geometry::Ladder(s) => Ok(s),
            _ => Err(Error::Unsupported("chiral current is defined for ladders only".into())),
        }
    }

    /// `j_c = j_L - j_R` with leg currents averaged over the leg links.
    pub fn chiral_current_terms(&self) -> Result<Vec<MonomialTerm>> {
        let spec = self.ladder()?;
        let mut terms = Vec::new();
        for (leg, sign) in [(0, 1.0), (1, -1.0)] {
            let links = spec.leg_links(leg);
            let w = sign / links.len() as f64;
            for (a, b) in links {
                for mut t in self.current_terms(a, b)? {
                    t.coefficient *= w;
                    terms.push(t);
                }
            }
        }
        Ok(terms)
    }

    pub fn chiral_current(&self) -> Result<SparseOperator> {
        assemble_hermitian(&self.basis, &self.chiral_current_terms()?)
    }

    /// Sum of the three link currents around a triangle.
    pub fn loop_current(&self) -> Result<SparseOperator> {
        let terms = self.loop_terms(false)?;
        assemble_hermitian(&self.basis, &terms)
    }

    /// Loop current built from lab-frame link currents.
    pub fn lab_loop_current(&self) -> Result<SparseOperator> {
        let terms = self.loop_terms(true)?;
        assemble_hermitian(&self.basis, &terms)
    }

    fn loop_terms(&self, lab: bool) -> Result<Vec<MonomialTerm>> {
        let spec = match &self.geometry {
            Geometry::Plaquette(p) => p,
            _ => return Err(Error::Unsupported("loop current is defined for plaquettes only".into())),
        };
        let mut terms = Vec::new();
        for (a, b) in spec.link_pairs() {
            terms.extend(if lab { self.lab_current_terms(a, b)? } else { self.current_terms(a, b)? });
        }
        Ok(terms)
    }

    /// `<j^2> - <j>^2` in units of `|J|^2` for every link, in lattice order.
    pub fn link_variances(&self, state: &StateVector) -> Result<Vec<f64>> {
        self.lattice
            .links
            .iter()
            .map(|l| {
                let c = self.link_current(l.from, l.to)?;
                let jpsi = c.operator.apply_to(state)?;
                let mean = dot(state.amplitudes(), &jpsi).re;
                Ok((norm_sqr(&jpsi) - mean * mean) / (c.magnitude * c.magnitude))
            })
            .collect()
    }

    /// Average of the link variances over all links of the lattice.
    pub fn mean_current_variance(&self, state: &StateVector) -> Result<f64> {
        let v = self.link_variances(state)?;
        if v.is_empty() {
            return Err(Error::Unsupported("lattice has no links".into()));
        }
        Ok(v.iter().sum::<f64>() / v.len() as f64)
    }

    /// `<j_{l1 l2}>` for every link in both orientations' canonical form.
    pub fn link_currents(&self, state: &StateVector) -> Result<Vec<(usize, usize, f64)>> {
        self.lattice
            .links
            .iter()
            .map(|l| {
                let c = self.link_current(l.from, l.to)?;
                Ok((l.from, l.to, expectation(state, &c.operator)?.re))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_angle_range() {
        assert!((wrap_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(0.5) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn ladder_has_expected_link_count() {
        let spec = LadderSpec::new(4, 1.0, 1.5, 0.3, 1.0);
        assert_eq!(spec.lattice().unwrap().links().len(), 3 * 4 - 2);
        let periodic = LadderSpec {
            boundary: Boundary::Periodic,
            ..spec
        };
        assert_eq!(periodic.lattice().unwrap().links().len(), 12);
    }

    #[test]
    fn invalid_ladders() {
        assert!(LadderSpec::new(1, 1.0, 1.0, 0.0, 0.0).validate().is_err());
        assert!(LadderSpec::new(3, 0.0, 1.0, 0.0, 0.0).validate().is_err());
        assert!(LadderSpec::new(3, 1.0, -1.0, 0.0, 0.0).validate().is_err());
        assert!(LadderSpec::new(3, 1.0, 1.0, 0.0, -1.0).validate().is_err());
    }

    #[test]
    fn hopping_lookup_conjugates_reversed_links() {
        let spec = LadderSpec::new(3, 1.0, 2.0, 0.7, 0.0);
        let lat = spec.lattice().unwrap();
        let j = lat.hopping(spec.site(0, 2), spec.site(1, 2)).unwrap();
        assert!((j - C64::from_polar(2.0, -1.4)).norm() < 1e-14);
        assert_eq!(lat.hopping(spec.site(1, 2), spec.site(0, 2)).unwrap(), j.conj());
        assert!(lat.hopping(0, 5).is_none());
    }

    #[test]
    fn plaquette_flux_sums_phases() {
        let p = PlaquetteSpec::new(
            [C64::from_polar(1.0, 0.4), C64::from_polar(2.0, 0.5), C64::from_polar(0.5, 0.6)],
            1.0,
        )
        .unwrap();
        assert!((p.flux() - 1.5).abs() < 1e-14);
        assert_eq!(p.zetas(), [1.0, 2.0, 0.5]);
    }
}
