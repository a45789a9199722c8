//! Closed-form weak-coupling expansions of the ancilla statistics.
//!
//! For couplings `H_cpl = sum_m Omega_m (b†_m A_m + A†_m b_m)` applied for a
//! time `dt`, the ancilla probabilities are polynomials in
//! `s_m = (Omega_m dt)^2` whose coefficients are expectation values of
//! products of the `A_m`. Everything here is evaluated by applying sparse
//! operators to the state, never by forming dense matrices.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::basis::{Basis, Mode, ModeSpec, Statistics};
use crate::error::{Error, Result};
use crate::linalg::{assemble, dot, norm_sqr, Action, LinearOperator, MonomialTerm, SparseOperator, StateVector, C64};

/// Which system ladder operator the coupling operator is built from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CouplingLadder {
    /// `A = sum lambda_l a_l`.
    Annihilate,
    /// `A = sum lambda_l a†_l`, i.e. `sum lambda_l S-_l` for spins stored via
    /// Holstein-Primakoff.
    Create,
}

impl CouplingLadder {
    pub fn action(self) -> Action {
        match self {
            CouplingLadder::Annihilate => Action::Annihilate,
            CouplingLadder::Create => Action::Create,
        }
    }
}

/// Terms of `A = sum_l lambda_l a_l` (or `a†_l`).
pub fn coupling_terms(coefficients: &[(usize, C64)], ladder: CouplingLadder) -> Vec<MonomialTerm> {
    coefficients
        .iter()
        .map(|&(l, c)| MonomialTerm {
            coefficient: c,
            factors: vec![(l, ladder.action())],
        })
        .collect()
}

/// The coupling operators `A_m` on a basis spanning the particle numbers
/// they connect.
#[derive(Clone, Debug)]
pub struct CouplingOperators {
    system_id: u64,
    extended: Arc<Basis>,
    embedding: Vec<usize>,
    ops: Vec<SparseOperator>,
    adjoints: Vec<SparseOperator>,
}

/// Second-order moments of the coupling operators in a state.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    /// `<A†_m A_m>`.
    pub x: Vec<f64>,
    /// `Re <A†_m A_m A†_k A_k>`.
    pub q: Vec<Vec<f64>>,
    /// `<A†_m A†_k A_k A_m>`.
    pub r: Vec<Vec<f64>>,
}

impl Moments {
    pub fn ancillas(&self) -> usize {
        self.x.len()
    }

    /// `<(A†_m)^2 A_m^2>`.
    pub fn y(&self, m: usize) -> f64 {
        self.r[m][m]
    }
}

/// Moments of a single coupling operator in both orderings, as needed when
/// the ancilla starts in an excited Fock state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FockMoments {
    /// `<A†A>`
    pub x: f64,
    /// `<A A†>`
    pub xr: f64,
    /// `<(A†A)^2>`
    pub q: f64,
    /// `<(A A†)^2>`
    pub qr: f64,
    /// `Re <A†A A A†>`
    pub z: f64,
    /// `<A†^2 A^2>`
    pub y: f64,
    /// `<A^2 A†^2>`
    pub yr: f64,
}

impl CouplingOperators {
    /// `system` must be a single-sector basis; `couplings[m]` lists the
    /// `(mode, lambda)` pairs of ancilla `m`.
    pub fn new(system: &Basis, couplings: &[Vec<(usize, C64)>], ladder: CouplingLadder) -> Result<Self> {
        let spec = system
            .spec()
            .ok_or_else(|| Error::InvalidModes("coupling operators need a plain system basis".into()))?;
        let n = match system.sectors() {
            [n] => *n,
            _ => return Err(Error::InvalidModes("coupling operators need a single-sector basis".into())),
        };
        for c in couplings {
            if c.is_empty() {
                return Err(Error::InvalidParameter("every ancilla needs at least one coupling coefficient".into()));
            }
            for &(l, lambda) in c {
                if l >= system.num_modes() {
                    return Err(Error::InvalidModeIndex {
                        index: l,
                        modes: system.num_modes(),
                    });
                }
                if !lambda.re.is_finite() || !lambda.im.is_finite() {
                    return Err(Error::InvalidParameter("coupling coefficients must be finite".into()));
                }
            }
        }
        let sectors: Vec<usize> = (n.saturating_sub(2)..=n + 2).collect();
        let extended = Arc::new(Basis::multi_sector(spec, &sectors)?);
        let embedding = (0..system.dim())
            .map(|i| extended.index_of(&system.state(i)))
            .collect::<Result<Vec<_>>>()?;
        let mut ops = Vec::new();
        let mut adjoints = Vec::new();
        for c in couplings {
            let terms = coupling_terms(c, ladder);
            let dag: Vec<MonomialTerm> = terms.iter().map(MonomialTerm::dagger).collect();
            ops.push(assemble(&extended, &terms)?);
            adjoints.push(assemble(&extended, &dag)?);
        }
        Ok(Self {
            system_id: system.id(),
            extended,
            embedding,
            ops,
            adjoints,
        })
    }

    pub fn ancillas(&self) -> usize {
        self.ops.len()
    }

    /// Modes of the extended basis (same statistics as the system).
    pub fn modes(&self) -> &[Mode] {
        self.extended.modes()
    }

    fn embed(&self, psi: &StateVector) -> Result<Vec<C64>> {
        if psi.basis_id() != self.system_id {
            return Err(Error::BasisMismatch {
                expected: self.system_id,
                found: psi.basis_id(),
            });
        }
        let mut v = vec![C64::new(0.0, 0.0); self.extended.dim()];
        for (i, &j) in self.embedding.iter().enumerate() {
            v[j] = psi.amplitudes()[i];
        }
        Ok(v)
    }

    fn apply(op: &SparseOperator, v: &[C64]) -> Vec<C64> {
        let mut out = vec![C64::new(0.0, 0.0); v.len()];
        op.apply(v, &mut out);
        out
    }

    pub fn moments(&self, psi: &StateVector) -> Result<Moments> {
        let v = self.embed(psi)?;
        let m = self.ops.len();
        let a: Vec<Vec<C64>> = self.ops.iter().map(|op| Self::apply(op, &v)).collect();
        let nv: Vec<Vec<C64>> = (0..m).map(|i| Self::apply(&self.adjoints[i], &a[i])).collect();
        let x = a.iter().map(|ai| norm_sqr(ai)).collect();
        let q = (0..m)
            .map(|i| (0..m).map(|k| dot(&nv[i], &nv[k]).re).collect())
            .collect();
        let r = (0..m)
            .map(|i| (0..m).map(|k| norm_sqr(&Self::apply(&self.ops[k], &a[i]))).collect())
            .collect();
        Ok(Moments { x, q, r })
    }

    /// Moments of ancilla `m` in both operator orderings.
    pub fn fock_moments(&self, psi: &StateVector, m: usize) -> Result<FockMoments> {
        let v = self.embed(psi)?;
        let op = self
            .ops
            .get(m)
            .ok_or_else(|| Error::InvalidParameter(format!("no ancilla {m}")))?;
        let adj = &self.adjoints[m];
        let a = Self::apply(op, &v);
        let b = Self::apply(adj, &v);
        let nv = Self::apply(adj, &a);
        let nr = Self::apply(op, &b);
        Ok(FockMoments {
            x: norm_sqr(&a),
            xr: norm_sqr(&b),
            q: norm_sqr(&nv),
            qr: norm_sqr(&nr),
            z: dot(&nv, &nr).re,
            y: norm_sqr(&Self::apply(op, &a)),
            yr: norm_sqr(&Self::apply(adj, &b)),
        })
    }

    /// `[A, A†]` when it is a c-number: `sum |lambda|^2` for unbounded bosons.
    pub fn commutator_constant(couplings: &[(usize, C64)], spec: ModeSpec) -> Option<f64> {
        let unbounded = spec.statistics() == Statistics::Boson && spec.max_occupancy().is_none();
        unbounded.then(|| couplings.iter().map(|c| c.1.norm_sqr()).sum())
    }
}

/// Truncated joint probabilities of a multi-ancilla pulse.
#[derive(Clone, Debug, PartialEq)]
pub struct JointPrediction {
    pub p0: f64,
    /// One particle in ancilla `m`, all others empty.
    pub p1: Vec<f64>,
    /// One particle in each of ancillas `m1 < m2`, keyed `[m1][m2]`.
    pub p11: Vec<Vec<f64>>,
    /// Two particles in ancilla `m`.
    pub p2: Vec<f64>,
}

impl JointPrediction {
    pub fn total(&self) -> f64 {
        let m = self.p1.len();
        let mut t = self.p0 + self.p1.iter().sum::<f64>() + self.p2.iter().sum::<f64>();
        for a in 0..m {
            for b in a + 1..m {
                t += self.p11[a][b];
            }
        }
        t
    }
}

/// Weak-coupling expansion of the ancilla probabilities to first or second
/// order in `s`.
pub fn predict_joint(moments: &Moments, s: &[f64], order: u32) -> Result<JointPrediction> {
    let m = moments.ancillas();
    if s.len() != m {
        return Err(Error::InvalidParameter(format!("{} coupling strengths for {m} ancillas", s.len())));
    }
    if !(1..=2).contains(&order) {
        return Err(Error::InvalidParameter(format!("expansion order must be 1 or 2, got {order}")));
    }
    let second = order == 2;
    let (x, q, r) = (&moments.x, &moments.q, &moments.r);
    let mut p0 = 1.0;
    let mut p1 = vec![0.0; m];
    let mut p11 = vec![vec![0.0; m]; m];
    let mut p2 = vec![0.0; m];
    for a in 0..m {
        p0 -= s[a] * x[a];
        p1[a] = s[a] * x[a];
        if !second {
            continue;
        }
        for k in 0..m {
            p0 += s[a] * s[k] * (q[a][k] / 3.0 + r[a][k] / 6.0);
            // {A†_a A_a, A†_k A_k} has expectation 2 Re <..>
            p1[a] -= s[a] * s[k] * (q[a][k] / 3.0 + 2.0 * r[a][k] / 3.0);
            if k > a {
                p11[a][k] = s[a] * s[k] * r[a][k];
            }
        }
        p2[a] = 0.5 * s[a] * s[a] * r[a][a];
    }
    Ok(JointPrediction { p0, p1, p11, p2 })
}

/// Single-ancilla probabilities `p(0), p(1), p(2)` rewritten with
/// `[A, A†] = 2`, valid for two unit-magnitude couplings to unbounded bosons.
pub fn predict_commuted_boson(moments: &Moments, s: f64, couplings: &[(usize, C64)], spec: ModeSpec) -> Result<[f64; 3]> {
    if moments.ancillas() != 1 || couplings.len() != 2 {
        return Err(Error::Unsupported("commuted form needs one ancilla coupled to exactly two modes".into()));
    }
    if couplings.iter().any(|c| (c.1.norm() - 1.0).abs() > 1e-12) {
        return Err(Error::Unsupported("commuted form needs unit-magnitude couplings".into()));
    }
    if CouplingOperators::commutator_constant(couplings, spec).is_none() {
        return Err(Error::Unsupported("commuted form needs soft-core bosons ([A, A†] = 2)".into()));
    }
    let (x, q) = (moments.x[0], moments.q[0][0]);
    Ok([
        1.0 - s * x + s * s * (0.5 * q - x / 3.0),
        s * x - s * s * (q - 4.0 * x / 3.0),
        s * s * (0.5 * q - x),
    ])
}

/// Coefficients `(c1, c2)` of `p(0) = 1 - c1 s + c2 s^2` for one ancilla.
pub fn p0_coefficients(moments: &Moments) -> (f64, f64) {
    (moments.x[0], moments.q[0][0] / 3.0 + moments.y(0) / 6.0)
}

/// Probabilities `P(n | k)` for an ancilla prepared in Fock state `k`,
/// to first or second order in `s`. Entries are indexed by `n` and cover
/// `n` up to `k + 2`.
pub fn predict_fock_ancilla(mo: &FockMoments, k: usize, s: f64, order: u32) -> Result<Vec<f64>> {
    if !(1..=2).contains(&order) {
        return Err(Error::InvalidParameter(format!("expansion order must be 1 or 2, got {order}")));
    }
    let kf = k as f64;
    let s2 = if order == 2 { s * s } else { 0.0 };
    let mut p = vec![0.0; k + 3];
    p[k] = 1.0 - s * ((kf + 1.0) * mo.x + kf * mo.xr)
        + s2 * (((kf + 1.0).powi(2) * mo.q + kf * kf * mo.qr + 2.0 * kf * (kf + 1.0) * mo.z) / 3.0
            + ((kf + 1.0) * (kf + 2.0) * mo.y + kf * (kf - 1.0) * mo.yr) / 12.0);
    p[k + 1] = s * (kf + 1.0) * mo.x - s2 / 3.0 * (kf + 1.0) * ((kf + 2.0) * mo.y + (kf + 1.0) * mo.q + kf * mo.z);
    p[k + 2] = s2 / 4.0 * (kf + 1.0) * (kf + 2.0) * mo.y;
    if k >= 1 {
        p[k - 1] = s * kf * mo.xr - s2 / 3.0 * kf * ((kf - 1.0) * mo.yr + kf * mo.qr + (kf + 1.0) * mo.z);
    }
    if k >= 2 {
        p[k - 2] = s2 / 4.0 * kf * (kf - 1.0) * mo.yr;
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn moments(x: f64, q: f64, y: f64) -> Moments {
        Moments {
            x: vec![x],
            q: vec![vec![q]],
            r: vec![vec![y]],
        }
    }

    #[test]
    fn zero_coupling_leaves_ancilla_empty() {
        let p = predict_joint(&moments(1.3, 2.0, 0.4), &[0.0], 2).unwrap();
        assert_eq!(p.p0, 1.0);
        assert_eq!(p.p1, vec![0.0]);
        assert_eq!(p.p2, vec![0.0]);
    }

    #[test]
    fn second_order_terms_cancel_in_total() {
        let mo = Moments {
            x: vec![1.0, 0.7, 0.2],
            q: vec![vec![2.0, 0.9, 0.1], vec![0.9, 1.5, 0.3], vec![0.1, 0.3, 0.5]],
            r: vec![vec![0.6, 0.4, 0.05], vec![0.4, 0.3, 0.2], vec![0.05, 0.2, 0.0]],
        };
        for s in [0.01, 0.3, 2.0] {
            let p = predict_joint(&mo, &[s, 0.5 * s, 2.0 * s], 2).unwrap();
            assert!((p.total() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn fock_ancilla_sums_to_one() {
        let mo = FockMoments {
            x: 1.1,
            xr: 0.8,
            q: 2.3,
            qr: 1.2,
            z: 0.9,
            y: 0.7,
            yr: 0.4,
        };
        for k in 0..5 {
            let p = predict_fock_ancilla(&mo, k, 0.37, 2).unwrap();
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12, "k = {k}");
        }
    }

    #[test]
    fn vacuum_fock_ancilla_is_the_joint_formula() {
        let mo = FockMoments {
            x: 1.1,
            xr: 0.8,
            q: 2.3,
            qr: 1.2,
            z: 0.9,
            y: 0.7,
            yr: 0.4,
        };
        let f = predict_fock_ancilla(&mo, 0, 0.05, 2).unwrap();
        let j = predict_joint(&moments(1.1, 2.3, 0.7), &[0.05], 2).unwrap();
        assert!((f[0] - j.p0).abs() < 1e-15);
        assert!((f[1] - j.p1[0]).abs() < 1e-15);
        assert!((f[2] - j.p2[0]).abs() < 1e-15);
    }
}
