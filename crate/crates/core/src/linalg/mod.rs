//! Sparse second-quantized operators, state vectors, Lanczos ground states
//! and Krylov time evolution.

mod expm;
mod lanczos;

pub use expm::evolve;
pub use lanczos::{ground_state, GroundState, LanczosOptions};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::Basis;
use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Block size of the parallel reductions. Partial sums are combined in a
/// fixed order, which keeps every reduction bit-for-bit reproducible
/// regardless of the thread count.
const CHUNK: usize = 4096;

const HERMITIAN_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Create,
    Annihilate,
    Number,
}

impl Action {
    fn dagger(self) -> Self {
        match self {
            Action::Create => Action::Annihilate,
            Action::Annihilate => Action::Create,
            Action::Number => Action::Number,
        }
    }
}

/// `coefficient * f_0 f_1 ... f_k`, applied right to left.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonomialTerm {
    pub coefficient: C64,
    pub factors: Vec<(usize, Action)>,
}

impl MonomialTerm {
    pub const MAX_FACTORS: usize = 4;

    pub fn new(coefficient: C64, factors: Vec<(usize, Action)>) -> Result<Self> {
        if factors.len() > Self::MAX_FACTORS {
            return Err(Error::InvalidTerm(format!(
                "{} factors, at most {} allowed",
                factors.len(),
                Self::MAX_FACTORS
            )));
        }
        Ok(Self {
            coefficient,
            factors,
        })
    }

    pub fn identity(coefficient: C64) -> Self {
        Self {
            coefficient,
            factors: Vec::new(),
        }
    }

    /// `c a†_to a_from`.
    pub fn hop(coefficient: C64, to: usize, from: usize) -> Self {
        Self {
            coefficient,
            factors: vec![(to, Action::Create), (from, Action::Annihilate)],
        }
    }

    pub fn number(coefficient: C64, mode: usize) -> Self {
        Self {
            coefficient,
            factors: vec![(mode, Action::Number)],
        }
    }

    pub fn dagger(&self) -> Self {
        Self {
            coefficient: self.coefficient.conj(),
            factors: self.factors.iter().rev().map(|&(m, a)| (m, a.dagger())).collect(),
        }
    }
}

/// Anything that can act on a vector of amplitudes.
pub trait LinearOperator: Sync {
    fn dim(&self) -> usize;
    fn basis_id(&self) -> u64;
    /// `y = M x`.
    fn apply(&self, x: &[C64], y: &mut [C64]);
    /// Cheap upper bound on the spectral norm.
    fn norm_bound(&self) -> f64;
}

/// Compressed sparse row matrix tied to a basis.
#[derive(Clone, Debug)]
pub struct SparseOperator {
    basis_id: u64,
    dim: usize,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<C64>,
    hermitian: bool,
}

/// Builds the matrix of `sum(terms)` on `basis`. The hermiticity flag is set
/// when the assembled matrix is hermitian to 1e-12.
pub fn assemble(basis: &Basis, terms: &[MonomialTerm]) -> Result<SparseOperator> {
    let modes = basis.num_modes();
    for t in terms {
        if t.factors.len() > MonomialTerm::MAX_FACTORS {
            return Err(Error::InvalidTerm(format!("{} factors", t.factors.len())));
        }
        if let Some(&(m, _)) = t.factors.iter().find(|(m, _)| *m >= modes) {
            return Err(Error::InvalidModeIndex { index: m, modes });
        }
    }
    let dim = basis.dim();
    // Row r of M holds <r|M|c>; we obtain it by applying M† to |r>, walking
    // the factors left to right with daggered actions.
    let rows: Vec<Vec<(u32, C64)>> = (0..dim)
        .into_par_iter()
        .map(|r| {
            let key = basis.key(r);
            let mut entries: Vec<(u32, C64)> = Vec::new();
            'terms: for t in terms {
                let mut k = key;
                let mut amp = 1.0;
                for &(m, a) in &t.factors {
                    match basis.apply_action(k, m, a.dagger()) {
                        Some((nk, x)) => {
                            k = nk;
                            amp *= x;
                        }
                        None => continue 'terms,
                    }
                }
                if let Some(c) = basis.index_of_key(k) {
                    entries.push((c as u32, t.coefficient * amp));
                }
            }
            entries.sort_unstable_by_key(|e| e.0);
            let mut merged: Vec<(u32, C64)> = Vec::with_capacity(entries.len());
            for (c, v) in entries {
                match merged.last_mut() {
                    Some(last) if last.0 == c => last.1 += v,
                    _ => merged.push((c, v)),
                }
            }
            merged.retain(|e| e.1 != C64::new(0.0, 0.0));
            merged
        })
        .collect();
    let mut row_ptr = Vec::with_capacity(dim + 1);
    row_ptr.push(0);
    let nnz: usize = rows.iter().map(Vec::len).sum();
    let mut cols = Vec::with_capacity(nnz);
    let mut vals = Vec::with_capacity(nnz);
    for row in rows {
        for (c, v) in row {
            cols.push(c);
            vals.push(v);
        }
        row_ptr.push(cols.len());
    }
    let mut op = SparseOperator {
        basis_id: basis.id(),
        dim,
        row_ptr,
        cols,
        vals,
        hermitian: false,
    };
    op.hermitian = op.hermiticity_deviation() <= HERMITIAN_TOL;
    Ok(op)
}

/// As [`assemble`] but fails unless the result is hermitian.
pub fn assemble_hermitian(basis: &Basis, terms: &[MonomialTerm]) -> Result<SparseOperator> {
    let op = assemble(basis, terms)?;
    if !op.hermitian {
        return Err(Error::NotHermitian(op.hermiticity_deviation()));
    }
    Ok(op)
}

impl SparseOperator {
    pub fn identity(basis: &Basis) -> Self {
        let dim = basis.dim();
        Self {
            basis_id: basis.id(),
            dim,
            row_ptr: (0..=dim).collect(),
            cols: (0..dim as u32).collect(),
            vals: vec![C64::new(1.0, 0.0); dim],
            hermitian: true,
        }
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermitian
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn get(&self, row: usize, col: usize) -> C64 {
        let (lo, hi) = (self.row_ptr[row], self.row_ptr[row + 1]);
        match self.cols[lo..hi].binary_search(&(col as u32)) {
            Ok(i) => self.vals[lo + i],
            Err(_) => C64::new(0.0, 0.0),
        }
    }

    pub fn row(&self, row: usize) -> impl Iterator<Item = (usize, C64)> + '_ {
        let (lo, hi) = (self.row_ptr[row], self.row_ptr[row + 1]);
        self.cols[lo..hi]
            .iter()
            .zip(&self.vals[lo..hi])
            .map(|(&c, &v)| (c as usize, v))
    }

    /// Largest `|M_rc - conj(M_cr)|`.
    pub fn hermiticity_deviation(&self) -> f64 {
        (0..self.dim)
            .into_par_iter()
            .map(|r| {
                self.row(r)
                    .map(|(c, v)| (v - self.get(c, r).conj()).norm())
                    .fold(0.0, f64::max)
            })
            .reduce(|| 0.0, f64::max)
    }

    pub fn scaled(&self, factor: C64) -> Self {
        let mut out = self.clone();
        out.vals.iter_mut().for_each(|v| *v *= factor);
        out.hermitian = self.hermitian && factor.im == 0.0;
        out
    }

    /// `self + factor * other`.
    pub fn add_scaled(&self, other: &SparseOperator, factor: C64) -> Result<Self> {
        check_basis(self.basis_id, other.basis_id)?;
        let mut row_ptr = Vec::with_capacity(self.dim + 1);
        row_ptr.push(0);
        let mut cols = Vec::with_capacity(self.nnz() + other.nnz());
        let mut vals = Vec::with_capacity(self.nnz() + other.nnz());
        for r in 0..self.dim {
            let mut a = self.row(r).peekable();
            let mut b = other.row(r).map(|(c, v)| (c, v * factor)).peekable();
            loop {
                let next = match (a.peek(), b.peek()) {
                    (Some(&(ca, va)), Some(&(cb, vb))) => {
                        if ca == cb {
                            a.next();
                            b.next();
                            (ca, va + vb)
                        } else if ca < cb {
                            a.next();
                            (ca, va)
                        } else {
                            b.next();
                            (cb, vb)
                        }
                    }
                    (Some(&e), None) => {
                        a.next();
                        e
                    }
                    (None, Some(&e)) => {
                        b.next();
                        e
                    }
                    (None, None) => break,
                };
                cols.push(next.0 as u32);
                vals.push(next.1);
            }
            row_ptr.push(cols.len());
        }
        let mut op = Self {
            basis_id: self.basis_id,
            dim: self.dim,
            row_ptr,
            cols,
            vals,
            hermitian: false,
        };
        op.hermitian = op.hermiticity_deviation() <= HERMITIAN_TOL;
        Ok(op)
    }

    pub fn to_dense(&self) -> DMatrix<C64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for r in 0..self.dim {
            for (c, v) in self.row(r) {
                m[(r, c)] += v;
            }
        }
        m
    }

    pub fn apply_to(&self, psi: &StateVector) -> Result<Vec<C64>> {
        check_basis(self.basis_id, psi.basis_id)?;
        let mut y = vec![C64::new(0.0, 0.0); self.dim];
        self.apply(&psi.amps, &mut y);
        Ok(y)
    }
}

impl LinearOperator for SparseOperator {
    fn dim(&self) -> usize {
        self.dim
    }

    fn basis_id(&self) -> u64 {
        self.basis_id
    }

    fn apply(&self, x: &[C64], y: &mut [C64]) {
        y.par_chunks_mut(CHUNK).enumerate().for_each(|(ci, chunk)| {
            let base = ci * CHUNK;
            for (i, yi) in chunk.iter_mut().enumerate() {
                let r = base + i;
                let mut acc = C64::new(0.0, 0.0);
                for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                    acc += self.vals[k] * x[self.cols[k] as usize];
                }
                *yi = acc;
            }
        });
    }

    fn norm_bound(&self) -> f64 {
        (0..self.dim)
            .into_par_iter()
            .map(|r| self.row(r).map(|(_, v)| v.norm()).sum::<f64>())
            .reduce(|| 0.0, f64::max)
    }
}

/// Real linear combination of operators on the same basis, applied without
/// forming the sum.
pub struct OperatorSum<'a> {
    parts: Vec<(f64, &'a SparseOperator)>,
}

impl<'a> OperatorSum<'a> {
    pub fn new(parts: Vec<(f64, &'a SparseOperator)>) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidParameter("empty operator sum".into()))?;
        for p in &parts[1..] {
            check_basis(first.1.basis_id, p.1.basis_id)?;
        }
        Ok(Self { parts })
    }
}

impl LinearOperator for OperatorSum<'_> {
    fn dim(&self) -> usize {
        self.parts[0].1.dim
    }

    fn basis_id(&self) -> u64 {
        self.parts[0].1.basis_id
    }

    fn apply(&self, x: &[C64], y: &mut [C64]) {
        y.par_chunks_mut(CHUNK).enumerate().for_each(|(ci, chunk)| {
            let base = ci * CHUNK;
            for (i, yi) in chunk.iter_mut().enumerate() {
                let r = base + i;
                let mut acc = C64::new(0.0, 0.0);
                for &(w, op) in &self.parts {
                    if w == 0.0 {
                        continue;
                    }
                    let mut part = C64::new(0.0, 0.0);
                    for k in op.row_ptr[r]..op.row_ptr[r + 1] {
                        part += op.vals[k] * x[op.cols[k] as usize];
                    }
                    acc += part * w;
                }
                *yi = acc;
            }
        });
    }

    fn norm_bound(&self) -> f64 {
        self.parts.iter().map(|(w, op)| w.abs() * op.norm_bound()).sum()
    }
}

/// Normalized pure state on a basis.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    basis_id: u64,
    amps: Vec<C64>,
}

impl StateVector {
    /// Normalizes `amps`; fails on a zero vector.
    pub fn new(basis_id: u64, mut amps: Vec<C64>) -> Result<Self> {
        let n = norm(&amps);
        if n == 0.0 || !n.is_finite() {
            return Err(Error::InvalidParameter("state vector has zero or non-finite norm".into()));
        }
        amps.iter_mut().for_each(|a| *a /= n);
        Ok(Self { basis_id, amps })
    }

    pub fn basis_state(basis: &Basis, index: usize) -> Self {
        let mut amps = vec![C64::new(0.0, 0.0); basis.dim()];
        amps[index] = C64::new(1.0, 0.0);
        Self {
            basis_id: basis.id(),
            amps,
        }
    }

    pub(crate) fn from_normalized(basis_id: u64, amps: Vec<C64>) -> Self {
        Self { basis_id, amps }
    }

    pub fn basis_id(&self) -> u64 {
        self.basis_id
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amps
    }

    pub fn into_amplitudes(self) -> Vec<C64> {
        self.amps
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn norm(&self) -> f64 {
        norm(&self.amps)
    }

    /// `<self|other>`.
    pub fn inner(&self, other: &StateVector) -> Result<C64> {
        check_basis(self.basis_id, other.basis_id)?;
        Ok(dot(&self.amps, &other.amps))
    }
}

pub fn expectation(psi: &StateVector, op: &SparseOperator) -> Result<C64> {
    let y = op.apply_to(psi)?;
    Ok(dot(&psi.amps, &y))
}

/// `<psi|A† A|psi> = ||A psi||²`.
pub fn squared_norm_expectation(psi: &StateVector, op: &SparseOperator) -> Result<f64> {
    let y = op.apply_to(psi)?;
    Ok(norm_sqr(&y))
}

pub(crate) fn check_basis(expected: u64, found: u64) -> Result<()> {
    if expected != found {
        return Err(Error::BasisMismatch { expected, found });
    }
    Ok(())
}

/// `sum conj(a_i) b_i`, reduced in fixed-size blocks.
pub fn dot(a: &[C64], b: &[C64]) -> C64 {
    let partial: Vec<C64> = a
        .par_chunks(CHUNK)
        .zip(b.par_chunks(CHUNK))
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p.conj() * q).sum())
        .collect();
    partial.into_iter().sum()
}

pub fn norm_sqr(a: &[C64]) -> f64 {
    let partial: Vec<f64> = a
        .par_chunks(CHUNK)
        .map(|x| x.iter().map(|p| p.norm_sqr()).sum())
        .collect();
    partial.into_iter().sum()
}

pub fn norm(a: &[C64]) -> f64 {
    norm_sqr(a).sqrt()
}

/// `y += c x`.
pub(crate) fn axpy(c: C64, x: &[C64], y: &mut [C64]) {
    y.par_chunks_mut(CHUNK)
        .zip(x.par_chunks(CHUNK))
        .for_each(|(yc, xc)| yc.iter_mut().zip(xc).for_each(|(a, b)| *a += c * b));
}

pub(crate) fn scale(c: C64, x: &mut [C64]) {
    x.par_chunks_mut(CHUNK)
        .for_each(|xc| xc.iter_mut().for_each(|a| *a *= c));
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::ModeSpec;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    #[test]
    fn number_operator_is_diagonal() {
        let b = Basis::sector(ModeSpec::bosons(1).unwrap(), 2).unwrap();
        let n = assemble(&b, &[MonomialTerm::number(c(1.0), 0)]).unwrap();
        assert_eq!(n.get(0, 0), c(2.0));
        assert!(n.is_hermitian());
    }

    #[test]
    fn two_site_hopping_matrix() {
        let b = Basis::sector(ModeSpec::bosons(2).unwrap(), 1).unwrap();
        let j = 0.7;
        let h = assemble(
            &b,
            &[MonomialTerm::hop(c(-j), 0, 1), MonomialTerm::hop(c(-j), 1, 0)],
        )
        .unwrap();
        let d = h.to_dense();
        assert_eq!(d[(0, 0)], c(0.0));
        assert_eq!(d[(0, 1)], c(-j));
        assert_eq!(d[(1, 0)], c(-j));
    }

    #[test]
    fn bosonic_factors_carry_square_roots() {
        let b = Basis::sector(ModeSpec::bosons(2).unwrap(), 2).unwrap();
        // a†_0 a_1 |1,1> = sqrt(2) |2,0>
        let op = assemble(&b, &[MonomialTerm::hop(c(1.0), 0, 1)]).unwrap();
        let from = b.index_of(&[1, 1]).unwrap();
        let to = b.index_of(&[2, 0]).unwrap();
        assert!((op.get(to, from).re - 2f64.sqrt()).abs() < 1e-15);
        assert!(!op.is_hermitian());
    }

    #[test]
    fn invalid_mode_index_is_rejected() {
        let b = Basis::sector(ModeSpec::bosons(2).unwrap(), 1).unwrap();
        let err = assemble(&b, &[MonomialTerm::number(c(1.0), 5)]).unwrap_err();
        assert_eq!(err, Error::InvalidModeIndex { index: 5, modes: 2 });
        assert!(MonomialTerm::new(c(1.0), vec![(0, Action::Number); 5]).is_err());
    }

    #[test]
    fn expectation_checks_basis() {
        let b1 = Basis::sector(ModeSpec::bosons(2).unwrap(), 1).unwrap();
        let b2 = Basis::sector(ModeSpec::bosons(2).unwrap(), 1).unwrap();
        let op = SparseOperator::identity(&b1);
        let psi = StateVector::basis_state(&b2, 0);
        assert!(matches!(expectation(&psi, &op), Err(Error::BasisMismatch { .. })));
    }

    #[test]
    fn add_scaled_matches_dense_sum() {
        let b = Basis::sector(ModeSpec::bosons(3).unwrap(), 2).unwrap();
        let a = assemble(&b, &[MonomialTerm::hop(c(1.0), 0, 1), MonomialTerm::number(c(0.3), 2)]).unwrap();
        let x = assemble(&b, &[MonomialTerm::hop(C64::new(0.0, 1.0), 2, 1)]).unwrap();
        let s = a.add_scaled(&x, c(0.5)).unwrap();
        let diff = s.to_dense() - (a.to_dense() + x.to_dense() * c(0.5));
        assert!(diff.iter().all(|v| v.norm() < 1e-15));
    }
}
