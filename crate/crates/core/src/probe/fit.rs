//! Unweighted polynomial least squares on scaled Vandermonde matrices.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Condition numbers above this make a fit unusable.
pub const MAX_CONDITION: f64 = 1e10;

#[derive(Clone, Debug, PartialEq)]
pub struct PolyFit {
    /// `c_0 .. c_order` in the original variable.
    pub coefficients: Vec<f64>,
    /// Root-mean-square residual.
    pub residual: f64,
    pub condition: f64,
    pub points: usize,
}

/// Fits `y = sum_k c_k x^k` with a free intercept.
pub fn polyfit(x: &[f64], y: &[f64], order: usize) -> Result<PolyFit> {
    if x.len() != y.len() {
        return Err(Error::InvalidParameter("x and y lengths differ".into()));
    }
    if x.len() < order + 1 {
        return Err(Error::WindowEmpty(format!(
            "{} points cannot determine an order-{order} polynomial",
            x.len()
        )));
    }
    let xmax = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let xscale = if xmax > 0.0 { xmax } else { 1.0 };
    let rows = x
        .iter()
        .map(|&t| (0..=order).map(|k| (t / xscale).powi(k as i32)).collect())
        .collect();
    let (c, residual, condition) = solve(rows, y)?;
    let coefficients = c
        .iter()
        .enumerate()
        .map(|(k, v)| v / xscale.powi(k as i32))
        .collect();
    Ok(PolyFit {
        coefficients,
        residual,
        condition,
        points: x.len(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolyFit2d {
    /// `((a, b), c_ab)` for the monomials `x1^a x2^b`.
    pub coefficients: Vec<((usize, usize), f64)>,
    pub residual: f64,
    pub condition: f64,
    pub points: usize,
}

impl PolyFit2d {
    pub fn coefficient(&self, a: usize, b: usize) -> f64 {
        self.coefficients
            .iter()
            .find(|(k, _)| *k == (a, b))
            .map(|c| c.1)
            .unwrap_or(0.0)
    }
}

/// Fits `y = sum c_ab x1^a x2^b` over all monomials with `a + b <= degree`.
pub fn polyfit2d(x1: &[f64], x2: &[f64], y: &[f64], degree: usize) -> Result<PolyFit2d> {
    let monomials: Vec<(usize, usize)> = (0..=degree)
        .flat_map(|t| (0..=t).map(move |a| (a, t - a)))
        .collect();
    polyfit2d_monomials(x1, x2, y, &monomials)
}

/// Fits `y` over an explicit set of monomials `x1^a x2^b`.
pub fn polyfit2d_monomials(x1: &[f64], x2: &[f64], y: &[f64], monomials: &[(usize, usize)]) -> Result<PolyFit2d> {
    if x1.len() != y.len() || x2.len() != y.len() {
        return Err(Error::InvalidParameter("coordinate and value lengths differ".into()));
    }
    if monomials.is_empty() || y.len() < monomials.len() {
        return Err(Error::WindowEmpty(format!(
            "{} points cannot determine {} coefficients",
            y.len(),
            monomials.len()
        )));
    }
    let scale = |v: &[f64]| {
        let m = v.iter().fold(0.0f64, |m, t| m.max(t.abs()));
        if m > 0.0 {
            m
        } else {
            1.0
        }
    };
    let (s1, s2) = (scale(x1), scale(x2));
    let rows = (0..y.len())
        .map(|i| {
            monomials
                .iter()
                .map(|&(a, b)| (x1[i] / s1).powi(a as i32) * (x2[i] / s2).powi(b as i32))
                .collect()
        })
        .collect();
    let (c, residual, condition) = solve(rows, y)?;
    let coefficients = monomials
        .iter()
        .zip(c)
        .map(|(&(a, b), v)| ((a, b), v / (s1.powi(a as i32) * s2.powi(b as i32))))
        .collect();
    Ok(PolyFit2d {
        coefficients,
        residual,
        condition,
        points: y.len(),
    })
}

fn solve(rows: Vec<Vec<f64>>, y: &[f64]) -> Result<(Vec<f64>, f64, f64)> {
    let n = rows.len();
    let k = rows[0].len();
    let a = DMatrix::from_fn(n, k, |i, j| rows[i][j]);
    let b = DVector::from_column_slice(y);
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(condition <= MAX_CONDITION) {
        return Err(Error::IllConditioned(condition));
    }
    let c = svd
        .solve(&b, 0.0)
        .map_err(|e| Error::InvalidParameter(format!("least squares failed: {e}")))?;
    let r = &a * &c - &b;
    let residual = (r.norm_squared() / n as f64).sqrt();
    if !residual.is_finite() {
        return Err(Error::InvalidParameter("fit residual is not finite".into()));
    }
    Ok((c.iter().copied().collect(), residual, condition))
}

/// Length of the longest prefix of `y` staying inside `[lo, hi]`.
pub fn prefix_window(y: &[f64], lo: f64, hi: f64) -> usize {
    y.iter().take_while(|&&v| v >= lo && v <= hi).count()
}
