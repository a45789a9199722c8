use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{axpy, dot, norm, scale, LinearOperator, SparseOperator, StateVector, C64};
use crate::error::{Error, Result};

/// Bytes of Krylov vectors we are willing to keep per restart cycle.
const KRYLOV_MEMORY: usize = 400 << 20;

#[derive(Clone, Copy, Debug)]
pub struct LanczosOptions {
    /// Residual tolerance relative to the operator norm bound.
    pub tol: f64,
    pub seed: u64,
    /// Krylov vectors per restart cycle (reduced automatically for very
    /// large bases).
    pub krylov_dim: usize,
    pub max_restarts: usize,
}

impl Default for LanczosOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            seed: 0x5eed,
            krylov_dim: 60,
            max_restarts: 400,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GroundState {
    pub energy: f64,
    pub state: StateVector,
    /// `E_1 - E_0`; infinite for a one-dimensional basis.
    pub gap: f64,
    pub residual: f64,
    /// Set when the gap is below `1e-8` times the energy scale.
    pub near_degenerate: bool,
    pub matvecs: usize,
}

/// Lowest eigenpair by explicitly restarted Lanczos with full
/// reorthogonalization. The gap comes from a second run deflated against the
/// converged ground state.
pub fn ground_state(h: &SparseOperator, opts: &LanczosOptions) -> Result<GroundState> {
    if !h.is_hermitian() {
        return Err(Error::NotHermitian(h.hermiticity_deviation()));
    }
    let scale = h.norm_bound().max(f64::MIN_POSITIVE);
    let n = h.dim();
    let start = random_vector(n, opts.seed);
    let (energy, psi, residual, mut matvecs) = lowest(h, &[], start, opts, opts.tol, scale)?;
    let gap = if n > 1 {
        let start = random_vector(n, opts.seed.wrapping_add(1));
        let locked = [psi.clone()];
        let e1 = match lowest(h, &locked, start, opts, opts.tol.max(1e-9), scale) {
            Ok((e1, _, _, mv)) => {
                matvecs += mv;
                e1
            }
            // an unconverged Ritz value still bounds E_1 from above
            Err(Error::NonConvergence { .. }) => lowest_ritz_fallback(h, &locked, opts, scale),
            Err(e) => return Err(e),
        };
        (e1 - energy).max(0.0)
    } else {
        f64::INFINITY
    };
    Ok(GroundState {
        energy,
        state: StateVector::from_normalized(h.basis_id(), psi),
        gap,
        residual,
        near_degenerate: gap < 1e-8 * scale,
        matvecs,
    })
}

fn lowest_ritz_fallback(h: &SparseOperator, locked: &[Vec<C64>], opts: &LanczosOptions, scale: f64) -> f64 {
    let start = random_vector(h.dim(), opts.seed.wrapping_add(2));
    let relaxed = LanczosOptions {
        max_restarts: 1,
        ..*opts
    };
    match lowest(h, locked, start, &relaxed, f64::INFINITY, scale) {
        Ok((e, ..)) => e,
        Err(_) => f64::INFINITY,
    }
}

fn random_vector(n: usize, seed: u64) -> Vec<C64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5))
        .collect()
}

fn project_out(locked: &[Vec<C64>], v: &mut [C64]) {
    for l in locked {
        let c = dot(l, v);
        axpy(-c, l, v);
    }
}

type Eigenpair = (f64, Vec<C64>, f64, usize);

fn lowest(op: &dyn LinearOperator, locked: &[Vec<C64>], mut v: Vec<C64>, opts: &LanczosOptions, tol: f64, scale: f64) -> Result<Eigenpair> {
    let n = op.dim();
    let free = n - locked.len();
    if free == 0 {
        return Err(Error::InvalidParameter("no states left after deflation".into()));
    }
    let mem_cap = (KRYLOV_MEMORY / (16 * n.max(1))).max(8);
    let m = opts.krylov_dim.min(mem_cap).min(free).max(1);
    let mut matvecs = 0;
    let mut best = f64::INFINITY;
    let mut w = vec![C64::new(0.0, 0.0); n];
    for _ in 0..opts.max_restarts.max(1) {
        project_out(locked, &mut v);
        let nv = norm(&v);
        if nv == 0.0 {
            return Err(Error::InvalidParameter("start vector vanishes after deflation".into()));
        }
        scale_in_place(&mut v, 1.0 / nv);

        let mut basis: Vec<Vec<C64>> = vec![v.clone()];
        let mut alpha = Vec::with_capacity(m);
        let mut beta: Vec<f64> = Vec::with_capacity(m);
        loop {
            let j = basis.len() - 1;
            op.apply(&basis[j], &mut w);
            matvecs += 1;
            project_out(locked, &mut w);
            let a = dot(&basis[j], &w).re;
            alpha.push(a);
            // two passes of classical Gram-Schmidt against the whole basis
            for _ in 0..2 {
                for b in &basis {
                    let c = dot(b, &w);
                    axpy(-c, b, &mut w);
                }
                project_out(locked, &mut w);
            }
            if basis.len() == m {
                break;
            }
            let b = norm(&w);
            if b <= 1e-13 * scale {
                break;
            }
            beta.push(b);
            let mut next = w.clone();
            scale_in_place(&mut next, 1.0 / b);
            basis.push(next);
        }

        let k = alpha.len();
        let mut t = DMatrix::<f64>::zeros(k, k);
        for i in 0..k {
            t[(i, i)] = alpha[i];
            if i + 1 < k {
                t[(i, i + 1)] = beta[i];
                t[(i + 1, i)] = beta[i];
            }
        }
        let eig = SymmetricEigen::new(t);
        let (imin, _) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, &e)| if e < acc.1 { (i, e) } else { acc });
        let y = eig.eigenvectors.column(imin);

        let mut psi = vec![C64::new(0.0, 0.0); n];
        for (i, b) in basis.iter().enumerate() {
            axpy(C64::new(y[i], 0.0), b, &mut psi);
        }
        project_out(locked, &mut psi);
        let np = norm(&psi);
        scale_in_place(&mut psi, 1.0 / np);

        op.apply(&psi, &mut w);
        matvecs += 1;
        project_out(locked, &mut w);
        let theta = dot(&psi, &w).re;
        axpy(C64::new(-theta, 0.0), &psi, &mut w);
        let residual = norm(&w);
        best = best.min(residual);
        if residual <= tol * scale {
            return Ok((theta, psi, residual, matvecs));
        }
        v = psi;
    }
    Err(Error::NonConvergence {
        method: "lanczos",
        iterations: opts.max_restarts,
        best_residual: best,
    })
}

fn scale_in_place(v: &mut [C64], f: f64) {
    scale(C64::new(f, 0.0), v);
}
