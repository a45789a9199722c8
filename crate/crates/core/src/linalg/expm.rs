use nalgebra::{DMatrix, SymmetricEigen};

use super::{axpy, check_basis, dot, norm, scale, LinearOperator, StateVector, C64};
use crate::error::{Error, Result};

const MAX_KRYLOV: usize = 40;
const MAX_STEPS: usize = 100_000;
/// Error estimates below this are at rounding level and always accepted.
const ROUNDOFF: f64 = 1e-14;

/// `exp(-i H t) psi` by Lanczos-Krylov steps. Each step is accepted when the
/// a posteriori estimate `beta_m |e_m^T exp(-i tau T) e_1|` is below
/// `tol * tau / t`; otherwise the step is halved, reusing the Krylov space.
pub fn evolve(psi: &StateVector, h: &dyn LinearOperator, duration: f64, tol: f64) -> Result<StateVector> {
    check_basis(h.basis_id(), psi.basis_id())?;
    if !(duration >= 0.0) || !duration.is_finite() {
        return Err(Error::InvalidParameter(format!("duration must be finite and >= 0, got {duration}")));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tolerance must be positive, got {tol}")));
    }
    let n = h.dim();
    let mut v: Vec<C64> = psi.amplitudes().to_vec();
    if duration == 0.0 {
        return Ok(StateVector::from_normalized(psi.basis_id(), v));
    }
    let hnorm = h.norm_bound();
    let m_max = MAX_KRYLOV.min(n);
    let mut t_done = 0.0;
    let mut tau = duration;
    let mut w = vec![C64::new(0.0, 0.0); n];
    let mut steps = 0;
    while t_done < duration {
        steps += 1;
        if steps > MAX_STEPS {
            return Err(Error::NonConvergence {
                method: "krylov expm",
                iterations: MAX_STEPS,
                best_residual: f64::NAN,
            });
        }
        let last = tau >= duration - t_done;
        if last {
            tau = duration - t_done;
        }
        let beta0 = norm(&v);
        let mut basis = vec![v.clone()];
        scale(C64::new(1.0 / beta0, 0.0), &mut basis[0]);
        let mut alpha = Vec::new();
        let mut beta: Vec<f64> = Vec::new();
        let mut breakdown = false;
        let mut next_beta;
        // grow the Krylov space until the error estimate at tau is small
        loop {
            let j = basis.len() - 1;
            h.apply(&basis[j], &mut w);
            let a = dot(&basis[j], &w).re;
            alpha.push(a);
            for _ in 0..2 {
                for b in &basis {
                    let c = dot(b, &w);
                    axpy(-c, b, &mut w);
                }
            }
            next_beta = norm(&w);
            if next_beta <= 1e-14 * hnorm.max(1.0) {
                breakdown = true;
                break;
            }
            let k = alpha.len();
            if k >= 4 || k == m_max {
                let y = tridiag_expm(&alpha, &beta, tau);
                let err = next_beta * y[k - 1].norm();
                if err <= (tol * tau / duration).max(ROUNDOFF) || k == m_max {
                    break;
                }
            }
            beta.push(next_beta);
            let mut nb = w.clone();
            scale(C64::new(1.0 / next_beta, 0.0), &mut nb);
            basis.push(nb);
        }
        let k = alpha.len();
        let y = loop {
            let y = tridiag_expm(&alpha, &beta[..k - 1], tau);
            if breakdown {
                break y;
            }
            let err = next_beta * y[k - 1].norm();
            if err <= (tol * tau / duration).max(ROUNDOFF) {
                break y;
            }
            tau *= 0.5;
            if tau < duration * 1e-12 {
                return Err(Error::NonConvergence {
                    method: "krylov expm",
                    iterations: steps,
                    best_residual: err,
                });
            }
        };
        let mut out = vec![C64::new(0.0, 0.0); n];
        for (i, b) in basis.iter().enumerate().take(k) {
            axpy(y[i] * beta0, b, &mut out);
        }
        v = out;
        t_done = if last && tau == duration - t_done { duration } else { t_done + tau };
        // a step that was accepted at first try may grow for the next one
        tau *= 2.0;
    }
    Ok(StateVector::from_normalized(psi.basis_id(), v))
}

/// `exp(-i tau T) e_1` for a real symmetric tridiagonal `T`.
fn tridiag_expm(alpha: &[f64], beta: &[f64], tau: f64) -> Vec<C64> {
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
    let q = &eig.eigenvectors;
    let phases: Vec<C64> = eig
        .eigenvalues
        .iter()
        .enumerate()
        .map(|(j, &e)| C64::from_polar(1.0, -e * tau) * q[(0, j)])
        .collect();
    (0..k)
        .map(|i| (0..k).map(|j| phases[j] * q[(i, j)]).sum())
        .collect()
}
