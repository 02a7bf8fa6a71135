//! Krylov solvers with Jacobi scaling and a Newton driver for the per-step
//! nonlinear systems.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sparse::{axpy, dot, norm2, norm_inf, CsrMatrix};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("{method} did not converge in {iterations} iterations (relative residual {residual:e})")]
    NotConverged { method: &'static str, iterations: usize, residual: f64 },
    #[error("conjugate gradient met non-positive curvature {curvature:e} at iteration {iteration}")]
    Indefinite { iteration: usize, curvature: f64 },
    #[error("{method} broke down at iteration {iteration}")]
    Breakdown { method: &'static str, iteration: usize },
    #[error("Newton did not converge in {iterations} iterations (last increment {increment:e}, residual {residual:e})")]
    NewtonNotConverged { iterations: usize, increment: f64, residual: f64 },
    #[error("non-finite value in Newton iteration {iteration}")]
    NonFinite { iteration: usize },
    #[error("matrix is {rows}x{cols}, right-hand side has length {rhs}")]
    Dimension { rows: usize, cols: usize, rhs: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NonsymmetricMethod {
    #[default]
    Bicgstab,
    GmresRestarted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Relative residual tolerance `||b - A x|| / ||b||`.
    pub linear_tol: f64,
    pub linear_max_iters: usize,
    /// Newton stops once the max-norm of the increment is below this.
    pub newton_tol: f64,
    pub newton_max_iters: usize,
    pub nonsymmetric_method: NonsymmetricMethod,
    /// Retry with restarted GMRES when BiCGStab breaks down or stalls.
    pub fallback: bool,
    pub gmres_restart: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            linear_tol: 1e-10,
            linear_max_iters: 20_000,
            newton_tol: 1e-10,
            newton_max_iters: 25,
            nonsymmetric_method: NonsymmetricMethod::Bicgstab,
            fallback: true,
            gmres_restart: 50,
        }
    }
}

/// Solution of a linear solve with its diagnostics.
#[derive(Debug, Clone)]
pub struct LinearSolution {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub relative_residual: f64,
}

fn check_dims(a: &CsrMatrix, b: &[f64]) -> Result<(), SolverError> {
    if a.nrows() != a.ncols() || b.len() != a.nrows() {
        return Err(SolverError::Dimension { rows: a.nrows(), cols: a.ncols(), rhs: b.len() });
    }
    Ok(())
}

fn inverse_diagonal(a: &CsrMatrix) -> Vec<f64> {
    a.diagonal().into_iter().map(|d| if d != 0.0 { 1.0 / d } else { 1.0 }).collect()
}

fn true_residual(a: &CsrMatrix, x: &[f64], b: &[f64]) -> Vec<f64> {
    let mut r = a.mul_vec(x);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    r
}

/// Conjugate gradients with Jacobi preconditioning, from a zero initial guess.
pub fn solve_spd(a: &CsrMatrix, b: &[f64], config: &SolverConfig) -> Result<LinearSolution, SolverError> {
    solve_spd_from(a, b, None, config)
}

/// Conjugate gradients with Jacobi preconditioning.
pub fn solve_spd_from(
    a: &CsrMatrix,
    b: &[f64],
    x0: Option<&[f64]>,
    config: &SolverConfig,
) -> Result<LinearSolution, SolverError> {
    solve_spd_monitored(a, b, x0, config, |_, _| {})
}

/// Conjugate gradients calling `monitor(iteration, x)` after every iteration.
pub fn solve_spd_monitored(
    a: &CsrMatrix,
    b: &[f64],
    x0: Option<&[f64]>,
    config: &SolverConfig,
    mut monitor: impl FnMut(usize, &[f64]),
) -> Result<LinearSolution, SolverError> {
    check_dims(a, b)?;
    let n = b.len();
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        return Ok(LinearSolution { x: vec![0.0; n], iterations: 0, relative_residual: 0.0 });
    }
    let dinv = inverse_diagonal(a);
    let mut x = x0.map_or_else(|| vec![0.0; n], <[f64]>::to_vec);
    let mut r = true_residual(a, &x, b);
    let mut rel = norm2(&r) / bnorm;
    if rel <= config.linear_tol {
        return Ok(LinearSolution { x, iterations: 0, relative_residual: rel });
    }
    let mut z: Vec<f64> = r.iter().zip(&dinv).map(|(ri, di)| ri * di).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 1..=config.linear_max_iters {
        a.mul_vec_into(&p, &mut ap);
        let curvature = dot(&p, &ap);
        if !(curvature > 0.0) {
            return Err(SolverError::Indefinite { iteration: it, curvature });
        }
        let alpha = rz / curvature;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &ap, &mut r);
        monitor(it, &x);
        rel = norm2(&r) / bnorm;
        if rel <= config.linear_tol {
            // confirm with the true residual before accepting
            let tr = norm2(&true_residual(a, &x, b)) / bnorm;
            if tr <= config.linear_tol * 10.0 {
                return Ok(LinearSolution { x, iterations: it, relative_residual: tr });
            }
            r = true_residual(a, &x, b);
        }
        for ((zi, ri), di) in z.iter_mut().zip(&r).zip(&dinv) {
            *zi = ri * di;
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for (pi, zi) in p.iter_mut().zip(&z) {
            *pi = zi + beta * *pi;
        }
    }
    Err(SolverError::NotConverged { method: "CG", iterations: config.linear_max_iters, residual: rel })
}

/// Krylov solve for a general nonsingular matrix, from a zero initial guess.
pub fn solve_nonsymmetric(a: &CsrMatrix, b: &[f64], config: &SolverConfig) -> Result<LinearSolution, SolverError> {
    solve_nonsymmetric_from(a, b, None, config)
}

/// Krylov solve for a general nonsingular matrix with the configured method,
/// falling back to restarted GMRES if BiCGStab fails and fallback is enabled.
pub fn solve_nonsymmetric_from(
    a: &CsrMatrix,
    b: &[f64],
    x0: Option<&[f64]>,
    config: &SolverConfig,
) -> Result<LinearSolution, SolverError> {
    check_dims(a, b)?;
    match config.nonsymmetric_method {
        NonsymmetricMethod::GmresRestarted => gmres(a, b, x0, config),
        NonsymmetricMethod::Bicgstab => match bicgstab(a, b, x0, config) {
            Ok(s) => Ok(s),
            Err(e) if config.fallback => {
                log::debug!("BiCGStab failed ({e}); retrying with GMRES({})", config.gmres_restart);
                gmres(a, b, x0, config)
            }
            Err(e) => Err(e),
        },
    }
}

/// BiCGStab with right Jacobi preconditioning.
pub fn bicgstab(
    a: &CsrMatrix,
    b: &[f64],
    x0: Option<&[f64]>,
    config: &SolverConfig,
) -> Result<LinearSolution, SolverError> {
    check_dims(a, b)?;
    let n = b.len();
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        return Ok(LinearSolution { x: vec![0.0; n], iterations: 0, relative_residual: 0.0 });
    }
    let dinv = inverse_diagonal(a);
    let mut x = x0.map_or_else(|| vec![0.0; n], <[f64]>::to_vec);
    let mut r = true_residual(a, &x, b);
    let mut rel = norm2(&r) / bnorm;
    if rel <= config.linear_tol {
        return Ok(LinearSolution { x, iterations: 0, relative_residual: rel });
    }
    let r_hat = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut phat = vec![0.0; n];
    let mut shat = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut t = vec![0.0; n];
    for it in 1..=config.linear_max_iters {
        let rho_new = dot(&r_hat, &r);
        if rho_new == 0.0 || !rho_new.is_finite() {
            return Err(SolverError::Breakdown { method: "BiCGStab", iteration: it });
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
            phat[i] = dinv[i] * p[i];
        }
        a.mul_vec_into(&phat, &mut v);
        let rv = dot(&r_hat, &v);
        if rv == 0.0 || !rv.is_finite() {
            return Err(SolverError::Breakdown { method: "BiCGStab", iteration: it });
        }
        alpha = rho / rv;
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        if norm2(&s) / bnorm <= config.linear_tol {
            axpy(alpha, &phat, &mut x);
            let tr = norm2(&true_residual(a, &x, b)) / bnorm;
            if tr <= config.linear_tol * 10.0 {
                return Ok(LinearSolution { x, iterations: it, relative_residual: tr });
            }
            r = true_residual(a, &x, b);
            continue;
        }
        for i in 0..n {
            shat[i] = dinv[i] * s[i];
        }
        a.mul_vec_into(&shat, &mut t);
        let tt = dot(&t, &t);
        if tt == 0.0 {
            return Err(SolverError::Breakdown { method: "BiCGStab", iteration: it });
        }
        omega = dot(&t, &s) / tt;
        if omega == 0.0 || !omega.is_finite() {
            return Err(SolverError::Breakdown { method: "BiCGStab", iteration: it });
        }
        for i in 0..n {
            x[i] += alpha * phat[i] + omega * shat[i];
            r[i] = s[i] - omega * t[i];
        }
        rel = norm2(&r) / bnorm;
        if rel <= config.linear_tol {
            let tr = norm2(&true_residual(a, &x, b)) / bnorm;
            if tr <= config.linear_tol * 10.0 {
                return Ok(LinearSolution { x, iterations: it, relative_residual: tr });
            }
            r = true_residual(a, &x, b);
        }
    }
    Err(SolverError::NotConverged { method: "BiCGStab", iterations: config.linear_max_iters, residual: rel })
}

/// Restarted GMRES with right Jacobi preconditioning and Givens rotations.
pub fn gmres(
    a: &CsrMatrix,
    b: &[f64],
    x0: Option<&[f64]>,
    config: &SolverConfig,
) -> Result<LinearSolution, SolverError> {
    check_dims(a, b)?;
    let n = b.len();
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        return Ok(LinearSolution { x: vec![0.0; n], iterations: 0, relative_residual: 0.0 });
    }
    let m = config.gmres_restart.max(1);
    let dinv = inverse_diagonal(a);
    let mut x = x0.map_or_else(|| vec![0.0; n], <[f64]>::to_vec);
    let mut total = 0;
    let mut rel = f64::INFINITY;
    while total < config.linear_max_iters {
        let r = true_residual(a, &x, b);
        let beta = norm2(&r);
        rel = beta / bnorm;
        if rel <= config.linear_tol {
            return Ok(LinearSolution { x, iterations: total, relative_residual: rel });
        }
        let mut basis: Vec<Vec<f64>> = vec![r.iter().map(|ri| ri / beta).collect()];
        let mut h = vec![vec![0.0; m]; m + 1];
        let (mut cs, mut sn) = (vec![0.0; m], vec![0.0; m]);
        let mut g = vec![0.0; m + 1];
        g[0] = beta;
        let mut k_used = 0;
        let mut w = vec![0.0; n];
        for k in 0..m {
            total += 1;
            let z: Vec<f64> = basis[k].iter().zip(&dinv).map(|(v, d)| v * d).collect();
            a.mul_vec_into(&z, &mut w);
            for (j, vj) in basis.iter().enumerate() {
                h[j][k] = dot(&w, vj);
                axpy(-h[j][k], vj, &mut w);
            }
            h[k + 1][k] = norm2(&w);
            for j in 0..k {
                let tmp = cs[j] * h[j][k] + sn[j] * h[j + 1][k];
                h[j + 1][k] = -sn[j] * h[j][k] + cs[j] * h[j + 1][k];
                h[j][k] = tmp;
            }
            let denom = h[k][k].hypot(h[k + 1][k]);
            if denom == 0.0 {
                return Err(SolverError::Breakdown { method: "GMRES", iteration: total });
            }
            cs[k] = h[k][k] / denom;
            sn[k] = h[k + 1][k] / denom;
            h[k][k] = denom;
            let hk1 = h[k + 1][k];
            h[k + 1][k] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            k_used = k + 1;
            rel = g[k + 1].abs() / bnorm;
            if rel <= config.linear_tol || total >= config.linear_max_iters || hk1 == 0.0 {
                break;
            }
            basis.push(w.iter().map(|wi| wi / hk1).collect());
        }
        let mut y = vec![0.0; k_used];
        for i in (0..k_used).rev() {
            let mut s = g[i];
            for j in i + 1..k_used {
                s -= h[i][j] * y[j];
            }
            y[i] = s / h[i][i];
        }
        for (j, yj) in y.iter().enumerate() {
            for ((xi, vi), di) in x.iter_mut().zip(&basis[j]).zip(&dinv) {
                *xi += yj * vi * di;
            }
        }
    }
    let tr = norm2(&true_residual(a, &x, b)) / bnorm;
    if tr <= config.linear_tol * 10.0 {
        return Ok(LinearSolution { x, iterations: total, relative_residual: tr });
    }
    Err(SolverError::NotConverged { method: "GMRES", iterations: total, residual: rel.min(tr) })
}

/// Result of a Newton solve.
#[derive(Debug, Clone)]
pub struct NewtonSolution {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub linear_iterations: usize,
    /// Max-norm of each increment, in order.
    pub increments: Vec<f64>,
}

/// Newton iteration `J(x) dx = -r(x)`, stopping when `||dx||_inf <= newton_tol`.
///
/// `jacobian` returns the Jacobian at the current iterate; the linear systems
/// are solved with [`solve_nonsymmetric`].
pub fn newton_solve<R, J>(
    mut residual: R,
    mut jacobian: J,
    initial_guess: Vec<f64>,
    config: &SolverConfig,
) -> Result<NewtonSolution, crate::Error>
where
    R: FnMut(&[f64]) -> Result<Vec<f64>, crate::Error>,
    J: FnMut(&[f64]) -> Result<CsrMatrix, crate::Error>,
{
    let mut x = initial_guess;
    let mut increments = Vec::new();
    let mut linear_iterations = 0;
    let mut last_residual = f64::NAN;
    for it in 1..=config.newton_max_iters {
        let r = residual(&x)?;
        last_residual = norm_inf(&r);
        if !last_residual.is_finite() {
            return Err(SolverError::NonFinite { iteration: it }.into());
        }
        let jac = jacobian(&x)?;
        let rhs: Vec<f64> = r.iter().map(|v| -v).collect();
        let sol = solve_nonsymmetric(&jac, &rhs, config)?;
        linear_iterations += sol.iterations;
        axpy(1.0, &sol.x, &mut x);
        let inc = norm_inf(&sol.x);
        increments.push(inc);
        if !inc.is_finite() {
            return Err(SolverError::NonFinite { iteration: it }.into());
        }
        if inc <= config.newton_tol {
            return Ok(NewtonSolution { x, iterations: it, linear_iterations, increments });
        }
    }
    Err(SolverError::NewtonNotConverged {
        iterations: config.newton_max_iters,
        increment: increments.last().copied().unwrap_or(f64::NAN),
        residual: last_residual,
    }
    .into())
}
