//! Solver for the nonlinear transfer system
//!
//! ```text
//!   t_i^q = sum_j e^{s phi(i,j) + r lambda_i} t_j,      i = 0..m-1
//! ```
//!
//! and the Markov kernel it induces. In log coordinates x_i = ln t_i
//! the system becomes the fixed point of
//!
//! ```text
//!   x_i <- (1/q) logsumexp_j(s phi(i,j) + r lambda_i + x_j),
//! ```
//!
//! whose right side is a contraction of rate 1/q in the sup norm: the
//! logsumexp gradient is a probability vector, so the map is
//! 1-Lipschitz before the 1/q. That gives global convergence from any
//! start and uniqueness of the strictly positive solution. All
//! arithmetic stays in log space, so large |s|, |r| cannot overflow
//! (the linear t field saturates only when ln t leaves (-700, 700)).

use crate::system::SystemSpec;
use crate::{linalg, Error, Result};

/// Fixed-point sweeps before the Newton fallback engages. The
/// contraction rate 1/q makes the fallback unreachable in practice;
/// it exists for pathological inputs and is tested directly.
const MAX_FIXED_POINT_ITER: usize = 10_000;

/// Newton iterations allowed in the fallback.
const MAX_NEWTON_ITER: usize = 100;

/// Default residual tolerance. Implicit differentiation downstream
/// amplifies solver error, so this is kept near machine precision.
pub const DEFAULT_TOL: f64 = 1e-13;

#[derive(Debug, Clone)]
pub struct TransferSolution {
    pub s: f64,
    pub r: f64,
    /// The positive solution vector; exp of `log_t`.
    pub t: Vec<f64>,
    /// ln t_i, the primary representation.
    pub log_t: Vec<f64>,
    /// Equation defect, measured relative to the equation scale once
    /// |t_i^q| exceeds 1 (see [`residual`]).
    pub residual: f64,
    pub iterations: usize,
}

/// Initial law and transition matrix of the Markov measure built from
/// a transfer solution:
///
/// ```text
///   pi(i)   = t_i / sum_j t_j
///   p_{i,j} = e^{s phi(i,j) + r lambda_i} t_j / t_i^q
/// ```
///
/// Rows sum to 1 exactly because t solves the transfer system; with
/// any exponent other than q in the denominator they would not.
#[derive(Debug, Clone)]
pub struct MarkovKernel {
    /// Parameters of the solution the kernel was built from.
    pub s: f64,
    pub r: f64,
    pub initial: Vec<f64>,
    pub transitions: Vec<Vec<f64>>,
    /// ln of `initial`, kept for deep-cylinder measures.
    pub log_initial: Vec<f64>,
    /// ln of `transitions`.
    pub log_transitions: Vec<Vec<f64>>,
}

impl MarkovKernel {
    pub fn m(&self) -> usize {
        self.initial.len()
    }
}

/// Exponents a_{i,j} = s phi(i,j) + r lambda_i, the only place the
/// parameters enter.
fn weight_exponents(spec: &SystemSpec, s: f64, r: f64) -> Vec<f64> {
    let m = spec.m;
    let mut a = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..m {
            a[i * m + j] = s * spec.phi(i, j) + r * spec.lambdas[i];
        }
    }
    a
}

fn logsumexp(vals: &[f64]) -> f64 {
    let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !hi.is_finite() {
        return hi;
    }
    hi + vals.iter().map(|&v| (v - hi).exp()).sum::<f64>().ln()
}

/// One sweep of the log fixed-point map.
pub(crate) fn log_step(a: &[f64], q: f64, x: &[f64], out: &mut [f64]) {
    let m = x.len();
    let mut row = vec![0.0; m];
    for i in 0..m {
        for j in 0..m {
            row[j] = a[i * m + j] + x[j];
        }
        out[i] = logsumexp(&row) / q;
    }
}

/// Row defects Delta_i = logsumexp_j(a_{i,j} + x_j) - q x_i. The
/// solution has Delta = 0.
fn log_defects(a: &[f64], q: f64, x: &[f64]) -> Vec<f64> {
    let m = x.len();
    let mut row = vec![0.0; m];
    let mut d = vec![0.0; m];
    for i in 0..m {
        for j in 0..m {
            row[j] = a[i * m + j] + x[j];
        }
        d[i] = logsumexp(&row) - q * x[i];
    }
    d
}

/// Defect of a candidate log-vector under the reported normalization:
/// |t_i^q - sum_j e^{a_ij} t_j| / max(1, t_i^q), evaluated without
/// leaving log space, so it is meaningful at any scale.
fn residual_from_logs(a: &[f64], q: f64, x: &[f64]) -> f64 {
    log_defects(a, q, x)
        .iter()
        .zip(x)
        .map(|(&d, &xi)| d.exp_m1().abs() * (q * xi).exp().min(1.0))
        .fold(0.0, f64::max)
}

/// Equation defect of a candidate positive vector t at (s,r):
/// max_i |t_i^q - sum_j e^{s phi(i,j)+r lambda_i} t_j|, divided by
/// t_i^q when that exceeds 1 so the report stays scale-free. Zero
/// exactly at the solution, continuous in t.
pub fn residual(spec: &SystemSpec, t: &[f64], s: f64, r: f64) -> Result<f64> {
    if t.len() != spec.m {
        return Err(Error::InvalidParameter(format!(
            "candidate has {} entries, expected m = {}",
            t.len(),
            spec.m
        )));
    }
    if let Some(bad) = t.iter().position(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::InvalidParameter(format!("nonpositive t entry at index {bad}")));
    }
    let a = weight_exponents(spec, s, r);
    let x: Vec<f64> = t.iter().map(|&v| v.ln()).collect();
    Ok(residual_from_logs(&a, spec.q as f64, &x))
}

/// Solves the transfer system at (s,r) from the standard start t = 1.
pub fn solve_transfer(spec: &SystemSpec, s: f64, r: f64, tol: f64) -> Result<TransferSolution> {
    solve_transfer_from(spec, s, r, tol, None)
}

/// Same, from a caller-supplied strictly positive initialization
/// (used by the uniqueness tests; the solution does not depend on it).
pub fn solve_transfer_from(
    spec: &SystemSpec,
    s: f64,
    r: f64,
    tol: f64,
    init: Option<&[f64]>,
) -> Result<TransferSolution> {
    solve_with_cap(spec, s, r, tol, MAX_FIXED_POINT_ITER, init)
}

/// Same, with an explicit cap on fixed-point sweeps (the configurable
/// solver.max_iter). The Newton fallback still engages past the cap,
/// so a small cap trades sweeps for polish steps rather than failing.
pub fn solve_transfer_capped(
    spec: &SystemSpec,
    s: f64,
    r: f64,
    tol: f64,
    max_iter: usize,
) -> Result<TransferSolution> {
    solve_with_cap(spec, s, r, tol, max_iter, None)
}

fn solve_with_cap(
    spec: &SystemSpec,
    s: f64,
    r: f64,
    tol: f64,
    max_iter: usize,
    init: Option<&[f64]>,
) -> Result<TransferSolution> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tol = {tol} must be positive")));
    }
    if !s.is_finite() || !r.is_finite() {
        return Err(Error::InvalidParameter(format!("non-finite parameters (s,r)=({s},{r})")));
    }
    let m = spec.m;
    let q = spec.q as f64;
    let a = weight_exponents(spec, s, r);

    let mut x = match init {
        Some(t0) => {
            if t0.len() != m || t0.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
                return Err(Error::InvalidParameter("initialization must be strictly positive".into()));
            }
            t0.iter().map(|&v| v.ln()).collect::<Vec<f64>>()
        }
        None => vec![0.0; m],
    };

    let mut next = vec![0.0; m];
    let mut iterations = 0;
    let mut converged = false;
    for _ in 0..max_iter {
        log_step(&a, q, &x, &mut next);
        iterations += 1;
        let delta = x.iter().zip(&next).map(|(&p, &n)| (p - n).abs()).fold(0.0, f64::max);
        let scale = next.iter().map(|&v| v.abs()).fold(1.0, f64::max);
        std::mem::swap(&mut x, &mut next);
        // The iterate gains at most ~ulp(|x|) of noise per sweep, so the
        // literal threshold tol/100 is unreachable once |x| is large;
        // cap the demand at a few ulps of the iterate scale.
        if delta < (tol * 1e-2).max(4.0 * f64::EPSILON * scale) {
            converged = true;
            break;
        }
    }
    if !converged {
        newton_polish(&a, q, &mut x, &mut iterations)?;
    }

    let res = residual_from_logs(&a, q, &x);
    if !(res <= tol) {
        return Err(Error::SolverDiverged {
            s,
            r,
            detail: format!("residual {res:.3e} above tol {tol:.3e} after {iterations} iterations"),
        });
    }
    let t: Vec<f64> = x.iter().map(|&v| v.exp()).collect();
    Ok(TransferSolution { s, r, t, log_t: x, residual: res, iterations })
}

/// Damped Newton on F(x) = q x - logsumexp rows. The Jacobian is
/// qI - W(x) with W row-stochastic, hence strictly diagonally dominant
/// and safely invertible for q >= 2.
fn newton_polish(a: &[f64], q: f64, x: &mut [f64], iterations: &mut usize) -> Result<()> {
    let m = x.len();
    for _ in 0..MAX_NEWTON_ITER {
        let d = log_defects(a, q, x);
        let worst = d.iter().map(|v| v.abs()).fold(0.0, f64::max);
        if worst < 4.0 * f64::EPSILON * x.iter().map(|&v| v.abs()).fold(1.0, f64::max) {
            return Ok(());
        }
        let mut jac = vec![0.0; m * m];
        let mut rhs = vec![0.0; m];
        for i in 0..m {
            let row: Vec<f64> = (0..m).map(|j| a[i * m + j] + x[j]).collect();
            let lse = logsumexp(&row);
            for j in 0..m {
                jac[i * m + j] = -(row[j] - lse).exp();
            }
            jac[i * m + i] += q;
            rhs[i] = d[i];
        }
        let step = linalg::solve_dense(&mut jac, &mut rhs, "transfer newton")?;
        // Full step; the problem is nearly linear this close to the
        // solution and the defect check above terminates the loop.
        for i in 0..m {
            x[i] += step[i];
        }
        *iterations += 1;
    }
    Ok(())
}

/// Builds the Markov kernel of a solution. Row-stochasticity is an
/// algebraic identity here, surfaced as the kernel invariants.
pub fn transition_kernel(spec: &SystemSpec, solution: &TransferSolution) -> MarkovKernel {
    let m = spec.m;
    let q = spec.q as f64;
    let a = weight_exponents(spec, solution.s, solution.r);
    let x = &solution.log_t;
    let norm = logsumexp(x);
    let log_initial: Vec<f64> = x.iter().map(|&v| v - norm).collect();
    let initial: Vec<f64> = log_initial.iter().map(|&v| v.exp()).collect();
    let mut log_transitions = vec![vec![0.0; m]; m];
    let mut transitions = vec![vec![0.0; m]; m];
    for i in 0..m {
        for j in 0..m {
            let lp = a[i * m + j] + x[j] - q * x[i];
            log_transitions[i][j] = lp;
            transitions[i][j] = lp.exp();
        }
    }
    MarkovKernel {
        s: solution.s,
        r: solution.r,
        initial,
        transitions,
        log_initial,
        log_transitions,
    }
}
