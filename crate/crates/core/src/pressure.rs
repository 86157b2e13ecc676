//! Pressure of the transfer system and its derivatives in (s, r).
//!
//! With t(s,r) the positive solution and x = ln t,
//!
//! ```text
//!   P(s,r)  = ln sum_i t_i,
//!   Pn(s,r) = (q - 1) P(s,r),
//! ```
//!
//! `Pn` is the normalization used by the constrained solves downstream;
//! `P` is reported alongside it. Gradients are exact: differentiating
//! the transfer equations gives, for g_i = d ln t_i / ds,
//!
//! ```text
//!   (qI - K) g = h,     h_i = sum_j k_{i,j} phi(i,j),
//! ```
//!
//! with K the transition matrix of the solution's kernel, and the same
//! system with right side lambda for d/dr. qI - K is strictly
//! diagonally dominant (rows of K sum to 1, q >= 2), so the solve is
//! well posed everywhere. The Hessian is a central difference of the
//! exact gradient, which keeps it accurate to ~1e-8 without a second
//! implicit-differentiation layer.

use crate::system::SystemSpec;
use crate::transfer::{self, TransferSolution};
use crate::{linalg, Error, Result};

/// Central-difference step for the Hessian.
const HESSIAN_STEP: f64 = 1e-4;

/// The two cross-derivative estimates must agree this closely
/// (relative to the Hessian scale) or the point is reported as failed.
const HESSIAN_SYMMETRY_TOL: f64 = 1e-6;

/// Pressure, normalized pressure, exact gradient of the normalized
/// pressure and its finite-difference Hessian at one (s, r).
///
/// Fields `p`, `pn`, `dpn_ds`, `dpn_dr` are emitted in reports under
/// the headers P, Pn, dPn_ds, dPn_dr.
#[derive(Debug, Clone)]
pub struct PressurePoint {
    pub s: f64,
    pub r: f64,
    pub p: f64,
    pub pn: f64,
    pub dpn_ds: f64,
    pub dpn_dr: f64,
    /// Symmetrized Hessian of Pn, [[ss, sr], [sr, rr]].
    pub hessian: [[f64; 2]; 2],
}

impl PressurePoint {
    /// Smaller eigenvalue of the Hessian; >= 0 up to step error by
    /// convexity of Pn.
    pub fn min_eigenvalue(&self) -> f64 {
        linalg::sym2_eigenvalues(self.hessian[0][0], self.hessian[0][1], self.hessian[1][1]).0
    }
}

/// Gradient of P and of Pn = (q-1) P at a solved point.
#[derive(Debug, Clone, Copy)]
pub struct PressureGradient {
    pub dp_ds: f64,
    pub dp_dr: f64,
    pub dpn_ds: f64,
    pub dpn_dr: f64,
}

/// (P, Pn) of a transfer solution.
pub fn pressure(spec: &SystemSpec, sol: &TransferSolution) -> (f64, f64) {
    let hi = sol.log_t.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let p = hi + sol.log_t.iter().map(|&v| (v - hi).exp()).sum::<f64>().ln();
    (p, (spec.q as f64 - 1.0) * p)
}

/// Exact gradient via the implicit-function linear systems.
pub fn pressure_gradient(spec: &SystemSpec, sol: &TransferSolution) -> Result<PressureGradient> {
    let m = spec.m;
    let q = spec.q as f64;
    let kernel = transfer::transition_kernel(spec, sol);

    // Shared matrix qI - K for both right sides.
    let base: Vec<f64> = (0..m * m)
        .map(|idx| {
            let (i, j) = (idx / m, idx % m);
            let mut v = -kernel.transitions[i][j];
            if i == j {
                v += q;
            }
            v
        })
        .collect();

    let mut h_s = vec![0.0; m];
    let mut h_r = vec![0.0; m];
    for i in 0..m {
        h_s[i] = (0..m).map(|j| kernel.transitions[i][j] * spec.phi(i, j)).sum();
        h_r[i] = spec.lambdas[i];
    }
    let g_s = linalg::solve_dense(&mut base.clone(), &mut h_s, "pressure gradient (s)")?;
    let g_r = linalg::solve_dense(&mut base.clone(), &mut h_r, "pressure gradient (r)")?;

    let dp_ds: f64 = kernel.initial.iter().zip(&g_s).map(|(&pi, &g)| pi * g).sum();
    let dp_dr: f64 = kernel.initial.iter().zip(&g_r).map(|(&pi, &g)| pi * g).sum();
    Ok(PressureGradient {
        dp_ds,
        dp_dr,
        dpn_ds: (q - 1.0) * dp_ds,
        dpn_dr: (q - 1.0) * dp_dr,
    })
}

pub(crate) fn gradient_at(
    spec: &SystemSpec,
    s: f64,
    r: f64,
    tol: f64,
    warm: &[f64],
) -> Result<PressureGradient> {
    let sol = transfer::solve_transfer_from(spec, s, r, tol, Some(warm))?;
    pressure_gradient(spec, &sol)
}

/// Hessian of Pn by central differences of the exact gradient,
/// seeded from the solution at the center for fast restarts. The two
/// cross-derivative estimates are checked against each other and the
/// symmetrized value is returned.
pub fn pressure_hessian(spec: &SystemSpec, s: f64, r: f64, tol: f64) -> Result<[[f64; 2]; 2]> {
    let center = transfer::solve_transfer(spec, s, r, tol)?;
    let h = HESSIAN_STEP;
    let sp = gradient_at(spec, s + h, r, tol, &center.t)?;
    let sm = gradient_at(spec, s - h, r, tol, &center.t)?;
    let rp = gradient_at(spec, s, r + h, tol, &center.t)?;
    let rm = gradient_at(spec, s, r - h, tol, &center.t)?;

    let ss = (sp.dpn_ds - sm.dpn_ds) / (2.0 * h);
    let sr_from_s = (sp.dpn_dr - sm.dpn_dr) / (2.0 * h);
    let sr_from_r = (rp.dpn_ds - rm.dpn_ds) / (2.0 * h);
    let rr = (rp.dpn_dr - rm.dpn_dr) / (2.0 * h);

    let scale = [ss, sr_from_s, sr_from_r, rr].iter().fold(1.0f64, |a, &v| a.max(v.abs()));
    if (sr_from_s - sr_from_r).abs() > HESSIAN_SYMMETRY_TOL * scale {
        return Err(Error::SolverDiverged {
            s,
            r,
            detail: format!(
                "cross-derivative estimates disagree: {sr_from_s:.6e} vs {sr_from_r:.6e}"
            ),
        });
    }
    let sr = 0.5 * (sr_from_s + sr_from_r);
    Ok([[ss, sr], [sr, rr]])
}

/// Solves the transfer system and assembles pressure, gradient and
/// Hessian at one parameter point.
pub fn pressure_point(spec: &SystemSpec, s: f64, r: f64, tol: f64) -> Result<PressurePoint> {
    let sol = transfer::solve_transfer(spec, s, r, tol)?;
    let (p, pn) = pressure(spec, &sol);
    let grad = pressure_gradient(spec, &sol)?;
    let hessian = pressure_hessian(spec, s, r, tol)?;
    Ok(PressurePoint { s, r, p, pn, dpn_ds: grad.dpn_ds, dpn_dr: grad.dpn_dr, hessian })
}
