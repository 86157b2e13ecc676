//! Dimension spectrum of level sets of the pairwise average.
//!
//! For a level alpha in the range of phi, the spectrum value comes
//! from the constrained critical point of the normalized pressure:
//!
//! ```text
//!   Pn(s,r) = alpha s,      dPn_ds(s,r) = alpha,
//! ```
//!
//! solved for (s, r). The reported dimension is -r/q; `paper_dim`
//! rescales r by ln(m) to the base-m convention, r / (q ln m). The
//! curve is concave with its peak at `alpha_star`, the level attained
//! by typical points, where s = 0 and -r/q equals the similarity
//! dimension of the attractor.
//!
//! The two-equation system is solved by a damped Newton method whose
//! first row is exact (it reuses the constraint residual and the exact
//! gradient) and whose second row differences the exact gradient. Far
//! from `alpha_star` the solver walks there in continuation steps with
//! adaptive step halving, warm-starting each solve at the previous
//! critical point.

use crate::pressure;
use crate::system::SystemSpec;
use crate::transfer;
use crate::{linalg, Error, Result};

/// Sup-norm bound on the constraint residual for a converged point.
const CRITICAL_TOL: f64 = 1e-10;

/// Newton iterations per solve attempt.
const MAX_CRITICAL_ITER: usize = 100;

/// Step halvings per Newton iteration before the attempt is abandoned.
const MAX_HALVINGS: usize = 20;

/// Parameter magnitude beyond which the solve is declared divergent
/// (the critical curve reaches such values only outside the spectrum's
/// support).
const PARAM_BOUND: f64 = 1e3;

/// Central-difference step for the Jacobian row in (s, r).
const JACOBIAN_STEP: f64 = 1e-4;

/// Continuation attempts per direction before giving up on a level.
const MAX_CONTINUATION: usize = 500;

/// One solved (or attempted) level of the spectrum.
#[derive(Debug, Clone)]
pub struct SpectrumPoint {
    pub alpha: f64,
    pub s: f64,
    pub r: f64,
    /// -r/q, the reported dimension of the level set.
    pub dim: f64,
    /// r / (q ln m), the same point in the base-m normalization.
    pub paper_dim: f64,
    /// False when the Newton iteration failed; the row then carries
    /// the last iterate for diagnosis and must not be used as a value.
    pub converged: bool,
    /// Final sup-norm of the constraint residual.
    pub newton_residual: f64,
}

/// Peak of the spectrum: the typical level `alpha`, the multiplier
/// r = -q dim at s = 0, and the dimension there (the similarity
/// dimension of the whole attractor).
#[derive(Debug, Clone, Copy)]
pub struct SpectrumCenter {
    pub alpha: f64,
    pub r: f64,
    pub dim: f64,
}

/// Interval estimate of the set of levels with nonempty level sets.
#[derive(Debug, Clone)]
pub struct SupportEstimate {
    /// Lower and upper edge estimates, clamped to the range of phi.
    pub a: f64,
    pub b: f64,
    /// Multiplier r at the extreme levels the solver reached.
    pub r_a: f64,
    pub r_b: f64,
    pub alpha_star: f64,
    /// Extreme levels that actually solved, (left, right); the true
    /// edges lie within the walk resolution outside them.
    pub achieved_alphas: (f64, f64),
}

fn spectrum_point(spec: &SystemSpec, alpha: f64, s: f64, r: f64, converged: bool, residual: f64) -> SpectrumPoint {
    let q = spec.q as f64;
    let m = spec.m as f64;
    SpectrumPoint {
        alpha,
        s,
        r,
        dim: -r / q,
        paper_dim: r / (q * m.ln()),
        converged,
        newton_residual: residual,
    }
}

/// Peak of the spectrum. At s = 0 the transfer system has the closed
/// form Pn(0,r) = q ln sum_i e^{r lambda_i / q}, so the root of
/// Pn(0,r) = 0 is exactly r = -q * (similarity dimension), and the
/// peak level is the gradient dPn_ds there.
pub fn spectrum_center(spec: &SystemSpec, tol: f64) -> Result<SpectrumCenter> {
    let q = spec.q as f64;
    let dim = crate::system::bowen_dimension(&spec.lambdas)?;
    let r0 = -q * dim;
    let sol = transfer::solve_transfer(spec, 0.0, r0, tol)?;
    let grad = pressure::pressure_gradient(spec, &sol)?;
    Ok(SpectrumCenter { alpha: grad.dpn_ds, r: r0, dim })
}

/// The level attained by typical points of the attractor.
pub fn alpha_star(spec: &SystemSpec, tol: f64) -> Result<f64> {
    Ok(spectrum_center(spec, tol)?.alpha)
}

struct CriticalEval {
    residual: [f64; 2],
    sup: f64,
    dpn_dr: f64,
    t: Vec<f64>,
}

/// Constraint residual G(s,r) = (Pn - alpha s, dPn_ds - alpha); None
/// when the transfer solve fails at the trial point.
fn eval_critical(
    spec: &SystemSpec,
    alpha: f64,
    s: f64,
    r: f64,
    tol: f64,
    warm: Option<&[f64]>,
) -> Option<CriticalEval> {
    let sol = transfer::solve_transfer_from(spec, s, r, tol, warm).ok()?;
    let (_, pn) = pressure::pressure(spec, &sol);
    let grad = pressure::pressure_gradient(spec, &sol).ok()?;
    let g = [pn - alpha * s, grad.dpn_ds - alpha];
    Some(CriticalEval {
        residual: g,
        sup: g[0].abs().max(g[1].abs()),
        dpn_dr: grad.dpn_dr,
        t: sol.t,
    })
}

/// Damped Newton solve of the constrained system from one start.
/// Never errors on divergence; the returned row says `converged`.
pub(crate) fn newton_critical(
    spec: &SystemSpec,
    alpha: f64,
    init: (f64, f64),
    tol: f64,
) -> Result<SpectrumPoint> {
    if spec.phi_is_constant() {
        return constant_phi_point(spec, alpha, tol);
    }
    let (mut s, mut r) = init;
    let mut cur = match eval_critical(spec, alpha, s, r, tol, None) {
        Some(e) => e,
        None => return Ok(spectrum_point(spec, alpha, s, r, false, f64::INFINITY)),
    };

    for _ in 0..MAX_CRITICAL_ITER {
        if cur.sup < CRITICAL_TOL {
            return Ok(spectrum_point(spec, alpha, s, r, true, cur.sup));
        }
        if s.abs() > PARAM_BOUND || r.abs() > PARAM_BOUND {
            break;
        }

        // Jacobian: the first row is exact, the second row differences
        // the exact gradient in s (d/ds of dPn_ds and, by symmetry of
        // the Hessian, d/dr of dPn_ds).
        let h = JACOBIAN_STEP;
        let (gp, gm) = match (
            pressure::gradient_at(spec, s + h, r, tol, &cur.t),
            pressure::gradient_at(spec, s - h, r, tol, &cur.t),
        ) {
            (Ok(a), Ok(b)) => (a, b),
            _ => break,
        };
        let mut jac = [
            cur.residual[1], // dPn_ds - alpha
            cur.dpn_dr,
            (gp.dpn_ds - gm.dpn_ds) / (2.0 * h),
            (gp.dpn_dr - gm.dpn_dr) / (2.0 * h),
        ];
        let mut rhs = [-cur.residual[0], -cur.residual[1]];
        let step = match linalg::solve_dense(&mut jac, &mut rhs, "critical newton") {
            Ok(v) => v,
            Err(_) => break,
        };

        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..=MAX_HALVINGS {
            let (ts, tr) = (s + scale * step[0], r + scale * step[1]);
            if let Some(next) = eval_critical(spec, alpha, ts, tr, tol, Some(&cur.t)) {
                if next.sup < cur.sup {
                    s = ts;
                    r = tr;
                    cur = next;
                    accepted = true;
                    break;
                }
            }
            scale *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let converged = cur.sup < CRITICAL_TOL;
    Ok(spectrum_point(spec, alpha, s, r, converged, cur.sup))
}

/// Constant phi: the pairwise average is identically phi's value c, so
/// only the level alpha = c is attainable. There s is indeterminate
/// (every s solves the system once Pn(0,r) = 0 is rescaled); the
/// representative s = 0 is returned. Other levels report divergence.
fn constant_phi_point(spec: &SystemSpec, alpha: f64, tol: f64) -> Result<SpectrumPoint> {
    let c = spec.phi(0, 0);
    let center = spectrum_center(spec, tol)?;
    let gap = (alpha - c).abs();
    if gap <= 1e-9 * (1.0 + c.abs()) {
        Ok(spectrum_point(spec, alpha, 0.0, center.r, true, 0.0))
    } else {
        Ok(spectrum_point(spec, alpha, 0.0, center.r, false, gap))
    }
}

/// Critical-point solver with warm starts and continuation, for
/// walking a sequence of levels efficiently.
pub struct CriticalSolver<'a> {
    spec: &'a SystemSpec,
    tol: f64,
    center: SpectrumCenter,
    last: Option<(f64, f64)>,
}

impl<'a> CriticalSolver<'a> {
    pub fn new(spec: &'a SystemSpec, tol: f64) -> Result<Self> {
        let center = spectrum_center(spec, tol)?;
        Ok(CriticalSolver { spec, tol, center, last: None })
    }

    pub fn center(&self) -> SpectrumCenter {
        self.center
    }

    /// Forget the warm start (used when jumping to a far level).
    pub fn reset(&mut self) {
        self.last = None;
    }

    /// Solves one level: a direct Newton attempt from the warm start,
    /// then continuation from the peak on failure. A level outside the
    /// support comes back with `converged = false`.
    pub fn solve(&mut self, alpha: f64) -> Result<SpectrumPoint> {
        let start = self.last.unwrap_or((0.0, self.center.r));
        let direct = newton_critical(self.spec, alpha, start, self.tol)?;
        if direct.converged {
            self.last = Some((direct.s, direct.r));
            return Ok(direct);
        }
        self.continuation(alpha, direct)
    }

    fn continuation(&mut self, alpha: f64, direct: SpectrumPoint) -> Result<SpectrumPoint> {
        let mut cur_alpha = self.center.alpha;
        let mut cur = (0.0, self.center.r);
        let mut h = alpha - cur_alpha;
        let floor = 1e-12 * (1.0 + alpha.abs());
        for _ in 0..MAX_CONTINUATION {
            if h.abs() < floor {
                break;
            }
            let target = if (alpha - cur_alpha).abs() <= h.abs() { alpha } else { cur_alpha + h };
            let pt = newton_critical(self.spec, target, cur, self.tol)?;
            if pt.converged {
                if target == alpha {
                    self.last = Some((pt.s, pt.r));
                    return Ok(pt);
                }
                cur_alpha = target;
                cur = (pt.s, pt.r);
                h *= 1.6;
            } else {
                h *= 0.5;
            }
        }
        // Report the direct attempt's final iterate; the level did not
        // solve even with continuation.
        Ok(direct)
    }
}

/// Validated critical point at one level; errors when the level does
/// not solve, which the command layer maps to its own exit status.
pub fn solve_critical(spec: &SystemSpec, alpha: f64, tol: f64) -> Result<SpectrumPoint> {
    let mut solver = CriticalSolver::new(spec, tol)?;
    let pt = solver.solve(alpha)?;
    if !pt.converged {
        return Err(Error::SolverDiverged {
            s: pt.s,
            r: pt.r,
            detail: format!(
                "no critical point at level {alpha} (residual {:.3e})",
                pt.newton_residual
            ),
        });
    }
    Ok(pt)
}

/// Spectrum rows on an inclusive, evenly spaced grid of levels.
/// Levels outside the support (including endpoints at the extreme
/// values of phi) come back flagged, not as errors. Rows are solved
/// outward from the peak so each solve warm-starts at its neighbor,
/// and returned in ascending level order.
pub fn spectrum_curve(
    spec: &SystemSpec,
    alpha_min: f64,
    alpha_max: f64,
    steps: usize,
    tol: f64,
) -> Result<Vec<SpectrumPoint>> {
    if steps < 2 {
        return Err(Error::InvalidParameter(format!("steps = {steps}, need at least 2")));
    }
    if !(alpha_min <= alpha_max) {
        return Err(Error::InvalidParameter(format!(
            "level range [{alpha_min}, {alpha_max}] is not ordered"
        )));
    }
    let alphas: Vec<f64> = (0..steps)
        .map(|i| alpha_min + (alpha_max - alpha_min) * i as f64 / (steps - 1) as f64)
        .collect();

    let mut solver = CriticalSolver::new(spec, tol)?;
    let peak = solver.center().alpha;
    let mut rows: Vec<Option<SpectrumPoint>> = vec![None; steps];

    // Ascending levels at or above the peak, then descending below it.
    let split = alphas.partition_point(|&a| a < peak);
    for i in split..steps {
        rows[i] = Some(solver.solve(alphas[i])?);
    }
    solver.reset();
    for i in (0..split).rev() {
        rows[i] = Some(solver.solve(alphas[i])?);
    }
    Ok(rows.into_iter().map(|r| r.expect("all rows solved")).collect())
}

/// Estimates the interval of attainable levels by walking from the
/// peak toward each edge of the range of phi, growing the step after
/// each solved level and halving it after each failure, until the step
/// falls below `resolution`. The returned edges bracket the last
/// solved level at that resolution.
pub fn estimate_support(spec: &SystemSpec, resolution: f64, tol: f64) -> Result<SupportEstimate> {
    if !(resolution > 0.0) {
        return Err(Error::InvalidParameter(format!("resolution = {resolution} must be positive")));
    }
    let center = spectrum_center(spec, tol)?;
    let (lo_bound, hi_bound) = (spec.phi_min(), spec.phi_max());
    let range = hi_bound - lo_bound;

    let mut edges = [(0.0, 0.0, center.alpha); 2];
    for (dir_idx, dir) in [(-1.0f64), 1.0].iter().enumerate() {
        let mut cur_alpha = center.alpha;
        let mut cur = (0.0, center.r);
        let mut h: f64 = range.max(resolution) / 8.0;
        let bound = if *dir < 0.0 { lo_bound } else { hi_bound };
        for _ in 0..MAX_CONTINUATION {
            let room = (bound - cur_alpha) * dir;
            if h < resolution || room < resolution {
                break;
            }
            if h >= room {
                h = room / 2.0;
                continue;
            }
            let try_alpha = cur_alpha + dir * h;
            let pt = newton_critical(spec, try_alpha, cur, tol)?;
            if pt.converged {
                cur_alpha = try_alpha;
                cur = (pt.s, pt.r);
                h = (h * 1.6).min(range.max(resolution) / 8.0);
            } else {
                h *= 0.5;
            }
        }
        let edge = (cur_alpha + dir * h).clamp(lo_bound, hi_bound);
        edges[dir_idx] = (edge, cur.1, cur_alpha);
    }

    Ok(SupportEstimate {
        a: edges[0].0,
        b: edges[1].0,
        r_a: edges[0].1,
        r_b: edges[1].1,
        alpha_star: center.alpha,
        achieved_alphas: (edges[0].2, edges[1].2),
    })
}
