//! The linear cookie-cutter system: branch intervals, Lyapunov
//! exponents, coding-map geometry, and the Bowen reference dimension.
//!
//! A spec holds m >= 2 branch intervals I_i = [u_i, v_i] with disjoint
//! interiors inside [0,1]. The map is linear on each branch with slope
//! e^{lambda_i}, so lambda_i = -log(v_i - u_i) > 0. The potential phi
//! is locally constant, given as an m x m table phi(i,j), and the
//! average couples orbit times k and qk for a fixed integer q >= 2.
//! Only the two-point coupling is supported (ell = 2).

use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Candidate system description as it arrives from a config file.
/// Exactly one of `intervals` / `lambdas` is required; if both are
/// present they must agree to 1e-12.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawSystem {
    pub m: usize,
    pub q: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intervals: Option<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambdas: Option<Vec<f64>>,
    pub phi: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ell: Option<usize>,
}

/// A validated system. `lambdas[i] = -ln(intervals[i].1 - intervals[i].0)`.
#[derive(Debug, Clone)]
pub struct SystemSpec {
    pub m: usize,
    pub q: usize,
    pub intervals: Vec<(f64, f64)>,
    pub lambdas: Vec<f64>,
    phi: Vec<Vec<f64>>,
    pub ell: usize,
}

/// Consistency bound between stored lambdas and interval lengths.
const LAMBDA_CONSISTENCY: f64 = 1e-12;

/// Residual target for the Bowen root of sum_i e^{-d lambda_i} = 1.
const BOWEN_TOL: f64 = 1e-14;

impl SystemSpec {
    /// Validates a raw description, reporting every violated constraint.
    pub fn validate(raw: &RawSystem) -> Result<SystemSpec> {
        let mut issues = Vec::new();
        let m = raw.m;
        if m < 2 {
            issues.push(format!("m = {} but at least 2 branches are required", m));
        }
        if raw.q < 2 {
            issues.push(format!("q = {} but the average needs q >= 2", raw.q));
        }
        let ell = raw.ell.unwrap_or(2);
        if ell != 2 {
            issues.push(format!("unsupported arity ell = {}; only ell = 2 is implemented", ell));
        }

        if raw.phi.len() != m || raw.phi.iter().any(|row| row.len() != m) {
            issues.push(format!("phi must be an {m} x {m} table"));
        }
        for (i, row) in raw.phi.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if !v.is_finite() {
                    issues.push(format!("phi[{i}][{j}] = {v} is not finite"));
                }
            }
        }

        let intervals: Option<Vec<(f64, f64)>> = match (&raw.intervals, &raw.lambdas) {
            (Some(iv), maybe_lam) => {
                let iv: Vec<(f64, f64)> = iv.iter().map(|p| (p[0], p[1])).collect();
                check_intervals(&iv, m, &mut issues);
                if let Some(lam) = maybe_lam {
                    if lam.len() == iv.len() {
                        for (i, (&l, &(u, v))) in lam.iter().zip(&iv).enumerate() {
                            let derived = -(v - u).ln();
                            if (l - derived).abs() > LAMBDA_CONSISTENCY {
                                issues.push(format!(
                                    "lambdas[{i}] = {l} disagrees with interval length (-ln = {derived})"
                                ));
                            }
                        }
                    } else {
                        issues.push("lambdas and intervals have different lengths".into());
                    }
                }
                Some(iv)
            }
            (None, Some(lam)) => {
                if lam.len() != m {
                    issues.push(format!("lambdas has {} entries, expected m = {m}", lam.len()));
                    None
                } else if let Some(bad) = lam.iter().position(|&l| !(l > 0.0) || !l.is_finite()) {
                    issues.push(format!("nonpositive lambda at index {bad}"));
                    None
                } else {
                    let total: f64 = lam.iter().map(|&l| (-l).exp()).sum();
                    if total > 1.0 + 1e-12 {
                        issues.push(format!(
                            "total length {total} > 1: lambdas do not fit disjointly in [0,1]"
                        ));
                        None
                    } else {
                        Some(synthesize_intervals(lam, total))
                    }
                }
            }
            (None, None) => {
                issues.push("either intervals or lambdas must be given".into());
                None
            }
        };

        if !issues.is_empty() {
            return Err(Error::InvalidSystem { issues });
        }
        let intervals = intervals.expect("issues empty implies intervals present");
        let lambdas = derive_lambdas(&intervals)?;
        Ok(SystemSpec { m, q: raw.q, intervals, lambdas, phi: raw.phi.clone(), ell })
    }

    /// Convenience constructor used throughout the tests.
    pub fn from_lambdas(q: usize, lambdas: &[f64], phi: Vec<Vec<f64>>) -> Result<SystemSpec> {
        SystemSpec::validate(&RawSystem {
            m: lambdas.len(),
            q,
            intervals: None,
            lambdas: Some(lambdas.to_vec()),
            phi,
            ell: Some(2),
        })
    }

    #[inline]
    pub fn phi(&self, i: usize, j: usize) -> f64 {
        self.phi[i][j]
    }

    pub fn phi_table(&self) -> &[Vec<f64>] {
        &self.phi
    }

    pub fn phi_min(&self) -> f64 {
        self.phi.iter().flatten().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn phi_max(&self) -> f64 {
        self.phi.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// True when phi is constant up to rounding noise; the spectrum then
    /// degenerates to the single level alpha = phi.
    pub fn phi_is_constant(&self) -> bool {
        let lo = self.phi_min();
        let hi = self.phi_max();
        hi - lo <= 1e-14 * (1.0 + lo.abs().max(hi.abs()))
    }

    pub fn max_lambda(&self) -> f64 {
        self.lambdas.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_lambda(&self) -> f64 {
        self.lambdas.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Raw form, for hashing into run manifests.
    pub fn to_raw(&self) -> RawSystem {
        RawSystem {
            m: self.m,
            q: self.q,
            intervals: Some(self.intervals.iter().map(|&(u, v)| [u, v]).collect()),
            lambdas: Some(self.lambdas.clone()),
            phi: self.phi.clone(),
            ell: Some(self.ell),
        }
    }
}

fn check_intervals(iv: &[(f64, f64)], m: usize, issues: &mut Vec<String>) {
    if iv.len() != m {
        issues.push(format!("{} intervals given, expected m = {m}", iv.len()));
        return;
    }
    let mut total = 0.0;
    for (i, &(u, v)) in iv.iter().enumerate() {
        if !u.is_finite() || !v.is_finite() {
            issues.push(format!("interval {i} has non-finite endpoint"));
            return;
        }
        if v - u <= 0.0 {
            issues.push(format!("interval {i} = [{u},{v}] has nonpositive length (nonpositive lambda)"));
        }
        if v - u >= 1.0 {
            issues.push(format!("interval {i} has length {} >= 1 (nonpositive lambda)", v - u));
        }
        total += v - u;
    }
    if iv[0].0 < 0.0 || iv[m - 1].1 > 1.0 {
        issues.push("intervals must lie inside [0,1]".into());
    }
    for i in 1..m {
        if iv[i].0 < iv[i - 1].1 {
            issues.push(format!("overlapping interiors between intervals {} and {}", i - 1, i));
        }
    }
    if total > 1.0 + 1e-12 {
        issues.push(format!("total length {total} > 1"));
    }
}

/// Lays intervals of length e^{-lambda_i} left to right with equal gaps
/// (including at both ends) absorbing the slack 1 - sum of lengths.
fn synthesize_intervals(lambdas: &[f64], total: f64) -> Vec<(f64, f64)> {
    let m = lambdas.len();
    let gap = (1.0 - total).max(0.0) / (m + 1) as f64;
    let mut out = Vec::with_capacity(m);
    let mut x = gap;
    for &l in lambdas {
        let len = (-l).exp();
        out.push((x, x + len));
        x += len + gap;
    }
    out
}

/// lambda_i = -ln(v_i - u_i) for each branch interval.
pub fn derive_lambdas(intervals: &[(f64, f64)]) -> Result<Vec<f64>> {
    intervals
        .iter()
        .enumerate()
        .map(|(i, &(u, v))| {
            let len = v - u;
            if len <= 0.0 {
                Err(Error::InvalidParameter(format!("interval {i} has zero or negative length")))
            } else {
                Ok(-len.ln())
            }
        })
        .collect()
}

/// The cylinder interval of a finite prefix under the coding map:
/// the image f_{w_1} o ... o f_{w_n}([0,1]), where f_i is the affine
/// inverse branch onto I_i. Lengths shrink like the product of branch
/// lengths, so only the log-length stays representable at depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CodeInterval {
    pub lo: f64,
    pub hi: f64,
    /// ln(hi - lo) computed as -sum lambda_{w_k}; exact even when the
    /// length itself underflows f64.
    pub log_length: f64,
}

impl CodeInterval {
    pub fn length(&self) -> f64 {
        self.log_length.exp()
    }
}

/// Applies the inverse branches of a prefix innermost-first.
pub fn code_point(spec: &SystemSpec, prefix: &[usize]) -> Result<CodeInterval> {
    let mut lo = 0.0f64;
    let mut hi = 1.0f64;
    let mut log_length = 0.0f64;
    for &w in prefix.iter().rev() {
        if w >= spec.m {
            return Err(Error::SymbolOutOfRange { symbol: w, m: spec.m });
        }
        let (u, v) = spec.intervals[w];
        let len = v - u;
        lo = u + len * lo;
        hi = u + len * hi;
    }
    for &w in prefix {
        log_length -= spec.lambdas[w];
    }
    Ok(CodeInterval { lo, hi, log_length })
}

/// Unique d > 0 with sum_i e^{-d lambda_i} = 1. The left side is
/// strictly decreasing and convex in d, starting at m >= 2, so a
/// bracketed Newton iteration cannot miss the root.
pub fn bowen_dimension(lambdas: &[f64]) -> Result<f64> {
    if lambdas.is_empty() || lambdas.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::InvalidParameter("bowen_dimension needs positive lambdas".into()));
    }
    let f = |d: f64| lambdas.iter().map(|&l| (-d * l).exp()).sum::<f64>() - 1.0;
    let fp = |d: f64| -lambdas.iter().map(|&l| l * (-d * l).exp()).sum::<f64>();
    let mut lo = 0.0f64;
    let mut hi = 1.0f64;
    while f(hi) > 0.0 {
        lo = hi;
        hi *= 2.0;
        if hi > 1e6 {
            return Err(Error::BracketFailed("bowen_dimension"));
        }
    }
    let mut d = 0.5 * (lo + hi);
    for _ in 0..200 {
        let val = f(d);
        if val.abs() < BOWEN_TOL {
            return Ok(d);
        }
        if val > 0.0 {
            lo = d;
        } else {
            hi = d;
        }
        let newton = d - val / fp(d);
        d = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
    }
    // Bisection has collapsed the bracket to a few ulps by now; accept
    // the midpoint if the residual is within rounding of the target.
    if f(d).abs() < 10.0 * BOWEN_TOL {
        Ok(d)
    } else {
        Err(Error::BracketFailed("bowen_dimension"))
    }
}
