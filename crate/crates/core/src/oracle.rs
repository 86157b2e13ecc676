//! Desk-scale verification by counting: how many length-n words keep
//! the pairwise average near a level, and what covering dimension
//! that count implies.
//!
//! Words are aggregated by quantized (phi-sum, lambda-sum) keys. Every
//! per-term value is rounded to a shared bin width once, so the two
//! construction strategies (dynamic programming over chains, plain
//! enumeration) accumulate identical integer keys and produce
//! bit-identical tables; they differ only in how they reach them.
//! The dimension estimate is the root d of the weighted Moran sum
//! sum_cells w e^{-d lambda_sum} = 1, which carries the binning
//! resolution as bias and is exact when the per-term values are
//! integer multiples of the widths (true for all bundled examples).

use std::collections::BTreeMap;
use std::fmt;

use crate::measure::{self, chain_layout};
use crate::pressure;
use crate::system::SystemSpec;
use crate::transfer::{self, MarkovKernel};
use crate::{Error, Result};

/// Bins per unit of the value range, times word length: widths are
/// (range)/(BINS_PER_LENGTH * n).
const BINS_PER_LENGTH: usize = 8;

/// Cell guard for DP tables and their convolutions.
const MAX_TABLE_CELLS: usize = 2_000_000;

/// Word guard for exhaustive enumeration (m^n at most this).
const MAX_ENUMERATION: f64 = 2_000_000.0;

/// Weights above this are rescaled into the table's log offset; below
/// it, integer counts stay exact in f64. Kept low enough that a
/// product of two renormalized tables plus cell accumulation cannot
/// reach f64::MAX (~1.8e308).
const RENORM_ABOVE: f64 = 1e120;

/// Estimated bytes per occupied cell, for the abort message.
const CELL_BYTES: u128 = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CountMode {
    Dp,
    Exhaustive,
}

impl fmt::Display for CountMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CountMode::Dp => "dp",
            CountMode::Exhaustive => "exhaustive",
        })
    }
}

impl std::str::FromStr for CountMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<CountMode> {
        match s {
            "dp" => Ok(CountMode::Dp),
            "exhaustive" => Ok(CountMode::Exhaustive),
            other => Err(Error::InvalidParameter(format!(
                "count mode '{other}', expected 'dp' or 'exhaustive'"
            ))),
        }
    }
}

/// Histogram of all m^n words over quantized (phi-sum, lambda-sum)
/// keys. Weights are counts scaled by exp(log_offset); the offset is
/// 0 until counts approach f64 overflow.
#[derive(Debug, Clone)]
pub struct CountTable {
    pub n: usize,
    /// floor(n/q), the number of pairwise terms per word.
    pub pairs: usize,
    /// Bin width of one phi term; 0 marks a constant phi (single bin).
    pub delta_phi: f64,
    /// Bin width of one lambda term; 0 marks equal rates (single bin).
    pub delta_lambda: f64,
    pub log_offset: f64,
    pub table: BTreeMap<(i64, i64), f64>,
    phi_fallback: f64,
    lambda_fallback: f64,
}

impl CountTable {
    /// Pairwise average reconstructed from a phi key.
    pub fn average_of(&self, fkey: i64) -> f64 {
        let sum = if self.delta_phi > 0.0 {
            fkey as f64 * self.delta_phi
        } else {
            self.pairs as f64 * self.phi_fallback
        };
        sum / self.pairs as f64
    }

    /// Word-level rate sum reconstructed from a lambda key.
    pub fn lambda_sum_of(&self, lkey: i64) -> f64 {
        if self.delta_lambda > 0.0 {
            lkey as f64 * self.delta_lambda
        } else {
            self.n as f64 * self.lambda_fallback
        }
    }

    /// ln of the total weight (= n ln m, up to f64 rounding at large n).
    pub fn total_ln(&self) -> f64 {
        self.log_offset + logsumexp_ln(self.table.values().map(|&w| w.ln()))
    }
}

/// One counting result at a level.
#[derive(Debug, Clone)]
pub struct LevelSetCount {
    pub n: usize,
    pub alpha: f64,
    pub eps: f64,
    pub mode: CountMode,
    /// ln of the number of admissible words (f64::NEG_INFINITY when 0).
    pub count_ln: f64,
    /// The exact count when it fits f64's integer range.
    pub count_exact: Option<u64>,
    /// Root of the weighted Moran equation; 0 when at most one word
    /// is admissible.
    pub moran_dim: f64,
}

fn logsumexp_ln(vals: impl Iterator<Item = f64> + Clone) -> f64 {
    let hi = vals.clone().fold(f64::NEG_INFINITY, f64::max);
    if !hi.is_finite() {
        return hi;
    }
    hi + vals.map(|v| (v - hi).exp()).sum::<f64>().ln()
}

/// Per-term quantization shared by both construction modes.
struct Bins {
    delta_phi: f64,
    delta_lambda: f64,
    /// iphi[a*m + b] = round(phi(a,b) / delta_phi), 0 when degenerate.
    iphi: Vec<i64>,
    ilam: Vec<i64>,
}

fn make_bins(spec: &SystemSpec, n: usize) -> Result<Bins> {
    let m = spec.m;
    let slots = (BINS_PER_LENGTH * n) as f64;

    let (phi_lo, phi_hi) = (spec.phi_min(), spec.phi_max());
    let phi_scale = phi_lo.abs().max(phi_hi.abs()).max(1.0);
    let delta_phi =
        if phi_hi - phi_lo > 1e-12 * phi_scale { (phi_hi - phi_lo) / slots } else { 0.0 };

    let (lam_lo, lam_hi) = (spec.min_lambda(), spec.max_lambda());
    let delta_lambda = if lam_hi - lam_lo > 1e-12 * lam_hi { (lam_hi - lam_lo) / slots } else { 0.0 };

    // A word sums at most n per-term indices; keep that far inside i64.
    let worst_phi = if delta_phi > 0.0 { (phi_scale / delta_phi).ceil() } else { 0.0 };
    let worst_lam = if delta_lambda > 0.0 { (lam_hi / delta_lambda).ceil() } else { 0.0 };
    if worst_phi.max(worst_lam) * n as f64 > i64::MAX as f64 / 4.0 {
        return Err(Error::InvalidParameter(
            "value spread too fine for integer binning at this depth".into(),
        ));
    }

    let mut iphi = vec![0i64; m * m];
    if delta_phi > 0.0 {
        for a in 0..m {
            for b in 0..m {
                iphi[a * m + b] = (spec.phi(a, b) / delta_phi).round() as i64;
            }
        }
    }
    let mut ilam = vec![0i64; m];
    if delta_lambda > 0.0 {
        for a in 0..m {
            ilam[a] = (spec.lambdas[a] / delta_lambda).round() as i64;
        }
    }
    Ok(Bins { delta_phi, delta_lambda, iphi, ilam })
}

fn too_large(cells: u128, limit: usize) -> Error {
    Error::TableTooLarge {
        cells,
        limit: limit as u128,
        mib: (cells * CELL_BYTES) >> 20,
    }
}

/// A key histogram with weights carrying an implicit factor
/// exp(log_scale); the scale stays 0 until counts threaten overflow,
/// below which integer arithmetic in f64 is exact.
struct Scaled {
    map: BTreeMap<(i64, i64), f64>,
    log_scale: f64,
}

fn renormalize(t: &mut Scaled) {
    let max = t.map.values().fold(0.0f64, |a, &b| a.max(b));
    if max > RENORM_ABOVE {
        for w in t.map.values_mut() {
            *w /= max;
        }
        t.log_scale += max.ln();
    }
}

/// Distribution of (phi-sum, lambda-sum) keys over the m^L symbol
/// paths of a single chain with L entries: L-1 pairwise terms between
/// consecutive entries, L rate terms.
fn chain_table(
    bins: &Bins,
    m: usize,
    len: usize,
    limit: usize,
) -> Result<BTreeMap<(i64, i64), f64>> {
    let mut states: Vec<BTreeMap<(i64, i64), f64>> =
        (0..m).map(|a| BTreeMap::from([((0i64, bins.ilam[a]), 1.0f64)])).collect();
    for _ in 1..len {
        let mut next: Vec<BTreeMap<(i64, i64), f64>> = vec![BTreeMap::new(); m];
        for a in 0..m {
            for (&(f, l), &w) in &states[a] {
                for b in 0..m {
                    let key = (f + bins.iphi[a * m + b], l + bins.ilam[b]);
                    *next[b].entry(key).or_insert(0.0) += w;
                }
            }
        }
        let cells: usize = next.iter().map(|t| t.len()).sum();
        if cells > limit {
            return Err(too_large(cells as u128, limit));
        }
        states = next;
    }
    let mut merged = BTreeMap::new();
    for t in states {
        for (key, w) in t {
            *merged.entry(key).or_insert(0.0) += w;
        }
    }
    Ok(merged)
}

/// Key-additive product of two distributions (independent chains).
fn convolve(a: &Scaled, b: &Scaled, limit: usize) -> Result<Scaled> {
    let pairs = a.map.len() as u128 * b.map.len() as u128;
    if pairs > limit as u128 * 64 {
        return Err(too_large(pairs, limit));
    }
    let mut out = BTreeMap::new();
    for (&(fa, la), &wa) in &a.map {
        for (&(fb, lb), &wb) in &b.map {
            *out.entry((fa + fb, la + lb)).or_insert(0.0) += wa * wb;
        }
        if out.len() > limit {
            return Err(too_large(out.len() as u128, limit));
        }
    }
    Ok(Scaled { map: out, log_scale: a.log_scale + b.log_scale })
}

fn count_table_dp(spec: &SystemSpec, n: usize, limit: usize) -> Result<CountTable> {
    let bins = make_bins(spec, n)?;
    let layout = chain_layout(n, spec.q)?;
    let mut by_len: BTreeMap<usize, usize> = BTreeMap::new();
    for chain in &layout.chains {
        *by_len.entry(chain.len()).or_insert(0) += 1;
    }

    let mut total = Scaled { map: BTreeMap::from([((0i64, 0i64), 1.0f64)]), log_scale: 0.0 };
    for (&len, &mult) in &by_len {
        // Fold `mult` identical chains in by binary exponentiation.
        // Operands are renormalized before each product so no merged
        // weight can overflow.
        let mut power = Scaled { map: chain_table(&bins, spec.m, len, limit)?, log_scale: 0.0 };
        let mut k = mult;
        loop {
            if k & 1 == 1 {
                renormalize(&mut total);
                renormalize(&mut power);
                total = convolve(&total, &power, limit)?;
            }
            k >>= 1;
            if k == 0 {
                break;
            }
            renormalize(&mut power);
            power = convolve(&power, &power, limit)?;
        }
    }
    Ok(finish_table(spec, n, bins, total.map, total.log_scale))
}

fn count_table_exhaustive(spec: &SystemSpec, n: usize, bins: Bins) -> Result<CountTable> {
    let m = spec.m;
    let words = (m as f64).powi(n as i32);
    if words > MAX_ENUMERATION {
        return Err(Error::EnumerationTooLarge { words, guard: MAX_ENUMERATION });
    }
    let pairs = n / spec.q;
    let mut table = BTreeMap::new();
    let mut word = vec![0usize; n];
    loop {
        let mut fkey = 0i64;
        for k in 1..=pairs {
            fkey += bins.iphi[word[k - 1] * m + word[spec.q * k - 1]];
        }
        let lkey: i64 = word.iter().map(|&a| bins.ilam[a]).sum();
        *table.entry((fkey, lkey)).or_insert(0.0) += 1.0;

        // Odometer increment in base m, least significant first.
        let mut pos = 0;
        loop {
            if pos == n {
                return Ok(finish_table(spec, n, bins, table, 0.0));
            }
            word[pos] += 1;
            if word[pos] < m {
                break;
            }
            word[pos] = 0;
            pos += 1;
        }
    }
}

fn finish_table(
    spec: &SystemSpec,
    n: usize,
    bins: Bins,
    table: BTreeMap<(i64, i64), f64>,
    log_offset: f64,
) -> CountTable {
    CountTable {
        n,
        pairs: n / spec.q,
        delta_phi: bins.delta_phi,
        delta_lambda: bins.delta_lambda,
        log_offset,
        table,
        phi_fallback: spec.phi(0, 0),
        lambda_fallback: spec.lambdas[0],
    }
}

/// Builds the word histogram at depth n in the requested mode.
pub fn count_table(spec: &SystemSpec, n: usize, mode: CountMode) -> Result<CountTable> {
    if n < spec.q {
        return Err(Error::WordTooShort { n, q: spec.q });
    }
    match mode {
        CountMode::Dp => count_table_dp(spec, n, MAX_TABLE_CELLS),
        CountMode::Exhaustive => {
            let bins = make_bins(spec, n)?;
            count_table_exhaustive(spec, n, bins)
        }
    }
}

/// Counts words whose pairwise average lies within eps of alpha and
/// solves the Moran equation over them.
pub fn level_set_from_table(table: &CountTable, alpha: f64, eps: f64, mode: CountMode) -> Result<LevelSetCount> {
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!("eps = {eps} must be positive")));
    }
    let mut cells: Vec<(f64, f64)> = Vec::new();
    let mut linear_sum = 0.0f64;
    for (&(fkey, lkey), &w) in &table.table {
        if (table.average_of(fkey) - alpha).abs() <= eps {
            cells.push((w.ln(), table.lambda_sum_of(lkey)));
            linear_sum += w;
        }
    }
    let (count_ln, count_exact) = if cells.is_empty() {
        (f64::NEG_INFINITY, Some(0))
    } else {
        let ln = table.log_offset + logsumexp_ln(cells.iter().map(|c| c.0));
        // Integer adds in f64 are exact below 2^53, so the linear sum
        // is the true count whenever no renormalization happened.
        let exact = if table.log_offset == 0.0 && linear_sum <= 9.0e15 {
            Some(linear_sum as u64)
        } else {
            None
        };
        (ln, exact)
    };
    let moran_dim = if cells.is_empty() { 0.0 } else { moran_root(&cells, table.log_offset)? };
    Ok(LevelSetCount { n: table.n, alpha, eps, mode, count_ln, count_exact, moran_dim })
}

/// Covering count and Moran dimension at one level.
pub fn level_set_count(
    spec: &SystemSpec,
    n: usize,
    alpha: f64,
    eps: f64,
    mode: CountMode,
) -> Result<LevelSetCount> {
    let table = count_table(spec, n, mode)?;
    level_set_from_table(&table, alpha, eps, mode)
}

/// Root of f(d) = ln sum_cells w e^{-d L}: strictly decreasing since
/// every L > 0, with f(0) = ln(count) >= 0, so one sign change exists
/// and bisection converges unconditionally.
fn moran_root(cells: &[(f64, f64)], offset: f64) -> Result<f64> {
    let f = |d: f64| offset + logsumexp_ln(cells.iter().map(|&(lw, l)| lw - d * l));
    if f(0.0) <= 0.0 {
        return Ok(0.0);
    }
    let mut hi = 1.0;
    let mut grew = 0;
    while f(hi) > 0.0 {
        hi *= 2.0;
        grew += 1;
        if grew > 300 {
            return Err(Error::BracketFailed("moran root"));
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        if hi - lo <= 1e-12 {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Exact finite-depth diagnostics of the chain-product measure at
/// (s, r): total cylinder mass (must be 1), the exact expectation of
/// the log cylinder mass, and the infinite-depth model value with the
/// expectation series cut at the depths that fit in [1, n]. The gap
/// is reported through its scaled coefficient c = |gap| / sqrt(n).
#[derive(Debug, Clone)]
pub struct ExhaustiveCheck {
    pub n: usize,
    pub s: f64,
    pub r: f64,
    pub mass: f64,
    pub expectation: f64,
    pub model: f64,
    pub c: f64,
}

pub fn exhaustive_check(spec: &SystemSpec, s: f64, r: f64, n: usize, tol: f64) -> Result<ExhaustiveCheck> {
    let m = spec.m;
    let words = (m as f64).powi(n as i32);
    if words > MAX_ENUMERATION {
        return Err(Error::EnumerationTooLarge { words, guard: MAX_ENUMERATION });
    }
    let sol = transfer::solve_transfer(spec, s, r, tol)?;
    let kernel = transfer::transition_kernel(spec, &sol);
    if n == 0 {
        return Ok(ExhaustiveCheck { n, s, r, mass: 1.0, expectation: 0.0, model: 0.0, c: 0.0 });
    }

    let layout = chain_layout(n, spec.q)?;
    let mut mass = 0.0;
    let mut expectation = 0.0;
    let mut word = vec![0u8; n];
    'words: loop {
        let w = crate::measure::SampledWord::from_symbols(word.clone());
        let log_mass = measure::cylinder_measure(&kernel, &layout, &w)?;
        let p = log_mass.exp();
        mass += p;
        expectation += p * log_mass;
        let mut pos = 0;
        loop {
            if pos == n {
                break 'words;
            }
            word[pos] += 1;
            if (word[pos] as usize) < m {
                break;
            }
            word[pos] = 0;
            pos += 1;
        }
    }

    let q = spec.q as f64;
    let (p_val, _) = pressure::pressure(spec, &sol);
    let depth = {
        let mut j = 0usize;
        let mut v = spec.q;
        while v <= n {
            j += 1;
            v *= spec.q;
        }
        j
    };
    let phi_series = truncated_series(&kernel, spec, depth, SeriesKind::Phi);
    let lam_series = truncated_series(&kernel, spec, depth, SeriesKind::Lambda);
    let model = -(n as f64) * ((1.0 - 1.0 / q) * p_val - (s * phi_series + r * lam_series) / q);
    let c = (expectation - model).abs() / (n as f64).sqrt();
    Ok(ExhaustiveCheck { n, s, r, mass, expectation, model, c })
}

enum SeriesKind {
    Phi,
    Lambda,
}

/// Depth series of expected_phi / expected_lyapunov cut at a fixed
/// depth J instead of a tolerance.
fn truncated_series(kernel: &MarkovKernel, spec: &SystemSpec, depth: usize, kind: SeriesKind) -> f64 {
    let m = kernel.m();
    let q = spec.q as f64;
    let mut mu = kernel.initial.clone();
    let mut total = 0.0;
    let mut weight = 1.0;
    for j in 0..=depth {
        let term: f64 = match kind {
            SeriesKind::Phi => (0..m)
                .map(|a| {
                    mu[a]
                        * (0..m)
                            .map(|b| kernel.transitions[a][b] * spec.phi(a, b))
                            .sum::<f64>()
                })
                .sum(),
            SeriesKind::Lambda => mu.iter().zip(&spec.lambdas).map(|(&w, &l)| w * l).sum(),
        };
        total += weight * term;
        if j < depth {
            let mut next = vec![0.0; m];
            for a in 0..m {
                for b in 0..m {
                    next[b] += mu[a] * kernel.transitions[a][b];
                }
            }
            mu = next;
            weight /= q;
        }
    }
    (1.0 - 1.0 / q) * total
}
