//! Telescopic product measure over q-adic chains.
//!
//! The positions 1..n split into chains {i, iq, iq^2, ...} with q
//! not dividing i. The pairwise coupling (omega_k, omega_qk) only
//! links consecutive entries of one chain, so a Markov kernel run
//! independently along each chain yields a measure whose cylinder
//! masses factor exactly. This module provides that decomposition,
//! reproducible sampling from it, the pairwise average, exact cylinder
//! log-measures, and the closed-form expectations they converge to.

use crate::pressure;
use crate::system::SystemSpec;
use crate::transfer::{self, MarkovKernel};
use crate::{Error, Result};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Depth cap for the geometric expectation series; q >= 2 reaches any
/// practical tolerance far earlier.
const MAX_SERIES_DEPTH: usize = 256;

/// Partition of {1,..,n} into q-adic chains.
#[derive(Debug, Clone)]
pub struct ChainLayout {
    pub n: usize,
    /// Each chain is [i, iq, iq^2, ...] truncated at n, 1-based,
    /// ordered by ascending start i; starts are the integers in [1,n]
    /// not divisible by q.
    pub chains: Vec<Vec<usize>>,
}

/// One word drawn from the chain-product measure, tagged with the
/// RNG coordinates and the kernel parameters that produced it.
#[derive(Debug, Clone)]
pub struct SampledWord {
    pub symbols: Vec<u8>,
    pub seed: u64,
    /// Word index within the batch; (seed, stream) fully determine
    /// the word for a given kernel and layout.
    pub stream: u64,
    pub s: f64,
    pub r: f64,
}

impl SampledWord {
    /// Bare word for hand-made inputs in diagnostics.
    pub fn from_symbols(symbols: Vec<u8>) -> SampledWord {
        SampledWord { symbols, seed: 0, stream: 0, s: f64::NAN, r: f64::NAN }
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }
}

/// Chains of {1,..,n} under multiplication by q. n = 0 is allowed and
/// gives the empty partition.
pub fn chain_layout(n: usize, q: usize) -> Result<ChainLayout> {
    if q < 2 {
        return Err(Error::InvalidParameter(format!("chain arity q = {q}, need q >= 2")));
    }
    let mut chains = Vec::with_capacity(n - n / q);
    for start in 1..=n {
        if start % q == 0 {
            continue;
        }
        let mut chain = Vec::new();
        let mut k = start;
        while k <= n {
            chain.push(k);
            match k.checked_mul(q) {
                Some(next) => k = next,
                None => break,
            }
        }
        chains.push(chain);
    }
    Ok(ChainLayout { n, chains })
}

/// Uniform in [0,1) from the top 53 bits of the generator.
fn unit(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

fn draw(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let u = unit(rng);
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Draws word `index` of the batch keyed by `seed`: one generator
/// stream per word, so batches are reproducible independently of
/// evaluation order or thread count.
pub fn sample_word_indexed(
    kernel: &MarkovKernel,
    layout: &ChainLayout,
    seed: u64,
    index: u64,
) -> SampledWord {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let mut symbols = vec![0u8; layout.n];
    for chain in &layout.chains {
        let mut cur = draw(&mut rng, &kernel.initial);
        symbols[chain[0] - 1] = cur as u8;
        for &pos in &chain[1..] {
            cur = draw(&mut rng, &kernel.transitions[cur]);
            symbols[pos - 1] = cur as u8;
        }
    }
    SampledWord { symbols, seed, stream: index, s: kernel.s, r: kernel.r }
}

/// First word of the batch keyed by `seed`.
pub fn sample_word(kernel: &MarkovKernel, layout: &ChainLayout, seed: u64) -> SampledWord {
    sample_word_indexed(kernel, layout, seed, 0)
}

/// A batch of independent words, sampled in parallel and returned in
/// index order.
pub fn sample_words(
    kernel: &MarkovKernel,
    layout: &ChainLayout,
    seed: u64,
    count: usize,
) -> Vec<SampledWord> {
    (0..count)
        .into_par_iter()
        .map(|i| sample_word_indexed(kernel, layout, seed, i as u64))
        .collect()
}

/// Pairwise average (1/K) sum_{k=1..K} phi(omega_k, omega_qk) with
/// K = floor(n/q), so every pair lies inside the word.
pub fn multiple_average(word: &SampledWord, spec: &SystemSpec) -> Result<f64> {
    let n = word.symbols.len();
    let q = spec.q;
    if n < q {
        return Err(Error::WordTooShort { n, q });
    }
    let pairs = n / q;
    let mut sum = 0.0;
    for k in 1..=pairs {
        let a = word.symbols[k - 1] as usize;
        let b = word.symbols[q * k - 1] as usize;
        if a >= spec.m || b >= spec.m {
            return Err(Error::SymbolOutOfRange { symbol: a.max(b), m: spec.m });
        }
        sum += spec.phi(a, b);
    }
    Ok(sum / pairs as f64)
}

/// Depth-weighted expectation of f(a, marginal step): shared engine
/// for the two series below. `row` maps (marginal-at-depth, depth) to
/// one series term; `bound` bounds |term| for the tail rule.
fn depth_series(kernel: &MarkovKernel, q: f64, bound: f64, tol: f64, mut row: impl FnMut(&[f64]) -> f64) -> f64 {
    let m = kernel.m();
    let mut mu = kernel.initial.clone();
    let mut total = 0.0;
    let mut weight = 1.0; // q^{-j}
    let mut last = 0.0;
    for _ in 0..MAX_SERIES_DEPTH {
        last = row(&mu);
        total += weight * last;
        weight /= q;
        // Remaining terms carry total weight q/(q-1) * weight.
        if bound * weight * q / (q - 1.0) < tol {
            break;
        }
        let mut next = vec![0.0; m];
        for a in 0..m {
            for b in 0..m {
                next[b] += mu[a] * kernel.transitions[a][b];
            }
        }
        mu = next;
    }
    // Close the series with the last row value standing in for the
    // tail: exact when the row is constant in depth, within tol
    // otherwise, and it keeps the geometric weights summing to one.
    total += weight * q / (q - 1.0) * last;
    (1.0 - 1.0 / q) * total
}

/// Almost-sure limit of the pairwise average under the chain-product
/// measure of `kernel`:
///
/// ```text
///   Phi = (1 - 1/q) sum_{j>=0} q^{-j} sum_{a,b} (pi K^j)_a k_{a,b} phi(a,b),
/// ```
///
/// the depth-j term weighting positions whose chain index is a j-th
/// power of q. The series is cut once the geometric tail drops below
/// `tol`. Equals dPn_ds at the kernel's parameters (the identity that
/// pins the (q-1) normalization).
pub fn expected_phi(kernel: &MarkovKernel, spec: &SystemSpec, tol: f64) -> f64 {
    let m = kernel.m();
    let q = spec.q as f64;
    let bound = (0..m)
        .flat_map(|i| (0..m).map(move |j| (i, j)))
        .map(|(i, j)| spec.phi(i, j).abs())
        .fold(0.0f64, f64::max);
    depth_series(kernel, q, bound, tol, |mu| {
        (0..m)
            .map(|a| {
                mu[a]
                    * (0..m)
                        .map(|b| kernel.transitions[a][b] * spec.phi(a, b))
                        .sum::<f64>()
            })
            .sum()
    })
}

/// Almost-sure limit of (1/n) sum_k lambda_{omega_k}, by the same
/// depth series with the rates in place of phi. Equals dPn_dr.
pub fn expected_lyapunov(kernel: &MarkovKernel, spec: &SystemSpec, tol: f64) -> f64 {
    let q = spec.q as f64;
    let bound = spec.max_lambda();
    depth_series(kernel, q, bound, tol, |mu| {
        mu.iter().zip(&spec.lambdas).map(|(&w, &l)| w * l).sum()
    })
}

/// Exact log-measure (natural log) of the cylinder of `word`: each
/// chain contributes its initial law and transition steps, chains
/// multiply. Empty words have the full space's measure, log 1 = 0.
pub fn cylinder_measure(
    kernel: &MarkovKernel,
    layout: &ChainLayout,
    word: &SampledWord,
) -> Result<f64> {
    if word.symbols.len() != layout.n {
        return Err(Error::InvalidParameter(format!(
            "word length {} does not match layout n = {}",
            word.symbols.len(),
            layout.n
        )));
    }
    let m = kernel.m();
    let mut log_mass = 0.0;
    for chain in &layout.chains {
        let mut cur = word.symbols[chain[0] - 1] as usize;
        if cur >= m {
            return Err(Error::SymbolOutOfRange { symbol: cur, m });
        }
        log_mass += kernel.log_initial[cur];
        for &pos in &chain[1..] {
            let next = word.symbols[pos - 1] as usize;
            if next >= m {
                return Err(Error::SymbolOutOfRange { symbol: next, m });
            }
            log_mass += kernel.log_transitions[cur][next];
            cur = next;
        }
    }
    Ok(log_mass)
}

/// Finite-n local dimension estimator: log of the cylinder's measure
/// over log of its interval length. For a kernel at a solved critical
/// point and large n this concentrates near -r/q.
pub fn local_dimension_estimate(
    spec: &SystemSpec,
    kernel: &MarkovKernel,
    word: &SampledWord,
) -> Result<f64> {
    if word.symbols.is_empty() {
        return Err(Error::InvalidParameter("local dimension needs a nonempty word".into()));
    }
    let layout = chain_layout(word.symbols.len(), spec.q)?;
    let log_mass = cylinder_measure(kernel, &layout, word)?;
    Ok(log_mass / log_cylinder_length(spec, word)?)
}

/// ln of the coding interval length of `word`, i.e. -sum_k lambda_{omega_k}.
pub fn log_cylinder_length(spec: &SystemSpec, word: &SampledWord) -> Result<f64> {
    let mut sum = 0.0;
    for &sym in &word.symbols {
        let a = sym as usize;
        if a >= spec.m {
            return Err(Error::SymbolOutOfRange { symbol: a, m: spec.m });
        }
        sum += spec.lambdas[a];
    }
    Ok(-sum)
}

/// Model value the local-dimension estimator converges to at (s, r):
///
/// ```text
///   (P - s dP_ds - r dP_dr) / (q dP_dr),
/// ```
///
/// which reduces to -r/q at critical points, where P = alpha s/(q-1)
/// and dP_ds = alpha/(q-1) cancel the first two terms.
pub fn predicted_local_dimension(spec: &SystemSpec, s: f64, r: f64, tol: f64) -> Result<f64> {
    let sol = transfer::solve_transfer(spec, s, r, tol)?;
    let (p, _) = pressure::pressure(spec, &sol);
    let g = pressure::pressure_gradient(spec, &sol)?;
    Ok((p - s * g.dp_ds - r * g.dp_dr) / (spec.q as f64 * g.dp_dr))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::*;
    use crate::system::{bowen_dimension, SystemSpec};
    use crate::transfer::{solve_transfer, transition_kernel, DEFAULT_TOL};

    fn kernel_at(spec: &SystemSpec, s: f64, r: f64) -> MarkovKernel {
        let sol = solve_transfer(spec, s, r, DEFAULT_TOL).unwrap();
        transition_kernel(spec, &sol)
    }

    fn word(bits: &str) -> SampledWord {
        SampledWord::from_symbols(bits.bytes().map(|b| b - b'0').collect())
    }

    #[test]
    fn chain_layout_small_enumerations() {
        let l = chain_layout(6, 2).unwrap();
        assert_eq!(l.chains, vec![vec![1, 2, 4], vec![3, 6], vec![5]]);
        let l = chain_layout(9, 3).unwrap();
        assert_eq!(
            l.chains,
            vec![vec![1, 3, 9], vec![2, 6], vec![4], vec![5], vec![7], vec![8]]
        );
        let l = chain_layout(1, 5).unwrap();
        assert_eq!(l.chains, vec![vec![1]]);
        assert!(chain_layout(0, 2).unwrap().chains.is_empty());
        assert!(chain_layout(10, 1).is_err());
    }

    #[test]
    fn chains_partition_the_positions() {
        for &(n, q) in &[(100, 2), (100, 3), (64, 2), (17, 5)] {
            let l = chain_layout(n, q).unwrap();
            assert_eq!(l.chains.len(), n - n / q, "chain count at ({n},{q})");
            let mut seen = vec![false; n + 1];
            for chain in &l.chains {
                assert!(chain[0] % q != 0);
                for &k in chain {
                    assert!(k >= 1 && k <= n);
                    assert!(!seen[k], "{k} appears twice");
                    seen[k] = true;
                }
            }
            assert!(seen[1..].iter().all(|&v| v), "positions missing at ({n},{q})");
        }
    }

    #[test]
    fn sampling_is_deterministic_per_seed_and_stream() {
        let spec = spec_asym();
        let k = kernel_at(&spec, 0.5, -1.0);
        let layout = chain_layout(500, 2).unwrap();
        let a = sample_word_indexed(&k, &layout, 7, 3);
        let b = sample_word_indexed(&k, &layout, 7, 3);
        assert_eq!(a.symbols, b.symbols);
        let c = sample_word_indexed(&k, &layout, 7, 4);
        assert_ne!(a.symbols, c.symbols);
        let d = sample_word_indexed(&k, &layout, 8, 3);
        assert_ne!(a.symbols, d.symbols);
        // Batch extraction equals individual draws.
        let batch = sample_words(&k, &layout, 7, 5);
        assert_eq!(batch[3].symbols, a.symbols);
        assert_eq!(batch[3].stream, 3);
    }

    #[test]
    fn uniform_kernel_symbol_frequency() {
        let spec = spec_sym();
        let k = kernel_at(&spec, 0.0, -2.0);
        let layout = chain_layout(100_000, 2).unwrap();
        let w = sample_word(&k, &layout, 1);
        let ones = w.symbols.iter().filter(|&&s| s == 1).count() as f64;
        let freq = ones / 100_000.0;
        assert!((freq - 0.5).abs() < 0.01, "freq = {freq}");
    }

    #[test]
    fn transition_frequencies_match_the_kernel() {
        // Chi-square on the m*m transition cells along chains, df =
        // m(m-1) = 2; the 0.001 critical value is -2 ln(0.001).
        let spec = spec_asym();
        let k = kernel_at(&spec, 0.8, -1.5);
        let layout = chain_layout(100_000, 2).unwrap();
        let w = sample_word(&k, &layout, 11);
        let mut counts = [[0u64; 2]; 2];
        for chain in &layout.chains {
            for pair in chain.windows(2) {
                let a = w.symbols[pair[0] - 1] as usize;
                let b = w.symbols[pair[1] - 1] as usize;
                counts[a][b] += 1;
            }
        }
        let mut chi2 = 0.0;
        for a in 0..2 {
            let row_total: u64 = counts[a].iter().sum();
            for b in 0..2 {
                let expected = row_total as f64 * k.transitions[a][b];
                let diff = counts[a][b] as f64 - expected;
                chi2 += diff * diff / expected;
            }
        }
        let critical = -2.0 * 0.001f64.ln();
        assert!(chi2 < critical, "chi2 = {chi2}, critical = {critical}");
    }

    #[test]
    fn pairwise_average_hand_values() {
        let spec = spec_sym();
        assert!((multiple_average(&word("110100"), &spec).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(multiple_average(&word("111111"), &spec).unwrap(), 1.0);
        assert_eq!(multiple_average(&word("000000"), &spec).unwrap(), 0.0);
        assert!(matches!(
            multiple_average(&word("1"), &spec),
            Err(Error::WordTooShort { n: 1, q: 2 })
        ));
    }

    #[test]
    fn expected_phi_closed_forms() {
        let spec = spec_sym();
        let k = kernel_at(&spec, 0.0, -2.0);
        // i.i.d. uniform pairs: E[phi] = P(1)^2 = 1/4.
        assert!((expected_phi(&k, &spec, 1e-12) - 0.25).abs() < 1e-12);

        let flat = SystemSpec::from_lambdas(3, &[LN2, 2.0 * LN2], phi_const(2, 0.3)).unwrap();
        let k = kernel_at(&flat, 1.0, -0.5);
        assert!((expected_phi(&k, &flat, 1e-12) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn expected_phi_equals_the_pressure_gradient() {
        for spec in [spec_asym(), spec_q3()] {
            for &(s, r) in &[(0.6, -1.1), (-1.2, 0.9)] {
                let sol = solve_transfer(&spec, s, r, DEFAULT_TOL).unwrap();
                let k = transition_kernel(&spec, &sol);
                let grad = pressure::pressure_gradient(&spec, &sol).unwrap();
                let phi = expected_phi(&k, &spec, 1e-12);
                assert!(
                    (phi - grad.dpn_ds).abs() < 1e-10,
                    "Phi = {phi} vs dPn_ds = {} at ({s},{r})",
                    grad.dpn_ds
                );
            }
        }
    }

    #[test]
    fn expected_lyapunov_closed_forms() {
        let spec = spec_sym();
        let k = kernel_at(&spec, 1.7, 0.3);
        // Equal rates: the average is ln 2 no matter the kernel.
        assert!((expected_lyapunov(&k, &spec, 1e-12) - LN2).abs() < 1e-13);

        // Unequal rates at s=0: symbols are i.i.d. with law (y, y^2),
        // y the golden ratio conjugate, so the mean rate is
        // y ln2 + y^2 ln4 = ln2 (y + 2(1-y)) = ln2 (2 - y).
        let spec = spec_asym();
        let center = crate::spectrum::spectrum_center(&spec, DEFAULT_TOL).unwrap();
        let k = kernel_at(&spec, 0.0, center.r);
        let y = (5.0f64.sqrt() - 1.0) / 2.0;
        let want = LN2 * (2.0 - y);
        let got = expected_lyapunov(&k, &spec, 1e-12);
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        assert!(got >= spec.min_lambda() && got <= spec.max_lambda());
    }

    #[test]
    fn series_truncation_is_stable_in_tol() {
        let spec = spec_q3();
        let k = kernel_at(&spec, 0.4, -0.9);
        let coarse = expected_lyapunov(&k, &spec, 1e-6);
        let fine = expected_lyapunov(&k, &spec, 1e-14);
        assert!((coarse - fine).abs() < 1e-6);
    }

    #[test]
    fn cylinder_measure_hand_values_and_mass() {
        let spec = spec_sym();
        let k = kernel_at(&spec, 0.0, -2.0);
        let layout = chain_layout(2, 2).unwrap();
        let got = cylinder_measure(&k, &layout, &word("11")).unwrap();
        assert!((got - 0.25f64.ln()).abs() < 1e-13);

        let empty_layout = chain_layout(0, 2).unwrap();
        let empty = SampledWord::from_symbols(vec![]);
        assert_eq!(cylinder_measure(&k, &empty_layout, &empty).unwrap(), 0.0);

        // Total mass over all words of length 8 is exactly 1.
        for (spec, s, r) in [(spec_asym(), 1.2, -0.8), (spec_q3(), -0.6, 0.5)] {
            let k = kernel_at(&spec, s, r);
            let layout = chain_layout(8, spec.q).unwrap();
            let mut mass = 0.0;
            for code in 0..(1u32 << 8) {
                let symbols: Vec<u8> = (0..8).map(|b| ((code >> b) & 1) as u8).collect();
                let w = SampledWord::from_symbols(symbols);
                mass += cylinder_measure(&k, &layout, &w).unwrap().exp();
            }
            assert!((mass - 1.0).abs() < 1e-12, "mass = {mass} at ({s},{r})");
        }
    }

    #[test]
    fn local_dimension_of_a_hand_cylinder() {
        let spec = spec_sym();
        let k = kernel_at(&spec, 0.0, -2.0);
        let est = local_dimension_estimate(&spec, &k, &word("11")).unwrap();
        assert!((est - 1.0).abs() < 1e-13);
        let empty = SampledWord::from_symbols(vec![]);
        assert!(local_dimension_estimate(&spec, &k, &empty).is_err());
    }

    #[test]
    fn predicted_dimension_matches_critical_values() {
        // At (0, r0) the predictor must equal the similarity dimension.
        for spec in [spec_sym(), spec_asym(), spec_q3()] {
            let center = crate::spectrum::spectrum_center(&spec, DEFAULT_TOL).unwrap();
            let want = bowen_dimension(&spec.lambdas).unwrap();
            let got = predicted_local_dimension(&spec, 0.0, center.r, DEFAULT_TOL).unwrap();
            assert!((got - want).abs() < 1e-10, "{got} vs {want}");
        }
    }

    #[test]
    fn sampled_estimates_concentrate_at_the_critical_kernel() {
        // Moderate-size calibration run; the long version is part of
        // the acceptance suite.
        let spec = spec_sym();
        let k = kernel_at(&spec, 0.0, -2.0);
        let layout = chain_layout(20_000, 2).unwrap();
        let words = sample_words(&k, &layout, 5, 20);
        let mut dims: Vec<f64> = words
            .iter()
            .map(|w| local_dimension_estimate(&spec, &k, w).unwrap())
            .collect();
        dims.sort_by(f64::total_cmp);
        let median = dims[dims.len() / 2];
        assert!((median - 1.0).abs() < 0.05, "median = {median}");
    }

    #[test]
    fn sample_mean_tracks_expected_phi_and_tightens() {
        let spec = spec_asym();
        let k = kernel_at(&spec, 0.5, -1.2);
        let expected = expected_phi(&k, &spec, 1e-12);
        let mut stds = Vec::new();
        for &n in &[2_000usize, 20_000] {
            let layout = chain_layout(n, 2).unwrap();
            let words = sample_words(&k, &layout, 3, 100);
            let avgs: Vec<f64> =
                words.iter().map(|w| multiple_average(w, &spec).unwrap()).collect();
            let mean = avgs.iter().sum::<f64>() / avgs.len() as f64;
            let var = avgs.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>()
                / (avgs.len() - 1) as f64;
            let se = (var / avgs.len() as f64).sqrt();
            assert!(
                (mean - expected).abs() < 4.0 * se,
                "mean {mean} vs expected {expected} (se {se}, n {n})"
            );
            stds.push(var.sqrt());
        }
        assert!(stds[1] < 0.7 * stds[0], "std did not shrink: {stds:?}");
    }
}
