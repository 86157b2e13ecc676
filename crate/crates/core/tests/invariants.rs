//! Property tests: structural invariants that must hold for every
//! valid system, not just the worked examples.

mod common;

use multifractal::config::RunConfig;
use multifractal::system::{bowen_dimension, code_point, RawSystem};
use multifractal::{measure, oracle, report, transfer, SystemSpec};
use proptest::prelude::*;

/// Branch contraction rates with total length strictly inside (0,1),
/// so interval synthesis always has room for gaps.
fn arb_lambdas(m: usize) -> impl Strategy<Value = Vec<f64>> {
    (prop::collection::vec(0.05f64..1.0, m), 0.3f64..0.95).prop_map(|(weights, budget)| {
        let total: f64 = weights.iter().sum();
        weights.iter().map(|w| -(budget * w / total).ln()).collect()
    })
}

fn arb_phi(m: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(0.0f64..1.0, m), m)
}

fn arb_system() -> impl Strategy<Value = SystemSpec> {
    (2usize..=4, 2usize..=3)
        .prop_flat_map(|(m, q)| (Just(q), arb_lambdas(m), arb_phi(m)))
        .prop_map(|(q, lambdas, phi)| {
            SystemSpec::from_lambdas(q, &lambdas, phi).expect("constructed system is valid")
        })
}

proptest! {
    #[test]
    fn chain_layout_partitions_the_positions(n in 0usize..400, q in 2usize..6) {
        let layout = measure::chain_layout(n, q).unwrap();
        let mut seen: Vec<usize> = layout.chains.iter().flatten().copied().collect();
        seen.sort_unstable();
        prop_assert_eq!(seen, (1..=n).collect::<Vec<_>>(), "chains must partition 1..=n");
        let mut prev_start = 0;
        for chain in &layout.chains {
            prop_assert!(!chain.is_empty());
            prop_assert!(chain[0] % q != 0, "chain starts are not divisible by q");
            prop_assert!(chain[0] > prev_start, "chains ordered by start");
            prev_start = chain[0];
            for w in chain.windows(2) {
                prop_assert_eq!(w[1], w[0] * q);
            }
        }
    }

    #[test]
    fn transfer_solves_its_equation(spec in arb_system(), s in -5.0f64..5.0, r in -5.0f64..5.0) {
        let sol = transfer::solve_transfer(&spec, s, r, 1e-13).unwrap();
        // Recompute the defect from scratch in log space.
        let q = spec.q as f64;
        for i in 0..spec.m {
            let lhs = q * sol.log_t[i];
            let terms: Vec<f64> = (0..spec.m)
                .map(|j| s * spec.phi(i, j) + r * spec.lambdas[i] + sol.log_t[j])
                .collect();
            let top = terms.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let rhs = top + terms.iter().map(|&t| (t - top).exp()).sum::<f64>().ln();
            prop_assert!(
                (lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0),
                "defect {} at branch {i}", lhs - rhs
            );
        }
        prop_assert!(sol.t.iter().all(|&t| t > 0.0 && t.is_finite()));
    }

    #[test]
    fn initialization_does_not_change_the_solution(
        spec in arb_system(),
        s in -5.0f64..5.0,
        r in -5.0f64..5.0,
        raw_init in prop::collection::vec(0.01f64..100.0, 4),
    ) {
        let reference = transfer::solve_transfer(&spec, s, r, 1e-13).unwrap();
        let init = &raw_init[..spec.m];
        let sol = transfer::solve_transfer_from(&spec, s, r, 1e-13, Some(init)).unwrap();
        for (a, b) in sol.t.iter().zip(&reference.t) {
            prop_assert!((a / b - 1.0).abs() <= 1e-11, "{a} vs {b}");
        }
    }

    #[test]
    fn kernel_rows_are_stochastic(spec in arb_system(), s in -5.0f64..5.0, r in -5.0f64..5.0) {
        let sol = transfer::solve_transfer(&spec, s, r, 1e-13).unwrap();
        let kernel = transfer::transition_kernel(&spec, &sol);
        let initial: f64 = kernel.initial.iter().sum();
        prop_assert!((initial - 1.0).abs() <= 1e-11);
        for row in &kernel.transitions {
            let total: f64 = row.iter().sum();
            prop_assert!((total - 1.0).abs() <= 1e-11, "row sums to {total}");
            prop_assert!(row.iter().all(|&p| p > 0.0));
        }
    }

    #[test]
    fn bowen_root_solves_the_moran_equation(lambdas in (2usize..=5).prop_flat_map(arb_lambdas)) {
        let d = bowen_dimension(&lambdas).unwrap();
        prop_assert!(d > 0.0 && d <= 1.0, "dimension {d} out of range");
        let mass: f64 = lambdas.iter().map(|&l| (-d * l).exp()).sum();
        prop_assert!((mass - 1.0).abs() <= 1e-12, "residual {}", mass - 1.0);
    }

    #[test]
    fn code_intervals_nest_and_match_their_log_length(
        spec in arb_system(),
        raw_word in prop::collection::vec(0usize..4, 1..12),
        extra in 0usize..4,
    ) {
        let word: Vec<usize> = raw_word.iter().map(|&w| w % spec.m).collect();
        let parent = code_point(&spec, &word).unwrap();
        prop_assert!(parent.lo >= -1e-12 && parent.hi <= 1.0 + 1e-12);
        prop_assert!(parent.lo < parent.hi);
        // The direct difference hi - lo loses up to an ulp of the
        // endpoint scale, which dominates once the interval is tiny;
        // log_length has no such cancellation.
        let direct = parent.hi - parent.lo;
        prop_assert!(
            (parent.length() - direct).abs() <= 1e-9 * direct + 1e-13,
            "log_length {} vs direct {direct}", parent.log_length
        );

        let mut longer = word.clone();
        longer.push(extra % spec.m);
        let child = code_point(&spec, &longer).unwrap();
        prop_assert!(child.lo >= parent.lo - 1e-12 && child.hi <= parent.hi + 1e-12);
        prop_assert!(child.log_length < parent.log_length);
    }

    #[test]
    fn sampling_is_reproducible_and_in_range(
        spec in arb_system(),
        s in -2.0f64..2.0,
        r in -2.0f64..2.0,
        n in 10usize..200,
        seed in 0u64..1000,
        index in 0u64..50,
    ) {
        let sol = transfer::solve_transfer(&spec, s, r, 1e-13).unwrap();
        let kernel = transfer::transition_kernel(&spec, &sol);
        let layout = measure::chain_layout(n, spec.q).unwrap();
        let word = measure::sample_word_indexed(&kernel, &layout, seed, index);
        let again = measure::sample_word_indexed(&kernel, &layout, seed, index);
        prop_assert_eq!(&word.symbols, &again.symbols, "same coordinates, same word");
        prop_assert_eq!(word.symbols.len(), n);
        prop_assert!(word.symbols.iter().all(|&w| (w as usize) < spec.m));

        let avg = measure::multiple_average(&word, &spec).unwrap();
        prop_assert!(avg >= spec.phi_min() - 1e-12 && avg <= spec.phi_max() + 1e-12);

        let log_len = measure::log_cylinder_length(&spec, &word).unwrap();
        let nf = n as f64;
        prop_assert!(log_len <= -nf * spec.min_lambda() + 1e-9);
        prop_assert!(log_len >= -nf * spec.max_lambda() - 1e-9);
    }

    #[test]
    fn exhaustive_and_dp_counts_agree(spec in arb_system(), n_raw in 0usize..7) {
        let n = spec.q + n_raw;
        let ex = oracle::count_table(&spec, n, oracle::CountMode::Exhaustive).unwrap();
        let dp = oracle::count_table(&spec, n, oracle::CountMode::Dp).unwrap();
        prop_assert_eq!(ex.log_offset, 0.0);
        prop_assert_eq!(dp.log_offset, 0.0);
        prop_assert_eq!(&ex.table, &dp.table);

        // Total mass is the number of words.
        let words = (spec.m as f64).powi(n as i32);
        prop_assert!((ex.total_ln() - words.ln()).abs() <= 1e-9);

        // A window covering the whole range of phi admits every word.
        let mid = 0.5 * (spec.phi_min() + spec.phi_max());
        let eps = 0.5 * (spec.phi_max() - spec.phi_min()) + 1.0;
        let level = oracle::level_set_from_table(&ex, mid, eps, oracle::CountMode::Exhaustive).unwrap();
        prop_assert_eq!(level.count_exact, Some(words as u64));
    }

    #[test]
    fn csv_numbers_round_trip(mantissa in -1.0f64..1.0, exp in -30i32..30) {
        let x = mantissa * 10f64.powi(exp);
        let text = report::fmt_sig(x);
        let back: f64 = text.parse().unwrap();
        if x == 0.0 {
            prop_assert_eq!(back, 0.0);
        } else {
            prop_assert!((back / x - 1.0).abs() <= 1e-11, "{x} -> {text} -> {back}");
        }
    }
}

#[test]
fn validation_rejects_malformed_systems() {
    let valid = RawSystem {
        m: 2,
        q: 2,
        intervals: Some(vec![[0.0, 0.5], [0.5, 1.0]]),
        lambdas: None,
        phi: vec![vec![0.0, 0.0], vec![0.0, 1.0]],
        ell: None,
    };
    assert!(SystemSpec::validate(&valid).is_ok());

    let junk: Vec<(RawSystem, &str)> = vec![
        (RawSystem { q: 1, ..valid.clone() }, "q = 1"),
        (RawSystem { q: 0, ..valid.clone() }, "q = 0"),
        (RawSystem { ell: Some(3), ..valid.clone() }, "unsupported arity"),
        (
            RawSystem { intervals: Some(vec![[0.0, 0.6], [0.5, 1.0]]), ..valid.clone() },
            "overlap",
        ),
        (
            RawSystem { intervals: Some(vec![[0.0, 0.7], [0.7, 1.0]]), lambdas: Some(vec![0.1, 0.1]), ..valid.clone() },
            "lambda",
        ),
        (RawSystem { intervals: None, ..valid.clone() }, "intervals"),
        (
            RawSystem { phi: vec![vec![0.0], vec![0.0]], ..valid.clone() },
            "phi",
        ),
        (
            RawSystem { phi: vec![vec![0.0, f64::NAN], vec![0.0, 1.0]], ..valid.clone() },
            "not finite",
        ),
        (
            RawSystem { intervals: Some(vec![[0.0, 0.5], [0.4, 0.3]]), ..valid.clone() },
            "nonpositive",
        ),
    ];
    for (raw, needle) in junk {
        match SystemSpec::validate(&raw) {
            Ok(_) => panic!("accepted a system that should fail ({needle})"),
            Err(e) => {
                let msg = e.to_string();
                assert!(msg.contains(needle), "error {msg:?} does not mention {needle:?}");
            }
        }
    }
}

#[test]
fn config_hash_tracks_content_not_formatting() {
    let text = common::sym_config_json();
    let cfg = RunConfig::from_json(&text).unwrap();

    // Reserialize the same document with different whitespace.
    let value: serde_json::Value = serde_json::from_str(&text).unwrap();
    let minified = serde_json::to_string(&value).unwrap();
    let same = RunConfig::from_json(&minified).unwrap();
    assert_eq!(cfg.hash(), same.hash(), "formatting must not affect the hash");

    let reseeded = RunConfig::from_json(&text.replace("\"seed\": 1", "\"seed\": 2")).unwrap();
    assert_ne!(cfg.hash(), reseeded.hash(), "seed change must show in the hash");
}
