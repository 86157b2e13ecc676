//! Shared fixtures for the integration suites.

#![allow(dead_code)]

use multifractal::SystemSpec;

pub const LN2: f64 = std::f64::consts::LN_2;

/// phi(i, j) = i * j.
pub fn phi_product(m: usize) -> Vec<Vec<f64>> {
    (0..m).map(|i| (0..m).map(|j| (i * j) as f64).collect()).collect()
}

/// phi(i, j) = i.
pub fn phi_first(m: usize) -> Vec<Vec<f64>> {
    (0..m).map(|i| (0..m).map(|_| i as f64).collect()).collect()
}

/// Two equal branches of rate ln 2, pair average of products, q = 2.
pub fn spec_sym() -> SystemSpec {
    SystemSpec::from_lambdas(2, &[LN2, LN2], phi_product(2)).unwrap()
}

/// Rates (ln 2, ln 4): distinct multipliers, golden-ratio Bowen value.
pub fn spec_asym() -> SystemSpec {
    SystemSpec::from_lambdas(2, &[LN2, 2.0 * LN2], phi_product(2)).unwrap()
}

/// Sparser pairing q = 3 over two equal branches.
pub fn spec_q3() -> SystemSpec {
    SystemSpec::from_lambdas(3, &[LN2, LN2], phi_product(2)).unwrap()
}

/// phi(i, j) = i: the pair structure degenerates to symbol frequency.
pub fn spec_first() -> SystemSpec {
    SystemSpec::from_lambdas(2, &[LN2, LN2], phi_first(2)).unwrap()
}

/// A complete run configuration for the symbolic spec, written as the
/// CLI reads it.
pub fn sym_config_json() -> String {
    r#"{
  "system": {
    "m": 2,
    "q": 2,
    "intervals": [[0.0, 0.5], [0.5, 1.0]],
    "phi": [[0.0, 0.0], [0.0, 1.0]]
  },
  "solver": { "tol": 1e-13, "max_iter": 10000 },
  "spectrum": { "alpha_min": 0.0, "alpha_max": 1.0, "steps": 11 },
  "montecarlo": { "n": 10000, "samples": 50, "seed": 1 },
  "oracle": { "depth": 64, "eps": 0.05, "mode": "dp" }
}"#
    .to_string()
}
