//! Shared fixtures for the unit tests: the small family of systems the
//! hand-derived oracle values below refer to.

use crate::system::SystemSpec;

pub const LN2: f64 = std::f64::consts::LN_2;

/// phi(i,j) = i*j as an m x m table.
pub fn phi_product(m: usize) -> Vec<Vec<f64>> {
    (0..m).map(|i| (0..m).map(|j| (i * j) as f64).collect()).collect()
}

/// phi(i,j) = i (depends on the first coordinate only).
pub fn phi_first(m: usize) -> Vec<Vec<f64>> {
    (0..m).map(|i| vec![i as f64; m]).collect()
}

/// phi identically c.
pub fn phi_const(m: usize, c: f64) -> Vec<Vec<f64>> {
    vec![vec![c; m]; m]
}

/// m=2, q=2, lambda=(ln2,ln2), phi=ij: the symbolic workhorse. Its
/// critical point at alpha=1/4 is (s,r)=(0,-2) with dimension 1.
pub fn spec_sym() -> SystemSpec {
    SystemSpec::from_lambdas(2, &[LN2, LN2], phi_product(2)).unwrap()
}

/// m=2, q=2, lambda=(ln2,ln4), phi=ij: distinct slopes; golden-ratio
/// closed forms at s=0.
pub fn spec_asym() -> SystemSpec {
    SystemSpec::from_lambdas(2, &[LN2, 2.0 * LN2], phi_product(2)).unwrap()
}

/// m=2, q=3, lambda=(ln2,ln2), phi=ij: exercises the q>2 paths.
pub fn spec_q3() -> SystemSpec {
    SystemSpec::from_lambdas(3, &[LN2, LN2], phi_product(2)).unwrap()
}

/// m=2, q=2, lambda=(ln2,ln2), phi(i,j)=i: reduces to digit frequency
/// on the full 2-shift, so the whole spectrum is the binary entropy
/// curve dim(alpha) = -(alpha log2 alpha + (1-alpha) log2(1-alpha)).
pub fn spec_first() -> SystemSpec {
    SystemSpec::from_lambdas(2, &[LN2, LN2], phi_first(2)).unwrap()
}
