//! Just enough dense linear algebra for the implicit-differentiation
//! solves: an m x m Gaussian elimination with partial pivoting (m is
//! the branch count, typically 2..10) and closed-form eigenvalues of a
//! symmetric 2 x 2 matrix.

use crate::{Error, Result};

/// Solves A x = b in place, destroying both arguments. A is row-major.
pub fn solve_dense(a: &mut [f64], b: &mut [f64], context: &'static str) -> Result<Vec<f64>> {
    let n = b.len();
    debug_assert_eq!(a.len(), n * n);
    for col in 0..n {
        let mut pivot = col;
        for row in col + 1..n {
            if a[row * n + col].abs() > a[pivot * n + col].abs() {
                pivot = row;
            }
        }
        if a[pivot * n + col].abs() < f64::MIN_POSITIVE * 16.0 {
            return Err(Error::SingularSystem(context));
        }
        if pivot != col {
            for k in 0..n {
                a.swap(col * n + k, pivot * n + k);
            }
            b.swap(col, pivot);
        }
        let d = a[col * n + col];
        for row in col + 1..n {
            let factor = a[row * n + col] / d;
            if factor == 0.0 {
                continue;
            }
            a[row * n + col] = 0.0;
            for k in col + 1..n {
                a[row * n + k] -= factor * a[col * n + k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in row + 1..n {
            acc -= a[row * n + k] * x[k];
        }
        x[row] = acc / a[row * n + row];
    }
    Ok(x)
}

/// Eigenvalues (ascending) of [[a, b], [b, c]].
pub fn sym2_eigenvalues(a: f64, b: f64, c: f64) -> (f64, f64) {
    let mean = 0.5 * (a + c);
    let radius = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    (mean - radius, mean + radius)
}
