//! Closed-form proximal operators used by the ADMM block updates.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::numerics;

/// `S_alpha[x] = sign(x) * max(|x| - alpha, 0)`.
pub fn soft_threshold(x: f64, alpha: f64) -> f64 {
    debug_assert!(alpha >= 0.0);
    if x > alpha {
        x - alpha
    } else if x < -alpha {
        x + alpha
    } else {
        0.0
    }
}

pub fn soft_threshold_matrix(x: &DMatrix<f64>, alpha: f64) -> DMatrix<f64> {
    x.map(|v| soft_threshold(v, alpha))
}

/// Minimizer of `1/2 (b - z)^2 + alpha |b|` subject to `b <= 0`.
pub fn nonpositive_shrink(z: f64, alpha: f64) -> f64 {
    (z + alpha).min(0.0)
}

/// Entrywise prox of `alpha * ||O . B||_1` restricted to `O . B <= 0`:
/// the diagonal passes through, off-diagonals go through
/// [`nonpositive_shrink`].
pub fn offdiag_nonpositive_prox(z: &DMatrix<f64>, alpha: f64) -> DMatrix<f64> {
    let mut out = z.clone();
    for j in 0..z.ncols() {
        for i in 0..z.nrows() {
            if i != j {
                out[(i, j)] = nonpositive_shrink(z[(i, j)], alpha);
            }
        }
    }
    out
}

/// Singular value thresholding `U diag(max(sigma - alpha, 0)) V'`, the prox
/// of `alpha * ||X||_*`.
///
/// Computed as `U diag(max(1 - alpha/sigma, 0)) U' X` from the eigenpairs of
/// the smaller Gram matrix, which avoids forming `V`. Singular values below
/// roughly `1e-8 * sigma_max` are resolved only approximately, which is
/// immaterial unless `alpha` is that small.
pub fn svt(x: &DMatrix<f64>, alpha: f64) -> Result<DMatrix<f64>> {
    if !(alpha >= 0.0) {
        return Err(Error::Domain(format!("svt level must be >= 0, got {alpha}")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("svt input"));
    }
    if alpha == 0.0 {
        return Ok(x.clone());
    }
    let wide = x.nrows() <= x.ncols();
    let gram = if wide { x * x.transpose() } else { x.transpose() * x };
    let eig = numerics::sym_eig(&gram)?;
    let shrink = eig.recompose_with(|lambda| {
        let s = lambda.max(0.0).sqrt();
        if s > alpha {
            1.0 - alpha / s
        } else {
            0.0
        }
    });
    Ok(if wide { shrink * x } else { x * shrink })
}

/// Eigenvalue map of the log-determinant prox.
pub fn logdet_eigen_map(s: f64, alpha: f64) -> f64 {
    let r = (s * s + 4.0 * alpha).sqrt();
    if s >= 0.0 {
        0.5 * (s + r)
    } else {
        // Same value, written to avoid cancellation for large negative s.
        2.0 * alpha / (r - s)
    }
}

/// Minimizer over `X > 0` of `1/2 ||X - A||_F^2 - alpha log|X|`.
///
/// Only the symmetric part of `A` matters; the result is symmetric with
/// every eigenvalue at least `sqrt(alpha)` when the eigenvalues of the
/// symmetric part are nonnegative, and strictly positive in all cases.
pub fn logdet_prox(a: &DMatrix<f64>, alpha: f64) -> Result<DMatrix<f64>> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::Domain(format!(
            "log-det prox level must be positive, got {alpha}"
        )));
    }
    let eig = numerics::sym_eig(&numerics::symmetrize(a))?;
    Ok(numerics::symmetrize(
        &eig.recompose_with(|s| logdet_eigen_map(s, alpha)),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn soft_threshold_examples() {
        assert!((soft_threshold(1.2, 0.5) - 0.7).abs() < 1e-15);
        assert_eq!(soft_threshold(-1.2, 0.5), -0.7);
        for a in [0.0, 0.3, 10.0] {
            assert_eq!(soft_threshold(0.0, a), 0.0);
        }
        assert_eq!(soft_threshold(-3.25, 0.0), -3.25);
    }

    #[test]
    fn nonpositive_shrink_examples() {
        assert_eq!(nonpositive_shrink(0.3, 0.1), 0.0);
        assert_eq!(nonpositive_shrink(-5.0, 1.0), -4.0);
        let z = DMatrix::from_row_slice(2, 2, &[0.7, 0.3, -5.0, -2.0]);
        let out = offdiag_nonpositive_prox(&z, 1.0);
        assert_eq!(out, DMatrix::from_row_slice(2, 2, &[0.7, 0.0, -4.0, -2.0]));
    }

    #[test]
    fn svt_examples() {
        let x = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![3.0, 1.0]));
        let y = svt(&x, 2.0).unwrap();
        assert!((y - DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0])).amax() < 1e-12);
        let small = DMatrix::from_row_slice(2, 3, &[0.1, 0.0, 0.2, 0.0, -0.1, 0.05]);
        assert!(svt(&small, 1.0).unwrap().amax() < 1e-15);
        assert!(svt(&small, -1.0).is_err());
    }

    #[test]
    fn logdet_prox_scalar_cases() {
        let one = |v: f64| DMatrix::from_element(1, 1, v);
        assert!((logdet_prox(&one(0.0), 1.0).unwrap()[(0, 0)] - 1.0).abs() < 1e-14);
        let x = logdet_prox(&one(3.0), 4.0).unwrap()[(0, 0)];
        assert!((x - 4.0).abs() < 1e-14);
        assert!((x - 3.0 - 4.0 / x).abs() < 1e-12);
        let i2 = DMatrix::<f64>::identity(2, 2);
        assert!((logdet_prox(&i2, 2.0).unwrap() - &i2 * 2.0).amax() < 1e-14);
        assert!(logdet_prox(&i2, 0.0).is_err());
    }

    #[test]
    fn logdet_eigen_map_is_stable_for_negative_inputs() {
        let v = logdet_eigen_map(-1e8, 1e-3);
        assert!(v > 0.0);
        assert!((v - 1e-11).abs() < 1e-20);
    }
}
