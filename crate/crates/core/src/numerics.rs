//! Dense symmetric eigendecomposition, SVD and SPD solves.
//!
//! Storage and the underlying factorizations come from `nalgebra`; this
//! module pins ordering and sign conventions and validates inputs.

use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::error::{Error, Result};
use crate::tolerances;

/// Eigenpairs of a symmetric matrix, eigenvalues ascending.
#[derive(Debug, Clone)]
pub struct SymEig {
    pub values: Vec<f64>,
    /// Columns are the orthonormal eigenvectors matching `values`.
    pub vectors: DMatrix<f64>,
}

impl SymEig {
    /// Rebuilds `U diag(f(values)) U'`.
    pub fn recompose_with(&self, mut f: impl FnMut(f64) -> f64) -> DMatrix<f64> {
        let mut scaled = self.vectors.clone();
        for (k, &v) in self.values.iter().enumerate() {
            let w = f(v);
            scaled.column_mut(k).scale_mut(w);
        }
        &scaled * self.vectors.transpose()
    }

    pub fn recompose(&self) -> DMatrix<f64> {
        self.recompose_with(|v| v)
    }
}

/// Thin SVD, singular values descending.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: DMatrix<f64>,
    pub singular_values: Vec<f64>,
    /// `V'` (k × ncols).
    pub v_t: DMatrix<f64>,
}

impl Svd {
    /// Rebuilds `U diag(f(sigma)) V'`.
    pub fn recompose_with(&self, mut f: impl FnMut(f64) -> f64) -> DMatrix<f64> {
        let mut scaled = self.u.clone();
        for (k, &s) in self.singular_values.iter().enumerate() {
            let w = f(s);
            scaled.column_mut(k).scale_mut(w);
        }
        scaled * &self.v_t
    }

    pub fn recompose(&self) -> DMatrix<f64> {
        self.recompose_with(|s| s)
    }

    /// Number of singular values above `rel_tol * sigma_max`.
    pub fn rank(&self, rel_tol: f64) -> usize {
        let top = self.singular_values.first().copied().unwrap_or(0.0);
        if top == 0.0 {
            return 0;
        }
        self.singular_values
            .iter()
            .filter(|&&s| s > rel_tol * top)
            .count()
    }
}

fn ensure_finite(x: &DMatrix<f64>, what: &'static str) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

pub fn symmetrize(x: &DMatrix<f64>) -> DMatrix<f64> {
    (x + x.transpose()) * 0.5
}

/// Largest |x_ij - x_ji|.
pub fn max_asymmetry(x: &DMatrix<f64>) -> f64 {
    let n = x.nrows().min(x.ncols());
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((x[(i, j)] - x[(j, i)]).abs());
        }
    }
    worst
}

/// Eigendecomposition of the symmetric part of `x`.
///
/// Inputs more than `tolerances::SYMMETRY` (relative) away from symmetric
/// are still accepted, but a warning is logged.
pub fn sym_eig(x: &DMatrix<f64>) -> Result<SymEig> {
    if !x.is_square() {
        return Err(Error::Dimension {
            context: "sym_eig",
            expected: x.nrows(),
            found: x.ncols(),
        });
    }
    ensure_finite(x, "sym_eig input")?;
    let scale = x.amax().max(1.0);
    let asym = max_asymmetry(x);
    if asym > tolerances::SYMMETRY * scale {
        log::warn!("sym_eig input_asymmetry={asym:.3e}; using symmetric part");
    }
    let eig = symmetrize(x).symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = DMatrix::from_fn(x.nrows(), order.len(), |i, j| {
        eig.eigenvectors[(i, order[j])]
    });
    Ok(SymEig { values, vectors })
}

/// Thin singular value decomposition.
///
/// With the factors requested, nalgebra can misplace singular values by
/// ~1e-6 relative on rank-deficient inputs; use [`singular_values`] when
/// only the spectrum is needed.
pub fn svd(x: &DMatrix<f64>) -> Result<Svd> {
    ensure_finite(x, "svd input")?;
    let k = x.nrows().min(x.ncols());
    if k == 0 {
        return Ok(Svd {
            u: DMatrix::zeros(x.nrows(), 0),
            singular_values: Vec::new(),
            v_t: DMatrix::zeros(0, x.ncols()),
        });
    }
    let dec = x.clone().svd(true, true);
    let (u, v_t) = match (dec.u, dec.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => unreachable!("requested both singular factors"),
    };
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| dec.singular_values[b].total_cmp(&dec.singular_values[a]));
    let singular_values = order
        .iter()
        .map(|&i| dec.singular_values[i].max(0.0))
        .collect();
    let u = DMatrix::from_fn(x.nrows(), k, |i, j| u[(i, order[j])]);
    let v_t = DMatrix::from_fn(k, x.ncols(), |i, j| v_t[(order[i], j)]);
    Ok(Svd {
        u,
        singular_values,
        v_t,
    })
}

/// Cholesky factor of an SPD matrix, reusable across right-hand sides.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    chol: Cholesky<f64, Dyn>,
}

impl SpdFactor {
    pub fn new(x: &DMatrix<f64>) -> Result<Self> {
        if !x.is_square() {
            return Err(Error::Dimension {
                context: "SPD factorization",
                expected: x.nrows(),
                found: x.ncols(),
            });
        }
        ensure_finite(x, "SPD factorization input")?;
        let chol = Cholesky::new(symmetrize(x)).ok_or(Error::NotPositiveDefinite("cholesky"))?;
        Ok(SpdFactor { chol })
    }

    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    /// Solves `X Y = rhs`.
    pub fn solve(&self, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if rhs.nrows() != self.dim() {
            return Err(Error::Dimension {
                context: "SPD solve right-hand side",
                expected: self.dim(),
                found: rhs.nrows(),
            });
        }
        Ok(self.chol.solve(rhs))
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }

    pub fn log_det(&self) -> f64 {
        self.chol.l_dirty().diagonal().iter().map(|d| 2.0 * d.ln()).sum()
    }
}

/// Solves `X Y = rhs` for symmetric positive-definite `X`.
pub fn solve_spd(x: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    SpdFactor::new(x)?.solve(rhs)
}

/// Singular values, descending.
pub fn singular_values(x: &DMatrix<f64>) -> Result<Vec<f64>> {
    ensure_finite(x, "singular value input")?;
    if x.is_empty() {
        return Ok(Vec::new());
    }
    let mut sv: Vec<f64> = x.singular_values().iter().map(|s| s.max(0.0)).collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    Ok(sv)
}

/// Number of singular values above `rel_tol * sigma_max`.
pub fn numerical_rank(x: &DMatrix<f64>, rel_tol: f64) -> Result<usize> {
    let sv = singular_values(x)?;
    let top = sv.first().copied().unwrap_or(0.0);
    if top == 0.0 {
        return Ok(0);
    }
    Ok(sv.iter().filter(|&&s| s > rel_tol * top).count())
}

/// Nuclear norm (sum of singular values).
pub fn nuclear_norm(x: &DMatrix<f64>) -> Result<f64> {
    Ok(singular_values(x)?.iter().sum())
}

pub fn l1_norm(x: &DMatrix<f64>) -> f64 {
    x.iter().map(|v| v.abs()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn identity_eigenvalues() {
        let e = sym_eig(&DMatrix::identity(3, 3)).unwrap();
        for v in e.values {
            assert!((v - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn two_by_two_eigenvalues() {
        // det([[2-l,-1],[-1,2-l]]) = (2-l)^2 - 1 => l = 1, 3
        let x = DMatrix::from_row_slice(2, 2, &[2.0, -1.0, -1.0, 2.0]);
        let e = sym_eig(&x).unwrap();
        assert!((e.values[0] - 1.0).abs() < 1e-12);
        assert!((e.values[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn eig_reconstruction_and_orthonormality() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in 1..12 {
            let a = random(n, n, &mut rng);
            let x = symmetrize(&a);
            let e = sym_eig(&x).unwrap();
            assert!(e.values.windows(2).all(|w| w[0] <= w[1]));
            let err = (e.recompose() - &x).norm();
            assert!(err <= 1e-10 * x.norm().max(1e-300));
            let gram = e.vectors.transpose() * &e.vectors;
            assert!((gram - DMatrix::identity(n, n)).amax() < 1e-10);
        }
    }

    #[test]
    fn rejects_non_finite() {
        let mut x = DMatrix::identity(2, 2);
        x[(0, 1)] = f64::NAN;
        assert!(matches!(sym_eig(&x), Err(Error::NonFinite(_))));
        assert!(matches!(svd(&x), Err(Error::NonFinite(_))));
    }

    #[test]
    fn svd_simple_cases() {
        let z = svd(&DMatrix::zeros(3, 2)).unwrap();
        assert!(z.singular_values.iter().all(|&s| s == 0.0));
        let d = svd(&DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 3.0])).unwrap();
        assert!((d.singular_values[0] - 3.0).abs() < 1e-14);
        assert!((d.singular_values[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn svd_frobenius_identity_and_reconstruction() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let x = random(5, 7, &mut rng);
            let s = svd(&x).unwrap();
            let energy: f64 = s.singular_values.iter().map(|v| v * v).sum();
            assert!((energy - x.norm_squared()).abs() < 1e-9);
            assert!((s.recompose() - &x).norm() <= 1e-10 * x.norm());
            assert!(s.singular_values.windows(2).all(|w| w[0] >= w[1]));
            let uu = s.u.transpose() * &s.u;
            let vv = &s.v_t * s.v_t.transpose();
            assert!((uu - DMatrix::identity(5, 5)).amax() < 1e-10);
            assert!((vv - DMatrix::identity(5, 5)).amax() < 1e-10);
        }
        let tall = random(8, 3, &mut rng);
        assert!((svd(&tall).unwrap().recompose() - &tall).norm() < 1e-10 * tall.norm());
    }

    #[test]
    fn eig_and_svd_agree_on_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random(6, 6, &mut rng);
        let x = &a * a.transpose();
        let mut ev = sym_eig(&x).unwrap().values;
        ev.reverse();
        let sv = svd(&x).unwrap().singular_values;
        for (e, s) in ev.iter().zip(&sv) {
            assert!((e - s).abs() < 1e-9);
        }
    }

    #[test]
    fn spd_solves() {
        let rhs = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let y = solve_spd(&DMatrix::identity(2, 2), &rhs).unwrap();
        assert_eq!(y, rhs);
        let half = solve_spd(&(DMatrix::identity(3, 3) * 2.0), &DMatrix::identity(3, 3)).unwrap();
        assert!((half - DMatrix::identity(3, 3) * 0.5).amax() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = random(6, 6, &mut rng);
        let x = &a * a.transpose() + DMatrix::identity(6, 6) * 0.1;
        let rhs = random(6, 4, &mut rng);
        let y = solve_spd(&x, &rhs).unwrap();
        assert!((&x * &y - &rhs).norm() <= 1e-8 * rhs.norm());
    }

    #[test]
    fn spd_rejects_indefinite() {
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(SpdFactor::new(&x), Err(Error::NotPositiveDefinite(_))));
    }

    #[test]
    fn log_det_matches_product_of_eigenvalues() {
        let x = DMatrix::from_row_slice(2, 2, &[2.0, -1.0, -1.0, 2.0]);
        assert!((SpdFactor::new(&x).unwrap().log_det() - 3f64.ln()).abs() < 1e-13);
    }
}
