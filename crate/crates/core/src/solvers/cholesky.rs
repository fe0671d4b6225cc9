//! Cholesky factorization `A = L Lᵀ` and the exact solve/inverse built on it.

use super::{SolverError, SpdSystem};
use crate::linalg::{axpy, dot, Matrix};

/// Lower-triangular Cholesky factor, stored row-major in a full matrix.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    l: Matrix,
}

impl CholeskyFactor {
    /// Factors a symmetric matrix. Only the lower triangle is read.
    pub fn new(a: &Matrix) -> Result<Self, SolverError> {
        if !a.is_square() {
            return Err(SolverError::NotSquare {
                rows: a.rows(),
                cols: a.cols(),
            });
        }
        let n = a.rows();
        let mut l = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let s = if j < i {
                    let (upper, lower) = l.as_rows_split(i);
                    dot(&lower[..j], &upper[j * n..j * n + j])
                } else {
                    let row = l.row(i);
                    dot(&row[..j], &row[..j])
                };
                if i == j {
                    let d = a[(i, i)] - s;
                    if !(d > 0.0 && d.is_finite()) {
                        return Err(SolverError::NotPositiveDefinite { pivot: i, value: d });
                    }
                    l[(i, i)] = d.sqrt();
                } else {
                    l[(i, j)] = (a[(i, j)] - s) / l[(j, j)];
                }
            }
        }
        Ok(Self { l })
    }

    pub fn dim(&self) -> usize {
        self.l.rows()
    }

    pub fn factor(&self) -> &Matrix {
        &self.l
    }

    /// Solves `A x = b` by forward and backward substitution.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>, SolverError> {
        let n = self.dim();
        if b.len() != n {
            return Err(SolverError::DimensionMismatch {
                expected: n,
                found: b.len(),
            });
        }
        let mut z = vec![0.0; n];
        for i in 0..n {
            let row = self.l.row(i);
            z[i] = (b[i] - dot(&row[..i], &z[..i])) / row[i];
        }
        // Lᵀ x = z, column-oriented so every update walks a contiguous row of L.
        for i in (0..n).rev() {
            let row = self.l.row(i);
            z[i] /= row[i];
            let xi = z[i];
            let (head, _) = z.split_at_mut(i);
            axpy(-xi, &row[..i], head);
        }
        Ok(z)
    }

    /// `L⁻ᵀ` in row-major form: row `j` holds column `j` of `L⁻¹`, which is
    /// zero before index `j`.
    fn inverse_factor_transposed(&self) -> Matrix {
        let n = self.dim();
        let mut w = Matrix::zeros(n, n);
        for j in 0..n {
            let col = w.row_mut(j);
            col[j] = 1.0 / self.l[(j, j)];
            for i in j + 1..n {
                let row = self.l.row(i);
                col[i] = -dot(&row[j..i], &col[j..i]) / row[i];
            }
        }
        w
    }

    /// Diagonal of `A⁻¹` without forming the full inverse.
    pub fn inverse_diagonal(&self) -> Vec<f64> {
        let w = self.inverse_factor_transposed();
        (0..self.dim())
            .map(|i| {
                let r = &w.row(i)[i..];
                dot(r, r)
            })
            .collect()
    }

    /// Full inverse `A⁻¹ = L⁻ᵀ L⁻¹`, exactly symmetric.
    pub fn inverse(&self) -> Matrix {
        let n = self.dim();
        let w = self.inverse_factor_transposed();
        let mut inv = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = dot(&w.row(i)[i..], &w.row(j)[i..]);
                inv[(i, j)] = v;
                inv[(j, i)] = v;
            }
        }
        inv
    }
}

impl Matrix {
    /// Splits the buffer before row `i`, returning (rows `0..i`, row `i`).
    fn as_rows_split(&self, i: usize) -> (&[f64], &[f64]) {
        let n = self.cols();
        let (head, tail) = self.as_slice().split_at(i * n);
        (head, &tail[..n])
    }
}

/// Exact solve of an SPD system by Cholesky factorization.
pub fn cholesky_solve(system: &SpdSystem) -> Result<Vec<f64>, SolverError> {
    CholeskyFactor::new(system.a())?.solve(system.b())
}

/// Inverse of an SPD matrix.
pub fn invert_spd(a: &Matrix) -> Result<Matrix, SolverError> {
    Ok(CholeskyFactor::new(a)?.inverse())
}

/// Diagonal of the inverse of an SPD matrix.
pub fn inverse_diagonal(a: &Matrix) -> Result<Vec<f64>, SolverError> {
    Ok(CholeskyFactor::new(a)?.inverse_diagonal())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::norm2;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(n: usize, shift: f64, rng: &mut impl Rng) -> Matrix {
        let data = (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let m = Matrix::from_row_major(n, n, data);
        let mut a = m.gram();
        a.add_diagonal(&vec![shift; n]);
        a
    }

    fn to_nalgebra(a: &Matrix) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_row_slice(a.rows(), a.cols(), a.as_slice())
    }

    #[test]
    fn identity_solve_returns_rhs() {
        let sys = SpdSystem::new(Matrix::identity(3), vec![1.5, -2.0, 0.25]).unwrap();
        assert_eq!(cholesky_solve(&sys).unwrap(), vec![1.5, -2.0, 0.25]);
    }

    #[test]
    fn two_by_two_hand_solution() {
        let a = Matrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]);
        let sys = SpdSystem::new(a, vec![1.0, 1.0]).unwrap();
        let x = cholesky_solve(&sys).unwrap();
        assert_abs_diff_eq!(x[0], 1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(x[1], 1.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn random_spd_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random_spd(50, 1.0, &mut rng);
        let b: Vec<f64> = (0..50).map(|_| rng.random_range(-1.0..1.0)).collect();
        let sys = SpdSystem::new(a, b).unwrap();
        let x = cholesky_solve(&sys).unwrap();
        assert!(sys.relative_residual(&x) <= 1e-10);
    }

    #[test]
    fn diagonal_and_identity_inverse() {
        let inv = invert_spd(&Matrix::from_diag(&[2.0, 4.0])).unwrap();
        let expected = Matrix::from_diag(&[0.5, 0.25]);
        assert!(inv.sub(&expected).frobenius_norm() < 1e-15);
        assert_eq!(invert_spd(&Matrix::identity(4)).unwrap(), Matrix::identity(4));
    }

    #[test]
    fn random_inverse_product_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 50;
        let a = random_spd(n, 1.0, &mut rng);
        let inv = invert_spd(&a).unwrap();
        assert_eq!(inv.relative_asymmetry(), 0.0);
        let err = a.matmul(&inv).sub(&Matrix::identity(n)).frobenius_norm() / (n as f64).sqrt();
        assert!(err <= 1e-8, "product error {err}");
    }

    #[test]
    fn matches_nalgebra_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for n in [1, 2, 7, 33] {
            let a = random_spd(n, 0.5, &mut rng);
            let oracle = to_nalgebra(&a).cholesky().unwrap().inverse();
            let factor = CholeskyFactor::new(&a).unwrap();
            let inv = factor.inverse();
            let diag = factor.inverse_diagonal();
            for i in 0..n {
                assert_abs_diff_eq!(diag[i], oracle[(i, i)], epsilon = 1e-10 * oracle[(i, i)]);
                for j in 0..n {
                    assert_abs_diff_eq!(inv[(i, j)], oracle[(i, j)], epsilon = 1e-9);
                }
            }
            let b: Vec<f64> = (0..n).map(|i| i as f64 - 1.0).collect();
            let x = factor.solve(&b).unwrap();
            let xo = oracle * nalgebra::DVector::from_column_slice(&b);
            let diff: Vec<f64> = x.iter().zip(xo.iter()).map(|(p, q)| p - q).collect();
            assert!(norm2(&diff) <= 1e-9 * (1.0 + norm2(&x)));
        }
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]);
        assert!(matches!(
            CholeskyFactor::new(&a),
            Err(SolverError::NotPositiveDefinite { pivot: 1, .. })
        ));
        assert!(invert_spd(&Matrix::from_diag(&[1.0, -1.0])).is_err());
    }

    #[test]
    fn solve_checks_dimension() {
        let f = CholeskyFactor::new(&Matrix::identity(3)).unwrap();
        assert!(matches!(
            f.solve(&[1.0, 2.0]),
            Err(SolverError::DimensionMismatch { expected: 3, found: 2 })
        ));
    }
}
