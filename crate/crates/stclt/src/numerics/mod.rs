//! Small dense symmetric/SPD linear algebra and quadratic-form identities.
//!
//! Matrices here are dense and stay small (a few thousand rows at most), so
//! everything is built on `nalgebra`'s dense kernels: a hand-rolled Cholesky
//! that reports the failing pivot, the symmetric eigensolver for inverse
//! square roots, and the real Schur form for spectral radii of non-symmetric
//! companion matrices.

pub mod newton;
pub mod rng;

pub use nalgebra::{DMatrix, DVector};
pub use rng::{sample_std_normal, RngStream, StreamTag};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("matrix is not square: {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not symmetric: relative asymmetry {rel:.3e} at ({i},{j}) exceeds {tol:.1e}")]
    NotSymmetric { i: usize, j: usize, rel: f64, tol: f64 },
    #[error("matrix is not positive definite: nonpositive pivot at index {pivot} (value {value:.6e})")]
    NotSpd { pivot: usize, value: f64 },
    #[error("matrix is numerically singular: eigenvalue {value:.6e} at index {index} below threshold")]
    NumericallySingular { index: usize, value: f64 },
    #[error("eigenvalue iteration did not converge within {max_iter} steps")]
    Convergence { max_iter: usize },
    #[error("covariance for standardization is singular: {0}")]
    SingularSigma(String),
}

/// Dense symmetric matrix. Construction checks the relative asymmetry and
/// then symmetrizes, so downstream code can rely on exact symmetry.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    m: DMatrix<f64>,
}

impl SymMatrix {
    /// Default construction tolerance for relative asymmetry.
    pub const SYMMETRY_TOL: f64 = 1e-12;

    pub fn new(m: DMatrix<f64>) -> Result<Self, NumericsError> {
        Self::with_tolerance(m, Self::SYMMETRY_TOL)
    }

    /// Checks `|m - m^T|` against `tol * max|m|` entrywise, then symmetrizes.
    pub fn with_tolerance(m: DMatrix<f64>, tol: f64) -> Result<Self, NumericsError> {
        if m.nrows() != m.ncols() {
            return Err(NumericsError::NotSquare { rows: m.nrows(), cols: m.ncols() });
        }
        let scale = m.amax().max(f64::MIN_POSITIVE);
        for i in 0..m.nrows() {
            for j in (i + 1)..m.ncols() {
                let rel = (m[(i, j)] - m[(j, i)]).abs() / scale;
                if rel > tol {
                    return Err(NumericsError::NotSymmetric { i, j, rel, tol });
                }
            }
        }
        let sym = (&m + m.transpose()) * 0.5;
        Ok(SymMatrix { m: sym })
    }

    /// Wraps a matrix that is symmetric by construction.
    pub fn from_diagonal(diag: &DVector<f64>) -> Self {
        SymMatrix { m: DMatrix::from_diagonal(diag) }
    }

    pub fn order(&self) -> usize {
        self.m.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.m
    }
}

/// Cholesky factorization `Q = L L^T` with the log-determinant cached.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    lower: DMatrix<f64>,
    log_det: f64,
}

impl SpdFactor {
    pub fn order(&self) -> usize {
        self.lower.nrows()
    }

    pub fn lower(&self) -> &DMatrix<f64> {
        &self.lower
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.lower * self.lower.transpose()
    }

    /// Solves `Q x = b` by forward and back substitution.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let y = self.solve_lower(b);
        self.solve_lower_transpose(&y)
    }

    /// Solves `L y = b`.
    pub fn solve_lower(&self, b: &DVector<f64>) -> DVector<f64> {
        let n = self.order();
        let mut y = b.clone();
        for i in 0..n {
            for k in 0..i {
                let lik = self.lower[(i, k)];
                y[i] -= lik * y[k];
            }
            y[i] /= self.lower[(i, i)];
        }
        y
    }

    /// Solves `L^T x = b`; with `b` standard normal this yields a draw from
    /// `N(0, Q^{-1})` without forming `Q^{-1}`.
    pub fn solve_lower_transpose(&self, b: &DVector<f64>) -> DVector<f64> {
        let n = self.order();
        let mut x = b.clone();
        for i in (0..n).rev() {
            for k in (i + 1)..n {
                let lki = self.lower[(k, i)];
                x[i] -= lki * x[k];
            }
            x[i] /= self.lower[(i, i)];
        }
        x
    }
}

/// Cholesky factorization, reporting the first failing pivot if the matrix
/// is not positive definite.
pub fn cholesky(m: &SymMatrix) -> Result<SpdFactor, NumericsError> {
    let a = m.as_matrix();
    let n = a.nrows();
    let mut lower = DMatrix::<f64>::zeros(n, n);
    let mut log_det = 0.0;
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= lower[(j, k)] * lower[(j, k)];
        }
        if d <= 0.0 || !d.is_finite() {
            return Err(NumericsError::NotSpd { pivot: j, value: d });
        }
        let ljj = d.sqrt();
        lower[(j, j)] = ljj;
        log_det += 2.0 * ljj.ln();
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= lower[(i, k)] * lower[(j, k)];
            }
            lower[(i, j)] = s / ljj;
        }
    }
    Ok(SpdFactor { lower, log_det })
}

/// Relative eigensolver tolerance used by [`spd_inv_sqrt`].
const EIGEN_TOL: f64 = 1e-10;
/// Eigenvalues at or below `RANK_TOL * lambda_max` are treated as zero.
const RANK_TOL: f64 = 1e-12;

/// Symmetric `S` with `S m S = I`, computed from the symmetric
/// eigendecomposition of `m`.
pub fn spd_inv_sqrt(m: &SymMatrix) -> Result<SymMatrix, NumericsError> {
    let n = m.order();
    let scale = m.as_matrix().amax();
    if scale == 0.0 {
        return Err(NumericsError::NumericallySingular { index: 0, value: 0.0 });
    }
    let scaled = m.as_matrix() / scale;
    let max_iter = 100 * n.max(1);
    let eig = nalgebra::SymmetricEigen::try_new(scaled, EIGEN_TOL, max_iter)
        .ok_or(NumericsError::Convergence { max_iter })?;
    let lambda_max = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max) * scale;
    if lambda_max <= 0.0 {
        return Err(NumericsError::NumericallySingular { index: 0, value: lambda_max });
    }
    let mut inv_sqrt = DVector::<f64>::zeros(n);
    for (i, &ev) in eig.eigenvalues.iter().enumerate() {
        let lambda = ev * scale;
        if lambda <= RANK_TOL * lambda_max {
            return Err(NumericsError::NumericallySingular { index: i, value: lambda });
        }
        inv_sqrt[i] = 1.0 / lambda.sqrt();
    }
    let v = &eig.eigenvectors;
    let s = v * DMatrix::from_diagonal(&inv_sqrt) * v.transpose();
    // symmetric up to rounding by construction
    SymMatrix::with_tolerance(s, 1e-8)
}

/// Mean and variance of `Z^T m Z` for standard normal `Z`:
/// `(trace m, 2 trace m^2)`.
pub fn quad_form_moments(m: &SymMatrix) -> (f64, f64) {
    let a = m.as_matrix();
    let mean = a.trace();
    // trace(m^2) = sum_ij m_ij m_ji = ||m||_F^2 for symmetric m
    let var = 2.0 * a.iter().map(|x| x * x).sum::<f64>();
    (mean, var)
}

/// Largest eigenvalue modulus of a square real matrix, via the real Schur
/// form (implicitly shifted QR iteration).
pub fn spectral_radius(m: &DMatrix<f64>) -> Result<f64, NumericsError> {
    if m.nrows() != m.ncols() {
        return Err(NumericsError::NotSquare { rows: m.nrows(), cols: m.ncols() });
    }
    let n = m.nrows();
    if n == 0 {
        return Ok(0.0);
    }
    let scale = m.amax();
    if scale == 0.0 {
        return Ok(0.0);
    }
    let scaled = m / scale;
    let max_iter = 200 * n + 500;
    let schur = nalgebra::Schur::try_new(scaled, 1e-10, max_iter)
        .ok_or(NumericsError::Convergence { max_iter })?;
    let radius = schur
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max);
    Ok(radius * scale)
}

/// Square root of the sum of squared entries.
pub fn frobenius_norm(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Entrywise maximum absolute value.
pub fn inf_entry_norm(m: &DMatrix<f64>) -> f64 {
    m.amax()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn sym(data: &[f64], n: usize) -> SymMatrix {
        SymMatrix::new(DMatrix::from_row_slice(n, n, data)).unwrap()
    }

    fn random_spd(n: usize, stream: &RngStream) -> SymMatrix {
        let g = DMatrix::from_vec(n, n, stream.normals(n * n));
        SymMatrix::with_tolerance(g.transpose() * &g + DMatrix::identity(n, n) * 0.1, 1e-9)
            .unwrap()
    }

    #[test]
    fn cholesky_hand_cases() {
        let id = cholesky(&sym(&[1.0, 0.0, 0.0, 1.0], 2)).unwrap();
        assert_eq!(id.lower(), &DMatrix::identity(2, 2));

        let d = cholesky(&sym(&[4.0, 0.0, 0.0, 9.0], 2)).unwrap();
        assert_relative_eq!(d.lower()[(0, 0)], 2.0);
        assert_relative_eq!(d.lower()[(1, 1)], 3.0);

        let l = cholesky(&sym(&[2.0, 1.0, 1.0, 2.0], 2)).unwrap();
        assert_relative_eq!(l.lower()[(0, 0)], 2.0f64.sqrt(), epsilon = 1e-14);
        assert_relative_eq!(l.lower()[(1, 0)], 1.0 / 2.0f64.sqrt(), epsilon = 1e-14);
        assert_relative_eq!(l.lower()[(1, 1)], 1.5f64.sqrt(), epsilon = 1e-14);
        assert_relative_eq!(l.log_det(), 3.0f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn cholesky_reports_failing_pivot() {
        let err = cholesky(&sym(&[1.0, 2.0, 2.0, 1.0], 2)).unwrap_err();
        match err {
            NumericsError::NotSpd { pivot, .. } => assert_eq!(pivot, 1),
            other => panic!("unexpected error {other:?}"),
        }
        let err = cholesky(&sym(&[-1.0, 0.0, 0.0, 1.0], 2)).unwrap_err();
        match err {
            NumericsError::NotSpd { pivot, .. } => assert_eq!(pivot, 0),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn cholesky_roundtrip_on_random_spd() {
        let root = RngStream::new(1234);
        for trial in 0..20 {
            let n = 2 + (trial % 5);
            let q = random_spd(n, &root.child(trial as u64));
            let f = cholesky(&q).unwrap();
            let resid = inf_entry_norm(&(f.reconstruct() - q.as_matrix()));
            assert!(resid <= 1e-10 * inf_entry_norm(q.as_matrix()), "residual {resid}");
        }
    }

    #[test]
    fn solve_matches_direct_inverse() {
        let q = sym(&[2.0, 1.0, 1.0, 2.0], 2);
        let f = cholesky(&q).unwrap();
        let b = DVector::from_vec(vec![1.0, -1.0]);
        let x = f.solve(&b);
        let qx = q.as_matrix() * &x;
        assert_relative_eq!(qx[0], b[0], epsilon = 1e-12);
        assert_relative_eq!(qx[1], b[1], epsilon = 1e-12);
    }

    #[test]
    fn inv_sqrt_hand_cases() {
        let s = spd_inv_sqrt(&sym(&[4.0, 0.0, 0.0, 9.0], 2)).unwrap();
        assert_relative_eq!(s.as_matrix()[(0, 0)], 0.5, epsilon = 1e-10);
        assert_relative_eq!(s.as_matrix()[(1, 1)], 1.0 / 3.0, epsilon = 1e-10);

        let id = spd_inv_sqrt(&sym(&[1.0, 0.0, 0.0, 1.0], 2)).unwrap();
        assert_relative_eq!(inf_entry_norm(&(id.as_matrix() - DMatrix::identity(2, 2))), 0.0, epsilon = 1e-12);

        // eigenvalues {1,3}, eigenvectors (1,±1)/sqrt(2)
        let s = spd_inv_sqrt(&sym(&[2.0, 1.0, 1.0, 2.0], 2)).unwrap();
        assert_relative_eq!(s.as_matrix()[(0, 0)], 0.78868, epsilon = 1e-4);
        assert_relative_eq!(s.as_matrix()[(0, 1)], -0.21132, epsilon = 1e-4);
        assert_relative_eq!(s.as_matrix()[(1, 1)], 0.78868, epsilon = 1e-4);
    }

    #[test]
    fn inv_sqrt_whitens_random_spd() {
        let root = RngStream::new(777);
        for trial in 0..20 {
            let n = 2 + (trial % 4);
            let q = random_spd(n, &root.child(trial as u64));
            let s = spd_inv_sqrt(&q).unwrap();
            let prod = s.as_matrix() * q.as_matrix() * s.as_matrix();
            let resid = inf_entry_norm(&(prod - DMatrix::identity(n, n)));
            assert!(resid <= 1e-8, "residual {resid}");
        }
    }

    #[test]
    fn inv_sqrt_rejects_singular() {
        let err = spd_inv_sqrt(&sym(&[1.0, 1.0, 1.0, 1.0], 2)).unwrap_err();
        assert!(matches!(err, NumericsError::NumericallySingular { .. }));
    }

    #[test]
    fn quad_form_hand_cases() {
        let (m, v) = quad_form_moments(&sym(&[1.0, 0.0, 0.0, 1.0], 2));
        assert_eq!((m, v), (2.0, 4.0));
        let (m, v) = quad_form_moments(&sym(&[0.0, 0.3, 0.3, 0.0], 2));
        assert_relative_eq!(m, 0.0);
        assert_relative_eq!(v, 0.36, epsilon = 1e-14);
    }

    #[test]
    fn quad_form_monte_carlo() {
        // reduced-size version of the acceptance check
        let root = RngStream::new(99);
        let n = 4;
        let mut entries = root.child(0).normals(n * n);
        entries.iter_mut().for_each(|x| *x *= 0.5);
        let g = DMatrix::from_vec(n, n, entries);
        let m = SymMatrix::with_tolerance((&g + g.transpose()) * 0.5, 1.0).unwrap();
        let (mean, var) = quad_form_moments(&m);

        let reps = 100_000usize;
        let draws = root.child(1).normals(reps * n);
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        for r in 0..reps {
            let z = DVector::from_column_slice(&draws[r * n..(r + 1) * n]);
            let q = (z.transpose() * m.as_matrix() * &z)[(0, 0)];
            sum += q;
            sum2 += q * q;
        }
        let emp_mean = sum / reps as f64;
        let emp_var = sum2 / reps as f64 - emp_mean * emp_mean;
        let se_mean = (var / reps as f64).sqrt();
        assert!((emp_mean - mean).abs() < 4.0 * se_mean);
        // SE of the sample variance from empirical fourth moments
        let mut m4 = 0.0;
        for r in 0..reps {
            let z = DVector::from_column_slice(&draws[r * n..(r + 1) * n]);
            let q = (z.transpose() * m.as_matrix() * &z)[(0, 0)];
            let c = q - emp_mean;
            m4 += c.powi(4);
        }
        m4 /= reps as f64;
        let se_var = ((m4 - emp_var * emp_var) / reps as f64).sqrt();
        assert!((emp_var - var).abs() < 4.0 * se_var);
    }

    #[test]
    fn spectral_radius_cases() {
        let d = DMatrix::from_row_slice(2, 2, &[0.8, 0.0, 0.0, 0.3]);
        assert_relative_eq!(spectral_radius(&d).unwrap(), 0.8, epsilon = 1e-8);

        assert_eq!(spectral_radius(&DMatrix::zeros(3, 3)).unwrap(), 0.0);

        // purely imaginary pair +-0.5i
        let c = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -0.25, 0.0]);
        assert_relative_eq!(spectral_radius(&c).unwrap(), 0.5, epsilon = 1e-8);
    }

    #[test]
    fn spectral_radius_below_frobenius() {
        let root = RngStream::new(5150);
        for trial in 0..20 {
            let n = 2 + (trial % 4);
            let m = DMatrix::from_vec(n, n, root.child(trial as u64).normals(n * n));
            let rho = spectral_radius(&m).unwrap();
            assert!(rho <= frobenius_norm(&m) + 1e-9);
        }
    }

    #[test]
    fn frobenius_cases() {
        assert_relative_eq!(frobenius_norm(&DMatrix::identity(2, 2)), 2.0f64.sqrt());
        assert_relative_eq!(
            frobenius_norm(&DMatrix::from_row_slice(2, 2, &[3.0, 4.0, 0.0, 0.0])),
            5.0
        );
        let b = DMatrix::from_element(3, 3, 0.1);
        assert_relative_eq!(frobenius_norm(&b), 0.3, epsilon = 1e-14);
    }

    #[test]
    fn symmetry_is_enforced() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5 + 1e-6, 1.0]);
        assert!(matches!(
            SymMatrix::new(m.clone()),
            Err(NumericsError::NotSymmetric { .. })
        ));
        let s = SymMatrix::with_tolerance(m, 1e-5).unwrap();
        assert_eq!(s.as_matrix()[(0, 1)], s.as_matrix()[(1, 0)]);
    }
}
