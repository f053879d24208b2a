//! Dense linear-algebra helpers shared by the decomposition modules.
//!
//! Everything here works on `nalgebra` dynamic matrices. Moments are
//! probability-weighted (no sample correction): `Cov(x, y) = Σ q_i x_i y_iᵀ − x̄ ȳᵀ`,
//! evaluated in centered form for accuracy.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{FmbError, Result};

/// Relative cutoff below which eigenvalues are treated as zero in least-norm solves.
pub const PINV_RTOL: f64 = 1e-10;

/// Tolerance for probability vectors summing to one.
pub const PROB_SUM_TOL: f64 = 1e-12;

pub fn check_probability(q: &DVector<f64>, what: &str) -> Result<()> {
    if q.is_empty() {
        return Err(FmbError::InvalidProbability(format!("{what} is empty")));
    }
    for (i, &x) in q.iter().enumerate() {
        if !x.is_finite() || x < 0.0 {
            return Err(FmbError::InvalidProbability(format!(
                "{what}[{i}] = {x} is not a nonnegative finite number"
            )));
        }
    }
    let s = q.sum();
    if (s - 1.0).abs() > PROB_SUM_TOL {
        return Err(FmbError::InvalidProbability(format!(
            "{what} sums to {s}, not 1"
        )));
    }
    Ok(())
}

/// q-weighted mean of the rows of `x`.
pub fn weighted_mean(q: &DVector<f64>, x: &DMatrix<f64>) -> DVector<f64> {
    x.tr_mul(q)
}

/// q-weighted mean of a vector.
pub fn weighted_mean_vec(q: &DVector<f64>, x: &DVector<f64>) -> f64 {
    q.dot(x)
}

/// Cross-covariance between the rows of `x` (m×a) and `y` (m×b) under weights `q`.
pub fn weighted_cov(q: &DVector<f64>, x: &DMatrix<f64>, y: &DMatrix<f64>) -> DMatrix<f64> {
    let xbar = weighted_mean(q, x);
    let ybar = weighted_mean(q, y);
    let mut xc = x.clone();
    for mut row in xc.row_iter_mut() {
        row -= xbar.transpose();
    }
    let mut yc = y.clone();
    for (i, mut row) in yc.row_iter_mut().enumerate() {
        row -= ybar.transpose();
        row *= q[i];
    }
    xc.tr_mul(&yc)
}

/// Covariance of a scalar per-variant quantity `w` with each column of `x`.
pub fn weighted_cov_vec(q: &DVector<f64>, w: &DVector<f64>, x: &DMatrix<f64>) -> DVector<f64> {
    let wbar = q.dot(w);
    let xbar = weighted_mean(q, x);
    let mut out = DVector::zeros(x.ncols());
    for (i, row) in x.row_iter().enumerate() {
        let dw = q[i] * (w[i] - wbar);
        if dw == 0.0 {
            continue;
        }
        for j in 0..x.ncols() {
            out[j] += dw * (row[j] - xbar[j]);
        }
    }
    out
}

pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

pub fn is_square(a: &DMatrix<f64>) -> bool {
    a.nrows() == a.ncols()
}

pub fn check_finite_mat(a: &DMatrix<f64>, what: &str) -> Result<()> {
    if a.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(FmbError::NonFinite(format!("{what} has non-finite entries")))
    }
}

pub fn check_finite_vec(a: &DVector<f64>, what: &str) -> Result<()> {
    if a.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(FmbError::NonFinite(format!("{what} has non-finite entries")))
    }
}

/// Least-norm solution of `a x = b` for symmetric `a`, dropping eigen-directions whose
/// magnitude falls below `rtol` times the largest.
pub fn pinv_solve_sym(a: &DMatrix<f64>, b: &DVector<f64>, rtol: f64) -> DVector<f64> {
    let n = a.nrows();
    if n == 0 {
        return DVector::zeros(0);
    }
    let eig = SymmetricEigen::new(symmetrize(a));
    let lmax = eig.eigenvalues.iter().fold(0.0_f64, |m, l| m.max(l.abs()));
    let mut x = DVector::zeros(n);
    if lmax == 0.0 {
        return x;
    }
    for k in 0..n {
        let l = eig.eigenvalues[k];
        if l.abs() <= rtol * lmax {
            continue;
        }
        let v = eig.eigenvectors.column(k);
        let coef = v.dot(b) / l;
        x.axpy(coef, &v, 1.0);
    }
    x
}

/// Rebuild a symmetric matrix from an eigendecomposition with transformed eigenvalues.
pub fn eigen_map(a: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetrize(a));
    let mapped = eig.eigenvalues.map(f);
    let v = &eig.eigenvectors;
    symmetrize(&(v * DMatrix::from_diagonal(&mapped) * v.transpose()))
}

/// Positive-definite repair of a symmetric matrix: flip negative eigenvalues to their
/// magnitude and raise anything below `floor_rel · λ_max` to that floor.
///
/// Fails with [`FmbError::NonConcaveLocus`] when no eigenvalue is positive, i.e. the
/// matrix offers no direction of genuine curvature to keep.
pub fn repair_pd(a: &DMatrix<f64>, floor_rel: f64) -> Result<DMatrix<f64>> {
    check_finite_mat(a, "curvature")?;
    let eig = SymmetricEigen::new(symmetrize(a));
    let lmax_pos = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if lmax_pos <= 0.0 {
        return Err(FmbError::NonConcaveLocus);
    }
    let lmax = eig.eigenvalues.iter().fold(0.0_f64, |m, l| m.max(l.abs()));
    let floor = floor_rel * lmax;
    let mapped = eig.eigenvalues.map(|l| l.abs().max(floor));
    let v = &eig.eigenvectors;
    Ok(symmetrize(&(v * DMatrix::from_diagonal(&mapped) * v.transpose())))
}

/// Clamp eigenvalues of a symmetric matrix from below at `floor_rel · λ_max`.
pub fn floor_pd(a: &DMatrix<f64>, floor_rel: f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetrize(a));
    let lmax = eig.eigenvalues.iter().fold(0.0_f64, |m, l| m.max(l.abs()));
    let floor = (floor_rel * lmax).max(f64::MIN_POSITIVE);
    let mapped = eig.eigenvalues.map(|l| l.max(floor));
    let v = &eig.eigenvectors;
    symmetrize(&(v * DMatrix::from_diagonal(&mapped) * v.transpose()))
}

/// Symmetric PSD square root; negative rounding noise is clipped to zero.
pub fn sqrt_psd(a: &DMatrix<f64>) -> DMatrix<f64> {
    eigen_map(a, |l| l.max(0.0).sqrt())
}

/// Inverse of a symmetric positive-definite matrix via Cholesky.
pub fn inverse_spd(a: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    nalgebra::Cholesky::new(symmetrize(a))
        .map(|c| c.inverse())
        .ok_or_else(|| FmbError::Singular(format!("{what} is not positive definite")))
}

pub fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(symmetrize(a))
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

pub fn max_eigenvalue(a: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(symmetrize(a))
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max)
}

pub fn max_abs_diff_vec(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    a.iter().zip(b.iter()).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

pub fn max_abs_diff_mat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// Row-major nested vectors, the layout used by every JSON schema in this crate.
pub fn to_rows(a: &DMatrix<f64>) -> Vec<Vec<f64>> {
    a.row_iter().map(|r| r.iter().cloned().collect()).collect()
}

pub fn from_rows(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(FmbError::Dimension(format!("{what} has ragged rows")));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}
