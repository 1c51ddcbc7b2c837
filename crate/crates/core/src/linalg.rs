//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{MheError, Result};

pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    if !m.is_square() {
        return false;
    }
    let scale = m.amax().max(1.0);
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            if (m[(i, j)] - m[(j, i)]).abs() > tol * scale {
                return false;
            }
        }
    }
    true
}

/// Cholesky factor `L` with `m = L Lᵀ`; fails unless `m` is symmetric positive definite.
pub fn cholesky_lower(name: &str, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !is_symmetric(m, 1e-10) || m.iter().any(|v| !v.is_finite()) {
        return Err(MheError::NotPositiveDefinite(name.to_string()));
    }
    m.clone()
        .cholesky()
        .map(|c| c.l())
        .ok_or_else(|| MheError::NotPositiveDefinite(name.to_string()))
}

pub fn require_spd(name: &str, m: &DMatrix<f64>) -> Result<()> {
    cholesky_lower(name, m).map(|_| ())
}

pub fn require_psd(name: &str, m: &DMatrix<f64>) -> Result<()> {
    if !is_symmetric(m, 1e-10) {
        return Err(MheError::InvalidParameter(format!(
            "matrix {name} is not symmetric"
        )));
    }
    if m.nrows() == 0 {
        return Ok(());
    }
    let lo = min_eigenvalue(m);
    if lo < -1e-12 * m.amax().max(1.0) {
        return Err(MheError::InvalidParameter(format!(
            "matrix {name} is not positive semidefinite (min eigenvalue {lo:e})"
        )));
    }
    Ok(())
}

/// Upper factor `U` with `m = UᵀU`, so that `‖U v‖² = vᵀ m v`.
pub fn sqrt_factor(name: &str, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(cholesky_lower(name, m)?.transpose())
}

/// Square-root factor for a PSD matrix via the symmetric eigendecomposition.
pub fn psd_sqrt_factor(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = m.clone().symmetric_eigen();
    let d = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose()
}

/// `vᵀ m v`
pub fn quad(v: &DVector<f64>, m: &DMatrix<f64>) -> f64 {
    (v.transpose() * m * v)[(0, 0)]
}

/// `sqrt(vᵀ m v)`, clamped at zero for round-off.
pub fn wnorm(v: &DVector<f64>, m: &DMatrix<f64>) -> f64 {
    quad(v, m).max(0.0).sqrt()
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 1 {
        return m[(0, 0)];
    }
    m.clone().symmetric_eigenvalues().min()
}

pub fn max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 1 {
        return m[(0, 0)];
    }
    m.clone().symmetric_eigenvalues().max()
}

/// Largest generalized eigenvalue λ with det(A − λB) = 0, B positive definite.
pub fn gen_max_eig(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    if a.shape() != b.shape() || !a.is_square() {
        return Err(MheError::Dimension {
            context: "generalized eigenvalue".into(),
            expected: b.nrows(),
            got: a.nrows(),
        });
    }
    let l = cholesky_lower("B (generalized eigenvalue)", b)?;
    let linv = l
        .clone()
        .try_inverse()
        .ok_or_else(|| MheError::NotPositiveDefinite("B (generalized eigenvalue)".into()))?;
    let mut c = &linv * a * linv.transpose();
    c = (&c + c.transpose()) * 0.5;
    Ok(max_eigenvalue(&c))
}

pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    m.clone()
        .complex_eigenvalues()
        .iter()
        .map(|c| c.norm())
        .fold(0.0, f64::max)
}

/// Builds a matrix from row-major nested rows.
pub fn from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nr = rows.len();
    let nc = rows.first().map(|r| r.len()).unwrap_or(0);
    if rows.iter().any(|r| r.len() != nc) {
        return Err(MheError::InvalidParameter("ragged matrix literal".into()));
    }
    Ok(DMatrix::from_fn(nr, nc, |i, j| rows[i][j]))
}

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

pub fn all_finite_vec(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

pub fn all_finite_mat(m: &DMatrix<f64>) -> bool {
    m.iter().all(|x| x.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gen_eig_diagonal() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 9.0]));
        let b = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 3.0]));
        assert!((gen_max_eig(&a, &b).unwrap() - 3.0).abs() < 1e-14);
    }

    #[test]
    fn gen_eig_rejects_indefinite_b() {
        let a = DMatrix::identity(2, 2);
        let b = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0]));
        assert!(gen_max_eig(&a, &b).is_err());
    }

    #[test]
    fn sqrt_factor_reproduces_quadratic_form() {
        let m = from_rows(&[vec![4.0, 1.0], vec![1.0, 3.0]]).unwrap();
        let u = sqrt_factor("m", &m).unwrap();
        let v = DVector::from_vec(vec![0.3, -1.2]);
        assert!(((&u * &v).norm_squared() - quad(&v, &m)).abs() < 1e-13);
    }

    #[test]
    fn spectral_radius_of_rotation() {
        let m = from_rows(&[vec![0.0, -0.5], vec![0.5, 0.0]]).unwrap();
        assert!((spectral_radius(&m) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn psd_check() {
        let m = from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert!(require_psd("m", &m).is_ok());
        assert!(require_spd("m", &m).is_err());
        let f = psd_sqrt_factor(&m);
        assert!((f.transpose() * &f - &m).amax() < 1e-12);
    }

    #[test]
    fn ragged_rows_rejected() {
        assert!(from_rows(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }
}
