//! Dense linear-algebra helpers shared by the numeric modules.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Largest absolute entry of `m - mᵀ`.
pub fn asymmetry(m: &Mat) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

pub fn sym_eigenvalues(m: &Mat) -> DVector<f64> {
    SymmetricEigen::new(symmetrize(m)).eigenvalues
}

/// Smallest and largest eigenvalue of a symmetric matrix.
pub fn eig_range(m: &Mat) -> (f64, f64) {
    let ev = sym_eigenvalues(m);
    (ev.min(), ev.max())
}

/// Positive definite with smallest eigenvalue above `rel_tol` times the largest.
pub fn is_positive_definite(m: &Mat, rel_tol: f64) -> bool {
    if m.nrows() == 0 {
        return true;
    }
    let (lo, hi) = eig_range(m);
    hi > 0.0 && lo > rel_tol * hi
}

/// Positive semidefinite with eigenvalues no lower than `-abs_tol`.
pub fn is_positive_semidefinite(m: &Mat, abs_tol: f64) -> bool {
    if m.nrows() == 0 {
        return true;
    }
    let (lo, hi) = eig_range(m);
    lo >= -abs_tol * hi.abs().max(1.0)
}

/// Symmetric PSD square root with eigenvalues clipped at `clip`.
pub fn psd_sqrt(m: &Mat, clip: f64) -> Mat {
    let eig = SymmetricEigen::new(symmetrize(m));
    let d = eig.eigenvalues.map(|l| if l < clip { 0.0 } else { l.sqrt() });
    &eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose()
}

/// Inverse of a symmetric PD matrix via its symmetric eigendecomposition,
/// returned exactly symmetric.
pub fn spd_inverse(m: &Mat) -> Result<Mat> {
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Domain("matrix is not positive definite".into()))?;
    Ok(symmetrize(&chol.inverse()))
}

/// Factor `F` with `F Fᵀ = cov`; Cholesky when possible, otherwise the
/// clipped symmetric square root (singular PSD covariances).
pub fn noise_factor(cov: &Mat) -> Mat {
    if cov.iter().all(|v| *v == 0.0) {
        return Mat::zeros(cov.nrows(), cov.ncols());
    }
    match cov.clone().cholesky() {
        Some(ch) => ch.l(),
        None => psd_sqrt(cov, 1e-14),
    }
}

pub fn spectral_radius(m: &Mat) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

pub fn frobenius(m: &Mat) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// `‖a − b‖_F / ‖b‖_F`.
pub fn frobenius_relative(a: &Mat, b: &Mat) -> f64 {
    frobenius(&(a - b)) / frobenius(b)
}

pub fn from_rows(rows: &[Vec<f64>]) -> Result<Mat> {
    let nr = rows.len();
    let nc = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != nc) {
        return Err(Error::Schema("ragged matrix rows".into()));
    }
    Ok(Mat::from_fn(nr, nc, |i, j| rows[i][j]))
}

pub fn to_rows(m: &Mat) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

/// Serde adapter storing a `DMatrix` as nested row-major arrays.
pub mod rows_serde {
    use super::{from_rows, to_rows, Mat};
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &Mat, s: S) -> Result<S::Ok, S::Error> {
        to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Mat, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

/// Serde adapter storing a `DVector` as a flat array.
pub mod vec_serde {
    use super::Vector;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &Vector, s: S) -> Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vector, D::Error> {
        Ok(Vector::from_vec(Vec::<f64>::deserialize(d)?))
    }
}
