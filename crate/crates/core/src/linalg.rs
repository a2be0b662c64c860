//! Small dense linear-algebra helpers shared by the fitting and control code.

#[allow(unused_imports)]
use num_traits::Float;
use nalgebra::{DMatrix, DVector, SMatrix};

pub fn to_dyn<const R: usize, const C: usize>(m: &SMatrix<f64, R, C>) -> DMatrix<f64> {
    DMatrix::from_column_slice(R, C, m.as_slice())
}

pub fn from_dyn<const R: usize, const C: usize>(m: &DMatrix<f64>) -> SMatrix<f64, R, C> {
    assert_eq!(m.shape(), (R, C));
    SMatrix::from_column_slice(m.as_slice())
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> DVector<f64> {
    let mut ev = symmetrize(m).symmetric_eigenvalues();
    ev.as_mut_slice().sort_by(|a, b| a.total_cmp(b));
    ev
}

/// Clips the eigenvalues of a symmetric matrix from below.
pub fn floor_eigenvalues(m: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let eig = symmetrize(m).symmetric_eigen();
    if eig.eigenvalues.iter().all(|&v| v >= floor) {
        return symmetrize(m);
    }
    let clipped = eig.eigenvalues.map(|v| if v < floor { floor } else { v });
    let rebuilt = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    symmetrize(&rebuilt)
}

/// Ratio of the largest to the smallest eigenvalue of a symmetric matrix.
///
/// Returns `f64::INFINITY` when the smallest eigenvalue is not positive.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let ev = sym_eigenvalues(m);
    let lo = ev[0];
    let hi = ev[ev.len() - 1];
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Symmetric square root of a positive semidefinite matrix.
pub fn sqrt_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = symmetrize(m).symmetric_eigen();
    let roots = eig.eigenvalues.map(|v| if v > 0.0 { v.sqrt() } else { 0.0 });
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m)[0]
}
