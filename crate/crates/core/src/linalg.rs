//! Small dense helpers shared by the numerical modules.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Symmetric part `(M + M') / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Extreme eigenvalues of a symmetric matrix, `(min, max)`. Empty matrices give `(0, 0)`.
pub fn sym_eig_range(m: &DMatrix<f64>) -> (f64, f64) {
    if m.nrows() == 0 {
        return (0.0, 0.0);
    }
    let eig = SymmetricEigen::new(symmetrize(m)).eigenvalues;
    let lo = eig.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

pub fn sym_eig_max(m: &DMatrix<f64>) -> f64 {
    sym_eig_range(m).1
}

pub fn sym_eig_min(m: &DMatrix<f64>) -> f64 {
    sym_eig_range(m).0
}

/// Largest eigenvalue and a unit eigenvector for it.
pub fn sym_top_eigenpair(m: &DMatrix<f64>) -> (f64, DVector<f64>) {
    let eig = SymmetricEigen::new(symmetrize(m));
    let (idx, val) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, v)| {
            if *v > acc.1 {
                (i, *v)
            } else {
                acc
            }
        });
    (val, eig.eigenvectors.column(idx).into_owned())
}

/// Largest singular value.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    sym_eig_max(&(m.transpose() * m)).max(0.0).sqrt()
}

/// Stack row-major nested rows into a matrix with an explicit column count for the empty case.
pub fn from_rows(rows: &[Vec<f64>], ncols_if_empty: usize) -> Option<DMatrix<f64>> {
    if rows.is_empty() {
        return Some(DMatrix::zeros(0, ncols_if_empty));
    }
    let ncols = rows[0].len();
    if rows.iter().any(|r| r.len() != ncols) {
        return None;
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Some(DMatrix::from_row_slice(rows.len(), ncols, &flat))
}

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigen_range_and_norm() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let (lo, hi) = sym_eig_range(&m);
        assert!((lo - 1.0).abs() < 1e-14 && (hi - 3.0).abs() < 1e-14);
        let (val, v) = sym_top_eigenpair(&m);
        assert!((val - 3.0).abs() < 1e-14);
        assert!(((&m * &v) - &v * 3.0).norm() < 1e-12);
        let e = DMatrix::from_row_slice(2, 1, &[3.0, 4.0]);
        assert!((spectral_norm(&e) - 5.0).abs() < 1e-14);
    }

    #[test]
    fn rows_round_trip() {
        let rows = vec![vec![1.0, 2.0], vec![3.0, 4.0]];
        let m = from_rows(&rows, 0).unwrap();
        assert_eq!(to_rows(&m), rows);
        assert!(from_rows(&[vec![1.0], vec![1.0, 2.0]], 0).is_none());
        assert_eq!(from_rows(&[], 3).unwrap().shape(), (0, 3));
    }
}
