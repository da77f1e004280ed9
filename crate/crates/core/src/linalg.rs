//! Small dense linear-algebra helpers shared across the crate.
//!
//! Everything here operates on `nalgebra` dynamic matrices. Matrices in this
//! project stay below ~70x70, so the symmetric tridiagonalization + QR
//! eigensolver behind [`nalgebra::SymmetricEigen`] is used throughout.

use nalgebra::{DMatrix, DVector};

/// Force exact symmetry by averaging a matrix with its transpose.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut s = m.clone();
    for i in 0..m.nrows() {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            s[(i, j)] = v;
            s[(j, i)] = v;
        }
    }
    s
}

/// Eigenvalues of a symmetric matrix, sorted ascending.
///
/// The input is symmetrized first so that tiny asymmetries from quadrature
/// or integration do not leak complex parts into the decomposition.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> DVector<f64> {
    let mut ev: Vec<f64> = symmetrize(m)
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .collect();
    ev.sort_by(|a, b| a.partial_cmp(b).expect("non-finite eigenvalue"));
    DVector::from_vec(ev)
}

/// Smallest and largest eigenvalue of a symmetric matrix.
pub fn sym_eig_extrema(m: &DMatrix<f64>) -> (f64, f64) {
    let ev = sym_eigenvalues(m);
    (ev[0], ev[ev.len() - 1])
}

/// Largest eigenvalue together with a unit eigenvector attaining it.
pub fn sym_eig_max_pair(m: &DMatrix<f64>) -> (f64, DVector<f64>) {
    let eig = symmetrize(m).symmetric_eigen();
    let mut idx = 0;
    for (i, v) in eig.eigenvalues.iter().enumerate() {
        if *v > eig.eigenvalues[idx] {
            idx = i;
        }
    }
    (
        eig.eigenvalues[idx],
        eig.eigenvectors.column(idx).into_owned(),
    )
}

/// Spectral norm ||A||_2 of an arbitrary rectangular matrix.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    // ||A||^2 = lambda_max(A^T A); use the smaller Gram side.
    let gram = if m.nrows() >= m.ncols() {
        m.transpose() * m
    } else {
        m * m.transpose()
    };
    let (_, max) = sym_eig_extrema(&gram);
    max.max(0.0).sqrt()
}

/// Frobenius-relative distance ||A - B||_F / max(1, ||A||_F).
pub fn rel_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / a.norm().max(1.0)
}

/// Kronecker product A (x) I_k.
pub fn kron_identity_right(a: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    a.kronecker(&DMatrix::<f64>::identity(k, k))
}
