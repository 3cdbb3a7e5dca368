//! Small dense linear-algebra helpers for symmetric systems.

use nalgebra::{DMatrix, DVector};

/// Solves A x = b for symmetric A, adding a growing ridge to the diagonal until
/// the Cholesky factorization succeeds. Returns the solution and the ridge used.
pub fn solve_spd_with_ridge(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<(DVector<f64>, f64)> {
    let scale = a
        .diagonal()
        .iter()
        .fold(0.0f64, |m, &d| m.max(d.abs()))
        .max(1.0);
    let mut ridge = 0.0;
    for _ in 0..20 {
        let mut m = a.clone();
        if ridge > 0.0 {
            for i in 0..m.nrows() {
                m[(i, i)] += ridge;
            }
        }
        if let Some(ch) = m.cholesky() {
            let x = ch.solve(b);
            if x.iter().all(|v| v.is_finite()) {
                return Some((x, ridge));
            }
        }
        ridge = if ridge == 0.0 {
            1e-10 * scale
        } else {
            ridge * 10.0
        };
    }
    None
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Inverse of a symmetric matrix through its eigendecomposition, with
/// eigenvalues below `rel_tol · max|λ|` treated as zero (pseudo-inverse).
/// The flag reports whether any eigenvalue was dropped.
pub fn sym_pinv(m: &DMatrix<f64>, rel_tol: f64) -> (DMatrix<f64>, bool) {
    let eig = m.clone().symmetric_eigen();
    let max = eig.eigenvalues.amax();
    let mut dropped = false;
    let inv = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|&l| {
            if l > rel_tol * max {
                1.0 / l
            } else {
                dropped = true;
                0.0
            }
        }),
    );
    let q = &eig.eigenvectors;
    let mut out = q * DMatrix::from_diagonal(&inv) * q.transpose();
    symmetrize(&mut out);
    (out, dropped)
}

/// Inverse of a symmetric positive definite matrix, falling back to the
/// pseudo-inverse. The flag is true when the fallback was needed.
pub fn spd_inverse(m: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    if let Some(ch) = m.clone().cholesky() {
        let mut inv = ch.inverse();
        if inv.iter().all(|v| v.is_finite()) {
            symmetrize(&mut inv);
            return (inv, false);
        }
    }
    let (inv, _) = sym_pinv(m, 1e-13);
    (inv, true)
}

/// Nearest positive semidefinite matrix in Frobenius norm (negative
/// eigenvalues clipped to zero). The flag reports whether clipping happened.
pub fn nearest_psd(m: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let mut s = m.clone();
    symmetrize(&mut s);
    let eig = s.clone().symmetric_eigen();
    let max = eig.eigenvalues.amax().max(f64::MIN_POSITIVE);
    if eig.eigenvalues.iter().all(|&l| l >= -1e-12 * max) {
        return (s, false);
    }
    let clipped = eig.eigenvalues.map(|l| l.max(0.0));
    let q = &eig.eigenvectors;
    let mut out = q * DMatrix::from_diagonal(&clipped) * q.transpose();
    symmetrize(&mut out);
    (out, true)
}

/// Factor L with L Lᵀ = m for symmetric PSD m, from the eigendecomposition
/// (works for singular m).
pub fn psd_factor(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = m.clone().symmetric_eigen();
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots)
}
