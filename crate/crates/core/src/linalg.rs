//! Small dense helpers on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, Dyn, SymmetricEigen};

use crate::error::GpError;

/// Diagonal jitter ladder tried, in order, before a factorization is
/// declared failed.
pub const JITTER_LADDER: [f64; 6] = [0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

/// Cholesky factor of a symmetric matrix, adding escalating diagonal jitter
/// when the plain factorization fails. Returns the factor and the jitter used.
pub fn cholesky_jittered(m: &DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64), GpError> {
    let n = m.nrows();
    if m.iter().any(|x| !x.is_finite()) {
        return Err(GpError::NonFinite);
    }
    for &jitter in JITTER_LADDER.iter() {
        let mut a = m.clone();
        if jitter > 0.0 {
            for i in 0..n {
                a[(i, i)] += jitter;
            }
        }
        if let Some(c) = a.cholesky() {
            return Ok((c, jitter));
        }
    }
    Err(GpError::Factorization {
        size: n,
        jitter: JITTER_LADDER[JITTER_LADDER.len() - 1],
    })
}

pub fn log_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    chol.l_dirty()
        .diagonal()
        .iter()
        .map(|d| 2.0 * libm::log(*d))
        .sum()
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Symmetric square root `R` with `R Rᵀ = m` for a PSD `m`; small negative
/// eigenvalues from round-off are clamped to zero.
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    if is_diagonal(m) {
        return DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                libm::sqrt(m[(i, i)].max(0.0))
            } else {
                0.0
            }
        });
    }
    let mut sym = m.clone();
    symmetrize(&mut sym);
    let eig = SymmetricEigen::new(sym);
    let roots = eig.eigenvalues.map(|l| libm::sqrt(l.max(0.0)));
    let v = &eig.eigenvectors;
    let scaled = DMatrix::from_fn(n, n, |i, j| v[(i, j)] * roots[j]);
    &scaled * v.transpose()
}

fn is_diagonal(m: &DMatrix<f64>) -> bool {
    let n = m.nrows();
    (0..n).all(|i| (0..n).all(|j| i == j || m[(i, j)] == 0.0))
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let mut sym = m.clone();
    symmetrize(&mut sym);
    SymmetricEigen::new(sym)
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

pub fn is_symmetric_psd(m: &DMatrix<f64>, tol: f64) -> bool {
    if m.nrows() != m.ncols() {
        return false;
    }
    let n = m.nrows();
    let scale = m.iter().fold(1.0f64, |a, x| a.max(x.abs()));
    for i in 0..n {
        for j in (i + 1)..n {
            if (m[(i, j)] - m[(j, i)]).abs() > tol * scale {
                return false;
            }
        }
    }
    n == 0 || min_eigenvalue(m) >= -tol * scale
}
