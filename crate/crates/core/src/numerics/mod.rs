//! Dense linear-algebra and utility kernels shared by every estimator.
//!
//! Matrices and vectors are plain `nalgebra` dynamic types. The pieces that
//! the estimators depend on for reproducibility (the symmetric eigensolver,
//! the damped least-squares solve, finite-difference Jacobians and the seeded
//! random stream) live here so that their numerical behaviour is pinned in
//! one place.

mod eigen;
mod jacobian;
mod lstsq;
mod rng;

pub use eigen::{eig_sym, SymEigen};
pub use jacobian::{default_fd_step, jacobian_fd};
pub use lstsq::{least_squares, least_squares_vec, LSTSQ_DAMPING};
pub use rng::{derive_seed, SeededRng};

use crate::error::{Error, Result};

pub type Matrix = nalgebra::DMatrix<f64>;
pub type Vector = nalgebra::DVector<f64>;

/// Diagonal jitter added once when a Cholesky factorisation fails.
pub const CHOLESKY_JITTER: f64 = 1e-9;

pub fn ensure_finite_matrix(m: &Matrix, context: &'static str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(context))
    }
}

pub fn ensure_finite_vector(v: &Vector, context: &'static str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(context))
    }
}

pub fn ensure_square(m: &Matrix, context: &'static str) -> Result<()> {
    if m.nrows() == 0 || m.nrows() != m.ncols() {
        return Err(Error::dimension(
            context,
            "non-empty square matrix",
            format!("{}x{}", m.nrows(), m.ncols()),
        ));
    }
    Ok(())
}

/// Replaces `m` with `(m + mᵀ) / 2`.
pub fn symmetrize(m: &mut Matrix) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Largest absolute difference between `m` and its transpose.
pub fn asymmetry(m: &Matrix) -> f64 {
    let n = m.nrows().min(m.ncols());
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &Matrix) -> Result<f64> {
    let eig = eig_sym(m)?;
    Ok(eig.values[eig.values.len() - 1])
}

/// Lower Cholesky factor of a symmetric matrix.
///
/// If the first attempt fails the diagonal is bumped by [`CHOLESKY_JITTER`]
/// and the factorisation retried once.
pub fn cholesky_lower(m: &Matrix, context: &'static str) -> Result<Matrix> {
    ensure_square(m, context)?;
    ensure_finite_matrix(m, context)?;
    if let Some(c) = nalgebra::Cholesky::new(m.clone()) {
        return Ok(c.l());
    }
    let n = m.nrows();
    let jittered = m + Matrix::identity(n, n) * CHOLESKY_JITTER;
    nalgebra::Cholesky::new(jittered)
        .map(|c| c.l())
        .ok_or(Error::NotPositiveDefinite(context))
}

/// Inverse of a symmetric positive definite matrix via Cholesky.
pub fn spd_inverse(m: &Matrix, context: &'static str) -> Result<Matrix> {
    ensure_square(m, context)?;
    ensure_finite_matrix(m, context)?;
    nalgebra::Cholesky::new(m.clone())
        .map(|c| c.inverse())
        .ok_or(Error::NotPositiveDefinite(context))
}

/// Numerically stable softmax (max-shifted).
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::dimension("softmax", "at least one logit", 0));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("softmax logits"));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}
