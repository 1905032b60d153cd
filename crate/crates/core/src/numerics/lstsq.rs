use super::{ensure_finite_matrix, Matrix, Vector};
use crate::error::{Error, Result};

/// Tikhonov damping added to the normal equations.
pub const LSTSQ_DAMPING: f64 = 1e-10;

/// Minimum-norm least-squares solve of `target ≈ h · design` for `h`.
///
/// `design` holds one sample per column (`n × N`), `target` the matching
/// outputs (`m × N`); the result is `m × n`. The damped normal equations are
/// formed on whichever Gram matrix is smaller, so rank-deficient designs
/// converge to the pseudo-inverse solution as the damping vanishes.
pub fn least_squares(design: &Matrix, target: &Matrix) -> Result<Matrix> {
    if design.ncols() != target.ncols() || design.nrows() == 0 || design.ncols() == 0 {
        return Err(Error::dimension(
            "least_squares",
            format!("design n x {} and target m x {}", design.ncols(), design.ncols()),
            format!(
                "design {}x{}, target {}x{}",
                design.nrows(),
                design.ncols(),
                target.nrows(),
                target.ncols()
            ),
        ));
    }
    ensure_finite_matrix(design, "least_squares design")?;
    ensure_finite_matrix(target, "least_squares target")?;
    if design.iter().all(|&v| v == 0.0) {
        return Err(Error::Singular("least_squares design (zero norm)"));
    }

    let (n, samples) = design.shape();
    if samples <= n {
        // h = Z (XᵀX + δI)⁻¹ Xᵀ
        let gram = design.transpose() * design + Matrix::identity(samples, samples) * LSTSQ_DAMPING;
        let chol = nalgebra::Cholesky::new(gram).ok_or(Error::Singular("least_squares gram"))?;
        let coeffs = chol.solve(&target.transpose()); // N × m
        Ok((design * coeffs).transpose())
    } else {
        // h = Z Xᵀ (XXᵀ + δI)⁻¹
        let gram = design * design.transpose() + Matrix::identity(n, n) * LSTSQ_DAMPING;
        let chol = nalgebra::Cholesky::new(gram).ok_or(Error::Singular("least_squares gram"))?;
        let rhs = design * target.transpose(); // n × m
        Ok(chol.solve(&rhs).transpose())
    }
}

/// Single-sample form: solve `z = h · x`.
pub fn least_squares_vec(x: &Vector, z: &Vector) -> Result<Matrix> {
    let design = Matrix::from_column_slice(x.len(), 1, x.as_slice());
    let target = Matrix::from_column_slice(z.len(), 1, z.as_slice());
    least_squares(&design, &target)
}
