use super::{ensure_finite_vector, Matrix, Vector};
use crate::error::{Error, Result};

/// Default central-difference step for coordinate `x`: `1e-5 · max(1, |x|)`.
pub fn default_fd_step(x: f64) -> f64 {
    1e-5 * x.abs().max(1.0)
}

/// Central-difference Jacobian of `g` at `x0`.
///
/// With `step = None` each coordinate uses [`default_fd_step`]; an explicit
/// step is applied unchanged to every coordinate.
pub fn jacobian_fd<G>(g: G, x0: &Vector, step: Option<f64>) -> Result<Matrix>
where
    G: Fn(&Vector) -> Vector,
{
    ensure_finite_vector(x0, "jacobian_fd point")?;
    let g0 = g(x0);
    ensure_finite_vector(&g0, "jacobian_fd evaluation")?;
    let mut jac = Matrix::zeros(g0.len(), x0.len());
    let mut probe = x0.clone();
    for j in 0..x0.len() {
        let delta = step.unwrap_or_else(|| default_fd_step(x0[j]));
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::Validation(format!("finite-difference step {delta}")));
        }
        probe[j] = x0[j] + delta;
        let plus = g(&probe);
        probe[j] = x0[j] - delta;
        let minus = g(&probe);
        probe[j] = x0[j];
        if plus.len() != g0.len() || minus.len() != g0.len() {
            return Err(Error::dimension(
                "jacobian_fd",
                g0.len(),
                format!("{} / {}", plus.len(), minus.len()),
            ));
        }
        ensure_finite_vector(&plus, "jacobian_fd evaluation")?;
        ensure_finite_vector(&minus, "jacobian_fd evaluation")?;
        for i in 0..g0.len() {
            jac[(i, j)] = (plus[i] - minus[i]) / (2.0 * delta);
        }
    }
    Ok(jac)
}
