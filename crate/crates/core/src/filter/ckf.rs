use super::ukf::{sigma_update, symmetric_set, weighted_moments};
use super::{finish_covariance, NonlinearModel, StateEstimate, Step};
use crate::error::{Error, Result};
use crate::numerics::{cholesky_lower, ensure_finite_vector, Matrix, Vector};

/// Spherical-radial cubature points `x̂ ± √n · Lᵢ`, each of weight `1/(2n)`.
pub fn cubature_points(state: &StateEstimate) -> Result<Vec<Vector>> {
    let n = state.dim();
    let l = cholesky_lower(&state.p, "CKF covariance")? * (n as f64).sqrt();
    Ok(symmetric_set(&state.x, &l, false))
}

fn equal_weights(n: usize) -> Vec<f64> {
    vec![1.0 / (2 * n) as f64; 2 * n]
}

pub fn ckf_predict(state: &StateEstimate, model: &NonlinearModel) -> Result<StateEstimate> {
    let n = state.dim();
    if model.q.nrows() != n {
        return Err(Error::dimension("ckf_predict Q", n, model.q.nrows()));
    }
    let points = cubature_points(state)?;
    let mapped: Vec<Vector> = points.iter().map(|p| model.state_transition(p)).collect();
    for p in &mapped {
        if p.len() != n {
            return Err(Error::dimension("state transition output", n, p.len()));
        }
        ensure_finite_vector(p, "state transition output")?;
    }
    let w = equal_weights(n);
    let (x, cov) = weighted_moments(&mapped, &w, &w);
    Ok(StateEstimate {
        x,
        p: finish_covariance(cov + &model.q),
        k: state.k,
    })
}

/// Cubature update; `ẑ⁻ = (1/2n) Σ h(xᵢ)`.
pub fn ckf_update(
    prior: &StateEstimate,
    h: &dyn Fn(&Vector) -> Vector,
    r: &Matrix,
    z: &Vector,
) -> Result<(StateEstimate, Vector, Vector)> {
    let points = cubature_points(prior)?;
    let w = equal_weights(prior.dim());
    sigma_update(prior, &points, &w, &w, h, r, z)
}

/// One Cubature Kalman filter cycle.
pub fn ckf_step(state: &StateEstimate, model: &NonlinearModel, z: &Vector) -> Result<Step> {
    let prior = ckf_predict(state, model)?;
    let (posterior, predicted, innovation) = ckf_update(&prior, &|x| model.measure(x), &model.r, z)?;
    Ok(Step {
        prior,
        posterior,
        predicted,
        innovation,
    })
}
