use super::{check_measurement, finish_covariance, LinearModel, StateEstimate, Step};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, Vector};

/// Prior of the linear model: `x⁻ = A x + B v`, `P⁻ = A P Aᵀ + Q`.
pub fn kf_predict(state: &StateEstimate, model: &LinearModel, input: Option<&Vector>) -> Result<StateEstimate> {
    if state.dim() != model.state_dim() {
        return Err(Error::dimension("kf_predict state", model.state_dim(), state.dim()));
    }
    let mut x = &model.a * &state.x;
    if let Some(v) = input {
        if v.len() != model.b.ncols() {
            return Err(Error::dimension("kf_predict input", model.b.ncols(), v.len()));
        }
        x += &model.b * v;
    }
    let p = finish_covariance(&model.a * &state.p * model.a.transpose() + &model.q);
    Ok(StateEstimate { x, p, k: state.k })
}

/// Measurement update shared by every linearised filter.
///
/// Given the prior, the observation matrix `H`, the predicted measurement and
/// `R`, applies `K = P⁻Hᵀ(HP⁻Hᵀ + R)⁻¹`, `x = x⁻ + K(z − ẑ⁻)`,
/// `P = (I − KH)P⁻`.
pub fn kalman_update(
    prior: &StateEstimate,
    h: &Matrix,
    predicted: &Vector,
    r: &Matrix,
    z: &Vector,
) -> Result<(StateEstimate, Vector)> {
    let n = prior.dim();
    let m = h.nrows();
    if h.ncols() != n || r.shape() != (m, m) || predicted.len() != m {
        return Err(Error::dimension(
            "kalman_update",
            format!("H {m}x{n}, R {m}x{m}, z {m}"),
            format!("H {:?}, R {:?}, z {}", h.shape(), r.shape(), predicted.len()),
        ));
    }
    check_measurement(z, m)?;
    let pht = &prior.p * h.transpose();
    let mut s = h * &pht + r;
    crate::numerics::symmetrize(&mut s);
    let chol = nalgebra::Cholesky::new(s)
        .ok_or(Error::NotPositiveDefinite("innovation covariance HP⁻Hᵀ+R"))?;
    // K = P⁻Hᵀ S⁻¹  ⇔  S Kᵀ = H P⁻
    let gain = chol.solve(&pht.transpose()).transpose();
    let innovation = z - predicted;
    let x = &prior.x + &gain * &innovation;
    let p = (Matrix::identity(n, n) - &gain * h) * &prior.p;
    let p = finish_covariance(p);
    if x.iter().chain(p.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("kalman_update posterior"));
    }
    Ok((StateEstimate { x, p, k: prior.k + 1 }, innovation))
}

/// One linear Kalman predict + update cycle.
pub fn kf_step(state: &StateEstimate, model: &LinearModel, z: &Vector) -> Result<Step> {
    kf_step_with_input(state, model, z, None)
}

/// [`kf_step`] with an explicit state-noise input `v` (defaults to zero).
pub fn kf_step_with_input(
    state: &StateEstimate,
    model: &LinearModel,
    z: &Vector,
    input: Option<&Vector>,
) -> Result<Step> {
    let prior = kf_predict(state, model, input)?;
    let predicted = &model.h * &prior.x;
    let (posterior, innovation) = kalman_update(&prior, &model.h, &predicted, &model.r, z)?;
    Ok(Step {
        prior,
        posterior,
        predicted,
        innovation,
    })
}
