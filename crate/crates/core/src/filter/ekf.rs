use super::{finish_covariance, kalman_update, NonlinearModel, StateEstimate, Step};
use crate::error::{Error, Result};
use crate::numerics::{ensure_finite_vector, Vector};

/// `x⁻ = f(x̂)`, `P⁻ = F P Fᵀ + Q` with `F` the Jacobian of `f` at `x̂`.
pub fn ekf_predict(state: &StateEstimate, model: &NonlinearModel) -> Result<StateEstimate> {
    if model.q.nrows() != state.dim() {
        return Err(Error::dimension("ekf_predict Q", state.dim(), model.q.nrows()));
    }
    let x = model.state_transition(&state.x);
    if x.len() != state.dim() {
        return Err(Error::dimension("state transition output", state.dim(), x.len()));
    }
    ensure_finite_vector(&x, "state transition output")?;
    let f = model.f_jacobian(&state.x)?;
    let p = finish_covariance(&f * &state.p * f.transpose() + &model.q);
    Ok(StateEstimate { x, p, k: state.k })
}

/// Update of a prior against `z`, linearising `h` at the prior mean.
/// Returns the posterior, the predicted measurement `h(x⁻)` and the innovation.
pub fn ekf_update(
    prior: &StateEstimate,
    model: &NonlinearModel,
    z: &Vector,
) -> Result<(StateEstimate, Vector, Vector)> {
    let predicted = model.measure(&prior.x);
    ensure_finite_vector(&predicted, "measurement function output")?;
    let h = model.h_jacobian(&prior.x)?;
    let (posterior, innovation) = kalman_update(prior, &h, &predicted, &model.r, z)?;
    Ok((posterior, predicted, innovation))
}

/// One Extended Kalman filter cycle.
pub fn ekf_step(state: &StateEstimate, model: &NonlinearModel, z: &Vector) -> Result<Step> {
    let prior = ekf_predict(state, model)?;
    let (posterior, predicted, innovation) = ekf_update(&prior, model, z)?;
    Ok(Step {
        prior,
        posterior,
        predicted,
        innovation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::{kf_step, LinearModel};
    use crate::numerics::Matrix;

    fn scalar(v: f64) -> Matrix {
        Matrix::from_element(1, 1, v)
    }

    #[test]
    fn linear_model_reduces_to_kf() {
        let lin = LinearModel::new(
            Matrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 0.95]),
            Matrix::from_row_slice(1, 2, &[1.0, 0.5]),
            Matrix::identity(2, 2) * 0.01,
            scalar(0.2),
        )
        .unwrap();
        // finite-difference Jacobians on purpose
        let a = lin.a.clone();
        let h = lin.h.clone();
        let nl = NonlinearModel::new(move |x| &a * x, move |x| &h * x, lin.q.clone(), lin.r.clone()).unwrap();
        let mut s_kf = StateEstimate::new(Vector::from_vec(vec![0.3, -0.2]), Matrix::identity(2, 2)).unwrap();
        let mut s_ekf = s_kf.clone();
        for k in 0..25 {
            let z = Vector::from_element(1, (k as f64 * 0.7).sin());
            s_kf = kf_step(&s_kf, &lin, &z).unwrap().posterior;
            s_ekf = ekf_step(&s_ekf, &nl, &z).unwrap().posterior;
            assert!((&s_kf.x - &s_ekf.x).abs().max() < 1e-8);
            assert!((&s_kf.p - &s_ekf.p).abs().max() < 1e-8);
        }
    }

    #[test]
    fn square_measurement_linearisation() {
        let nl = NonlinearModel::new(|x| x.clone(), |x| x.map(|v| v * v), scalar(0.0), scalar(1.0)).unwrap();
        let prior = StateEstimate::new(Vector::from_element(1, 2.0), scalar(1.0)).unwrap();
        let h = nl.h_jacobian(&prior.x).unwrap();
        assert!((h[(0, 0)] - 4.0).abs() < 1e-5);
        let (_, predicted, innovation) = ekf_update(&prior, &nl, &Vector::from_element(1, 5.0)).unwrap();
        assert_eq!(predicted[0], 4.0);
        assert_eq!(innovation[0], 1.0);
    }

    #[test]
    fn constant_state_covariance_never_grows() {
        let nl = NonlinearModel::new(|x| x.clone(), |x| x.clone(), scalar(0.0), scalar(0.5)).unwrap();
        let mut state = StateEstimate::new(Vector::from_element(1, 0.0), scalar(4.0)).unwrap();
        // scalar Riccati oracle: p ← p·r / (p + r)
        let mut p_oracle = 4.0;
        let mut rng = crate::numerics::SeededRng::new(3);
        for _ in 0..50 {
            let z = Vector::from_element(1, 1.0 + rng.normal(0.0, 0.7));
            let next = ekf_step(&state, &nl, &z).unwrap().posterior;
            assert!(next.p.trace() <= state.p.trace() + 1e-15);
            p_oracle = p_oracle * 0.5 / (p_oracle + 0.5);
            assert!((next.p[(0, 0)] - p_oracle).abs() < 1e-9 * p_oracle);
            state = next;
        }
    }
}
