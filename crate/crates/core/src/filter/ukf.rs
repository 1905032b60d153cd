use super::{check_measurement, finish_covariance, NonlinearModel, StateEstimate, Step};
use crate::error::{Error, Result};
use crate::numerics::{cholesky_lower, ensure_finite_vector, Matrix, Vector};

/// Scaled unscented transform parameters.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UkfConfig {
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
}

impl Default for UkfConfig {
    fn default() -> Self {
        UkfConfig {
            alpha: 0.5,
            beta: 2.0,
            kappa: 0.0,
        }
    }
}

impl UkfConfig {
    /// `λ = α²(κ + n) − n`
    pub fn lambda(&self, n: usize) -> f64 {
        let n = n as f64;
        self.alpha * self.alpha * (self.kappa + n) - n
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::Validation(format!("UKF alpha {} not in (0, 1]", self.alpha)));
        }
        if n == 0 {
            return Err(Error::Validation("UKF state dimension must be at least 1".into()));
        }
        let spread = n as f64 + self.lambda(n);
        if !self.beta.is_finite() || !spread.is_finite() || spread <= 0.0 {
            return Err(Error::Validation(format!("UKF n + λ = {spread} must be positive")));
        }
        Ok(())
    }

    pub fn weights(&self, n: usize) -> Result<UkfWeights> {
        self.validate(n)?;
        let lambda = self.lambda(n);
        let spread = n as f64 + lambda;
        let rest = 1.0 / (2.0 * spread);
        let mut mean = vec![rest; 2 * n + 1];
        let mut cov = mean.clone();
        mean[0] = lambda / spread;
        cov[0] = lambda / spread + 1.0 - self.alpha * self.alpha + self.beta;
        Ok(UkfWeights { mean, cov, lambda })
    }
}

/// Mean and covariance weights of the `2n + 1` sigma points.
#[derive(Debug, Clone, PartialEq)]
pub struct UkfWeights {
    pub mean: Vec<f64>,
    pub cov: Vec<f64>,
    pub lambda: f64,
}

/// `{x̂, x̂ + Lᵢ, x̂ − Lᵢ}` with `L` the lower Cholesky factor of `(n + λ)P`.
pub fn sigma_points(state: &StateEstimate, cfg: &UkfConfig) -> Result<Vec<Vector>> {
    let n = state.dim();
    cfg.validate(n)?;
    let scaled = &state.p * (n as f64 + cfg.lambda(n));
    let l = cholesky_lower(&scaled, "UKF sigma covariance")?;
    Ok(symmetric_set(&state.x, &l, true))
}

/// Centre (optional) followed by `x ± columns of root`.
pub(crate) fn symmetric_set(x: &Vector, root: &Matrix, with_centre: bool) -> Vec<Vector> {
    let n = x.len();
    let mut pts = Vec::with_capacity(2 * n + 1);
    if with_centre {
        pts.push(x.clone());
    }
    for i in 0..n {
        pts.push(x + root.column(i));
    }
    for i in 0..n {
        pts.push(x - root.column(i));
    }
    pts
}

/// Weighted mean and covariance of mapped points.
pub(crate) fn weighted_moments(points: &[Vector], wm: &[f64], wc: &[f64]) -> (Vector, Matrix) {
    let dim = points[0].len();
    let mut mean = Vector::zeros(dim);
    for (p, w) in points.iter().zip(wm) {
        mean.axpy(*w, p, 1.0);
    }
    let mut cov = Matrix::zeros(dim, dim);
    for (p, w) in points.iter().zip(wc) {
        let d = p - &mean;
        cov.ger(*w, &d, &d, 1.0);
    }
    (mean, cov)
}

/// Sigma-point measurement update shared by the UKF and CKF.
pub(crate) fn sigma_update(
    prior: &StateEstimate,
    points: &[Vector],
    wm: &[f64],
    wc: &[f64],
    h: &dyn Fn(&Vector) -> Vector,
    r: &Matrix,
    z: &Vector,
) -> Result<(StateEstimate, Vector, Vector)> {
    let mapped: Vec<Vector> = points.iter().map(h).collect();
    let m = mapped[0].len();
    if r.shape() != (m, m) {
        return Err(Error::dimension("measurement noise R", format!("{m}x{m}"), format!("{:?}", r.shape())));
    }
    for z_i in &mapped {
        ensure_finite_vector(z_i, "measurement function output")?;
    }
    check_measurement(z, m)?;
    let (predicted, pzz) = weighted_moments(&mapped, wm, wc);
    let mut s = pzz + r;
    crate::numerics::symmetrize(&mut s);
    let mut pxz = Matrix::zeros(prior.dim(), m);
    for ((p, z_i), w) in points.iter().zip(&mapped).zip(wc) {
        pxz.ger(*w, &(p - &prior.x), &(z_i - &predicted), 1.0);
    }
    let chol = nalgebra::Cholesky::new(s.clone())
        .ok_or(Error::NotPositiveDefinite("innovation covariance Pzz+R"))?;
    let gain = chol.solve(&pxz.transpose()).transpose();
    let innovation = z - &predicted;
    let x = &prior.x + &gain * &innovation;
    let p = finish_covariance(&prior.p - &gain * s * gain.transpose());
    if x.iter().chain(p.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("sigma-point posterior"));
    }
    Ok((StateEstimate { x, p, k: prior.k + 1 }, predicted, innovation))
}

/// Propagates sigma points of the posterior through `f`.
pub fn ukf_predict(state: &StateEstimate, model: &NonlinearModel, cfg: &UkfConfig) -> Result<StateEstimate> {
    let n = state.dim();
    if model.q.nrows() != n {
        return Err(Error::dimension("ukf_predict Q", n, model.q.nrows()));
    }
    let w = cfg.weights(n)?;
    let points = sigma_points(state, cfg)?;
    let mapped: Vec<Vector> = points.iter().map(|p| model.state_transition(p)).collect();
    for p in &mapped {
        if p.len() != n {
            return Err(Error::dimension("state transition output", n, p.len()));
        }
        ensure_finite_vector(p, "state transition output")?;
    }
    let (x, cov) = weighted_moments(&mapped, &w.mean, &w.cov);
    Ok(StateEstimate {
        x,
        p: finish_covariance(cov + &model.q),
        k: state.k,
    })
}

/// Unscented update with an arbitrary measurement map `h` and noise `r`.
pub fn ukf_update(
    prior: &StateEstimate,
    h: &dyn Fn(&Vector) -> Vector,
    r: &Matrix,
    cfg: &UkfConfig,
    z: &Vector,
) -> Result<(StateEstimate, Vector, Vector)> {
    let w = cfg.weights(prior.dim())?;
    let points = sigma_points(prior, cfg)?;
    sigma_update(prior, &points, &w.mean, &w.cov, h, r, z)
}

/// One Unscented Kalman filter cycle.
pub fn ukf_step(state: &StateEstimate, model: &NonlinearModel, cfg: &UkfConfig, z: &Vector) -> Result<Step> {
    let prior = ukf_predict(state, model, cfg)?;
    let (posterior, predicted, innovation) = ukf_update(&prior, &|x| model.measure(x), &model.r, cfg, z)?;
    Ok(Step {
        prior,
        posterior,
        predicted,
        innovation,
    })
}
