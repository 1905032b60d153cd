//! The four base estimators behind one predict/update stepping contract.
//!
//! Every step function takes the previous posterior and returns a
//! [`Step`]: the prior, the posterior and the innovation that produced it.
//! Covariances are re-symmetrised after every update.

mod ckf;
mod ekf;
mod kf;
mod ukf;

use std::fmt;
use std::sync::Arc;

pub use ckf::{ckf_predict, ckf_step, ckf_update, cubature_points};
pub use ekf::{ekf_predict, ekf_step, ekf_update};
pub use kf::{kalman_update, kf_predict, kf_step, kf_step_with_input};
pub use ukf::{sigma_points, ukf_predict, ukf_step, ukf_update, UkfConfig, UkfWeights};

use crate::error::{Error, Result};
use crate::numerics::{ensure_finite_matrix, ensure_finite_vector, jacobian_fd, Matrix, Vector};

/// Filter mean and covariance after `k` steps.
#[derive(Debug, Clone, PartialEq)]
pub struct StateEstimate {
    pub x: Vector,
    pub p: Matrix,
    pub k: u64,
}

impl StateEstimate {
    pub fn new(x: Vector, p: Matrix) -> Result<Self> {
        if p.nrows() != x.len() || p.ncols() != x.len() || x.is_empty() {
            return Err(Error::dimension(
                "state estimate",
                format!("{n}x{n} covariance", n = x.len()),
                format!("{}x{}", p.nrows(), p.ncols()),
            ));
        }
        ensure_finite_vector(&x, "state mean")?;
        ensure_finite_matrix(&p, "state covariance")?;
        Ok(StateEstimate { x, p, k: 0 })
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }
}

/// Result of one predict + update cycle.
#[derive(Debug, Clone)]
pub struct Step {
    pub prior: StateEstimate,
    pub posterior: StateEstimate,
    /// Predicted measurement `ẑ⁻`.
    pub predicted: Vector,
    /// Innovation `z − ẑ⁻`.
    pub innovation: Vector,
}

/// Linear-Gaussian system `x_k = A x_{k−1} + B v_{k−1} + w_k`, `z_k = H x_k + u_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub a: Matrix,
    pub b: Matrix,
    pub h: Matrix,
    pub q: Matrix,
    pub r: Matrix,
}

impl LinearModel {
    /// Model without a state-noise input (`B = 0`).
    pub fn new(a: Matrix, h: Matrix, q: Matrix, r: Matrix) -> Result<Self> {
        let b = Matrix::zeros(a.nrows(), 1);
        Self::with_input(a, b, h, q, r)
    }

    pub fn with_input(a: Matrix, b: Matrix, h: Matrix, q: Matrix, r: Matrix) -> Result<Self> {
        let n = a.nrows();
        let m = h.nrows();
        let ok = a.ncols() == n
            && b.nrows() == n
            && h.ncols() == n
            && q.shape() == (n, n)
            && r.shape() == (m, m)
            && n > 0
            && m > 0;
        if !ok {
            return Err(Error::dimension(
                "linear model",
                "A n×n, B n×p, H m×n, Q n×n, R m×m",
                format!(
                    "A {:?}, B {:?}, H {:?}, Q {:?}, R {:?}",
                    a.shape(),
                    b.shape(),
                    h.shape(),
                    q.shape(),
                    r.shape()
                ),
            ));
        }
        for (m, name) in [(&a, "A"), (&b, "B"), (&h, "H"), (&q, "Q"), (&r, "R")] {
            ensure_finite_matrix(m, name)?;
        }
        Ok(LinearModel { a, b, h, q, r })
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn measurement_dim(&self) -> usize {
        self.h.nrows()
    }
}

pub type VectorFn = Arc<dyn Fn(&Vector) -> Vector + Send + Sync>;
pub type JacobianFn = Arc<dyn Fn(&Vector) -> Matrix + Send + Sync>;

/// Nonlinear system `x_k = f(x_{k−1}) + w_k`, `z_k = h(x_k) + u_k`.
///
/// Jacobians default to central differences; analytic ones may be supplied
/// per function.
#[derive(Clone)]
pub struct NonlinearModel {
    pub f: VectorFn,
    pub h: VectorFn,
    pub q: Matrix,
    pub r: Matrix,
    pub f_jac: Option<JacobianFn>,
    pub h_jac: Option<JacobianFn>,
}

impl fmt::Debug for NonlinearModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mode = |j: &Option<JacobianFn>| if j.is_some() { "supplied" } else { "finite-difference" };
        f.debug_struct("NonlinearModel")
            .field("q", &self.q)
            .field("r", &self.r)
            .field("f_jacobian", &mode(&self.f_jac))
            .field("h_jacobian", &mode(&self.h_jac))
            .finish()
    }
}

impl NonlinearModel {
    pub fn new<F, H>(f: F, h: H, q: Matrix, r: Matrix) -> Result<Self>
    where
        F: Fn(&Vector) -> Vector + Send + Sync + 'static,
        H: Fn(&Vector) -> Vector + Send + Sync + 'static,
    {
        if q.nrows() != q.ncols() || r.nrows() != r.ncols() || q.nrows() == 0 || r.nrows() == 0 {
            return Err(Error::dimension(
                "nonlinear model",
                "square Q and R",
                format!("Q {:?}, R {:?}", q.shape(), r.shape()),
            ));
        }
        ensure_finite_matrix(&q, "Q")?;
        ensure_finite_matrix(&r, "R")?;
        Ok(NonlinearModel {
            f: Arc::new(f),
            h: Arc::new(h),
            q,
            r,
            f_jac: None,
            h_jac: None,
        })
    }

    /// The nonlinear view of a linear model, with exact Jacobians.
    pub fn from_linear(model: &LinearModel) -> Self {
        let (a, h) = (model.a.clone(), model.h.clone());
        let (ja, jh) = (a.clone(), h.clone());
        NonlinearModel {
            f: Arc::new(move |x: &Vector| &a * x),
            h: Arc::new(move |x: &Vector| &h * x),
            q: model.q.clone(),
            r: model.r.clone(),
            f_jac: Some(Arc::new(move |_| ja.clone())),
            h_jac: Some(Arc::new(move |_| jh.clone())),
        }
    }

    pub fn with_jacobians<FJ, HJ>(mut self, f_jac: FJ, h_jac: HJ) -> Self
    where
        FJ: Fn(&Vector) -> Matrix + Send + Sync + 'static,
        HJ: Fn(&Vector) -> Matrix + Send + Sync + 'static,
    {
        self.f_jac = Some(Arc::new(f_jac));
        self.h_jac = Some(Arc::new(h_jac));
        self
    }

    /// Same dynamics with a different measurement function and noise; the
    /// measurement Jacobian reverts to finite differences.
    pub fn with_measurement(&self, h: VectorFn, r: Matrix) -> Self {
        NonlinearModel {
            f: self.f.clone(),
            h,
            q: self.q.clone(),
            r,
            f_jac: self.f_jac.clone(),
            h_jac: None,
        }
    }

    pub fn state_transition(&self, x: &Vector) -> Vector {
        (self.f)(x)
    }

    pub fn measure(&self, x: &Vector) -> Vector {
        (self.h)(x)
    }

    pub fn f_jacobian(&self, x: &Vector) -> Result<Matrix> {
        match &self.f_jac {
            Some(j) => Ok(j(x)),
            None => jacobian_fd(|v| (self.f)(v), x, None),
        }
    }

    pub fn h_jacobian(&self, x: &Vector) -> Result<Matrix> {
        match &self.h_jac {
            Some(j) => Ok(j(x)),
            None => jacobian_fd(|v| (self.h)(v), x, None),
        }
    }

    pub fn measurement_dim(&self) -> usize {
        self.r.nrows()
    }
}

/// Re-symmetrises a covariance in place.
pub(crate) fn finish_covariance(mut p: Matrix) -> Matrix {
    crate::numerics::symmetrize(&mut p);
    p
}

pub(crate) fn check_measurement(z: &Vector, expected: usize) -> Result<()> {
    if z.len() != expected {
        return Err(Error::dimension("measurement", expected, z.len()));
    }
    ensure_finite_vector(z, "measurement")
}
