use super::{pca_project, PcaModel};
use crate::error::{Error, Result};
use crate::filter::{ekf_predict, kalman_update, ukf_predict, ukf_update, NonlinearModel, StateEstimate, Step, UkfConfig};
use crate::numerics::{ensure_finite_vector, jacobian_fd, least_squares_vec, Matrix, Vector};

/// Below this norm a previous state cannot anchor the least-squares solve.
const DEGENERATE_STATE_NORM: f64 = 1e-9;

/// Per-filter memory of the previous step used by the PCA updates.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PcaHistory {
    /// Posterior mean of the previous step.
    pub prev_x: Option<Vector>,
    /// Raw measurement of the previous step, reprojected with the current model.
    pub prev_z: Option<Vector>,
    /// Observation matrix used in the previous least-squares step.
    pub prev_h: Option<Matrix>,
    pub steps: u64,
}

impl PcaHistory {
    fn record(&mut self, posterior: &StateEstimate, z: &Vector) {
        self.prev_x = Some(posterior.x.clone());
        self.prev_z = Some(z.clone());
        self.steps += 1;
    }
}

fn composed_jacobian(model: &NonlinearModel, pca: &PcaModel, at: &Vector) -> Result<Matrix> {
    jacobian_fd(|x| pca.project_unchecked(&model.measure(x)), at, None)
}

fn check_widths(model: &NonlinearModel, pca: &PcaModel, z: &Vector) -> Result<()> {
    if model.measurement_dim() != pca.input_dim() {
        return Err(Error::dimension("PCA input vs R", model.measurement_dim(), pca.input_dim()));
    }
    if z.len() != pca.input_dim() {
        return Err(Error::dimension("PCA filter measurement", pca.input_dim(), z.len()));
    }
    Ok(())
}

/// Least-squares KF-PCA step.
///
/// Measurements are rotated without centring, `z′ = Vᵀz`, so that a linear
/// map can reproduce them. The observation matrix `h` solves
/// `z′ₖ₋₁ = h x̂ₖ₋₁` in the minimum-norm sense and gives `ẑ⁻ = h x̂⁻`. Without usable history (first step, a
/// near-zero `x̂ₖ₋₁`, or a component count change) the previous `h` is
/// reused, else the composed Jacobian at the prior.
pub fn kfpca_step_ls(
    history: &mut PcaHistory,
    state: &StateEstimate,
    model: &NonlinearModel,
    pca: &PcaModel,
    z: &Vector,
) -> Result<Step> {
    check_widths(model, pca, z)?;
    let prior = ekf_predict(state, model)?;
    let z_proj = pca.rotate_unchecked(z);
    let r_proj = pca.project_noise(&model.r)?;
    let m = pca.n_components();
    let solved = match (&history.prev_x, &history.prev_z) {
        (Some(x), Some(zp)) if x.norm() > DEGENERATE_STATE_NORM => Some(least_squares_vec(x, &pca.rotate_unchecked(zp))?),
        _ => None,
    };
    let reuse = history.prev_h.clone().filter(|h| h.shape() == (m, prior.dim()));
    let h = match solved.or(reuse) {
        Some(h) => h,
        None => composed_jacobian(model, pca, &prior.x)?,
    };
    let predicted = &h * &prior.x;
    let (posterior, innovation) = kalman_update(&prior, &h, &predicted, &r_proj, &z_proj)?;
    history.prev_h = Some(h);
    history.record(&posterior, z);
    Ok(Step {
        prior,
        posterior,
        predicted,
        innovation,
    })
}

/// Linearisation KF-PCA step.
///
/// `H` is the Jacobian of `pca_project ∘ h` at the previous posterior mean
/// (the current prior for the first two steps); the predicted measurement
/// is the first-order expansion about that point.
pub fn kfpca_step_lin(
    history: &mut PcaHistory,
    state: &StateEstimate,
    model: &NonlinearModel,
    pca: &PcaModel,
    z: &Vector,
) -> Result<Step> {
    check_widths(model, pca, z)?;
    let prior = ekf_predict(state, model)?;
    let z_proj = pca.project_unchecked(z);
    let r_proj = pca.project_noise(&model.r)?;
    let at = match &history.prev_x {
        Some(x) if history.steps >= 2 => x.clone(),
        _ => prior.x.clone(),
    };
    let h = composed_jacobian(model, pca, &at)?;
    let g_at = pca_project(pca, &model.measure(&at))?;
    ensure_finite_vector(&g_at, "measurement function output")?;
    let predicted = g_at + &h * (&prior.x - &at);
    let (posterior, innovation) = kalman_update(&prior, &h, &predicted, &r_proj, &z_proj)?;
    history.record(&posterior, z);
    Ok(Step {
        prior,
        posterior,
        predicted,
        innovation,
    })
}

/// Unscented step through the composed map `pca_project ∘ h`.
pub fn ukfpca_step(
    state: &StateEstimate,
    model: &NonlinearModel,
    pca: &PcaModel,
    cfg: &UkfConfig,
    z: &Vector,
) -> Result<Step> {
    check_widths(model, pca, z)?;
    let prior = ukf_predict(state, model, cfg)?;
    let r_proj = pca.project_noise(&model.r)?;
    let h = |x: &Vector| pca.project_unchecked(&model.measure(x));
    let (posterior, predicted, innovation) = ukf_update(&prior, &h, &r_proj, cfg, &pca.project_unchecked(z))?;
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
    use crate::filter::{ekf_step, kf_step, ukf_step, LinearModel};

    fn s(v: f64) -> Matrix {
        Matrix::from_element(1, 1, v)
    }

    #[test]
    fn ls_scalar_solve() {
        let model = NonlinearModel::new(|x| x.clone(), |x| x * 3.0, s(0.1), s(1.0)).unwrap();
        let pca = PcaModel::identity(1);
        let mut hist = PcaHistory {
            prev_x: Some(Vector::from_element(1, 2.0)),
            prev_z: Some(Vector::from_element(1, 6.0)),
            prev_h: None,
            steps: 1,
        };
        let state = StateEstimate::new(Vector::from_element(1, 1.5), s(1.0)).unwrap();
        let step = kfpca_step_ls(&mut hist, &state, &model, &pca, &Vector::from_element(1, 4.0)).unwrap();
        assert!((step.predicted[0] - 3.0 * step.prior.x[0]).abs() < 1e-9);
        assert!((hist.prev_h.unwrap()[(0, 0)] - 3.0).abs() < 1e-9);
    }

    #[test]
    fn ls_matches_kf_when_history_is_exact() {
        // R → 0 makes every posterior reproduce z / 2, so the solved h is exactly 2
        let lin = LinearModel::new(s(1.0), s(2.0), s(0.5), s(1e-12)).unwrap();
        let model = NonlinearModel::from_linear(&lin);
        let pca = PcaModel::identity(1);
        let mut hist = PcaHistory::default();
        let mut a = StateEstimate::new(Vector::from_element(1, 1.0), s(1.0)).unwrap();
        let mut b = a.clone();
        for k in 0..30 {
            let z = Vector::from_element(1, 3.0 + (k as f64 * 0.3).sin());
            a = kfpca_step_ls(&mut hist, &a, &model, &pca, &z).unwrap().posterior;
            b = kf_step(&b, &lin, &z).unwrap().posterior;
            assert!((&a.x - &b.x).abs().max() < 1e-6, "k={k}");
            assert!((&a.p - &b.p).abs().max() < 1e-6, "k={k}");
        }
    }

    #[test]
    fn ls_constant_stream_converges() {
        let model = NonlinearModel::new(|x| x.clone(), |x| x.clone(), s(1e-4), s(0.5)).unwrap();
        let pca = PcaModel::identity(1);
        let mut hist = PcaHistory::default();
        let mut st = StateEstimate::new(Vector::from_element(1, 1.0), s(1.0)).unwrap();
        let z = Vector::from_element(1, 4.0);
        let mut last = f64::INFINITY;
        for _ in 0..50 {
            let step = kfpca_step_ls(&mut hist, &st, &model, &pca, &z).unwrap();
            last = step.innovation.norm();
            st = step.posterior;
        }
        assert!(last < 1e-3, "innovation {last}");
    }

    #[test]
    fn lin_equals_ekf_for_linear_h() {
        let model = NonlinearModel::new(
            |x| Vector::from_vec(vec![x[0] + 0.1 * x[1], 0.9 * x[1]]),
            |x| Vector::from_vec(vec![x[0] - x[1], 2.0 * x[0]]),
            Matrix::identity(2, 2) * 0.01,
            Matrix::identity(2, 2) * 0.3,
        )
        .unwrap();
        let pca = PcaModel::identity(2);
        let mut hist = PcaHistory::default();
        let mut a = StateEstimate::new(Vector::from_vec(vec![0.5, 0.1]), Matrix::identity(2, 2)).unwrap();
        let mut b = a.clone();
        for k in 0..40 {
            let t = k as f64 * 0.2;
            let z = Vector::from_vec(vec![t.sin(), t.cos()]);
            a = kfpca_step_lin(&mut hist, &a, &model, &pca, &z).unwrap().posterior;
            b = ekf_step(&b, &model, &z).unwrap().posterior;
            assert!((&a.x - &b.x).abs().max() < 1e-6);
        }
    }

    #[test]
    fn lin_first_step_uses_prior() {
        let model = NonlinearModel::new(|x| x.clone(), |x| x.map(f64::exp), s(0.0), s(1.0)).unwrap();
        let mut hist = PcaHistory::default();
        let st = StateEstimate::new(Vector::from_element(1, 0.5), s(1.0)).unwrap();
        let step = kfpca_step_lin(&mut hist, &st, &model, &PcaModel::identity(1), &Vector::from_element(1, 2.0)).unwrap();
        assert!((step.predicted[0] - 0.5f64.exp()).abs() < 1e-12);
        assert_eq!(hist.steps, 1);
    }

    #[test]
    fn ukfpca_equals_ukf_for_identity_pca() {
        let model = NonlinearModel::new(
            |x| Vector::from_vec(vec![x[0] + x[1], 0.95 * x[1]]),
            |x| Vector::from_vec(vec![x[0], x[0] - x[1]]),
            Matrix::identity(2, 2) * 0.02,
            Matrix::identity(2, 2) * 0.4,
        )
        .unwrap();
        let pca = PcaModel::identity(2);
        let cfg = UkfConfig::default();
        let mut a = StateEstimate::new(Vector::from_vec(vec![1.0, 0.0]), Matrix::identity(2, 2)).unwrap();
        let mut b = a.clone();
        for k in 0..30 {
            let z = Vector::from_vec(vec![k as f64 * 0.1, 0.2]);
            a = ukfpca_step(&a, &model, &pca, &cfg, &z).unwrap().posterior;
            b = ukf_step(&b, &model, &cfg, &z).unwrap().posterior;
            assert!((&a.x - &b.x).abs().max() < 1e-9);
        }
    }

    #[test]
    fn ukfpca_matches_hand_rolled_transform() {
        // 1-D state, 2-D measurement, 1-component PCA along (0.6, 0.8) with a mean
        let pca = PcaModel {
            threshold: 0.0,
            components: Matrix::from_column_slice(2, 1, &[0.6, 0.8]),
            eigenvalues: Vector::from_element(1, 1.0),
            mean: Vector::from_vec(vec![0.2, -0.1]),
        };
        let model = NonlinearModel::new(
            |x| x * 0.9,
            |x| Vector::from_vec(vec![x[0].sin(), x[0] * x[0]]),
            s(0.05),
            Matrix::from_row_slice(2, 2, &[0.3, 0.05, 0.05, 0.2]),
        )
        .unwrap();
        let cfg = UkfConfig::default();
        let state = StateEstimate::new(Vector::from_element(1, 0.7), s(0.4)).unwrap();
        let z = Vector::from_vec(vec![0.5, 0.6]);
        let step = ukfpca_step(&state, &model, &pca, &cfg, &z).unwrap();

        // oracle, scalar arithmetic only
        let (a, b, k) = (0.5f64, 2.0f64, 0.0f64);
        let lam = a * a * (1.0 + k) - 1.0;
        let wm = [lam / (1.0 + lam), 0.5 / (1.0 + lam), 0.5 / (1.0 + lam)];
        let wc = [wm[0] + 1.0 - a * a + b, wm[1], wm[2]];
        let spread = |m: f64, p: f64| [m, m + ((1.0 + lam) * p).sqrt(), m - ((1.0 + lam) * p).sqrt()];
        let px = spread(0.7, 0.4).map(|x| 0.9 * x);
        let xm: f64 = (0..3).map(|i| wm[i] * px[i]).sum();
        let pp: f64 = (0..3).map(|i| wc[i] * (px[i] - xm).powi(2)).sum::<f64>() + 0.05;
        let g = |x: f64| 0.6 * (x.sin() - 0.2) + 0.8 * (x * x + 0.1);
        let sp = spread(xm, pp);
        let zs = sp.map(g);
        let zm: f64 = (0..3).map(|i| wm[i] * zs[i]).sum();
        let r_proj = 0.6 * 0.6 * 0.3 + 2.0 * 0.6 * 0.8 * 0.05 + 0.8 * 0.8 * 0.2;
        let pzz: f64 = (0..3).map(|i| wc[i] * (zs[i] - zm).powi(2)).sum::<f64>() + r_proj;
        let pxz: f64 = (0..3).map(|i| wc[i] * (sp[i] - xm) * (zs[i] - zm)).sum();
        let gain = pxz / pzz;
        let zp = 0.6 * (0.5 - 0.2) + 0.8 * (0.6 + 0.1);
        let x_post = xm + gain * (zp - zm);
        let p_post = pp - gain * pzz * gain;
        assert!((step.posterior.x[0] - x_post).abs() < 1e-8);
        assert!((step.posterior.p[(0, 0)] - p_post).abs() < 1e-8);
        assert!((step.predicted[0] - zm).abs() < 1e-8);
    }
}
