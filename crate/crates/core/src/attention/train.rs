use super::{forward_values, AttentionParams, OutputNorm};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, Vector};
use crate::workloads::Trace;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 200, lr: 1e-2 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: AttentionParams,
    /// Loss at the start of each epoch.
    pub losses: Vec<f64>,
}

/// Loss gradients, one per weight matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w_a: Matrix,
    pub w_q: Matrix,
    pub w_v: Matrix,
    pub w_l: Matrix,
}

impl Gradients {
    fn zeros(p: &AttentionParams) -> Self {
        Gradients {
            w_a: Matrix::zeros(p.w_a.nrows(), p.w_a.ncols()),
            w_q: Matrix::zeros(p.w_q.nrows(), p.w_q.ncols()),
            w_v: Matrix::zeros(p.w_v.nrows(), p.w_v.ncols()),
            w_l: Matrix::zeros(1, p.w_l.ncols()),
        }
    }
}

fn check_series(params: &AttentionParams, series: &[Vector]) -> Result<()> {
    params.validate()?;
    if series.len() < params.window + 1 {
        return Err(Error::InsufficientData {
            context: "attention training series",
            needed: params.window + 1,
            got: series.len(),
        });
    }
    for z in series {
        if z.len() != params.d_z() {
            return Err(Error::dimension("attention training sample", params.d_z(), z.len()));
        }
        crate::numerics::ensure_finite_vector(z, "attention training sample")?;
    }
    Ok(())
}

/// Sliding windows of `series` paired with the value that follows each.
fn samples<'a>(params: &AttentionParams, series: &'a [Vector]) -> impl Iterator<Item = (Vec<&'a Vector>, &'a Vector)> {
    let n = params.window;
    (n..series.len()).map(move |t| (series[t - n..t].iter().collect(), &series[t]))
}

/// Mean over windows of the scaled squared one-step error `‖(z_fused − z_next)/σ‖²`.
pub fn loss(params: &AttentionParams, series: &[Vector]) -> Result<f64> {
    check_series(params, series)?;
    let mut total = 0.0;
    let mut count = 0usize;
    for (zs, target) in samples(params, series) {
        let f = forward_values(params, &zs)?;
        total += (f.z_fused - target).component_div(&params.input_scale).norm_squared();
        count += 1;
    }
    Ok(total / count as f64)
}

/// Loss and its analytic gradient with respect to every weight matrix.
pub fn gradients(params: &AttentionParams, series: &[Vector]) -> Result<(f64, Gradients)> {
    check_series(params, series)?;
    let count = (series.len() - params.window) as f64;
    let d_h_root = (params.d_h() as f64).sqrt();
    let scale2 = params.input_scale.map(|s| s * s);
    let mut grads = Gradients::zeros(params);
    let mut total = 0.0;
    for (zs, target) in samples(params, series) {
        let f = forward_values(params, &zs)?;
        let n = zs.len();
        let resid = &f.z_fused - target;
        total += resid.component_div(&params.input_scale).norm_squared();
        let g = resid.component_div(&scale2) * (2.0 / count);

        let ds: Vec<f64> = zs.iter().map(|z| g.dot(z)).collect();
        let mean_ds: f64 = f.s.iter().zip(&ds).map(|(s, d)| s * d).sum();
        let dl: Vec<f64> = match params.output {
            OutputNorm::Softmax => (0..n).map(|i| f.s[i] * (ds[i] - mean_ds)).collect(),
            OutputNorm::Ratio => {
                let total_l = f.l.sum();
                (0..n).map(|i| (ds[i] - mean_ds) / total_l).collect()
            }
        };

        let mut dc = Vector::zeros(params.d_in());
        for i in 0..n {
            grads.w_l += f.b_hat[i].transpose() * dl[i];
            let dh = params.w_l.row(0).transpose() * dl[i];
            let d = dh.len() as f64;
            let m1 = dh.sum() / d;
            let m2 = dh.dot(&f.b_hat[i]) / d;
            dc += (dh.add_scalar(-m1) - &f.b_hat[i] * m2) / f.sigma[i];
        }

        grads.w_v.ger(1.0, &f.b, &dc, 1.0);
        let db = &params.w_v * &dc;
        let dalpha: Vec<f64> = f.v.iter().map(|vi| db.dot(vi)).collect();
        let mean_da: f64 = f.alpha.iter().zip(&dalpha).map(|(a, d)| a * d).sum();
        for i in 0..n {
            let de = f.alpha[i] * (dalpha[i] - mean_da) / d_h_root;
            let dq = &f.v[i] * de;
            let dv = &db * f.alpha[i] + &f.q[i] * de;
            grads.w_q.ger(1.0, &dq, &f.a[i], 1.0);
            grads.w_v.ger(1.0, &dv, &f.a[i], 1.0);
            let da = params.w_q.tr_mul(&dq) + params.w_v.tr_mul(&dv);
            grads.w_a.ger(1.0, &da, &f.x[i], 1.0);
        }
    }
    Ok((total / count, grads))
}

/// Full-batch gradient descent on one-step prediction of `series`.
pub fn train_on_series(params: &AttentionParams, series: &[Vector], cfg: &TrainConfig) -> Result<TrainOutcome> {
    if cfg.epochs == 0 {
        return Err(Error::Validation("training needs at least one epoch".into()));
    }
    if !(cfg.lr > 0.0 && cfg.lr.is_finite()) {
        return Err(Error::Validation(format!("learning rate {} must be positive", cfg.lr)));
    }
    let mut p = params.clone();
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let (loss, g) = match gradients(&p, series) {
            Ok(v) => v,
            Err(e) if e.class() == crate::error::ErrorClass::Numeric => {
                return Err(Error::TrainingDiverged { epoch, loss: f64::NAN })
            }
            Err(e) => return Err(e),
        };
        if !loss.is_finite() {
            return Err(Error::TrainingDiverged { epoch, loss });
        }
        losses.push(loss);
        p.w_a -= g.w_a * cfg.lr;
        p.w_q -= g.w_q * cfg.lr;
        p.w_v -= g.w_v * cfg.lr;
        p.w_l -= g.w_l * cfg.lr;
        if [&p.w_a, &p.w_q, &p.w_v, &p.w_l].iter().any(|m| m.iter().any(|v| !v.is_finite())) {
            return Err(Error::TrainingDiverged { epoch, loss });
        }
        log::debug!("attention epoch {epoch}: loss {loss:.6e}");
    }
    Ok(TrainOutcome { params: p, losses })
}

/// Trains on the values of a trace.
pub fn attn_train(params: &AttentionParams, series: &Trace, epochs: usize, lr: f64) -> Result<(AttentionParams, Vec<f64>)> {
    let values: Vec<Vector> = series.values().cloned().collect();
    let out = train_on_series(params, &values, &TrainConfig { epochs, lr })?;
    Ok((out.params, out.losses))
}

/// Population standard deviation, over window positions, of the fusion
/// weights averaged across every window of `series`.
pub fn weight_spread(params: &AttentionParams, series: &[Vector]) -> Result<f64> {
    check_series(params, series)?;
    let n = params.window;
    let mut mean = Vector::zeros(n);
    let mut count = 0.0;
    for t in n..=series.len() {
        let zs: Vec<&Vector> = series[t - n..t].iter().collect();
        mean += forward_values(params, &zs)?.s;
        count += 1.0;
    }
    mean /= count;
    let mu = mean.sum() / n as f64;
    Ok((mean.iter().map(|s| (s - mu).powi(2)).sum::<f64>() / n as f64).sqrt())
}
