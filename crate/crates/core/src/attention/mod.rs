//! Key-less attention over a measurement window.
//!
//! Each window element `zᵢ` is embedded as
//! `xᵢ = [(zᵢ − z̄)/σ, (zᵢ − z_newest)/σ, τᵢ, 1]` with `τᵢ ∈ [−½, ½]` its
//! recency, then
//!
//! ```text
//! aᵢ = W_a xᵢ   qᵢ = W_q aᵢ   vᵢ = W_v aᵢ
//! α  = softmax(qᵢ·vᵢ / √d_h)  b = Σ αᵢ vᵢ
//! b̂ᵢ = layer_norm(xᵢ + W_vᵀ b) lᵢ = W_l b̂ᵢ
//! s  = softmax(l)             z_fused = Σ sᵢ zᵢ
//! ```

mod akf;
mod train;

use serde::{Deserialize, Serialize};

pub use akf::{akf_pca_step, akf_step};
pub use train::{attn_train, gradients, loss, train_on_series, weight_spread, Gradients, TrainConfig, TrainOutcome};

use crate::error::{Error, Result};
use crate::numerics::{softmax, Matrix, SeededRng, Vector};
use crate::pca::MeasurementWindow;

/// Variance floor inside the layer normalisation.
pub const LN_EPS: f64 = 1e-5;

/// How output logits become fusion weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputNorm {
    /// `sᵢ = exp(lᵢ) / Σ exp(lⱼ)`
    #[default]
    Softmax,
    /// `sᵢ = lᵢ / Σ lⱼ`; fails unless every weight comes out non-negative.
    Ratio,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub w_a: Matrix,
    pub w_q: Matrix,
    pub w_v: Matrix,
    pub w_l: Matrix,
    /// Per-component scale of the measurement features.
    pub input_scale: Vector,
    pub window: usize,
    pub output: OutputNorm,
}

/// Embedding width for measurements of width `d_z`.
pub fn input_width(d_z: usize) -> usize {
    2 * d_z + 2
}

impl AttentionParams {
    /// Seeded small random projections and a zero output layer, so an
    /// untrained layer fuses with uniform weights.
    pub fn init(d_z: usize, d_h: usize, window: usize, input_scale: Vector, seed: u64) -> Result<Self> {
        if d_z == 0 || d_h == 0 || window == 0 {
            return Err(Error::Validation(format!(
                "attention dims must be positive (d_z={d_z}, d_h={d_h}, window={window})"
            )));
        }
        let d_in = input_width(d_z);
        let mut rng = SeededRng::new(seed);
        let sd = 1.0 / (d_in as f64).sqrt();
        let mut draw = |r: usize, c: usize| Matrix::from_fn(r, c, |_, _| rng.normal(0.0, sd));
        let w_a = draw(d_in, d_in);
        let w_q = draw(d_h, d_in);
        let w_v = draw(d_h, d_in);
        let params = AttentionParams {
            w_a,
            w_q,
            w_v,
            w_l: Matrix::zeros(1, d_in),
            input_scale,
            window,
            output: OutputNorm::Softmax,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn d_z(&self) -> usize {
        self.input_scale.len()
    }

    pub fn d_in(&self) -> usize {
        self.w_a.nrows()
    }

    pub fn d_h(&self) -> usize {
        self.w_q.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let d_in = input_width(self.d_z());
        let d_h = self.d_h();
        let shapes = [
            ("W_a", self.w_a.shape(), (d_in, d_in)),
            ("W_q", self.w_q.shape(), (d_h, d_in)),
            ("W_v", self.w_v.shape(), (d_h, d_in)),
            ("W_l", self.w_l.shape(), (1, d_in)),
        ];
        for (name, got, want) in shapes {
            if got != want {
                return Err(Error::dimension(name, format!("{want:?}"), format!("{got:?}")));
            }
        }
        if d_h == 0 || self.window == 0 || self.d_z() == 0 {
            return Err(Error::Validation("attention dims must be positive".into()));
        }
        for (m, name) in [(&self.w_a, "W_a"), (&self.w_q, "W_q"), (&self.w_v, "W_v"), (&self.w_l, "W_l")] {
            crate::numerics::ensure_finite_matrix(m, name)?;
        }
        if self.input_scale.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::Validation("attention input scale must be finite and positive".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(&ParamsFile::from(self)).map_err(|e| Error::Io(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ParamsFile = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            message: e.to_string(),
        })?;
        file.try_into()
    }
}

/// Per-feature standard deviation of a series, floored to 1 for flat features.
pub fn scale_from_series(series: &[Vector]) -> Vector {
    let d = series.first().map_or(1, |z| z.len());
    let n = series.len().max(1) as f64;
    Vector::from_fn(d, |j, _| {
        let mean = series.iter().map(|z| z[j]).sum::<f64>() / n;
        let var = series.iter().map(|z| (z[j] - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        if sd > 1e-12 && sd.is_finite() {
            sd
        } else {
            1.0
        }
    })
}

/// Row-major matrix as stored in the parameter file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MatrixJson {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl From<&Matrix> for MatrixJson {
    fn from(m: &Matrix) -> Self {
        MatrixJson {
            rows: m.nrows(),
            cols: m.ncols(),
            data: m.transpose().iter().copied().collect(),
        }
    }
}

impl MatrixJson {
    fn into_matrix(self, name: &'static str) -> Result<Matrix> {
        if self.data.len() != self.rows * self.cols {
            return Err(Error::dimension(name, self.rows * self.cols, self.data.len()));
        }
        Ok(Matrix::from_row_slice(self.rows, self.cols, &self.data))
    }
}

/// Parameter file layout; keys serialise in this order.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsFile {
    window: usize,
    output: OutputNorm,
    input_scale: Vec<f64>,
    w_a: MatrixJson,
    w_q: MatrixJson,
    w_v: MatrixJson,
    w_l: MatrixJson,
}

impl From<&AttentionParams> for ParamsFile {
    fn from(p: &AttentionParams) -> Self {
        ParamsFile {
            window: p.window,
            output: p.output,
            input_scale: p.input_scale.iter().copied().collect(),
            w_a: (&p.w_a).into(),
            w_q: (&p.w_q).into(),
            w_v: (&p.w_v).into(),
            w_l: (&p.w_l).into(),
        }
    }
}

impl TryFrom<ParamsFile> for AttentionParams {
    type Error = Error;

    fn try_from(f: ParamsFile) -> Result<Self> {
        let params = AttentionParams {
            w_a: f.w_a.into_matrix("W_a")?,
            w_q: f.w_q.into_matrix("W_q")?,
            w_v: f.w_v.into_matrix("W_v")?,
            w_l: f.w_l.into_matrix("W_l")?,
            input_scale: Vector::from_vec(f.input_scale),
            window: f.window,
            output: f.output,
        };
        params.validate()?;
        Ok(params)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionOutput {
    /// Fusion weights over the window, oldest first.
    pub s: Vector,
    /// Internal attention weights `α`.
    pub alpha: Vector,
    /// Normalised per-element intermediates `b̂ᵢ`.
    pub b_hat: Vec<Vector>,
    pub z_fused: Vector,
}

/// Intermediates kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct Forward {
    pub x: Vec<Vector>,
    pub a: Vec<Vector>,
    pub q: Vec<Vector>,
    pub v: Vec<Vector>,
    pub alpha: Vector,
    pub b: Vector,
    pub b_hat: Vec<Vector>,
    pub sigma: Vec<f64>,
    pub l: Vector,
    pub s: Vector,
    pub z_fused: Vector,
}

pub(crate) fn embed(params: &AttentionParams, zs: &[&Vector]) -> Vec<Vector> {
    let n = zs.len();
    let d_z = params.d_z();
    let mut mean = Vector::zeros(d_z);
    for z in zs {
        mean += *z;
    }
    mean /= n as f64;
    let newest = zs[n - 1];
    zs.iter()
        .enumerate()
        .map(|(i, z)| {
            let tau = if n > 1 { i as f64 / (n - 1) as f64 - 0.5 } else { 0.0 };
            let mut x = Vector::zeros(2 * d_z + 2);
            for j in 0..d_z {
                x[j] = (z[j] - mean[j]) / params.input_scale[j];
                x[d_z + j] = (z[j] - newest[j]) / params.input_scale[j];
            }
            x[2 * d_z] = tau;
            x[2 * d_z + 1] = 1.0;
            x
        })
        .collect()
}

pub(crate) fn layer_norm(u: &Vector) -> (Vector, f64) {
    let d = u.len() as f64;
    let mu = u.sum() / d;
    let var = u.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / d;
    let sigma = (var + LN_EPS).sqrt();
    (u.map(|v| (v - mu) / sigma), sigma)
}

/// Output weights from logits.
pub fn output_weights(l: &[f64], mode: OutputNorm) -> Result<Vec<f64>> {
    match mode {
        OutputNorm::Softmax => softmax(l),
        OutputNorm::Ratio => {
            let total: f64 = l.iter().sum();
            let s: Vec<f64> = l.iter().map(|v| v / total).collect();
            if total == 0.0 || s.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::Validation(format!(
                    "ratio output weights are not convex (Σl = {total})"
                )));
            }
            Ok(s)
        }
    }
}

/// `Σ sᵢ zᵢ`.
pub fn fuse(s: &Vector, zs: &[&Vector]) -> Result<Vector> {
    if s.len() != zs.len() || zs.is_empty() {
        return Err(Error::dimension("fusion weights", zs.len(), s.len()));
    }
    let mut out = Vector::zeros(zs[0].len());
    for (w, z) in s.iter().zip(zs) {
        out.axpy(*w, *z, 1.0);
    }
    Ok(out)
}

/// `Σ sᵢ = 1` within 1e-9 and every coordinate of `z_fused` inside the
/// window's coordinate range (up to rounding).
pub fn is_convex_fusion(s: &Vector, zs: &[&Vector], z_fused: &Vector) -> bool {
    if (s.sum() - 1.0).abs() > 1e-9 || s.iter().any(|w| *w < 0.0) {
        return false;
    }
    (0..z_fused.len()).all(|j| {
        let lo = zs.iter().map(|z| z[j]).fold(f64::INFINITY, f64::min);
        let hi = zs.iter().map(|z| z[j]).fold(f64::NEG_INFINITY, f64::max);
        let tol = 1e-12 * lo.abs().max(hi.abs()).max(1.0);
        z_fused[j] >= lo - tol && z_fused[j] <= hi + tol
    })
}

pub(crate) fn forward_values(params: &AttentionParams, zs: &[&Vector]) -> Result<Forward> {
    let n = zs.len();
    let d_h = params.d_h() as f64;
    let x = embed(params, zs);
    let a: Vec<Vector> = x.iter().map(|xi| &params.w_a * xi).collect();
    let q: Vec<Vector> = a.iter().map(|ai| &params.w_q * ai).collect();
    let v: Vec<Vector> = a.iter().map(|ai| &params.w_v * ai).collect();
    let e: Vec<f64> = q.iter().zip(&v).map(|(qi, vi)| qi.dot(vi) / d_h.sqrt()).collect();
    let alpha = Vector::from_vec(softmax(&e)?);
    let mut b = Vector::zeros(params.d_h());
    for (ai, vi) in alpha.iter().zip(&v) {
        b.axpy(*ai, vi, 1.0);
    }
    let c = params.w_v.tr_mul(&b);
    let mut b_hat = Vec::with_capacity(n);
    let mut sigma = Vec::with_capacity(n);
    for xi in &x {
        let (h, sd) = layer_norm(&(xi + &c));
        b_hat.push(h);
        sigma.push(sd);
    }
    let l = Vector::from_iterator(n, b_hat.iter().map(|h| (&params.w_l * h)[0]));
    let s = Vector::from_vec(output_weights(l.as_slice(), params.output)?);
    let z_fused = fuse(&s, zs)?;
    if z_fused.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("attention fused measurement"));
    }
    debug_assert!(is_convex_fusion(&s, zs, &z_fused), "fused measurement left the window hull");
    Ok(Forward {
        x,
        a,
        q,
        v,
        alpha,
        b,
        b_hat,
        sigma,
        l,
        s,
        z_fused,
    })
}

/// Forward pass over a full window.
pub fn attn_forward(params: &AttentionParams, window: &MeasurementWindow) -> Result<AttentionOutput> {
    if window.len() != params.window {
        return Err(Error::InsufficientData {
            context: "attention window",
            needed: params.window,
            got: window.len(),
        });
    }
    if window.dim() != Some(params.d_z()) {
        return Err(Error::dimension("attention measurement", params.d_z(), window.dim().unwrap_or(0)));
    }
    let zs: Vec<&Vector> = window.values().collect();
    let f = forward_values(params, &zs)?;
    Ok(AttentionOutput {
        s: f.s,
        alpha: f.alpha,
        b_hat: f.b_hat,
        z_fused: f.z_fused,
    })
}
