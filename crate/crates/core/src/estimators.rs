//! Scalar-signal estimators behind one stepping interface.
//!
//! Every Kalman variant tracks a damped local trend `x = [level, trend]`
//! with `f(x) = [x₀ + x₁, φx₁]`. Base filters observe the latest sample
//! through `g(level)`; the PCA variants observe the delay vector
//! `[zₖ, zₖ₋₁, …, zₖ₋ₘ₊₁]` through `hⱼ(x) = g(x₀ − j·x₁)`.
//!
//! With one measurement update every `u` samples each sample appears in
//! `⌈m/u⌉` delay vectors, and the per-entry noise of the delay measurement
//! is inflated by that factor so repeated samples are not double counted.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::attention::{attn_forward, scale_from_series, train_on_series, AttentionParams, TrainConfig};
use crate::baselines::SavgolSpec;
use crate::error::{Error, Result};
use crate::filter::{
    ckf_predict, ckf_step, ekf_predict, ekf_step, ukf_predict, ukf_step, NonlinearModel, StateEstimate, UkfConfig,
};
use crate::numerics::{Matrix, Vector};
use crate::pca::{
    joint_step, kfpca_step_lin, kfpca_step_ls, ukfpca_step, JointEstimate, JointKind, MeasurementWindow, PcaHistory,
    PcaModel, PcaTracker,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum EstimatorKind {
    Passive,
    Savgol,
    Ekf,
    Ukf,
    Ckf,
    /// Linearisation method.
    EkfPca,
    /// Least-squares method.
    EkfPcaLs,
    UkfPca,
    JointEkfPca,
    JointUkfPca,
    Akf,
    AkfPca,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 12] = [
        EstimatorKind::Passive,
        EstimatorKind::Savgol,
        EstimatorKind::Ekf,
        EstimatorKind::Ukf,
        EstimatorKind::Ckf,
        EstimatorKind::EkfPca,
        EstimatorKind::EkfPcaLs,
        EstimatorKind::UkfPca,
        EstimatorKind::JointEkfPca,
        EstimatorKind::JointUkfPca,
        EstimatorKind::Akf,
        EstimatorKind::AkfPca,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Passive => "passive",
            EstimatorKind::Savgol => "savgol",
            EstimatorKind::Ekf => "ekf",
            EstimatorKind::Ukf => "ukf",
            EstimatorKind::Ckf => "ckf",
            EstimatorKind::EkfPca => "ekf-pca",
            EstimatorKind::EkfPcaLs => "ekf-pca-ls",
            EstimatorKind::UkfPca => "ukf-pca",
            EstimatorKind::JointEkfPca => "joint-ekf-pca",
            EstimatorKind::JointUkfPca => "joint-ukf-pca",
            EstimatorKind::Akf => "akf",
            EstimatorKind::AkfPca => "akf-pca",
        }
    }

    pub fn uses_attention(self) -> bool {
        matches!(self, EstimatorKind::Akf | EstimatorKind::AkfPca)
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EstimatorKind::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
            let valid: Vec<&str> = EstimatorKind::ALL.iter().map(|k| k.name()).collect();
            Error::Validation(format!("unknown estimator `{s}`; valid kinds: {}", valid.join(", ")))
        })
    }
}

impl TryFrom<String> for EstimatorKind {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<EstimatorKind> for String {
    fn from(k: EstimatorKind) -> String {
        k.name().to_string()
    }
}

/// Map from the tracked level to the measured value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeasurementMap {
    #[default]
    Identity,
    /// `ln(1 + eˣ)`
    Softplus,
    /// `1 / (1 + e⁻ˣ)`
    Logistic,
}

impl MeasurementMap {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            MeasurementMap::Identity => x,
            MeasurementMap::Softplus => {
                if x > 30.0 {
                    x + (-x).exp().ln_1p()
                } else {
                    x.exp().ln_1p()
                }
            }
            MeasurementMap::Logistic => 1.0 / (1.0 + (-x).exp()),
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            MeasurementMap::Identity => 1.0,
            MeasurementMap::Softplus => 1.0 / (1.0 + (-x).exp()),
            MeasurementMap::Logistic => {
                let s = 1.0 / (1.0 + (-x).exp());
                s * (1.0 - s)
            }
        }
    }

    pub fn inverse(self, z: f64) -> f64 {
        match self {
            MeasurementMap::Identity => z,
            MeasurementMap::Softplus => {
                let z = z.max(1e-6);
                if z > 30.0 {
                    z + (-(-z).exp()).ln_1p()
                } else {
                    z.exp_m1().ln()
                }
            }
            MeasurementMap::Logistic => {
                let z = z.clamp(1e-6, 1.0 - 1e-6);
                (z / (1.0 - z)).ln()
            }
        }
    }
}

/// Tunables shared by every estimator kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorParams {
    /// Measurement noise variance; estimated from calibration data when absent.
    pub r: Option<f64>,
    /// Level process noise; `q_ratio · r` when absent.
    pub q_level: Option<f64>,
    pub q_ratio: f64,
    /// Trend process noise as a fraction of the level process noise.
    pub trend_ratio: f64,
    /// Trend damping `φ`.
    pub damping: f64,
    pub measurement: MeasurementMap,
    /// Delay-vector length `m` for the PCA variants.
    pub batch: usize,
    /// Samples per measurement update; samples in between are only observed.
    pub update_every: usize,
    /// PCA eigenvalue threshold; twice the per-entry delay noise when absent.
    pub pca_threshold: Option<f64>,
    pub pca_window: usize,
    pub attention_window: usize,
    /// Attention hidden width; the input width when absent.
    pub attention_hidden: Option<usize>,
    pub attention_training: TrainConfig,
    pub ukf: UkfConfig,
    pub savgol: SavgolSpec,
}

impl Default for EstimatorParams {
    fn default() -> Self {
        EstimatorParams {
            r: None,
            q_level: None,
            q_ratio: 0.05,
            trend_ratio: 0.01,
            damping: 0.9,
            measurement: MeasurementMap::Identity,
            batch: 4,
            update_every: 1,
            pca_threshold: None,
            pca_window: 16,
            attention_window: 16,
            attention_hidden: None,
            attention_training: TrainConfig::default(),
            ukf: UkfConfig::default(),
            savgol: SavgolSpec::default(),
        }
    }
}

impl EstimatorParams {
    /// Number of delay vectors each sample appears in.
    pub fn delay_inflation(&self) -> f64 {
        self.batch.div_ceil(self.update_every) as f64
    }

    /// PCA threshold, by default twice the per-entry delay noise.
    fn threshold(&self, noise: &NoiseModel) -> f64 {
        self.pca_threshold.unwrap_or(2.0 * noise.r)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: Option<f64>| v.is_none_or(|x| x > 0.0 && x.is_finite());
        let ok = positive(self.r)
            && positive(self.q_level)
            && self.q_ratio > 0.0
            && self.trend_ratio >= 0.0
            && (0.0..=1.0).contains(&self.damping)
            && self.batch >= 1
            && self.update_every >= 1
            && self.pca_window >= 2
            && self.attention_window >= 1
            && self.attention_hidden != Some(0)
            && self.pca_threshold.is_none_or(|t| t >= 0.0 && t.is_finite());
        if !ok {
            return Err(Error::Validation(format!("invalid estimator parameters {self:?}")));
        }
        self.savgol.validate()?;
        self.ukf.validate(2)
    }
}

/// Noise levels of the trend model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub r: f64,
    pub q_level: f64,
    pub q_trend: f64,
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// `r` from the median absolute deviation of first differences, which
/// is insensitive to isolated spikes and slow level changes.
pub fn calibrate_noise(series: &[f64], params: &EstimatorParams) -> NoiseModel {
    let r = params.r.unwrap_or_else(|| {
        let diffs: Vec<f64> = series.windows(2).map(|w| w[1] - w[0]).collect();
        let med = median(diffs.clone());
        let mad = median(diffs.iter().map(|d| (d - med).abs()).collect());
        let scale = series.iter().map(|v| v.abs()).fold(1.0, f64::max);
        ((1.4826 * mad).powi(2) / 2.0).max(1e-10 * scale * scale)
    });
    let q_level = params.q_level.unwrap_or(params.q_ratio * r);
    NoiseModel {
        r,
        q_level,
        q_trend: (params.trend_ratio * q_level).max(1e-12 * q_level),
    }
}

/// Delay vectors `[zₖ, zₖ₋₁, …]`; samples before the start repeat `z₀`.
pub fn delay_vectors(series: &[f64], m: usize) -> Vec<Vector> {
    (0..series.len())
        .map(|k| Vector::from_fn(m, |j, _| series[k.saturating_sub(j)]))
        .collect()
}

/// Data-derived inputs shared by all estimators of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub noise: NoiseModel,
    /// Scalar-window attention for the AKF.
    pub attention: Option<AttentionParams>,
    /// Delay-vector-window attention for the AKF-PCA.
    pub attention_batch: Option<AttentionParams>,
}

impl Calibration {
    /// Estimates noise from `series` (every sample) and, if any kind needs
    /// it, trains attention on one-step prediction of the same series as the
    /// estimator would see it: all samples for the AKF, delay vectors at the
    /// update cadence for the AKF-PCA.
    pub fn fit(kinds: &[EstimatorKind], params: &EstimatorParams, series: &[f64], seed: u64) -> Result<Self> {
        params.validate()?;
        let noise = calibrate_noise(series, params);
        let mut cal = Calibration {
            noise,
            attention: None,
            attention_batch: None,
        };
        if kinds.contains(&EstimatorKind::Akf) {
            let data: Vec<Vector> = series.iter().map(|z| Vector::from_element(1, *z)).collect();
            cal.attention = Some(train_attention(params, &data, crate::numerics::derive_seed(seed, "attention"))?);
        }
        if kinds.contains(&EstimatorKind::AkfPca) {
            let every = params.update_every;
            let data: Vec<Vector> = delay_vectors(series, params.batch).into_iter().skip(every - 1).step_by(every).collect();
            cal.attention_batch = Some(train_attention(params, &data, crate::numerics::derive_seed(seed, "attention-batch"))?);
        }
        Ok(cal)
    }

    /// Calibration with an explicit noise model and untrained attention.
    pub fn untrained(noise: NoiseModel) -> Self {
        Calibration {
            noise,
            attention: None,
            attention_batch: None,
        }
    }
}

fn train_attention(params: &EstimatorParams, data: &[Vector], seed: u64) -> Result<AttentionParams> {
    let d_z = data.first().map_or(1, |z| z.len());
    let d_h = params.attention_hidden.unwrap_or(crate::attention::input_width(d_z));
    let init = AttentionParams::init(d_z, d_h, params.attention_window, scale_from_series(data), seed)?;
    Ok(train_on_series(&init, data, &params.attention_training)?.params)
}

/// A causal estimator of a scalar signal.
pub trait Estimator: Send {
    fn kind(&self) -> EstimatorKind;
    /// Incorporates a new measurement (time update then measurement update).
    fn update(&mut self, z: f64) -> Result<()>;
    /// Records a sample without a measurement update.
    fn observe(&mut self, _z: f64) -> Result<()> {
        Ok(())
    }

    /// Time update only.
    fn predict(&mut self) -> Result<()>;
    /// Current estimate of the signal.
    fn estimate(&self) -> f64;
    /// Prediction of the next measurement.
    fn forecast(&self) -> f64;
}

pub fn build_estimator(kind: EstimatorKind, params: &EstimatorParams, cal: &Calibration) -> Result<Box<dyn Estimator>> {
    params.validate()?;
    let trend = TrendModel {
        noise: cal.noise,
        damping: params.damping,
        map: params.measurement,
    };
    let m = params.batch;
    let inflation = params.delay_inflation();
    let threshold = params.threshold(&cal.noise);
    let attention = |p: &Option<AttentionParams>, d_z: usize| -> Result<AttentionParams> {
        match p {
            Some(p) => Ok(p.clone()),
            None => {
                let d_h = params.attention_hidden.unwrap_or(crate::attention::input_width(d_z));
                AttentionParams::init(d_z, d_h, params.attention_window, Vector::from_element(d_z, 1.0), 0)
            }
        }
    };
    Ok(match kind {
        EstimatorKind::Passive => Box::new(Passive { last: None }),
        EstimatorKind::Savgol => Box::new(Savgol::new(params.savgol)?),
        EstimatorKind::Ekf | EstimatorKind::Ukf | EstimatorKind::Ckf => Box::new(BaseFilter {
            kind,
            model: trend.model(1, 1.0)?,
            trend,
            ukf: params.ukf,
            state: None,
        }),
        EstimatorKind::EkfPca | EstimatorKind::EkfPcaLs | EstimatorKind::UkfPca => Box::new(PcaFilter {
            kind,
            model: trend.model(m, inflation)?,
            trend,
            ukf: params.ukf,
            tracker: PcaTracker::new(m, params.pca_window, threshold)?,
            history: PcaHistory::default(),
            delay: Delay::new(m),
            state: None,
            pca: None,
            step: 0,
        }),
        EstimatorKind::JointEkfPca | EstimatorKind::JointUkfPca => Box::new(JointFilter {
            kind,
            joint_kind: if kind == EstimatorKind::JointEkfPca {
                JointKind::Ekf
            } else {
                JointKind::Ukf(params.ukf)
            },
            model: trend.model(m, inflation)?,
            trend,
            tracker: PcaTracker::new(m, params.pca_window, threshold)?,
            delay: Delay::new(m),
            joint: None,
            step: 0,
        }),
        EstimatorKind::Akf => Box::new(Akf {
            params: attention(&cal.attention, 1)?,
            window: MeasurementWindow::new(params.attention_window)?,
            trend,
            state: None,
            step: 0,
        }),
        EstimatorKind::AkfPca => Box::new(AkfPca {
            params: attention(&cal.attention_batch, m)?,
            window: MeasurementWindow::new(params.attention_window)?,
            model: trend.model(m, inflation)?,
            trend,
            tracker: PcaTracker::new(m, params.pca_window, threshold)?,
            history: PcaHistory::default(),
            delay: Delay::new(m),
            state: None,
            step: 0,
        }),
    })
}

#[derive(Debug, Clone, Copy)]
struct TrendModel {
    noise: NoiseModel,
    damping: f64,
    map: MeasurementMap,
}

impl TrendModel {
    /// Model observing `m` delayed levels with per-entry noise `inflation · r`.
    fn model(&self, m: usize, inflation: f64) -> Result<NonlinearModel> {
        self.model_with_r(m, inflation * self.noise.r)
    }

    fn model_with_r(&self, m: usize, r: f64) -> Result<NonlinearModel> {
        let phi = self.damping;
        let map = self.map;
        let q = Matrix::from_diagonal(&Vector::from_vec(vec![self.noise.q_level, self.noise.q_trend]));
        let model = NonlinearModel::new(
            move |x| Vector::from_vec(vec![x[0] + x[1], phi * x[1]]),
            move |x| Vector::from_fn(m, |j, _| map.apply(x[0] - j as f64 * x[1])),
            q,
            Matrix::identity(m, m) * r,
        )?;
        let f_jac = Matrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, phi]);
        Ok(model.with_jacobians(move |_| f_jac.clone(), move |x| {
            Matrix::from_fn(m, 2, |j, c| {
                let d = map.derivative(x[0] - j as f64 * x[1]);
                if c == 0 {
                    d
                } else {
                    -(j as f64) * d
                }
            })
        }))
    }

    fn initial_state(&self, z: f64) -> Result<StateEstimate> {
        let level = self.map.inverse(z);
        let slope = self.map.derivative(level).max(1e-3);
        let var = 10.0 * self.noise.r / (slope * slope);
        StateEstimate::new(
            Vector::from_vec(vec![level, 0.0]),
            Matrix::from_diagonal(&Vector::from_vec(vec![var, 0.01 * var])),
        )
    }

    fn level(&self, state: &StateEstimate) -> f64 {
        self.map.apply(state.x[0])
    }

    fn next_level(&self, state: &StateEstimate) -> f64 {
        self.map.apply(state.x[0] + state.x[1])
    }
}

/// Rolling delay vector, padded with the first sample until full.
#[derive(Debug, Clone)]
struct Delay {
    m: usize,
    buf: VecDeque<f64>,
}

impl Delay {
    fn new(m: usize) -> Self {
        Delay {
            m,
            buf: VecDeque::with_capacity(m),
        }
    }

    fn push(&mut self, z: f64) -> Vector {
        if self.buf.is_empty() {
            self.buf.extend(std::iter::repeat_n(z, self.m));
        } else {
            self.buf.pop_back();
            self.buf.push_front(z);
        }
        Vector::from_iterator(self.m, self.buf.iter().copied())
    }
}

struct Passive {
    last: Option<f64>,
}

impl Estimator for Passive {
    fn kind(&self) -> EstimatorKind {
        EstimatorKind::Passive
    }

    fn update(&mut self, z: f64) -> Result<()> {
        self.last = Some(z);
        Ok(())
    }

    fn observe(&mut self, z: f64) -> Result<()> {
        self.update(z)
    }

    fn predict(&mut self) -> Result<()> {
        Ok(())
    }

    fn estimate(&self) -> f64 {
        self.last.unwrap_or(f64::NAN)
    }

    fn forecast(&self) -> f64 {
        self.estimate()
    }
}

/// Causal Savitzky-Golay: the local polynomial evaluated at the newest sample.
struct Savgol {
    coeffs: Vec<f64>,
    buf: VecDeque<f64>,
}

impl Savgol {
    fn new(spec: SavgolSpec) -> Result<Self> {
        let half = (spec.window / 2) as f64;
        Ok(Savgol {
            coeffs: spec.coefficients_at(half)?,
            buf: VecDeque::with_capacity(spec.window),
        })
    }
}

impl Estimator for Savgol {
    fn kind(&self) -> EstimatorKind {
        EstimatorKind::Savgol
    }

    fn update(&mut self, z: f64) -> Result<()> {
        if self.buf.len() == self.coeffs.len() {
            self.buf.pop_front();
        }
        self.buf.push_back(z);
        Ok(())
    }

    fn observe(&mut self, z: f64) -> Result<()> {
        self.update(z)
    }

    fn predict(&mut self) -> Result<()> {
        Ok(())
    }

    fn estimate(&self) -> f64 {
        if self.buf.len() < self.coeffs.len() {
            return self.buf.back().copied().unwrap_or(f64::NAN);
        }
        self.coeffs.iter().zip(&self.buf).map(|(c, z)| c * z).sum()
    }

    fn forecast(&self) -> f64 {
        self.estimate()
    }
}

struct BaseFilter {
    kind: EstimatorKind,
    model: NonlinearModel,
    trend: TrendModel,
    ukf: UkfConfig,
    state: Option<StateEstimate>,
}

impl Estimator for BaseFilter {
    fn kind(&self) -> EstimatorKind {
        self.kind
    }

    fn update(&mut self, z: f64) -> Result<()> {
        let zv = Vector::from_element(1, z);
        self.state = Some(match &self.state {
            None => self.trend.initial_state(z)?,
            Some(s) => match self.kind {
                EstimatorKind::Ukf => ukf_step(s, &self.model, &self.ukf, &zv)?.posterior,
                EstimatorKind::Ckf => ckf_step(s, &self.model, &zv)?.posterior,
                _ => ekf_step(s, &self.model, &zv)?.posterior,
            },
        });
        Ok(())
    }

    fn predict(&mut self) -> Result<()> {
        if let Some(s) = &self.state {
            self.state = Some(match self.kind {
                EstimatorKind::Ukf => ukf_predict(s, &self.model, &self.ukf)?,
                EstimatorKind::Ckf => ckf_predict(s, &self.model)?,
                _ => ekf_predict(s, &self.model)?,
            });
        }
        Ok(())
    }

    fn estimate(&self) -> f64 {
        self.state.as_ref().map_or(f64::NAN, |s| self.trend.level(s))
    }

    fn forecast(&self) -> f64 {
        self.state.as_ref().map_or(f64::NAN, |s| self.trend.next_level(s))
    }
}

struct PcaFilter {
    kind: EstimatorKind,
    model: NonlinearModel,
    trend: TrendModel,
    ukf: UkfConfig,
    tracker: PcaTracker,
    history: PcaHistory,
    delay: Delay,
    state: Option<StateEstimate>,
    pca: Option<PcaModel>,
    step: u64,
}

impl PcaFilter {
    /// Level read off the filter's own measurement map. The least-squares
    /// variant fits `h` up to scale, so its state is only meaningful through
    /// `V·h·x` (newest delay entry first).
    fn read_level(&self, x: &Vector) -> f64 {
        match (self.kind, &self.history.prev_h, &self.pca) {
            (EstimatorKind::EkfPcaLs, Some(h), Some(pca)) if h.ncols() == x.len() && h.nrows() == pca.n_components() => {
                pca.unrotate(&(h * x))[0]
            }
            _ => self.trend.map.apply(x[0]),
        }
    }
}

impl Estimator for PcaFilter {
    fn kind(&self) -> EstimatorKind {
        self.kind
    }

    fn update(&mut self, z: f64) -> Result<()> {
        let zv = self.delay.push(z);
        let pca = self.tracker.observe(self.step as f64, &zv)?.clone();
        self.step += 1;
        self.state = Some(match &self.state {
            None => self.trend.initial_state(z)?,
            Some(s) => match self.kind {
                EstimatorKind::EkfPcaLs => kfpca_step_ls(&mut self.history, s, &self.model, &pca, &zv)?.posterior,
                EstimatorKind::UkfPca => ukfpca_step(s, &self.model, &pca, &self.ukf, &zv)?.posterior,
                _ => kfpca_step_lin(&mut self.history, s, &self.model, &pca, &zv)?.posterior,
            },
        });
        self.pca = Some(pca);
        Ok(())
    }

    fn observe(&mut self, z: f64) -> Result<()> {
        self.delay.push(z);
        Ok(())
    }

    fn predict(&mut self) -> Result<()> {
        if let Some(s) = &self.state {
            self.state = Some(match self.kind {
                EstimatorKind::UkfPca => ukf_predict(s, &self.model, &self.ukf)?,
                _ => ekf_predict(s, &self.model)?,
            });
        }
        Ok(())
    }

    fn estimate(&self) -> f64 {
        self.state.as_ref().map_or(f64::NAN, |s| self.read_level(&s.x))
    }

    fn forecast(&self) -> f64 {
        self.state
            .as_ref()
            .map_or(f64::NAN, |s| self.read_level(&self.model.state_transition(&s.x)))
    }
}

struct JointFilter {
    kind: EstimatorKind,
    joint_kind: JointKind,
    model: NonlinearModel,
    trend: TrendModel,
    tracker: PcaTracker,
    delay: Delay,
    joint: Option<JointEstimate>,
    step: u64,
}

impl JointFilter {
    /// Latest joint state, exposed for invariant checks.
    fn current(&self) -> Option<&JointEstimate> {
        self.joint.as_ref()
    }
}

impl Estimator for JointFilter {
    fn kind(&self) -> EstimatorKind {
        self.kind
    }

    fn update(&mut self, z: f64) -> Result<()> {
        let zv = self.delay.push(z);
        let pca = self.tracker.observe(self.step as f64, &zv)?.clone();
        self.step += 1;
        self.joint = Some(match &self.joint {
            None => JointEstimate::new(self.joint_kind, self.trend.initial_state(z)?),
            Some(j) => joint_step(j, &self.model, &pca, &zv)?,
        });
        Ok(())
    }

    fn observe(&mut self, z: f64) -> Result<()> {
        self.delay.push(z);
        Ok(())
    }

    fn predict(&mut self) -> Result<()> {
        if let Some(j) = &mut self.joint {
            let (a, b) = match self.joint_kind {
                JointKind::Ekf => (ekf_predict(&j.branch_ekf, &self.model)?, ekf_predict(&j.branch_pca, &self.model)?),
                JointKind::Ukf(cfg) => (
                    ukf_predict(&j.branch_ekf, &self.model, &cfg)?,
                    ukf_predict(&j.branch_pca, &self.model, &cfg)?,
                ),
            };
            j.branch_ekf = a;
            j.branch_pca = b;
        }
        Ok(())
    }

    fn estimate(&self) -> f64 {
        self.current().map_or(f64::NAN, |j| self.trend.level(j.selected_state()))
    }

    fn forecast(&self) -> f64 {
        self.current().map_or(f64::NAN, |j| self.trend.next_level(j.selected_state()))
    }
}

/// EKF on the attention-fused scalar window. The fused value's noise
/// variance is taken as `r · Σsᵢ²`, that of a weighted mean of independent samples.
struct Akf {
    params: AttentionParams,
    window: MeasurementWindow,
    trend: TrendModel,
    state: Option<StateEstimate>,
    step: u64,
}

impl Estimator for Akf {
    fn kind(&self) -> EstimatorKind {
        EstimatorKind::Akf
    }

    fn update(&mut self, z: f64) -> Result<()> {
        self.window.push(self.step as f64, Vector::from_element(1, z))?;
        self.step += 1;
        let Some(s) = &self.state else {
            self.state = Some(self.trend.initial_state(z)?);
            return Ok(());
        };
        let (fused, gain) = if self.window.is_full() {
            let out = attn_forward(&self.params, &self.window)?;
            (out.z_fused, out.s.norm_squared())
        } else {
            (Vector::from_element(1, z), 1.0)
        };
        let model = self.trend.model_with_r(1, gain * self.trend.noise.r)?;
        self.state = Some(ekf_step(s, &model, &fused)?.posterior);
        Ok(())
    }

    fn observe(&mut self, z: f64) -> Result<()> {
        self.window.push(self.step as f64, Vector::from_element(1, z))?;
        self.step += 1;
        Ok(())
    }

    fn predict(&mut self) -> Result<()> {
        if let Some(s) = &self.state {
            let model = self.trend.model(1, 1.0)?;
            self.state = Some(ekf_predict(s, &model)?);
        }
        Ok(())
    }

    fn estimate(&self) -> f64 {
        self.state.as_ref().map_or(f64::NAN, |s| self.trend.level(s))
    }

    fn forecast(&self) -> f64 {
        self.state.as_ref().map_or(f64::NAN, |s| self.trend.next_level(s))
    }
}

/// Attention over a window of delay vectors, then a linearisation KF-PCA step.
struct AkfPca {
    params: AttentionParams,
    window: MeasurementWindow,
    model: NonlinearModel,
    trend: TrendModel,
    tracker: PcaTracker,
    history: PcaHistory,
    delay: Delay,
    state: Option<StateEstimate>,
    step: u64,
}

impl Estimator for AkfPca {
    fn kind(&self) -> EstimatorKind {
        EstimatorKind::AkfPca
    }

    fn update(&mut self, z: f64) -> Result<()> {
        let zv = self.delay.push(z);
        let pca = self.tracker.observe(self.step as f64, &zv)?.clone();
        self.window.push(self.step as f64, zv.clone())?;
        self.step += 1;
        let Some(s) = &self.state else {
            self.state = Some(self.trend.initial_state(z)?);
            return Ok(());
        };
        let (fused, gain) = if self.window.is_full() {
            let out = attn_forward(&self.params, &self.window)?;
            (out.z_fused, out.s.norm_squared())
        } else {
            (zv, 1.0)
        };
        let mut model = self.model.clone();
        model.r = &self.model.r * gain;
        self.state = Some(kfpca_step_lin(&mut self.history, s, &model, &pca, &fused)?.posterior);
        Ok(())
    }

    fn observe(&mut self, z: f64) -> Result<()> {
        self.delay.push(z);
        Ok(())
    }

    fn predict(&mut self) -> Result<()> {
        if let Some(s) = &self.state {
            self.state = Some(ekf_predict(s, &self.model)?);
        }
        Ok(())
    }

    fn estimate(&self) -> f64 {
        self.state.as_ref().map_or(f64::NAN, |s| self.trend.level(s))
    }

    fn forecast(&self) -> f64 {
        self.state.as_ref().map_or(f64::NAN, |s| self.trend.next_level(s))
    }
}

/// Joint EKF-PCA run that exposes every step's selection, for invariant checks.
pub struct JointTrace {
    pub selected_norms: Vec<f64>,
    pub unselected_norms: Vec<f64>,
    pub forecasts: Vec<f64>,
}

/// Runs a joint estimator over `series`, recording both innovation norms per step.
pub fn run_joint_traced(
    kind: EstimatorKind,
    params: &EstimatorParams,
    cal: &Calibration,
    series: &[f64],
) -> Result<JointTrace> {
    if !matches!(kind, EstimatorKind::JointEkfPca | EstimatorKind::JointUkfPca) {
        return Err(Error::Validation(format!("{kind} is not a joint estimator")));
    }
    let trend = TrendModel {
        noise: cal.noise,
        damping: params.damping,
        map: params.measurement,
    };
    let m = params.batch;
    let inflation = params.delay_inflation();
    let threshold = params.threshold(&cal.noise);
    let mut f = JointFilter {
        kind,
        joint_kind: if kind == EstimatorKind::JointEkfPca {
            JointKind::Ekf
        } else {
            JointKind::Ukf(params.ukf)
        },
        model: trend.model(m, inflation)?,
        trend,
        tracker: PcaTracker::new(m, params.pca_window, threshold)?,
        delay: Delay::new(m),
        joint: None,
        step: 0,
    };
    let mut out = JointTrace {
        selected_norms: Vec::new(),
        unselected_norms: Vec::new(),
        forecasts: Vec::new(),
    };
    for (k, z) in series.iter().enumerate() {
        f.update(*z)?;
        if k > 0 {
            let j = f.current().expect("joint state after update");
            out.selected_norms.push(j.selected_eps_norm());
            out.unselected_norms.push(j.unselected_eps_norm());
        }
        out.forecasts.push(f.forecast());
    }
    Ok(out)
}
