//! Error statistics, rank tables and the one-step-ahead comparison protocol.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::attention::AttentionParams;
use crate::estimators::{build_estimator, calibrate_noise, Calibration, EstimatorKind, EstimatorParams};
use crate::numerics::derive_seed;
use crate::workloads::{
    add_noise_snr, gen_count_series, gen_cpu_synthetic, gen_loss_signal, gen_mackey_glass, CountProfile, CpuSpec,
    LossSpec, MgSpec, SignalPair, Trace,
};

/// Samples excluded from error statistics at the start of a run.
pub const BURN_IN: usize = 10;

/// Fraction of a step's height the error must fall below to count as converged.
pub const CONVERGENCE_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    /// Mean absolute error.
    pub nu: f64,
    /// Population standard deviation of the signed error.
    pub rho: f64,
    pub mse: f64,
    pub rmse: f64,
}

/// Statistics of `estimates − truth`.
pub fn error_stats_slices(estimates: &[f64], truth: &[f64]) -> Result<ErrorStats> {
    if estimates.len() != truth.len() {
        return Err(Error::dimension("error_stats", truth.len(), estimates.len()));
    }
    if estimates.is_empty() {
        return Err(Error::InsufficientData {
            context: "error_stats",
            needed: 1,
            got: 0,
        });
    }
    let n = estimates.len() as f64;
    let errs: Vec<f64> = estimates.iter().zip(truth).map(|(e, t)| e - t).collect();
    if errs.iter().any(|e| !e.is_finite()) {
        return Err(Error::NonFinite("estimation error"));
    }
    let mean = errs.iter().sum::<f64>() / n;
    let nu = errs.iter().map(|e| e.abs()).sum::<f64>() / n;
    let var = errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n;
    let mse = errs.iter().map(|e| e * e).sum::<f64>() / n;
    Ok(ErrorStats {
        nu,
        rho: var.sqrt(),
        mse,
        rmse: mse.sqrt(),
    })
}

/// Element-wise statistics over aligned traces.
pub fn error_stats(estimates: &Trace, truth: &Trace) -> Result<ErrorStats> {
    if estimates.len() != truth.len() || estimates.dim() != truth.dim() {
        return Err(Error::dimension(
            "error_stats traces",
            format!("{}x{}", truth.len(), truth.dim()),
            format!("{}x{}", estimates.len(), estimates.dim()),
        ));
    }
    let flat = |t: &Trace| -> Vec<f64> { t.values().flat_map(|v| v.iter().copied().collect::<Vec<_>>()).collect() };
    error_stats_slices(&flat(estimates), &flat(truth))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankTable {
    pub rows: Vec<String>,
    pub cols: Vec<String>,
    /// `scores[row][col]`: the lowest value in a row scores `cols.len()`.
    pub scores: Vec<Vec<f64>>,
    /// Mean score per column.
    pub mean_rank: Vec<f64>,
}

impl RankTable {
    pub fn mean_rank_of(&self, col: &str) -> Option<f64> {
        self.cols.iter().position(|c| c == col).map(|j| self.mean_rank[j])
    }

    /// Columns by descending mean rank; ties keep column order.
    pub fn ordering(&self) -> Vec<&str> {
        let mut idx: Vec<usize> = (0..self.cols.len()).collect();
        idx.sort_by(|a, b| self.mean_rank[*b].total_cmp(&self.mean_rank[*a]));
        idx.into_iter().map(|j| self.cols[j].as_str()).collect()
    }
}

/// Ranks each row (lower is better); tied cells share the average of their points.
pub fn rank_matrix(rows: &[String], cols: &[String], values: &[Vec<f64>]) -> Result<RankTable> {
    if values.len() != rows.len() {
        return Err(Error::dimension("rank_matrix rows", rows.len(), values.len()));
    }
    if cols.is_empty() || rows.is_empty() {
        return Err(Error::InsufficientData {
            context: "rank_matrix",
            needed: 1,
            got: 0,
        });
    }
    let n = cols.len();
    let mut scores = Vec::with_capacity(rows.len());
    for (i, row) in values.iter().enumerate() {
        if row.len() != n {
            return Err(Error::dimension("rank_matrix columns", n, row.len()));
        }
        if let Some(j) = row.iter().position(|v| v.is_nan()) {
            return Err(Error::Validation(format!("rank_matrix cell ({}, {}) is NaN", rows[i], cols[j])));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|a, b| row[*a].total_cmp(&row[*b]));
        let mut points = vec![0.0; n];
        let mut start = 0;
        while start < n {
            let mut end = start + 1;
            while end < n && row[order[end]] == row[order[start]] {
                end += 1;
            }
            // positions start..end score n − pos each
            let avg = (start..end).map(|p| (n - p) as f64).sum::<f64>() / (end - start) as f64;
            for &j in &order[start..end] {
                points[j] = avg;
            }
            start = end;
        }
        scores.push(points);
    }
    let mean_rank = (0..n)
        .map(|j| scores.iter().map(|r| r[j]).sum::<f64>() / rows.len() as f64)
        .collect();
    Ok(RankTable {
        rows: rows.to_vec(),
        cols: cols.to_vec(),
        scores,
        mean_rank,
    })
}

/// Parses a metric table CSV: header `metric,<estimator>...`, one row per metric.
pub fn parse_metric_table(text: &str) -> Result<(Vec<String>, Vec<String>, Vec<Vec<f64>>)> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = r.headers().map_err(|e| Error::Parse {
        line: 1,
        message: e.to_string(),
    })?;
    let cols: Vec<String> = header.iter().skip(1).map(|c| c.trim().to_string()).collect();
    let mut rows = Vec::new();
    let mut values = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        rows.push(rec.get(0).unwrap_or_default().trim().to_string());
        let vals = rec
            .iter()
            .skip(1)
            .map(|f| {
                f.trim().parse::<f64>().map_err(|e| Error::Parse {
                    line,
                    message: format!("`{f}`: {e}"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        values.push(vals);
    }
    Ok((rows, cols, values))
}

/// Mean squared residual about the least-squares line `y = a·t + b`, first column.
pub fn residual_variance(series: &Trace) -> Result<f64> {
    let ts: Vec<f64> = series.timestamps().collect();
    residual_variance_xy(&ts, &series.column(0))
}

pub fn residual_variance_xy(t: &[f64], y: &[f64]) -> Result<f64> {
    if t.len() != y.len() {
        return Err(Error::dimension("residual_variance", t.len(), y.len()));
    }
    if t.len() < 3 {
        return Err(Error::InsufficientData {
            context: "residual_variance",
            needed: 3,
            got: t.len(),
        });
    }
    let n = t.len() as f64;
    let tm = t.iter().sum::<f64>() / n;
    let ym = y.iter().sum::<f64>() / n;
    let stt: f64 = t.iter().map(|x| (x - tm).powi(2)).sum();
    if !(stt > 0.0) {
        return Err(Error::Singular("residual_variance timestamps"));
    }
    let sty: f64 = t.iter().zip(y).map(|(a, b)| (a - tm) * (b - ym)).sum();
    let a = sty / stt;
    let b = ym - a * tm;
    Ok(t.iter().zip(y).map(|(x, v)| (v - a * x - b).powi(2)).sum::<f64>() / n)
}

/// `(1/n) Σ |t̂ − t| / t`.
pub fn relative_error(truth: &[f64], predictions: &[f64]) -> Result<f64> {
    if truth.len() != predictions.len() {
        return Err(Error::dimension("relative_error", truth.len(), predictions.len()));
    }
    if truth.is_empty() {
        return Err(Error::InsufficientData {
            context: "relative_error",
            needed: 1,
            got: 0,
        });
    }
    if let Some(i) = truth.iter().position(|t| !(*t > 0.0)) {
        return Err(Error::Validation(format!("relative_error needs positive truth; entry {i} is {}", truth[i])));
    }
    Ok(truth.iter().zip(predictions).map(|(t, p)| (p - t).abs() / t).sum::<f64>() / truth.len() as f64)
}

/// Mean steps from each step change until `|error|` first drops below
/// `CONVERGENCE_FRACTION` of the step height. A step that never converges
/// before the next one (or the end) counts the whole segment.
pub fn convergence_latency(errors: &[f64], steps: &[(usize, f64)]) -> Option<f64> {
    let usable: Vec<&(usize, f64)> = steps
        .iter()
        .filter(|(k, h)| *k >= BURN_IN && *k < errors.len() && *h != 0.0)
        .collect();
    if usable.is_empty() {
        return None;
    }
    let mut total = 0.0;
    for (i, (k, h)) in usable.iter().enumerate() {
        let end = usable.get(i + 1).map_or(errors.len(), |(next, _)| *next);
        let tol = CONVERGENCE_FRACTION * h.abs();
        let lat = (*k..end).find(|j| errors[*j].abs() < tol).map_or(end - k, |j| j - k);
        total += lat as f64;
    }
    Some(total / usable.len() as f64)
}

/// Signal families for the comparison protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SignalSpec {
    MackeyGlass {
        #[serde(default)]
        mg: MgSpec,
        #[serde(default = "default_snr")]
        snr_db: f64,
    },
    CpuSynthetic {
        #[serde(default)]
        spec: CpuSpec,
    },
    Counts {
        #[serde(default)]
        profile: CountProfile,
    },
    Loss {
        #[serde(default)]
        spec: LossSpec,
    },
}

fn default_snr() -> f64 {
    6.0
}

impl Default for SignalSpec {
    fn default() -> Self {
        SignalSpec::MackeyGlass {
            mg: MgSpec::default(),
            snr_db: default_snr(),
        }
    }
}

impl SignalSpec {
    pub fn name(&self) -> &'static str {
        match self {
            SignalSpec::MackeyGlass { .. } => "mackey-glass",
            SignalSpec::CpuSynthetic { .. } => "cpu-synthetic",
            SignalSpec::Counts { .. } => "counts",
            SignalSpec::Loss { .. } => "loss",
        }
    }

    /// One realisation; Mackey-Glass truth is deterministic and only its noise varies.
    pub fn generate(&self, seed: u64) -> Result<SignalPair> {
        match self {
            SignalSpec::MackeyGlass { mg, snr_db } => {
                let truth = gen_mackey_glass(mg)?;
                let measured = add_noise_snr(&truth, *snr_db, seed)?;
                Ok(SignalPair {
                    truth,
                    measured,
                    steps: Vec::new(),
                })
            }
            SignalSpec::CpuSynthetic { spec } => gen_cpu_synthetic(spec, seed),
            SignalSpec::Counts { profile } => gen_count_series(profile, seed),
            SignalSpec::Loss { spec } => gen_loss_signal(spec, seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimatorReport {
    pub name: String,
    pub nu: Option<f64>,
    pub rho: Option<f64>,
    pub mse: Option<f64>,
    pub convergence_latency: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

/// Per-step record of one estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorRun {
    pub kind: EstimatorKind,
    /// Forecast of sample `k` made before seeing it; `NaN` at `k = 0`.
    pub forecasts: Vec<f64>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub experiment: String,
    pub seed: u64,
    pub estimators: Vec<EstimatorReport>,
    /// Over the estimators that finished.
    pub rank: Option<RankTable>,
    #[serde(skip)]
    pub signal: SignalPair,
    #[serde(skip)]
    pub runs: Vec<EstimatorRun>,
}

/// Feeds `measured` through one estimator, recording one-step forecasts.
pub fn run_estimator(kind: EstimatorKind, params: &EstimatorParams, cal: &Calibration, measured: &[f64]) -> EstimatorRun {
    let mut forecasts = vec![f64::NAN; measured.len()];
    let mut failure = None;
    match build_estimator(kind, params, cal) {
        Err(e) => failure = Some(e.to_string()),
        Ok(mut est) => {
            for (k, z) in measured.iter().enumerate() {
                if k > 0 {
                    forecasts[k] = est.forecast();
                }
                if let Err(e) = est.update(*z) {
                    failure = Some(format!("step {k}: {e}"));
                    break;
                }
            }
        }
    }
    EstimatorRun {
        kind,
        forecasts,
        failure,
    }
}

/// One-step-ahead comparison of `kinds` on one realisation of `signal`.
///
/// Noise levels and attention weights come from a second realisation with
/// an independent seed, so nothing is fitted on the evaluated data.
/// Estimators run in parallel; a failing estimator is reported and left
/// out of the rank table.
pub fn run_comparison(
    signal: &SignalSpec,
    kinds: &[EstimatorKind],
    params: &EstimatorParams,
    seed: u64,
) -> Result<ComparisonReport> {
    run_comparison_with(signal, kinds, params, seed, None)
}

/// As [`run_comparison`], with pretrained attention in place of training.
/// One-wide parameters serve the AKF, `batch`-wide ones the AKF-PCA.
pub fn run_comparison_with(
    signal: &SignalSpec,
    kinds: &[EstimatorKind],
    params: &EstimatorParams,
    seed: u64,
    pretrained: Option<&AttentionParams>,
) -> Result<ComparisonReport> {
    params.validate()?;
    if kinds.is_empty() {
        return Err(Error::Validation("no estimators to compare".into()));
    }
    let pair = signal.generate(derive_seed(seed, "signal"))?;
    if pair.measured.len() <= BURN_IN + 1 {
        return Err(Error::InsufficientData {
            context: "comparison signal",
            needed: BURN_IN + 2,
            got: pair.measured.len(),
        });
    }
    let calib_pair = signal.generate(derive_seed(seed, "calibration-signal"))?;
    let cal = match pretrained {
        None => Calibration::fit(kinds, params, &calib_pair.measured.column(0), derive_seed(seed, "calibration"))?,
        Some(att) => {
            att.validate()?;
            let mut cal = Calibration::untrained(calibrate_noise(&calib_pair.measured.column(0), params));
            if att.d_z() != 1 && att.d_z() != params.batch {
                return Err(Error::dimension("pretrained attention width", format!("1 or {}", params.batch), att.d_z()));
            }
            if att.d_z() == 1 {
                cal.attention = Some(att.clone());
            }
            if att.d_z() == params.batch {
                cal.attention_batch = Some(att.clone());
            }
            cal
        }
    };
    let measured = pair.measured.column(0);
    let truth = pair.truth.column(0);

    let runs: Vec<EstimatorRun> = std::thread::scope(|s| {
        let handles: Vec<_> = kinds
            .iter()
            .map(|k| {
                let (cal, measured) = (&cal, &measured);
                s.spawn(move || run_estimator(*k, params, cal, measured))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("estimator thread panicked")).collect()
    });

    let mut reports = Vec::with_capacity(runs.len());
    let mut rank_cols = Vec::new();
    let mut rank_vals: Vec<Vec<f64>> = vec![Vec::new(), Vec::new()];
    for run in &runs {
        let errors: Vec<f64> = run.forecasts.iter().zip(&truth).map(|(f, t)| f - t).collect();
        let stats = match &run.failure {
            Some(_) => None,
            None => error_stats_slices(&run.forecasts[BURN_IN..], &truth[BURN_IN..]).ok(),
        };
        let failure = match (&run.failure, stats) {
            (Some(f), _) => Some(f.clone()),
            (None, None) => Some("non-finite forecasts".to_string()),
            _ => None,
        };
        if let Some(st) = stats {
            rank_cols.push(run.kind.name().to_string());
            rank_vals[0].push(st.nu);
            rank_vals[1].push(st.rho);
        }
        reports.push(EstimatorReport {
            name: run.kind.name().to_string(),
            nu: stats.map(|s| s.nu),
            rho: stats.map(|s| s.rho),
            mse: stats.map(|s| s.mse),
            convergence_latency: stats.and_then(|_| convergence_latency(&errors, &pair.steps)),
            failure,
        });
    }
    let rank = if rank_cols.is_empty() {
        None
    } else {
        Some(rank_matrix(&["nu".to_string(), "rho".to_string()], &rank_cols, &rank_vals)?)
    };
    Ok(ComparisonReport {
        experiment: signal.name().to_string(),
        seed,
        estimators: reports,
        rank,
        signal: pair,
        runs,
    })
}

impl ComparisonReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Io(e.to_string()))
    }

    /// Long-format CSV: `estimator,t,truth,estimate,error`, burn-in included.
    pub fn steps_csv(&self) -> Result<String> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        let io = |e: csv::Error| Error::Io(e.to_string());
        w.write_record(["estimator", "t", "truth", "estimate", "error"]).map_err(io)?;
        let ts: Vec<f64> = self.signal.truth.timestamps().collect();
        let truth = self.signal.truth.column(0);
        for run in &self.runs {
            for k in 1..ts.len() {
                let f = run.forecasts[k];
                w.write_record([
                    run.kind.name().to_string(),
                    format!("{}", ts[k]),
                    format!("{}", truth[k]),
                    format!("{f}"),
                    format!("{}", f - truth[k]),
                ])
                .map_err(io)?;
            }
        }
        String::from_utf8(w.into_inner().map_err(|e| Error::Io(e.to_string()))?).map_err(|e| Error::Io(e.to_string()))
    }

    /// Mean error per estimator name, for quick lookups.
    pub fn nu_by_name(&self) -> BTreeMap<String, f64> {
        self.estimators
            .iter()
            .filter_map(|e| e.nu.map(|nu| (e.name.clone(), nu)))
            .collect()
    }
}
