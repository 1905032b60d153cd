//! `akf`: signal generation, estimator comparison, attention training and the
//! broker autoscaling experiment.
//!
//! Exit codes: 0 success, 1 usage, 2 data or validation, 3 numeric failure.
//! Failures print one JSON object on stderr.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use akf_core::attention::{input_width, scale_from_series, train_on_series, AttentionParams, TrainConfig};
use akf_core::error::ErrorClass;
use akf_core::estimators::EstimatorKind;
use akf_core::evalkit::run_comparison_with;
use akf_core::numerics::{derive_seed, Vector};
use akf_core::sim::{run_stability_experiment, SimConfig, StabilityResult};
use akf_core::workloads::{
    add_noise_snr, gen_count_series, gen_cpu_synthetic, gen_loss_signal, gen_mackey_glass, gen_poisson_arrivals,
    load_trace_csv, save_trace_csv, write_atomic, CountProfile, CpuSpec, LossSpec, MgSpec, PoissonSpec, Trace,
};
use akf_core::{Error, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Serialize;

use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "akf", version, about = "Kalman, PCA and attention estimators for noisy latency and load signals")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic trace as `timestamp,value` CSV.
    Generate(GenerateArgs),
    /// Compare estimators on a generated signal; writes report.json and steps.csv.
    Estimate(RunArgs),
    /// Train attention weights on a CSV trace; writes parameters and a loss curve.
    TrainAttention(TrainArgs),
    /// Repeat the autoscaling run per estimator; writes stability.csv and sigma.json.
    ScaleSim(RunArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum GenKind {
    MackeyGlass,
    Poisson,
    Counts,
    CpuSynthetic,
    Loss,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    kind: GenKind,
    /// Output CSV of the measured (noisy) series.
    #[arg(long)]
    out: PathBuf,
    /// Optional CSV of the clean series, where the generator has one.
    #[arg(long)]
    truth_out: Option<PathBuf>,
    /// Defaults to 0 (or the spec file's `seed` for poisson).
    #[arg(long)]
    seed: Option<u64>,
    /// JSON object with the generator's own fields; flags override it.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Number of samples (mackey-glass, counts, cpu-synthetic, loss).
    #[arg(long)]
    length: Option<usize>,
    /// Mackey-Glass delay in samples.
    #[arg(long)]
    tau: Option<usize>,
    /// Add white noise at this SNR (mackey-glass only; clean otherwise).
    #[arg(long)]
    snr_db: Option<f64>,
    /// Poisson events per second.
    #[arg(long)]
    rate: Option<f64>,
    /// Poisson stream length in seconds.
    #[arg(long)]
    duration: Option<f64>,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// JSON run configuration; unknown keys are rejected.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `experiment`.
    #[arg(long)]
    experiment: Option<String>,
    /// Overrides `estimators` (comma-separated kinds).
    #[arg(long, value_delimiter = ',')]
    estimators: Option<Vec<String>>,
    /// Overrides `attention_params`.
    #[arg(long)]
    attention_params: Option<PathBuf>,
    /// Overrides `n_iter`.
    #[arg(long)]
    n_iter: Option<usize>,
    /// Overrides `output_dir`.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// CSV trace (`timestamp,value` or `timestamp,v0,v1,...`).
    #[arg(long)]
    trace: PathBuf,
    /// Output JSON with the trained parameters.
    #[arg(long)]
    out: PathBuf,
    /// Output CSV `epoch,loss`; defaults to `<out>.loss.csv`.
    #[arg(long)]
    loss_out: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-2)]
    lr: f64,
    /// Measurement window length.
    #[arg(long, default_value_t = 16)]
    window: usize,
    /// Hidden width; defaults to the input feature width.
    #[arg(long)]
    hidden: Option<usize>,
    /// Seeds the weight initialisation.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            report_error("usage", &e.render().to_string());
            return ExitCode::from(1);
        }
    };
    let outcome = match cli.command {
        Command::Generate(a) => cmd_generate(&a),
        Command::Estimate(a) => load_run_config(&a).and_then(|c| cmd_estimate(&c)),
        Command::TrainAttention(a) => cmd_train_attention(&a),
        Command::ScaleSim(a) => load_run_config(&a).and_then(|c| cmd_scale_sim(&c)),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => match e.class() {
            ErrorClass::Data => {
                report_error("data", &e.to_string());
                ExitCode::from(2)
            }
            ErrorClass::Numeric => {
                report_error("numeric", &e.to_string());
                ExitCode::from(3)
            }
        },
    }
}

fn report_error(kind: &str, message: &str) {
    let body = serde_json::json!({ "error": kind, "message": message.trim_end() });
    eprintln!("{body}");
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        line: e.line(),
        message: format!("{}: {e}", path.display()),
    })
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))
}

/// Creates the output directory and records the effective configuration.
fn write_outputs_dir(cfg: &RunConfig) -> Result<()> {
    ensure_dir(&cfg.output_dir)?;
    let mut json = cfg.to_json()?;
    json.push('\n');
    write_atomic(&cfg.output_dir.join("config.json"), json.as_bytes())
}

fn load_run_config(a: &RunArgs) -> Result<RunConfig> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(e) = &a.experiment {
        cfg.experiment = Some(e.clone());
    }
    if let Some(names) = &a.estimators {
        cfg.estimators = Some(
            names
                .iter()
                .map(|n| n.trim().parse::<EstimatorKind>())
                .collect::<Result<Vec<_>>>()?,
        );
    }
    if let Some(p) = &a.attention_params {
        cfg.attention_params = Some(p.clone());
    }
    if let Some(n) = a.n_iter {
        cfg.n_iter = n;
    }
    if let Some(d) = &a.output_dir {
        cfg.output_dir = d.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_generate(a: &GenerateArgs) -> Result<()> {
    let raw: Option<serde_json::Value> = a.spec.as_ref().map(|p| read_json(p)).transpose()?;
    let seed = a.seed.unwrap_or(0);
    fn parse<T: DeserializeOwned + Default>(raw: &Option<serde_json::Value>) -> Result<T> {
        match raw {
            None => Ok(T::default()),
            Some(v) => serde_json::from_value(v.clone()).map_err(|e| Error::Parse {
                line: 0,
                message: e.to_string(),
            }),
        }
    }
    let (measured, truth): (Trace, Option<Trace>) = match a.kind {
        GenKind::MackeyGlass => {
            let mut mg: MgSpec = parse(&raw)?;
            if let Some(t) = a.tau {
                mg.tau = t;
            }
            if let Some(n) = a.length {
                mg.length = n;
            }
            let clean = gen_mackey_glass(&mg)?;
            match a.snr_db {
                Some(db) => (add_noise_snr(&clean, db, derive_seed(seed, "noise"))?, Some(clean)),
                None => (clean, None),
            }
        }
        GenKind::Poisson => {
            let mut spec = match &raw {
                None => PoissonSpec {
                    rate: 1000.0,
                    duration: 1.0,
                    seed: 0,
                },
                Some(v) => serde_json::from_value(v.clone()).map_err(|e| Error::Parse {
                    line: 0,
                    message: e.to_string(),
                })?,
            };
            if let Some(s) = a.seed {
                spec.seed = s;
            }
            if let Some(r) = a.rate {
                spec.rate = r;
            }
            if let Some(d) = a.duration {
                spec.duration = d;
            }
            (gen_poisson_arrivals(&spec)?, None)
        }
        GenKind::Counts => {
            let mut p: CountProfile = parse(&raw)?;
            if let Some(n) = a.length {
                p.length = n;
            }
            let pair = gen_count_series(&p, seed)?;
            (pair.measured, Some(pair.truth))
        }
        GenKind::CpuSynthetic => {
            let mut s: CpuSpec = parse(&raw)?;
            if let Some(n) = a.length {
                s.length = n;
            }
            let pair = gen_cpu_synthetic(&s, seed)?;
            (pair.measured, Some(pair.truth))
        }
        GenKind::Loss => {
            let mut s: LossSpec = parse(&raw)?;
            if let Some(n) = a.length {
                s.length = n;
            }
            let pair = gen_loss_signal(&s, seed)?;
            (pair.measured, Some(pair.truth))
        }
    };
    save_trace_csv(&measured, &a.out)?;
    if let Some(p) = &a.truth_out {
        match truth {
            Some(t) => save_trace_csv(&t, p)?,
            None => log::warn!("this generator has no separate clean series; {} not written", p.display()),
        }
    }
    println!("wrote {} samples to {}", measured.len(), a.out.display());
    Ok(())
}

fn cmd_estimate(cfg: &RunConfig) -> Result<()> {
    let kinds = cfg.comparison_kinds();
    let pretrained = match &cfg.attention_params {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?;
            Some(AttentionParams::from_json(&text)?)
        }
        None => None,
    };
    let mut report = run_comparison_with(&cfg.signal, &kinds, &cfg.params, cfg.seed, pretrained.as_ref())?;
    if let Some(e) = &cfg.experiment {
        report.experiment = e.clone();
    }
    write_outputs_dir(cfg)?;
    let mut json = report.to_json()?;
    json.push('\n');
    write_atomic(&cfg.output_dir.join("report.json"), json.as_bytes())?;
    write_atomic(&cfg.output_dir.join("steps.csv"), report.steps_csv()?.as_bytes())?;
    for e in &report.estimators {
        match (e.nu, &e.failure) {
            (Some(nu), _) => println!("{:<14} nu={nu:.6} rho={:.6}", e.name, e.rho.unwrap_or(f64::NAN)),
            (None, Some(f)) => println!("{:<14} failed: {f}", e.name),
            (None, None) => println!("{:<14} no statistics", e.name),
        }
    }
    Ok(())
}

fn cmd_train_attention(a: &TrainArgs) -> Result<()> {
    let trace = load_trace_csv(&a.trace)?;
    let data: Vec<Vector> = trace.values().cloned().collect();
    let d_z = trace.dim();
    let hidden = a.hidden.unwrap_or(input_width(d_z));
    let init = AttentionParams::init(d_z, hidden, a.window, scale_from_series(&data), a.seed)?;
    let outcome = train_on_series(&init, &data, &TrainConfig { epochs: a.epochs, lr: a.lr })?;
    let mut json = outcome.params.to_json()?;
    json.push('\n');
    write_atomic(&a.out, json.as_bytes())?;
    let loss_path = a.loss_out.clone().unwrap_or_else(|| {
        let mut s = a.out.clone().into_os_string();
        s.push(".loss.csv");
        PathBuf::from(s)
    });
    let mut csv = String::from("epoch,loss\n");
    for (i, l) in outcome.losses.iter().enumerate() {
        csv.push_str(&format!("{},{l}\n", i + 1));
    }
    write_atomic(&loss_path, csv.as_bytes())?;
    println!(
        "loss {} -> {} over {} epochs",
        outcome.losses.first().copied().unwrap_or(f64::NAN),
        outcome.losses.last().copied().unwrap_or(f64::NAN),
        a.epochs
    );
    Ok(())
}

#[derive(Serialize)]
struct SigmaRow {
    estimator: String,
    /// Population variance of the initiation times, µs².
    sigma_us2: Option<f64>,
    events: usize,
    no_event_iterations: Vec<usize>,
}

#[derive(Serialize)]
struct SigmaSummary {
    experiment: String,
    seed: u64,
    n_iter: usize,
    estimators: Vec<SigmaRow>,
    /// σ_akf-pca < σ_ekf-pca < σ_ukf < σ_passive, when all four ran.
    ordering_holds: Option<bool>,
}

fn cmd_scale_sim(cfg: &RunConfig) -> Result<()> {
    let kinds = cfg.stability_kinds();
    let results: Vec<Result<StabilityResult>> = std::thread::scope(|s| {
        let handles: Vec<_> = kinds
            .iter()
            .map(|k| {
                let sim = SimConfig {
                    estimator: *k,
                    ..cfg.sim.clone()
                };
                s.spawn(move || run_stability_experiment(&cfg.workload, &sim, cfg.n_iter, cfg.seed))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("simulation thread panicked")).collect()
    });
    let results = results.into_iter().collect::<Result<Vec<_>>>()?;

    let mut csv = String::from("estimator,iteration,t_i_us,t_i_requests\n");
    for r in &results {
        for (i, (t, n)) in r.t_i_us.iter().zip(&r.t_i_requests).enumerate() {
            match (t, n) {
                (Some(t), Some(n)) => csv.push_str(&format!("{},{i},{t},{n}\n", r.estimator)),
                _ => csv.push_str(&format!("{},{i},no_event,no_event\n", r.estimator)),
            }
        }
    }
    let sigma_of = |k: EstimatorKind| results.iter().find(|r| r.estimator == k).and_then(|r| r.sigma);
    let ordering_holds = match (
        sigma_of(EstimatorKind::AkfPca),
        sigma_of(EstimatorKind::EkfPca),
        sigma_of(EstimatorKind::Ukf),
        sigma_of(EstimatorKind::Passive),
    ) {
        (Some(a), Some(b), Some(c), Some(d)) => Some(a < b && b < c && c < d),
        _ => None,
    };
    let summary = SigmaSummary {
        experiment: cfg.experiment.clone().unwrap_or_else(|| "scale-sim".into()),
        seed: cfg.seed,
        n_iter: cfg.n_iter,
        estimators: results
            .iter()
            .map(|r| SigmaRow {
                estimator: r.estimator.to_string(),
                sigma_us2: r.sigma,
                events: r.t_i_us.iter().flatten().count(),
                no_event_iterations: r.excluded.clone(),
            })
            .collect(),
        ordering_holds,
    };
    write_outputs_dir(cfg)?;
    write_atomic(&cfg.output_dir.join("stability.csv"), csv.as_bytes())?;
    write_atomic(&cfg.output_dir.join("sigma.json"), to_json(&summary)?.as_bytes())?;
    for row in &summary.estimators {
        match row.sigma_us2 {
            Some(s) => println!("{:<10} sigma={s:.3} us^2 ({} events)", row.estimator, row.events),
            None => println!("{:<10} sigma undefined ({} events)", row.estimator, row.events),
        }
    }
    if let Some(ok) = ordering_holds {
        println!("ordering akf-pca < ekf-pca < ukf < passive: {}", if ok { "holds" } else { "violated" });
    }
    Ok(())
}
