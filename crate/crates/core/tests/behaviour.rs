//! End-to-end behaviour of the estimators, simulator and fixtures.

use std::collections::HashSet;

use akf_core::estimators::{calibrate_noise, Calibration, EstimatorKind, EstimatorParams, NoiseModel};
use akf_core::evalkit::{error_stats_slices, run_estimator, BURN_IN};
use akf_core::sim::{
    calibrate_sim, poisson_workload, run_iteration, ScalingTrace, SimConfig, SimWorkload,
};
use akf_core::workloads::{
    add_noise_snr, gen_count_series, gen_cpu_synthetic, gen_mackey_glass, load_trace_csv, trace_to_csv, CountProfile,
    CpuSpec, MgSpec, Trace,
};

const FIXTURES: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures");

fn nu(kind: EstimatorKind, params: &EstimatorParams, cal: &Calibration, measured: &[f64], truth: &[f64]) -> f64 {
    let run = run_estimator(kind, params, cal, measured);
    assert!(run.failure.is_none(), "{kind}: {:?}", run.failure);
    error_stats_slices(&run.forecasts[BURN_IN..], &truth[BURN_IN..]).unwrap().nu
}

#[test]
fn golden_count_series() {
    let profile = CountProfile {
        length: 120,
        ..CountProfile::default()
    };
    let pair = gen_count_series(&profile, 42).unwrap();
    let golden = std::fs::read_to_string(format!("{FIXTURES}/counts_len120_seed42.csv")).unwrap();
    assert_eq!(trace_to_csv(&pair.measured).unwrap(), golden);
}

#[test]
fn ten_row_trace_fixture() {
    let t = load_trace_csv(format!("{FIXTURES}/trace10.csv").as_ref()).unwrap();
    let ts: Vec<f64> = t.timestamps().collect();
    assert_eq!(ts, (0..10).map(|i| 1.5 * i as f64).collect::<Vec<_>>());
    assert_eq!(t.column(0), vec![0.25, 0.5, -1.25, 2.0, 1e-3, 0.0, 3.5, -0.125, 100.0, 7.75]);
}

#[test]
fn linearisation_beats_least_squares_on_high_variance_trace() {
    let spec = CpuSpec {
        length: 500,
        ..CpuSpec::default()
    };
    let sig = gen_cpu_synthetic(&spec, 11).unwrap();
    let (measured, truth) = (sig.measured.column(0), sig.truth.column(0));
    let params = EstimatorParams::default();
    let cal = Calibration::untrained(calibrate_noise(&measured, &params));
    let lin = nu(EstimatorKind::EkfPca, &params, &cal, &measured, &truth);
    let ls = nu(EstimatorKind::EkfPcaLs, &params, &cal, &measured, &truth);
    assert!(lin < ls, "lin {lin} vs ls {ls}");
}

#[test]
fn joint_is_close_to_its_better_branch_on_mackey_glass() {
    let mg = MgSpec {
        length: 200,
        ..MgSpec::default()
    };
    let clean = gen_mackey_glass(&mg).unwrap();
    let noisy = add_noise_snr(&clean, 6.0, 3).unwrap();
    let (measured, truth) = (noisy.column(0), clean.column(0));
    let params = EstimatorParams::default();
    let cal = Calibration::untrained(calibrate_noise(&measured, &params));
    let joint = nu(EstimatorKind::JointEkfPca, &params, &cal, &measured, &truth);
    let ekf = nu(EstimatorKind::Ekf, &params, &cal, &measured, &truth);
    let pca = nu(EstimatorKind::EkfPca, &params, &cal, &measured, &truth);
    assert!(joint <= 1.1 * ekf.min(pca), "joint {joint}, ekf {ekf}, ekf-pca {pca}");
}

#[test]
fn trained_attention_does_not_hurt_on_held_out_steps() {
    let sig = gen_cpu_synthetic(&CpuSpec::default(), 21).unwrap();
    let (measured, truth) = (sig.measured.column(0), sig.truth.column(0));
    let split = measured.len() / 2;
    let params = EstimatorParams::default();
    let trained = Calibration::fit(&[EstimatorKind::Akf], &params, &measured[..split], 5).unwrap();
    let untrained = Calibration::untrained(trained.noise);
    let held = (&measured[split..], &truth[split..]);
    let a = nu(EstimatorKind::Akf, &params, &trained, held.0, held.1);
    let b = nu(EstimatorKind::Akf, &params, &untrained, held.0, held.1);
    assert!(a <= b, "trained {a} vs untrained {b}");
}

fn passive_cfg(threshold_us: f64) -> SimConfig {
    SimConfig {
        estimator: EstimatorKind::Passive,
        update_rate: 1.0,
        threshold_us,
        scaling_duration_us: 5.0,
        service_us: 1.0,
        initial_brokers: 1,
        jitter_us: 0.0,
        ..SimConfig::default()
    }
}

fn placeholder_cal() -> Calibration {
    Calibration::untrained(NoiseModel {
        r: 1.0,
        q_level: 1.0,
        q_trend: 1.0,
    })
}

#[test]
fn passive_scaling_matches_queue_recursion() {
    // gaps shrink from 1.4 µs to 0.07 µs against 1 µs of service
    let mut sends = Vec::with_capacity(20);
    let mut t = 0.0;
    for i in 0..20 {
        sends.push(t);
        t += 1.4 - 0.07 * i as f64;
    }
    let workload = Trace::from_scalars(&sends, &[1.0; 20]).unwrap();
    let threshold = 2.0;
    let run = run_iteration(&workload, &passive_cfg(threshold), &placeholder_cal(), 0).unwrap();

    // d_i = max(a_i, d_{i−1}) + s on one FIFO broker
    let mut prev = f64::NEG_INFINITY;
    let mut expected = None;
    for (i, a) in sends.iter().enumerate() {
        let d = a.max(prev) + 1.0;
        prev = d;
        if d - a > threshold {
            expected = Some((i, d));
            break;
        }
    }
    let (idx, at) = expected.expect("fixture never crosses the threshold");
    let ev = run.event.expect("no scaling event");
    assert_eq!(ev.initiated_us, at);
    assert_eq!(ev.request_index, idx + 1);
    assert_eq!(ev.completed_us, at + 5.0);
    for d in run.pre_scaling() {
        assert_eq!(d.estimate_us, d.latency_us);
    }
}

fn overload_run(rate_per_s: f64, duration_s: f64, seed: u64) -> ScalingTrace {
    let workload = SimWorkload { rate_per_s, duration_s };
    let cfg = SimConfig {
        estimator: EstimatorKind::EkfPca,
        ..SimConfig::default()
    };
    let cal = calibrate_sim(&workload, &cfg, seed).unwrap();
    let trace = poisson_workload(&workload, seed).unwrap();
    run_iteration(&trace, &cfg, &cal, seed + 1).unwrap()
}

#[test]
fn scaling_relieves_congestion() {
    // ρ = 1.5 on one broker, 0.75 after scaling
    let run = overload_run(1_500_000.0, 0.004, 4);
    let ev = run.event.expect("overload never scaled");
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let pre: Vec<f64> = run.pre_scaling().iter().map(|d| d.latency_us).collect();
    let congested = &pre[pre.len() - pre.len() / 4..];
    let tail: Vec<f64> = run
        .deliveries
        .iter()
        .filter(|d| d.send_us > ev.completed_us + 2000.0)
        .map(|d| d.latency_us)
        .collect();
    assert!(!tail.is_empty());
    assert!(mean(&tail) < mean(congested), "post {} vs congested {}", mean(&tail), mean(congested));
}

#[test]
fn messages_are_conserved_and_causal() {
    let run = overload_run(2_000_000.0, 0.0009, 9);
    assert_eq!(run.deliveries.len(), run.produced);
    let ids: HashSet<usize> = run.deliveries.iter().map(|d| d.message).collect();
    assert_eq!(ids.len(), run.produced);
    let service = SimConfig::default().service_us;
    for w in run.deliveries.windows(2) {
        assert!(w[0].deliver_us <= w[1].deliver_us);
    }
    for d in &run.deliveries {
        assert!(d.deliver_us >= d.send_us + service - 1e-9);
        assert_eq!(d.latency_us, d.deliver_us - d.send_us);
    }
    // FIFO per broker: send order is preserved among each broker's deliveries
    let brokers = run.deliveries.iter().map(|d| d.broker).max().unwrap() + 1;
    for b in 0..brokers {
        let sends: Vec<f64> = run.deliveries.iter().filter(|d| d.broker == b).map(|d| d.send_us).collect();
        assert!(sends.windows(2).all(|w| w[0] <= w[1]), "broker {b} reordered");
    }
    if let Some(ev) = run.event {
        assert!(ev.completed_us >= ev.initiated_us);
        assert_eq!(run.deliveries[ev.request_index - 1].deliver_us, ev.initiated_us);
        assert!(brokers <= 2);
    } else {
        assert_eq!(brokers, 1);
    }
}
