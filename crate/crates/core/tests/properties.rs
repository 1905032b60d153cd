//! Property tests for the invariants that hold across every input.

use akf_core::attention::{attn_forward, is_convex_fusion, AttentionParams};
use akf_core::baselines::{savgol_filter, SavgolSpec};
use akf_core::estimators::{Calibration, EstimatorKind, EstimatorParams, NoiseModel};
use akf_core::evalkit::{error_stats_slices, rank_matrix, residual_variance_xy, run_estimator, SignalSpec};
use akf_core::filter::{ckf_step, ekf_step, kf_step, ukf_step, LinearModel, NonlinearModel, StateEstimate, UkfConfig};
use akf_core::numerics::{asymmetry, min_eigenvalue, Matrix, Vector};
use akf_core::pca::{MeasurementWindow, PcaModel};
use akf_core::workloads::{gen_cpu_synthetic, gen_poisson_arrivals, CpuSpec, PoissonSpec};
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize, lo: f64, hi: f64) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(lo..hi, rows * cols).prop_map(move |v| Matrix::from_vec(rows, cols, v))
}

/// `LLᵀ + floor·I`.
fn spd(n: usize, floor: f64) -> impl Strategy<Value = Matrix> {
    matrix(n, n, -1.0, 1.0).prop_map(move |l| &l * l.transpose() + Matrix::identity(n, n) * floor)
}

fn linear_model(n: usize, m: usize) -> impl Strategy<Value = LinearModel> {
    (matrix(n, n, -1.0, 1.0), matrix(m, n, -1.0, 1.0), spd(n, 1e-3), spd(m, 1e-2))
        .prop_map(|(a, h, q, r)| LinearModel::new(a, h, q, r).unwrap())
}

fn healthy(s: &StateEstimate) -> bool {
    asymmetry(&s.p) <= 1e-9 && min_eigenvalue(&s.p).unwrap() >= -1e-9
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn covariances_stay_symmetric_psd(
        (lm, x0, p0, zs) in (1usize..=3, 1usize..=3).prop_flat_map(|(n, m)| (
            linear_model(n, m),
            prop::collection::vec(-2.0..2.0f64, n),
            spd(n, 1e-3),
            prop::collection::vec(prop::collection::vec(-3.0..3.0f64, m), 20),
        ))
    ) {
        let nl = NonlinearModel::from_linear(&lm);
        let cfg = UkfConfig::default();
        let init = StateEstimate::new(Vector::from_vec(x0), p0).unwrap();
        let (mut kf, mut ekf, mut ukf, mut ckf) = (init.clone(), init.clone(), init.clone(), init);
        for z in &zs {
            let z = Vector::from_vec(z.clone());
            kf = kf_step(&kf, &lm, &z).unwrap().posterior;
            ekf = ekf_step(&ekf, &nl, &z).unwrap().posterior;
            ukf = ukf_step(&ukf, &nl, &cfg, &z).unwrap().posterior;
            ckf = ckf_step(&ckf, &nl, &z).unwrap().posterior;
            for s in [&kf, &ekf, &ukf, &ckf] {
                prop_assert!(healthy(s));
            }
        }
    }

    #[test]
    fn pca_component_count_is_monotone_in_threshold(
        data in prop::collection::vec(prop::collection::vec(-5.0..5.0f64, 3), 4..20),
        t1 in 0.0..4.0f64,
        dt in 0.0..4.0f64,
    ) {
        let samples: Vec<Vector> = data.into_iter().map(Vector::from_vec).collect();
        let lo = PcaModel::fit_samples(&samples, t1).unwrap();
        let hi = PcaModel::fit_samples(&samples, t1 + dt).unwrap();
        prop_assert!(hi.n_components() <= lo.n_components());
        prop_assert!(hi.n_components() >= 1);
    }

    #[test]
    fn savgol_weights_sum_to_one_and_filter_is_linear(
        half in 1usize..5,
        degree in 0usize..4,
        x in prop::collection::vec(-10.0..10.0f64, 12),
        y in prop::collection::vec(-10.0..10.0f64, 12),
        a in -3.0..3.0f64,
        b in -3.0..3.0f64,
    ) {
        let spec = SavgolSpec { window: 2 * half + 1, degree: degree.min(2 * half) };
        let c = spec.coefficients().unwrap();
        prop_assert!((c.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        let mix: Vec<f64> = x.iter().zip(&y).map(|(u, v)| a * u + b * v).collect();
        let fx = savgol_filter(&spec, &x).unwrap();
        let fy = savgol_filter(&spec, &y).unwrap();
        for (k, f) in savgol_filter(&spec, &mix).unwrap().iter().enumerate() {
            prop_assert!((f - (a * fx[k] + b * fy[k])).abs() < 1e-8);
        }
    }

    #[test]
    fn attention_fusion_is_convex(
        (d_z, d_h, n) in (1usize..=3, 1usize..=4, 2usize..=6),
        seed in any::<u64>(),
        w_l_scale in 0.0..5.0f64,
        values in prop::collection::vec(-50.0..50.0f64, 18),
    ) {
        let mut p = AttentionParams::init(d_z, d_h, n, Vector::from_element(d_z, 3.0), seed).unwrap();
        let cols = p.w_l.ncols();
        p.w_l = Matrix::from_fn(1, cols, |_, j| w_l_scale * ((j as f64 + 1.0) * 0.7).sin());
        let mut w = MeasurementWindow::new(n).unwrap();
        for i in 0..n {
            w.push(i as f64, Vector::from_fn(d_z, |j, _| values[(i * d_z + j) % values.len()])).unwrap();
        }
        let out = attn_forward(&p, &w).unwrap();
        let zs: Vec<&Vector> = w.values().collect();
        prop_assert!(is_convex_fusion(&out.s, &zs, &out.z_fused));
    }

    #[test]
    fn residual_variance_ignores_linear_trends(
        y in prop::collection::vec(-5.0..5.0f64, 3..40),
        a in -100.0..100.0f64,
        b in -10.0..10.0f64,
    ) {
        let t: Vec<f64> = (0..y.len()).map(|i| i as f64 * 0.5).collect();
        let shifted: Vec<f64> = y.iter().zip(&t).map(|(v, ti)| v + a + b * ti).collect();
        let r0 = residual_variance_xy(&t, &y).unwrap();
        let r1 = residual_variance_xy(&t, &shifted).unwrap();
        prop_assert!((r0 - r1).abs() <= 1e-8 * (1.0 + r0.abs()));
    }

    #[test]
    fn identical_series_have_zero_error(x in prop::collection::vec(-1e6..1e6f64, 1..50)) {
        let s = error_stats_slices(&x, &x).unwrap();
        prop_assert_eq!((s.nu, s.rho, s.mse, s.rmse), (0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn mean_ranks_sum_to_a_constant(
        values in prop::collection::vec(prop::collection::vec(-1.0..1.0f64, 5), 1..6),
    ) {
        let rows: Vec<String> = (0..values.len()).map(|i| format!("m{i}")).collect();
        let cols: Vec<String> = (0..5).map(|j| format!("e{j}")).collect();
        let t = rank_matrix(&rows, &cols, &values).unwrap();
        prop_assert!((t.mean_rank.iter().sum::<f64>() - 15.0).abs() < 1e-9);
    }

    #[test]
    fn estimator_params_round_trip(
        q_ratio in 1e-4..1.0f64,
        batch in 1usize..8,
        window in 2usize..32,
        threshold in prop::option::of(0.0..2.0f64),
    ) {
        let p = EstimatorParams {
            q_ratio,
            batch,
            attention_window: window,
            pca_threshold: threshold,
            ..EstimatorParams::default()
        };
        let back: EstimatorParams = serde_json::from_str(&serde_json::to_string(&p).unwrap()).unwrap();
        prop_assert_eq!(back, p);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn generators_and_estimators_are_deterministic(seed in any::<u64>(), k in 0usize..EstimatorKind::ALL.len()) {
        let spec = CpuSpec { length: 150, ..CpuSpec::default() };
        let a = gen_cpu_synthetic(&spec, seed).unwrap();
        prop_assert_eq!(&a, &gen_cpu_synthetic(&spec, seed).unwrap());
        let kind = EstimatorKind::ALL[k];
        let params = EstimatorParams::default();
        let cal = Calibration::untrained(NoiseModel { r: 0.0064, q_level: 3e-4, q_trend: 3e-6 });
        let z = a.measured.column(0);
        let r1 = run_estimator(kind, &params, &cal, &z);
        let r2 = run_estimator(kind, &params, &cal, &z);
        prop_assert_eq!(
            r1.forecasts.iter().map(|f| f.to_bits()).collect::<Vec<_>>(),
            r2.forecasts.iter().map(|f| f.to_bits()).collect::<Vec<_>>()
        );
        let sig = SignalSpec::CpuSynthetic { spec };
        let back: SignalSpec = serde_json::from_str(&serde_json::to_string(&sig).unwrap()).unwrap();
        prop_assert_eq!(back, sig);
    }
}

#[test]
fn poisson_thinning_preserves_rate() {
    let lambda = 1000.0;
    let stream = gen_poisson_arrivals(&PoissonSpec { rate: lambda, duration: 100.0, seed: 17 }).unwrap();
    let mut coin = akf_core::numerics::SeededRng::new(18);
    let (mut a, mut b) = (0usize, 0usize);
    for _ in stream.timestamps() {
        if coin.bernoulli(0.3) {
            a += 1;
        } else {
            b += 1;
        }
    }
    let (ra, rb) = (a as f64 / 100.0, b as f64 / 100.0);
    assert!(((ra + rb) - lambda).abs() / lambda < 0.03);
    assert!((ra - 0.3 * lambda).abs() / (0.3 * lambda) < 0.03);
}
