use serde::{Deserialize, Serialize};

use super::Trace;
use crate::error::{Error, Result};
use crate::numerics::{SeededRng, Vector};

/// A generated signal: the clean truth, what a sensor reports, and the
/// indices where the truth changes level abruptly (with the jump height).
#[derive(Debug, Clone, PartialEq)]
pub struct SignalPair {
    pub truth: Trace,
    pub measured: Trace,
    pub steps: Vec<(usize, f64)>,
}

pub type CpuTrace = SignalPair;

fn scalar_trace(ts: &[f64], xs: &[f64]) -> Result<Trace> {
    Trace::from_scalars(ts, xs)
}

/// Delay differential equation `dx/dt = βx(t−τ)/(1 + x(t−τ)^n) − γx(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MgSpec {
    /// Delay in samples.
    pub tau: usize,
    pub beta: f64,
    pub gamma: f64,
    pub n_exp: f64,
    pub dt: f64,
    pub x0: f64,
    pub length: usize,
}

impl Default for MgSpec {
    fn default() -> Self {
        MgSpec {
            tau: 30,
            beta: 0.2,
            gamma: 0.1,
            n_exp: 10.0,
            dt: 1.0,
            x0: 1.2,
            length: 1000,
        }
    }
}

const MG_DIVERGENCE: f64 = 1e6;

/// Fixed-step Euler integration; the history before the first sample is `x0`.
pub fn gen_mackey_glass(spec: &MgSpec) -> Result<Trace> {
    if spec.tau < 1 || spec.length < spec.tau || !(spec.dt > 0.0) {
        return Err(Error::Validation(format!(
            "Mackey-Glass needs tau ≥ 1, length ≥ tau and dt > 0 (tau={}, length={}, dt={})",
            spec.tau, spec.length, spec.dt
        )));
    }
    for (v, name) in [(spec.beta, "beta"), (spec.gamma, "gamma"), (spec.n_exp, "n_exp"), (spec.x0, "x0")] {
        if !v.is_finite() {
            return Err(Error::Validation(format!("Mackey-Glass {name} must be finite")));
        }
    }
    let mut xs = Vec::with_capacity(spec.length);
    xs.push(spec.x0);
    for k in 0..spec.length - 1 {
        let delayed = if k >= spec.tau { xs[k - spec.tau] } else { spec.x0 };
        let x = xs[k];
        let next = x + spec.dt * (spec.beta * delayed / (1.0 + delayed.powf(spec.n_exp)) - spec.gamma * x);
        if !next.is_finite() || next.abs() > MG_DIVERGENCE {
            return Err(Error::Divergence(format!("Mackey-Glass diverged at step {}", k + 1)));
        }
        xs.push(next);
    }
    let ts: Vec<f64> = (0..spec.length).map(|k| k as f64 * spec.dt).collect();
    scalar_trace(&ts, &xs)
}

/// Adds white Gaussian noise with power `P_signal / 10^(snr_db/10)`.
///
/// `snr_db = +∞` leaves the trace unchanged, as does a zero-power signal.
pub fn add_noise_snr(trace: &Trace, snr_db: f64, seed: u64) -> Result<Trace> {
    if snr_db.is_nan() || snr_db == f64::NEG_INFINITY {
        return Err(Error::Validation(format!("SNR {snr_db} dB is not usable")));
    }
    if trace.is_empty() {
        return Err(Error::InsufficientData {
            context: "noise injection",
            needed: 1,
            got: 0,
        });
    }
    if snr_db == f64::INFINITY {
        return Ok(trace.clone());
    }
    let count = (trace.len() * trace.dim()) as f64;
    let power = trace.values().map(|v| v.norm_squared()).sum::<f64>() / count;
    if power == 0.0 {
        log::warn!("zero-power signal: no noise added");
        return Ok(trace.clone());
    }
    let sd = (power / 10f64.powf(snr_db / 10.0)).sqrt();
    let mut rng = SeededRng::new(seed);
    trace.map_values(|_, v| v.map(|x| x + rng.normal(0.0, sd)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoissonSpec {
    /// Events per second.
    pub rate: f64,
    /// Seconds.
    pub duration: f64,
    pub seed: u64,
}

/// Event times with i.i.d. exponential gaps; every value is 1.
pub fn gen_poisson_arrivals(spec: &PoissonSpec) -> Result<Trace> {
    if !(spec.rate > 0.0 && spec.rate.is_finite()) || !(spec.duration >= 0.0 && spec.duration.is_finite()) {
        return Err(Error::Validation(format!(
            "Poisson stream needs rate > 0 and a finite duration (rate={}, duration={})",
            spec.rate, spec.duration
        )));
    }
    let mut rng = SeededRng::new(spec.seed);
    let mut points = Vec::new();
    let mut t = 0.0f64;
    loop {
        let mut next = t + rng.exponential(spec.rate);
        if next <= t {
            next = t.next_up();
        }
        if next > spec.duration {
            break;
        }
        points.push((next, Vector::from_element(1, 1.0)));
        t = next;
    }
    Trace::new(points)
}

/// Per-minute event counts with a daily cycle and decaying bursts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CountProfile {
    /// Number of one-minute samples.
    pub length: usize,
    /// Mean count per minute.
    pub base_rate: f64,
    /// Relative amplitude of the daily cycle, in `[0, 1]`.
    pub diurnal_amplitude: f64,
    /// Cycle period in minutes.
    pub diurnal_period: f64,
    /// Probability that a burst starts in a given minute.
    pub burst_rate: f64,
    /// Burst peak as a multiple of `base_rate`.
    pub burst_magnitude: f64,
    /// E-folding decay of a burst, minutes.
    pub burst_duration: f64,
}

impl Default for CountProfile {
    fn default() -> Self {
        CountProfile {
            length: 4320,
            base_rate: 40.0,
            diurnal_amplitude: 0.5,
            diurnal_period: 1440.0,
            burst_rate: 0.002,
            burst_magnitude: 3.0,
            burst_duration: 30.0,
        }
    }
}

/// Counts at 60 s spacing; the truth is the Poisson intensity.
pub fn gen_count_series(profile: &CountProfile, seed: u64) -> Result<SignalPair> {
    let p = profile;
    let ok = p.base_rate >= 0.0
        && (0.0..=1.0).contains(&p.diurnal_amplitude)
        && p.diurnal_period > 0.0
        && (0.0..=1.0).contains(&p.burst_rate)
        && p.burst_magnitude >= 0.0
        && p.burst_duration > 0.0
        && p.length > 0;
    if !ok {
        return Err(Error::Validation(format!("invalid count profile {p:?}")));
    }
    let mut rng = SeededRng::new(seed);
    let mut burst = 0.0f64;
    let mut ts = Vec::with_capacity(p.length);
    let mut intensity = Vec::with_capacity(p.length);
    let mut counts = Vec::with_capacity(p.length);
    let decay = (-1.0 / p.burst_duration).exp();
    for k in 0..p.length {
        burst *= decay;
        if rng.bernoulli(p.burst_rate) {
            burst += p.burst_magnitude * p.base_rate;
        }
        let phase = 2.0 * std::f64::consts::PI * k as f64 / p.diurnal_period;
        let lambda = p.base_rate * (1.0 + p.diurnal_amplitude * phase.sin()) + burst;
        ts.push(60.0 * k as f64);
        intensity.push(lambda);
        counts.push(rng.poisson(lambda) as f64);
    }
    Ok(SignalPair {
        truth: scalar_trace(&ts, &intensity)?,
        measured: scalar_trace(&ts, &counts)?,
        steps: Vec::new(),
    })
}

/// CPU-utilisation-like signal: random level regimes with AR(1) wander,
/// sensor noise and positive spikes, clamped to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CpuSpec {
    pub length: usize,
    /// Mean regime duration in samples.
    pub mean_regime_length: f64,
    pub level_min: f64,
    pub level_max: f64,
    /// Innovation standard deviation of the within-regime wander.
    pub wander_sd: f64,
    pub noise_sd: f64,
    pub spike_prob: f64,
    pub spike_height: f64,
}

impl Default for CpuSpec {
    fn default() -> Self {
        CpuSpec {
            length: 2000,
            mean_regime_length: 150.0,
            level_min: 0.1,
            level_max: 0.9,
            wander_sd: 0.01,
            noise_sd: 0.08,
            spike_prob: 0.03,
            spike_height: 0.35,
        }
    }
}

pub fn gen_cpu_synthetic(spec: &CpuSpec, seed: u64) -> Result<CpuTrace> {
    let s = spec;
    let ok = s.length > 0
        && s.mean_regime_length >= 1.0
        && 0.0 <= s.level_min
        && s.level_min <= s.level_max
        && s.level_max <= 1.0
        && s.wander_sd >= 0.0
        && s.noise_sd >= 0.0
        && (0.0..=1.0).contains(&s.spike_prob)
        && s.spike_height >= 0.0;
    if !ok {
        return Err(Error::Validation(format!("invalid CPU spec {s:?}")));
    }
    let mut rng = SeededRng::new(seed);
    let draw_level = |rng: &mut SeededRng| s.level_min + (s.level_max - s.level_min) * rng.uniform();
    let mut level = draw_level(&mut rng);
    let mut wander = 0.0f64;
    let mut remaining = 1 + rng.exponential(1.0 / s.mean_regime_length) as usize;
    let mut truth = Vec::with_capacity(s.length);
    let mut measured = Vec::with_capacity(s.length);
    let mut steps = Vec::new();
    for k in 0..s.length {
        if remaining == 0 {
            let next = draw_level(&mut rng);
            steps.push((k, next - level));
            level = next;
            wander = 0.0;
            remaining = 1 + rng.exponential(1.0 / s.mean_regime_length) as usize;
        }
        remaining -= 1;
        wander = 0.9 * wander + rng.normal(0.0, s.wander_sd);
        let x = (level + wander).clamp(0.0, 1.0);
        let mut z = x + rng.normal(0.0, s.noise_sd);
        if rng.bernoulli(s.spike_prob) {
            z += s.spike_height * (0.5 + rng.uniform());
        }
        truth.push(x);
        measured.push(z.clamp(0.0, 1.0));
    }
    let ts: Vec<f64> = (0..s.length).map(|k| k as f64).collect();
    Ok(SignalPair {
        truth: scalar_trace(&ts, &truth)?,
        measured: scalar_trace(&ts, &measured)?,
        steps,
    })
}

/// Training-loss-like signal: exponentially decaying mean with Gaussian
/// noise and Pareto-tailed upward spikes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSpec {
    pub length: usize,
    pub initial: f64,
    pub floor: f64,
    /// E-folding decay in samples.
    pub decay: f64,
    pub noise_sd: f64,
    pub spike_prob: f64,
    pub spike_scale: f64,
    /// Pareto tail index of spike sizes.
    pub tail_index: f64,
}

impl Default for LossSpec {
    fn default() -> Self {
        LossSpec {
            length: 1000,
            initial: 2.5,
            floor: 0.3,
            decay: 200.0,
            noise_sd: 0.02,
            spike_prob: 0.03,
            spike_scale: 0.2,
            tail_index: 2.5,
        }
    }
}

pub fn gen_loss_signal(spec: &LossSpec, seed: u64) -> Result<SignalPair> {
    let s = spec;
    let ok = s.length > 0
        && s.initial.is_finite()
        && s.floor.is_finite()
        && s.decay > 0.0
        && s.noise_sd >= 0.0
        && (0.0..=1.0).contains(&s.spike_prob)
        && s.spike_scale >= 0.0
        && s.tail_index > 0.0;
    if !ok {
        return Err(Error::Validation(format!("invalid loss spec {s:?}")));
    }
    let mut rng = SeededRng::new(seed);
    let mut truth = Vec::with_capacity(s.length);
    let mut measured = Vec::with_capacity(s.length);
    for k in 0..s.length {
        let x = s.floor + (s.initial - s.floor) * (-(k as f64) / s.decay).exp();
        let mut z = x + rng.normal(0.0, s.noise_sd);
        if rng.bernoulli(s.spike_prob) {
            let u = 1.0 - rng.uniform();
            z += s.spike_scale * (u.powf(-1.0 / s.tail_index) - 1.0);
        }
        truth.push(x);
        measured.push(z);
    }
    let ts: Vec<f64> = (0..s.length).map(|k| k as f64).collect();
    Ok(SignalPair {
        truth: scalar_trace(&ts, &truth)?,
        measured: scalar_trace(&ts, &measured)?,
        steps: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mg_pure_decay() {
        let spec = MgSpec {
            beta: 0.0,
            gamma: 0.5,
            length: 50,
            ..MgSpec::default()
        };
        let xs = gen_mackey_glass(&spec).unwrap().column(0);
        assert!(xs.windows(2).all(|w| w[1] < w[0]));
        assert!((xs[1] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn mg_zero_is_fixed_point() {
        let spec = MgSpec {
            x0: 0.0,
            ..MgSpec::default()
        };
        assert!(gen_mackey_glass(&spec).unwrap().column(0).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn mg_defaults_bounded_and_match_reference_loop() {
        let spec = MgSpec {
            length: 5000,
            ..MgSpec::default()
        };
        let xs = gen_mackey_glass(&spec).unwrap().column(0);
        // reference integrator over a ring buffer of the last τ values
        let mut ring = vec![1.2f64; 30];
        let mut cur = 1.2f64;
        for (k, x) in xs.iter().enumerate() {
            assert_eq!(*x, cur, "step {k}");
            assert!(*x > 0.0 && *x < 2.0);
            let delayed = ring[k % 30];
            ring[k % 30] = cur;
            cur += 0.2 * delayed / (1.0 + delayed.powf(10.0)) - 0.1 * cur;
        }
    }

    #[test]
    fn snr_six_db_noise_variance() {
        let n = 10_000;
        let amp = 2f64.sqrt();
        let xs: Vec<f64> = (0..n).map(|k| amp * (k as f64 * 0.05).sin()).collect();
        let clean = Trace::from_series(&xs).unwrap();
        let noisy = add_noise_snr(&clean, 6.0, 77).unwrap();
        let noise: Vec<f64> = noisy.column(0).iter().zip(&xs).map(|(a, b)| a - b).collect();
        let mean = noise.iter().sum::<f64>() / n as f64;
        let var = noise.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n as f64;
        let power = xs.iter().map(|x| x * x).sum::<f64>() / n as f64;
        let expected = power * 10f64.powf(-0.6);
        assert!((var / expected - 1.0).abs() < 0.05, "var {var} expected {expected}");
    }

    #[test]
    fn snr_degenerate_cases() {
        let t = Trace::from_series(&[1.0, 2.0]).unwrap();
        assert_eq!(add_noise_snr(&t, f64::INFINITY, 1).unwrap(), t);
        let z = Trace::from_series(&[0.0, 0.0]).unwrap();
        assert_eq!(add_noise_snr(&z, 6.0, 1).unwrap(), z);
    }

    #[test]
    fn poisson_rate_and_determinism() {
        let spec = PoissonSpec {
            rate: 1000.0,
            duration: 100.0,
            seed: 12,
        };
        let a = gen_poisson_arrivals(&spec).unwrap();
        assert!(((a.len() as f64) / 100_000.0 - 1.0).abs() < 0.02);
        let ts: Vec<f64> = a.timestamps().collect();
        let mean_gap = ts.last().unwrap() / ts.len() as f64;
        assert!((mean_gap * 1000.0 - 1.0).abs() < 0.02);
        assert_eq!(a, gen_poisson_arrivals(&spec).unwrap());
    }

    #[test]
    fn counts_degenerate_profiles() {
        let zero = CountProfile {
            base_rate: 0.0,
            burst_rate: 0.0,
            length: 100,
            ..CountProfile::default()
        };
        assert!(gen_count_series(&zero, 3).unwrap().measured.column(0).iter().all(|&c| c == 0.0));
        let flat = CountProfile {
            diurnal_amplitude: 0.0,
            burst_rate: 0.0,
            length: 5000,
            ..CountProfile::default()
        };
        let c = gen_count_series(&flat, 3).unwrap().measured.column(0);
        let mean = c.iter().sum::<f64>() / c.len() as f64;
        assert!((mean - 40.0).abs() < 0.5);
    }

    #[test]
    fn cpu_steps_match_truth() {
        let sig = gen_cpu_synthetic(&CpuSpec::default(), 8).unwrap();
        assert!(!sig.steps.is_empty());
        let m = sig.measured.column(0);
        assert!(m.iter().all(|v| (0.0..=1.0).contains(v)));
        for w in sig.steps.windows(2) {
            assert!(w[0].0 < w[1].0);
        }
    }

    #[test]
    fn loss_signal_decays() {
        let sig = gen_loss_signal(&LossSpec::default(), 2).unwrap();
        let t = sig.truth.column(0);
        assert!(t.windows(2).all(|w| w[1] <= w[0]));
        assert!((t[0] - 2.5).abs() < 1e-15);
    }
}
