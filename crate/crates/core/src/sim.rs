//! Discrete-event broker cluster with one estimator-driven scale-out per run.
//!
//! Times are microseconds. Messages are assigned round-robin to brokers,
//! each broker serves its FIFO queue with a fixed service time, and every
//! delivery produces a consumer notification carrying the latency plus
//! Gaussian jitter. The estimator sees every notification; every
//! `⌈1/r⌉`-th one is a measurement update, the others are recorded and
//! followed by a time update only. When the estimate
//! first exceeds the threshold, service pauses for `d_s` and one broker is
//! added.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{build_estimator, Calibration, EstimatorKind, EstimatorParams, NoiseModel};
use crate::numerics::{derive_seed, SeededRng};
use crate::workloads::{gen_poisson_arrivals, PoissonSpec, Trace};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub estimator: EstimatorKind,
    /// Fraction of notifications that are measurement updates, in (0, 1].
    pub update_rate: f64,
    pub threshold_us: f64,
    pub scaling_duration_us: f64,
    pub service_us: f64,
    pub initial_brokers: usize,
    /// Standard deviation of the latency reported by consumers.
    pub jitter_us: f64,
    pub params: EstimatorParams,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            estimator: EstimatorKind::AkfPca,
            update_rate: 0.25,
            threshold_us: 400.0,
            scaling_duration_us: 40.0,
            service_us: 1.0,
            initial_brokers: 1,
            jitter_us: 60.0,
            params: EstimatorParams {
                q_ratio: 0.005,
                pca_window: 64,
                ..EstimatorParams::default()
            },
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.update_rate > 0.0
            && self.update_rate <= 1.0
            && self.threshold_us > 0.0
            && self.scaling_duration_us >= 0.0
            && self.scaling_duration_us.is_finite()
            && self.service_us >= 0.0
            && self.service_us.is_finite()
            && self.initial_brokers >= 1
            && self.jitter_us >= 0.0
            && self.jitter_us.is_finite();
        if !ok {
            return Err(Error::Validation(format!("invalid simulation config {self:?}")));
        }
        self.params.validate()
    }

    /// Notifications per measurement update, `⌈1/r⌉`.
    pub fn update_every(&self) -> usize {
        (1.0 / self.update_rate - 1e-9).ceil().max(1.0) as usize
    }

    /// Estimator parameters with the update cadence filled in.
    fn estimator_params(&self) -> EstimatorParams {
        let mut p = self.params.clone();
        p.update_every = self.update_every();
        p
    }
}

/// One delivered message and the notification it produced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Delivery {
    pub message: usize,
    pub broker: usize,
    pub send_us: f64,
    pub deliver_us: f64,
    pub latency_us: f64,
    pub reported_us: f64,
    /// Estimator output after this notification.
    pub estimate_us: f64,
    pub measurement_update: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScalingEvent {
    pub initiated_us: f64,
    pub completed_us: f64,
    /// Notifications seen up to and including the triggering one.
    pub request_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingTrace {
    pub produced: usize,
    /// In delivery order.
    pub deliveries: Vec<Delivery>,
    pub event: Option<ScalingEvent>,
    pub estimator_updates: usize,
}

impl ScalingTrace {
    /// Deliveries before the scaling action started, or all of them.
    pub fn pre_scaling(&self) -> &[Delivery] {
        match self.event {
            Some(e) => {
                let n = self.deliveries.iter().take_while(|d| d.deliver_us <= e.initiated_us).count();
                &self.deliveries[..n]
            }
            None => &self.deliveries,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum EventKind {
    Complete(usize),
    ScaleDone,
    Arrival(usize),
}

impl EventKind {
    /// Same-time order: completions free brokers first, arrivals last.
    fn rank(self) -> u8 {
        match self {
            EventKind::Complete(_) => 0,
            EventKind::ScaleDone => 1,
            EventKind::Arrival(_) => 2,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Event {
    time: f64,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    // reversed for a min-heap
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then(other.kind.rank().cmp(&self.kind.rank()))
            .then(other.seq.cmp(&self.seq))
    }
}

#[derive(Debug, Default)]
struct Broker {
    queue: VecDeque<usize>,
    serving: Option<usize>,
}

struct Cluster<'a> {
    cfg: &'a SimConfig,
    events: BinaryHeap<Event>,
    seq: u64,
    brokers: Vec<Broker>,
    paused: bool,
    assigned: Vec<usize>,
    next_partition: usize,
}

impl Cluster<'_> {
    fn schedule(&mut self, time: f64, kind: EventKind) {
        self.seq += 1;
        self.events.push(Event {
            time,
            seq: self.seq,
            kind,
        });
    }

    fn try_start(&mut self, b: usize, now: f64) {
        if self.paused || self.brokers[b].serving.is_some() {
            return;
        }
        if let Some(m) = self.brokers[b].queue.pop_front() {
            self.brokers[b].serving = Some(m);
            let done = now + self.cfg.service_us;
            self.schedule(done, EventKind::Complete(b));
        }
    }
}

/// Runs the cluster over `workload`, whose timestamps are send times in µs.
pub fn run_iteration(workload: &Trace, cfg: &SimConfig, cal: &Calibration, seed: u64) -> Result<ScalingTrace> {
    cfg.validate()?;
    if workload.is_empty() {
        return Err(Error::InsufficientData {
            context: "simulation workload",
            needed: 1,
            got: 0,
        });
    }
    let sends: Vec<f64> = workload.timestamps().collect();
    let every = cfg.update_every();
    let mut estimator = build_estimator(cfg.estimator, &cfg.estimator_params(), cal)?;
    let mut jitter = SeededRng::new(seed);
    let mut cluster = Cluster {
        cfg,
        events: BinaryHeap::new(),
        seq: 0,
        brokers: (0..cfg.initial_brokers).map(|_| Broker::default()).collect(),
        paused: false,
        assigned: vec![usize::MAX; sends.len()],
        next_partition: 0,
    };
    for (i, t) in sends.iter().enumerate() {
        cluster.schedule(*t, EventKind::Arrival(i));
    }
    let mut out = ScalingTrace {
        produced: sends.len(),
        deliveries: Vec::with_capacity(sends.len()),
        event: None,
        estimator_updates: 0,
    };
    while let Some(ev) = cluster.events.pop() {
        let now = ev.time;
        match ev.kind {
            EventKind::Arrival(i) => {
                let b = cluster.next_partition % cluster.brokers.len();
                cluster.next_partition += 1;
                cluster.assigned[i] = b;
                cluster.brokers[b].queue.push_back(i);
                cluster.try_start(b, now);
            }
            EventKind::Complete(b) => {
                let m = cluster.brokers[b].serving.take().expect("completion without a message in service");
                let latency = now - sends[m];
                let reported = latency + cfg.jitter_us * jitter.standard_normal();
                let n = out.deliveries.len() + 1;
                let update = cfg.estimator == EstimatorKind::Passive || n.is_multiple_of(every);
                if update {
                    estimator.update(reported)?;
                    out.estimator_updates += 1;
                } else {
                    estimator.observe(reported)?;
                    estimator.predict()?;
                }
                let estimate = estimator.estimate();
                out.deliveries.push(Delivery {
                    message: m,
                    broker: b,
                    send_us: sends[m],
                    deliver_us: now,
                    latency_us: latency,
                    reported_us: reported,
                    estimate_us: estimate,
                    measurement_update: update,
                });
                if out.event.is_none() && estimate > cfg.threshold_us {
                    let done = now + cfg.scaling_duration_us;
                    out.event = Some(ScalingEvent {
                        initiated_us: now,
                        completed_us: done,
                        request_index: n,
                    });
                    cluster.paused = true;
                    cluster.schedule(done, EventKind::ScaleDone);
                }
                cluster.try_start(b, now);
            }
            EventKind::ScaleDone => {
                cluster.brokers.push(Broker::default());
                cluster.paused = false;
                for b in 0..cluster.brokers.len() {
                    cluster.try_start(b, now);
                }
            }
        }
    }
    debug_assert!(cluster.assigned.iter().all(|b| *b != usize::MAX));
    Ok(out)
}

/// Poisson overload offered to every iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimWorkload {
    pub rate_per_s: f64,
    pub duration_s: f64,
}

impl Default for SimWorkload {
    fn default() -> Self {
        SimWorkload {
            rate_per_s: 2_000_000.0,
            duration_s: 0.0009,
        }
    }
}

/// Poisson send times in µs.
pub fn poisson_workload(w: &SimWorkload, seed: u64) -> Result<Trace> {
    let secs = gen_poisson_arrivals(&PoissonSpec {
        rate: w.rate_per_s,
        duration: w.duration_s,
        seed,
    })?;
    Trace::new(secs.points().iter().map(|(t, v)| (t * 1e6, v.clone())).collect())
}

/// Noise calibration (and attention training, if needed) from the reported
/// latencies of a pilot run without scaling.
pub fn calibrate_sim(workload: &SimWorkload, cfg: &SimConfig, seed: u64) -> Result<Calibration> {
    let pilot_cfg = SimConfig {
        estimator: EstimatorKind::Passive,
        threshold_us: f64::INFINITY,
        ..cfg.clone()
    };
    let trace = poisson_workload(workload, derive_seed(seed, "pilot-workload"))?;
    // the passive estimator ignores the calibration
    let placeholder = Calibration::untrained(NoiseModel {
        r: 1.0,
        q_level: 1.0,
        q_trend: 1.0,
    });
    let pilot = run_iteration(&trace, &pilot_cfg, &placeholder, derive_seed(seed, "pilot-jitter"))?;
    let series: Vec<f64> = pilot.deliveries.iter().map(|d| d.reported_us).collect();
    Calibration::fit(&[cfg.estimator], &cfg.estimator_params(), &series, derive_seed(seed, "calibration"))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityResult {
    pub estimator: EstimatorKind,
    pub t_i_us: Vec<Option<f64>>,
    pub t_i_requests: Vec<Option<usize>>,
    /// Population variance of the initiation times, µs².
    pub sigma: Option<f64>,
    /// Iterations without a scaling event.
    pub excluded: Vec<usize>,
}

/// Population variance; `None` below two values.
pub fn population_variance(xs: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    // shifted by the first value so identical inputs give exactly zero
    let n = xs.len() as f64;
    let d: Vec<f64> = xs.iter().map(|x| x - xs[0]).collect();
    let mean = d.iter().sum::<f64>() / n;
    Some(d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n)
}

/// Replays one Poisson workload `n_iter` times; iterations differ only in
/// their measurement jitter. Seeds derive from `seed` and the iteration
/// index alone, so estimator kinds run with the same seed face identical
/// conditions.
pub fn run_stability_experiment(
    workload: &SimWorkload,
    cfg: &SimConfig,
    n_iter: usize,
    seed: u64,
) -> Result<StabilityResult> {
    if n_iter < 2 {
        return Err(Error::InsufficientData {
            context: "stability iterations",
            needed: 2,
            got: n_iter,
        });
    }
    cfg.validate()?;
    let cal = calibrate_sim(workload, cfg, seed)?;
    let mut res = StabilityResult {
        estimator: cfg.estimator,
        t_i_us: Vec::with_capacity(n_iter),
        t_i_requests: Vec::with_capacity(n_iter),
        sigma: None,
        excluded: Vec::new(),
    };
    let trace = poisson_workload(workload, derive_seed(seed, "workload"))?;
    for i in 0..n_iter {
        let run = run_iteration(&trace, cfg, &cal, derive_seed(seed, &format!("jitter-{i}")))?;
        match run.event {
            Some(e) => {
                res.t_i_us.push(Some(e.initiated_us));
                res.t_i_requests.push(Some(e.request_index));
            }
            None => {
                log::warn!("iteration {i}: no scaling event for {}", cfg.estimator);
                res.t_i_us.push(None);
                res.t_i_requests.push(None);
                res.excluded.push(i);
            }
        }
    }
    let times: Vec<f64> = res.t_i_us.iter().flatten().copied().collect();
    res.sigma = population_variance(&times);
    Ok(res)
}
