//! Time-driven delay emulation on a virtual clock and its accuracy report.
//!
//! The path delay is reconfigured once per update interval from the next trace
//! value. Each reconfiguration takes `reconfig_cost_ms`, during which the previous
//! delay stays active. A packet picks up the one-way delay active when it enters a
//! direction.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{nrmse_percentile, percentile};
use crate::seed::rng_for;
use crate::trace::{RttTrace, DEFAULT_INTERVAL_MS};

pub const DEFAULT_RECONFIG_COST_MS: f64 = 4.0;
pub const DEFAULT_PING_COUNT: usize = 600;
pub const REPORT_PERCENTILES: [f64; 4] = [25.0, 50.0, 75.0, 90.0];

#[derive(Clone, Debug, PartialEq)]
pub struct DelayProfile {
    trace: RttTrace,
    update_interval_ms: f64,
    reconfig_cost_ms: f64,
    uplink_fraction: f64,
}

impl DelayProfile {
    pub fn new(trace: RttTrace) -> Self {
        Self {
            trace,
            update_interval_ms: DEFAULT_INTERVAL_MS,
            reconfig_cost_ms: DEFAULT_RECONFIG_COST_MS,
            uplink_fraction: 0.5,
        }
    }

    pub fn with_timing(mut self, update_interval_ms: f64, reconfig_cost_ms: f64) -> Result<Self> {
        if !(reconfig_cost_ms >= 0.0 && update_interval_ms > reconfig_cost_ms && update_interval_ms.is_finite()) {
            return Err(Error::Validation(format!(
                "need 0 <= reconfig cost ({reconfig_cost_ms}) < update interval ({update_interval_ms})"
            )));
        }
        self.update_interval_ms = update_interval_ms;
        self.reconfig_cost_ms = reconfig_cost_ms;
        Ok(self)
    }

    pub fn with_uplink_fraction(mut self, fraction: f64) -> Result<Self> {
        if !(fraction > 0.0 && fraction < 1.0) {
            return Err(Error::Validation(format!("uplink fraction {fraction} outside (0, 1)")));
        }
        self.uplink_fraction = fraction;
        Ok(self)
    }

    pub fn trace(&self) -> &RttTrace {
        &self.trace
    }

    pub fn update_interval_ms(&self) -> f64 {
        self.update_interval_ms
    }

    /// Index of the trace value in force at time `t`.
    pub fn active_index(&self, t: f64) -> usize {
        let window = (t / self.update_interval_ms).floor().max(0.0) as usize;
        let into = t - window as f64 * self.update_interval_ms;
        let effective = if window > 0 && into < self.reconfig_cost_ms {
            window - 1
        } else {
            window
        };
        effective.min(self.trace.len() - 1)
    }

    pub fn uplink_delay(&self, t: f64) -> f64 {
        self.trace.samples()[self.active_index(t)] * self.uplink_fraction
    }

    pub fn downlink_delay(&self, t: f64) -> f64 {
        self.trace.samples()[self.active_index(t)] * (1.0 - self.uplink_fraction)
    }
}

/// Ping send times in ms on the emulation clock.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PingSchedule {
    send_times: Vec<f64>,
}

impl PingSchedule {
    pub fn new(send_times: Vec<f64>) -> Result<Self> {
        if send_times.is_empty() {
            return Err(Error::EmptyInput);
        }
        if send_times.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(Error::Validation("send times must be finite and >= 0".into()));
        }
        if send_times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Validation("send times must be strictly increasing".into()));
        }
        Ok(Self { send_times })
    }

    /// `count` pings every `spacing_ms`, the first at `phase_ms`.
    pub fn periodic(count: usize, spacing_ms: f64, phase_ms: f64) -> Result<Self> {
        if spacing_ms.is_nan() || spacing_ms <= 0.0 {
            return Err(Error::Validation(format!("ping spacing {spacing_ms} must be > 0")));
        }
        Self::new((0..count).map(|i| phase_ms + i as f64 * spacing_ms).collect())
    }

    pub fn send_times(&self) -> &[f64] {
        &self.send_times
    }

    pub fn len(&self) -> usize {
        self.send_times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.send_times.is_empty()
    }
}

impl Default for PingSchedule {
    /// 600 pings, one per update interval, each sent mid-window.
    fn default() -> Self {
        Self::periodic(DEFAULT_PING_COUNT, DEFAULT_INTERVAL_MS, DEFAULT_INTERVAL_MS / 2.0)
            .expect("default schedule is valid")
    }
}

/// Measured RTT of every ping in `schedule`.
pub fn run_emulation(profile: &DelayProfile, schedule: &PingSchedule) -> Vec<f64> {
    schedule
        .send_times()
        .iter()
        .map(|&send| {
            let up = profile.uplink_delay(send);
            let down = profile.downlink_delay(send + up);
            up + down
        })
        .collect()
}

/// `runs` emulations with one ping per update interval. A single run pings
/// mid-window; repeated runs draw a seeded phase in `[0, interval)` each.
pub fn run_repeated(profile: &DelayProfile, count: usize, runs: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if runs == 0 {
        return Err(Error::Argument("runs must be >= 1".into()));
    }
    let interval = profile.update_interval_ms();
    if runs == 1 {
        let schedule = PingSchedule::periodic(count, interval, interval / 2.0)?;
        return Ok(vec![run_emulation(profile, &schedule)]);
    }
    let mut rng = rng_for(seed, "emulate");
    (0..runs)
        .map(|_| {
            let phase = rng.random_range(0.0..interval);
            let schedule = PingSchedule::periodic(count, interval, phase)?;
            Ok(run_emulation(profile, &schedule))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PercentileRow {
    pub percentile: f64,
    pub input_ms: f64,
    pub mean_measured_ms: f64,
    pub mean_abs_delta_ms: f64,
    pub max_abs_delta_ms: f64,
    pub nrmse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmulationReport {
    pub runs: usize,
    pub pings_per_run: Vec<usize>,
    pub percentiles: Vec<PercentileRow>,
    /// Measured RTTs of every run.
    pub measured: Vec<Vec<f64>>,
}

impl EmulationReport {
    pub fn row(&self, p: f64) -> Option<&PercentileRow> {
        self.percentiles.iter().find(|r| r.percentile == p)
    }
}

/// Compares each run's 25/50/75/90th percentiles with the input trace's.
pub fn evaluate_accuracy(input: &[f64], runs: &[Vec<f64>]) -> Result<EmulationReport> {
    if runs.is_empty() {
        return Err(Error::Argument("need at least one emulated run".into()));
    }
    let mut percentiles = Vec::with_capacity(REPORT_PERCENTILES.len());
    for p in REPORT_PERCENTILES {
        let nrmse = nrmse_percentile(input, runs, p)?;
        let input_ms = percentile(input, p)?;
        let mut sum = 0.0;
        let mut sum_abs = 0.0;
        let mut max_abs: f64 = 0.0;
        for run in runs {
            let v = percentile(run, p)?;
            sum += v;
            sum_abs += (v - input_ms).abs();
            max_abs = max_abs.max((v - input_ms).abs());
        }
        let n = runs.len() as f64;
        percentiles.push(PercentileRow {
            percentile: p,
            input_ms,
            mean_measured_ms: sum / n,
            mean_abs_delta_ms: sum_abs / n,
            max_abs_delta_ms: max_abs,
            nrmse,
        });
    }
    Ok(EmulationReport {
        runs: runs.len(),
        pings_per_run: runs.iter().map(Vec::len).collect(),
        percentiles,
        measured: runs.to_vec(),
    })
}
