//! Rolling-origin out-of-sample validation.
//!
//! With `Z` samples and `R` runs the final 20% of the series is cut into `R`
//! windows of `w = ⌊0.2·Z / R⌋` samples. Run `r` trains on the first
//! `P_r = ⌊0.8·Z⌋ + r·w` samples and is scored on the next `w`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{mean_ci95, MeanCi};
use crate::nn::LstmArchitecture;
use crate::trace::{RttTrace, SplitSpec};
use crate::train::TrainConfig;
use crate::transfer::{fine_tune, train_specialized, FreezeSpec, LstmModel};

pub const DEFAULT_RUNS: usize = 10;

#[derive(Clone, Copy, Debug)]
pub enum ValidationMode<'a> {
    FineTune { source: &'a LstmModel, freeze: FreezeSpec },
    Scratch { arch: LstmArchitecture },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    /// `(train length, test window start, window length)` per run.
    pub windows: Vec<(usize, usize, usize)>,
    pub smapes: Vec<f64>,
    pub summary: MeanCi,
}

/// Train lengths and window size for `runs` rolling origins over `len` samples.
pub fn rolling_origins(len: usize, runs: usize) -> Result<(Vec<usize>, usize)> {
    if runs == 0 {
        return Err(Error::Argument("runs must be >= 1".into()));
    }
    let start = SplitSpec::DEFAULT.train_len(len);
    let window = (len - start) / runs;
    if window < 2 || start < 2 {
        return Err(Error::Argument(format!(
            "{len} samples are too short for {runs} validation windows"
        )));
    }
    Ok(((0..runs).map(|r| start + r * window).collect(), window))
}

/// Trains (or fine-tunes) on each rolling origin and reports test SMAPE per run.
/// Every run uses `config` unchanged, including its seed.
pub fn out_of_sample_validate(
    mode: ValidationMode<'_>,
    series: &RttTrace,
    runs: usize,
    config: &TrainConfig,
) -> Result<ValidationReport> {
    let (origins, window) = rolling_origins(series.len(), runs)?;
    let samples = series.samples();
    let mut smapes = Vec::with_capacity(runs);
    let mut windows = Vec::with_capacity(runs);
    for &p in &origins {
        let train = RttTrace::new(samples[..p].to_vec(), series.interval_ms(), series.context())?;
        let test = &samples[p..p + window];
        let model = match mode {
            ValidationMode::FineTune { source, freeze } => fine_tune(source, &train, freeze, config)?.0,
            ValidationMode::Scratch { arch } => train_specialized(&train, &arch, config)?.0,
        };
        smapes.push(model.evaluate(test)?.smape);
        windows.push((p, p, window));
    }
    let summary = mean_ci95(&smapes)?;
    Ok(ValidationReport {
        windows,
        smapes,
        summary,
    })
}
