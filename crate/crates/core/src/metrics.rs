//! Accuracy metrics for forecasts and emulation runs.

use crate::error::{Error, Result};
use crate::trace::mean_and_population_std;

fn check_pair_lengths(actual: &[f64], predicted: &[f64], min: usize) -> Result<()> {
    if actual.len() != predicted.len() {
        return Err(Error::Contract(format!(
            "{} actual values vs {} predicted",
            actual.len(),
            predicted.len()
        )));
    }
    if actual.len() < min {
        return Err(Error::Argument(format!(
            "need at least {min} values, got {}",
            actual.len()
        )));
    }
    Ok(())
}

/// Scaled SMAPE in percent: `100/N · Σ |ŷ − y| / (|y| + |ŷ|)`, bounded by [0, 100].
pub fn smape(actual: &[f64], predicted: &[f64]) -> Result<f64> {
    check_pair_lengths(actual, predicted, 1)?;
    let mut total = 0.0;
    for (index, (y, p)) in actual.iter().zip(predicted).enumerate() {
        let denom = y.abs() + p.abs();
        if denom == 0.0 {
            return Err(Error::DegeneratePair { index });
        }
        total += (p - y).abs() / denom;
    }
    Ok(100.0 * total / actual.len() as f64)
}

/// Relative SMAPE gain of the fine-tuned model over the specialized baseline, in percent.
/// Positive means the fine-tuned model is better.
pub fn smape_improvement(smape_specialized: f64, smape_finetuned: f64) -> Result<f64> {
    if smape_specialized == 0.0 {
        return Err(Error::Argument(
            "specialized SMAPE of 0 leaves the improvement undefined".into(),
        ));
    }
    Ok((smape_specialized - smape_finetuned) / smape_specialized * 100.0)
}

/// Sample Pearson correlation coefficient.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair_lengths(x, y, 2)?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Degenerate("pearson of a constant series".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Nearest-rank percentile: the value at 1-based rank `⌈p/100 · n⌉` of the sorted series.
pub fn percentile(series: &[f64], p: f64) -> Result<f64> {
    let mut sorted = series.to_vec();
    sorted.sort_by(f64::total_cmp);
    percentile_sorted(&sorted, p)
}

pub fn percentile_sorted(sorted: &[f64], p: f64) -> Result<f64> {
    if sorted.is_empty() {
        return Err(Error::EmptyInput);
    }
    if !(0.0..=100.0).contains(&p) {
        return Err(Error::Argument(format!("percentile {p} outside [0, 100]")));
    }
    let n = sorted.len();
    let rank = ((p / 100.0) * n as f64).ceil() as usize;
    Ok(sorted[rank.clamp(1, n) - 1])
}

/// RMSE across runs of the `p`-th percentile error, over the real trace's population std.
pub fn nrmse_percentile<S: AsRef<[f64]>>(real: &[f64], runs: &[S], p: f64) -> Result<f64> {
    if runs.is_empty() {
        return Err(Error::Argument("need at least one emulated run".into()));
    }
    if real.len() < 2 || real.iter().all(|&v| v == real[0]) {
        return Err(Error::Degenerate(
            "real trace must be non-constant for normalization".into(),
        ));
    }
    let (_, std) = mean_and_population_std(real);
    let reference = percentile(real, p)?;
    let mut sum_sq = 0.0;
    for run in runs {
        let d = percentile(run.as_ref(), p)? - reference;
        sum_sq += d * d;
    }
    Ok((sum_sq / runs.len() as f64).sqrt() / std)
}

/// Mean with a normal-approximation 95% confidence interval.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MeanCi {
    pub mean: f64,
    pub low: f64,
    pub high: f64,
}

impl MeanCi {
    pub fn width(&self) -> f64 {
        self.high - self.low
    }
}

pub fn mean_ci95(values: &[f64]) -> Result<MeanCi> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let half = if values.len() > 1 {
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        1.96 * (var / n).sqrt()
    } else {
        0.0
    };
    Ok(MeanCi {
        mean,
        low: mean - half,
        high: mean + half,
    })
}
