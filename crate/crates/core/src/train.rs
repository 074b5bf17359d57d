//! Stateful batched training, deterministic evaluation and hyperparameter grid search.
//!
//! A training series is cut into `B` contiguous lanes of equal length (the tail
//! that does not fill a lane is dropped). Optimizer step `k` feeds timestep `k` of
//! every lane, so each lane's hidden state flows through the whole epoch. States
//! are zeroed at the start of every epoch.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::smape;
use crate::nn::{
    backward_trainable, forward, mse_loss, FrozenMask, LstmArchitecture, LstmState, Mode,
    ModelWeights,
};
use crate::optim::{adam_step, clip_global_norm, AdamConfig, AdamState};
use crate::seed::{derive_seed, rng_for, stage_seed};
use crate::trace::{standardize, to_supervised};

pub const DEFAULT_BATCH_SIZE: usize = 16;
pub const DEFAULT_EPOCHS: usize = 700;
pub const DEFAULT_CLIP_NORM: f64 = 5.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    /// Global-norm gradient clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
    /// Number of initial LSTM layers kept frozen.
    pub frozen_layers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: DEFAULT_BATCH_SIZE,
            epochs: DEFAULT_EPOCHS,
            seed: 0,
            adam: AdamConfig::default(),
            clip_norm: Some(DEFAULT_CLIP_NORM),
            frozen_layers: 0,
        }
    }
}

impl TrainConfig {
    pub fn with_epochs(mut self, epochs: usize) -> Self {
        self.epochs = epochs;
        self
    }

    pub fn with_batch_size(mut self, batch_size: usize) -> Self {
        self.batch_size = batch_size;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_learning_rate(mut self, learning_rate: f64) -> Self {
        self.adam.learning_rate = learning_rate;
        self
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean train-mode batch loss of every epoch.
    pub epoch_losses: Vec<f64>,
    /// Deterministic MSE on the training series (standardized units).
    pub train_mse: Option<f64>,
    pub test_mse: Option<f64>,
    pub test_smape: Option<f64>,
    pub seconds: f64,
}

/// Trains freshly initialized weights. Initialization and dropout/noise draws are
/// derived from `config.seed`.
pub fn train(
    series: &[f64],
    arch: &LstmArchitecture,
    config: &TrainConfig,
) -> Result<(ModelWeights, TrainReport)> {
    arch.validate()?;
    let init = ModelWeights::init(arch, stage_seed(config.seed, "init"));
    train_from(init, series, arch, config)
}

/// Continues training from `weights` on a standardized series.
pub fn train_from(
    mut weights: ModelWeights,
    series: &[f64],
    arch: &LstmArchitecture,
    config: &TrainConfig,
) -> Result<(ModelWeights, TrainReport)> {
    arch.validate()?;
    weights.validate(arch)?;
    let batch = config.batch_size;
    if batch == 0 {
        return Err(Error::Argument("batch size must be >= 1".into()));
    }
    if series.len() < 2 * batch {
        return Err(Error::Argument(format!(
            "series of {} samples is too short for {batch} lanes (need >= {})",
            series.len(),
            2 * batch
        )));
    }
    if config.frozen_layers >= arch.num_layers {
        return Err(Error::Argument(format!(
            "cannot freeze {} of {} layers",
            config.frozen_layers, arch.num_layers
        )));
    }
    let started = Instant::now();
    let frozen = FrozenMask::first(config.frozen_layers);
    let lane_len = (series.len() - 1) / batch;
    let mut rng = rng_for(config.seed, "train");
    let mut adam = AdamState::new(&weights, config.adam);
    let mut state = LstmState::zeros(arch, batch);
    let mut inputs = vec![0.0; batch];
    let mut targets = vec![0.0; batch];
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for _ in 0..config.epochs {
        state.reset();
        let mut total = 0.0;
        for step in 0..lane_len {
            for lane in 0..batch {
                let at = lane * lane_len + step;
                inputs[lane] = series[at];
                targets[lane] = series[at + 1];
            }
            let out = forward(
                arch,
                &weights,
                &inputs,
                batch,
                &mut state,
                Mode::Train,
                arch.probact.sigma,
                &mut rng,
            )?;
            total += mse_loss(&out.predictions, &targets)?;
            let mut grads = backward_trainable(&out.tape, &targets, &weights, frozen.frozen_layers)?;
            if let Some(max_norm) = config.clip_norm {
                clip_global_norm(&mut grads, max_norm);
            }
            adam_step(&mut weights, &grads, &mut adam, frozen)?;
        }
        epoch_losses.push(total / lane_len as f64);
    }

    Ok((
        weights,
        TrainReport {
            epoch_losses,
            seconds: started.elapsed().as_secs_f64(),
            ..TrainReport::default()
        },
    ))
}

/// One-step-ahead predictions over a standardized series, single lane from a zero
/// state, dropout off and no head noise. Returns `len - 1` predictions for
/// `series[1..]`.
pub fn predict_one_step(
    arch: &LstmArchitecture,
    weights: &ModelWeights,
    series: &[f64],
) -> Result<Vec<f64>> {
    let pairs = to_supervised(series)?;
    let mut state = LstmState::zeros(arch, 1);
    // no randomness is drawn with dropout off and sigma = 0
    let mut rng = rng_for(0, "unused");
    let out = forward(
        arch,
        weights,
        &pairs.inputs(),
        1,
        &mut state,
        Mode::Infer,
        0.0,
        &mut rng,
    )?;
    Ok(out.predictions)
}

/// Deterministic accuracy of a model on a raw (ms) series.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// MSE in standardized units.
    pub mse: f64,
    /// SMAPE in percent, computed on destandardized values.
    pub smape: f64,
}

/// Standardizes `series_ms` with its own statistics, predicts one step ahead and
/// scores the predictions.
pub fn evaluate(
    arch: &LstmArchitecture,
    weights: &ModelWeights,
    series_ms: &[f64],
) -> Result<Evaluation> {
    let (z, standardizer) = standardize(series_ms)?;
    let predictions = predict_one_step(arch, weights, &z)?;
    let mse = mse_loss(&predictions, &z[1..])?;
    let predicted_ms = standardizer.invert(&predictions);
    let smape = smape(&series_ms[1..], &predicted_ms)?;
    Ok(Evaluation { mse, smape })
}

/// Cartesian hyperparameter grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperGrid {
    pub layers: Vec<usize>,
    pub hidden_units: Vec<usize>,
    pub batch_sizes: Vec<usize>,
    pub epochs: Vec<usize>,
    pub dropout_rate: f64,
    pub sigma: f64,
}

impl Default for HyperGrid {
    /// The full search space: 1–4 layers, 8–512 units, batch 4–32, 400–700 epochs.
    fn default() -> Self {
        Self {
            layers: vec![1, 2, 3, 4],
            hidden_units: crate::nn::GRID_HIDDEN_UNITS.to_vec(),
            batch_sizes: vec![4, 8, 16, 32],
            epochs: vec![400, 500, 600, 700],
            dropout_rate: LstmArchitecture::DEFAULT_DROPOUT,
            sigma: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GridPoint {
    pub layers: usize,
    pub hidden_units: usize,
    pub batch_size: usize,
    pub epochs: usize,
}

impl HyperGrid {
    pub fn single(layers: usize, hidden_units: usize, batch_size: usize, epochs: usize) -> Self {
        Self {
            layers: vec![layers],
            hidden_units: vec![hidden_units],
            batch_sizes: vec![batch_size],
            epochs: vec![epochs],
            ..Self::default()
        }
    }

    pub fn points(&self) -> Vec<GridPoint> {
        let mut out = Vec::new();
        for &layers in &self.layers {
            for &hidden_units in &self.hidden_units {
                for &batch_size in &self.batch_sizes {
                    for &epochs in &self.epochs {
                        out.push(GridPoint {
                            layers,
                            hidden_units,
                            batch_size,
                            epochs,
                        });
                    }
                }
            }
        }
        out
    }

    pub fn architecture(&self, point: &GridPoint) -> Result<LstmArchitecture> {
        let mut arch = LstmArchitecture::new(point.layers, point.hidden_units)?;
        arch.dropout_rate = self.dropout_rate;
        arch.probact.sigma = self.sigma;
        arch.validate()?;
        Ok(arch)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub point: GridPoint,
    pub num_params: usize,
    pub train_mse: f64,
    pub test_mse: f64,
    pub test_smape: f64,
    pub seconds: f64,
    pub error: Option<String>,
}

#[derive(Clone, Debug)]
pub struct GridResult {
    pub best_point: GridPoint,
    pub best_arch: LstmArchitecture,
    pub best_weights: ModelWeights,
    pub best_report: TrainReport,
    pub rows: Vec<GridRow>,
}

impl GridResult {
    /// `L,N,B,epochs,train_mse,test_mse,test_smape,seconds`, one row per grid point.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("L,N,B,epochs,train_mse,test_mse,test_smape,seconds\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.point.layers,
                r.point.hidden_units,
                r.point.batch_size,
                r.point.epochs,
                r.train_mse,
                r.test_mse,
                r.test_smape,
                r.seconds
            );
        }
        out
    }
}

/// Seed of one grid point, independent of the rest of the grid.
pub fn point_seed(seed: u64, point: &GridPoint) -> u64 {
    [point.layers, point.hidden_units, point.batch_size, point.epochs]
        .iter()
        .fold(stage_seed(seed, "grid"), |s, &v| derive_seed(s, v as u64))
}

/// Trains every grid point on `train_ms` and keeps the one with the lowest
/// deterministic test MSE on `test_ms`. Both series are in milliseconds and are
/// standardized separately.
pub fn grid_search(train_ms: &[f64], test_ms: &[f64], grid: &HyperGrid, seed: u64) -> Result<GridResult> {
    grid_search_with(train_ms, test_ms, grid, &TrainConfig::default().with_seed(seed))
}

/// [`grid_search`] with optimizer and clipping settings taken from `base`.
/// Batch size, epochs and seed come from each grid point and `base.seed`.
pub fn grid_search_with(
    train_ms: &[f64],
    test_ms: &[f64],
    grid: &HyperGrid,
    base: &TrainConfig,
) -> Result<GridResult> {
    let seed = base.seed;
    let points = grid.points();
    if points.is_empty() {
        return Err(Error::Argument("empty hyperparameter grid".into()));
    }
    let (train_z, _) = standardize(train_ms)?;
    standardize(test_ms)?;

    let mut rows = Vec::with_capacity(points.len());
    let mut best: Option<(f64, usize, GridPoint, LstmArchitecture, ModelWeights, TrainReport)> = None;
    for point in points {
        let attempt = (|| -> Result<(LstmArchitecture, ModelWeights, TrainReport)> {
            let arch = grid.architecture(&point)?;
            let config = TrainConfig {
                frozen_layers: 0,
                ..*base
            }
            .with_batch_size(point.batch_size)
                .with_epochs(point.epochs)
                .with_seed(point_seed(seed, &point));
            let (weights, mut report) = train(&train_z, &arch, &config)?;
            let train_eval = evaluate(&arch, &weights, train_ms)?;
            let test_eval = evaluate(&arch, &weights, test_ms)?;
            report.train_mse = Some(train_eval.mse);
            report.test_mse = Some(test_eval.mse);
            report.test_smape = Some(test_eval.smape);
            Ok((arch, weights, report))
        })();
        match attempt {
            Ok((arch, weights, report)) => {
                let test_mse = report.test_mse.unwrap_or(f64::NAN);
                rows.push(GridRow {
                    point,
                    num_params: arch.num_params(),
                    train_mse: report.train_mse.unwrap_or(f64::NAN),
                    test_mse,
                    test_smape: report.test_smape.unwrap_or(f64::NAN),
                    seconds: report.seconds,
                    error: None,
                });
                let better = match &best {
                    None => true,
                    Some((mse, params, bp, ..)) => {
                        (test_mse, arch.num_params(), point) < (*mse, *params, *bp)
                    }
                };
                if test_mse.is_finite() && better {
                    best = Some((test_mse, arch.num_params(), point, arch, weights, report));
                }
            }
            Err(e) => rows.push(GridRow {
                point,
                num_params: 0,
                train_mse: f64::NAN,
                test_mse: f64::NAN,
                test_smape: f64::NAN,
                seconds: 0.0,
                error: Some(e.to_string()),
            }),
        }
    }
    let n = rows.len();
    let (_, _, best_point, best_arch, best_weights, best_report) =
        best.ok_or(Error::AllPointsFailed(n))?;
    Ok(GridResult {
        best_point,
        best_arch,
        best_weights,
        best_report,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{split, SplitSpec};

    fn sine(len: usize, period: f64) -> Vec<f64> {
        (0..len)
            .map(|i| 50.0 + 10.0 * (2.0 * std::f64::consts::PI * i as f64 / period).sin())
            .collect()
    }

    #[test]
    fn zero_epochs_returns_initial_weights() {
        let arch = LstmArchitecture::new(2, 8).unwrap();
        let (z, _) = standardize(&sine(200, 50.0)).unwrap();
        let config = TrainConfig::default().with_epochs(0).with_seed(4);
        let (w, report) = train(&z, &arch, &config).unwrap();
        assert!(w.bit_eq(&ModelWeights::init(&arch, stage_seed(4, "init"))));
        assert!(report.epoch_losses.is_empty());
    }

    #[test]
    fn too_short_series_rejected() {
        let arch = LstmArchitecture::new(1, 8).unwrap();
        let config = TrainConfig::default().with_batch_size(16);
        assert!(matches!(train(&[0.0; 31], &arch, &config), Err(Error::Argument(_))));
        assert!(train(&[0.1; 32], &arch, &config.with_epochs(1)).is_ok());
    }

    #[test]
    fn deterministic_replay() {
        let arch = LstmArchitecture::new(2, 8).unwrap();
        let (z, _) = standardize(&sine(300, 25.0)).unwrap();
        let config = TrainConfig::default().with_epochs(3).with_seed(9);
        let (a, ra) = train(&z, &arch, &config).unwrap();
        let (b, rb) = train(&z, &arch, &config).unwrap();
        assert!(a.bit_eq(&b));
        assert_eq!(ra.epoch_losses, rb.epoch_losses);
    }

    #[test]
    fn freeze_everything_rejected() {
        let arch = LstmArchitecture::new(2, 8).unwrap();
        let config = TrainConfig {
            frozen_layers: 2,
            ..TrainConfig::default()
        };
        assert!(matches!(train(&[0.1; 64], &arch, &config), Err(Error::Argument(_))));
    }

    #[test]
    fn grid_rows_and_selection() {
        let series = sine(400, 20.0);
        let grid = HyperGrid {
            layers: vec![1, 2],
            hidden_units: vec![4],
            batch_sizes: vec![8],
            epochs: vec![2],
            dropout_rate: 0.0,
            sigma: 0.0,
        };
        let result = grid_search(&series[..320], &series[320..], &grid, 1).unwrap();
        assert_eq!(result.rows.len(), 2);
        let best = result
            .rows
            .iter()
            .min_by(|a, b| a.test_mse.total_cmp(&b.test_mse))
            .unwrap();
        assert_eq!(best.point, result.best_point);
        let csv = result.to_csv();
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.starts_with("L,N,B,epochs,train_mse,test_mse,test_smape,seconds\n"));
    }

    #[test]
    fn failed_points_are_skipped() {
        let series = sine(100, 20.0);
        let grid = HyperGrid {
            layers: vec![1],
            hidden_units: vec![4],
            batch_sizes: vec![4, 64],
            epochs: vec![1],
            dropout_rate: 0.0,
            sigma: 0.0,
        };
        let result = grid_search(&series[..80], &series[80..], &grid, 1).unwrap();
        assert_eq!(result.rows.len(), 2);
        assert!(result.rows[1].error.is_some());
        assert_eq!(result.best_point.batch_size, 4);

        let all_bad = HyperGrid {
            batch_sizes: vec![64],
            ..grid
        };
        assert!(matches!(
            grid_search(&series[..80], &series[80..], &all_bad, 1),
            Err(Error::AllPointsFailed(1))
        ));
    }

    #[test]
    fn evaluation_is_in_ms_and_deterministic() {
        let arch = LstmArchitecture::new(1, 4).unwrap();
        let w = ModelWeights::init(&arch, 1);
        let s = sine(100, 10.0);
        let a = evaluate(&arch, &w, &s).unwrap();
        let b = evaluate(&arch, &w, &s).unwrap();
        assert_eq!(a, b);
        assert!(a.smape > 0.0 && a.smape < 100.0);
    }

    #[test]
    fn converges_on_sine() {
        // dropout at its default; lr raised so 700 epochs suffice
        let arch = LstmArchitecture::new(2, 8).unwrap().with_sigma(0.0);
        let series = sine(2000, 50.0);
        let (train_ms, _) = split(&series, SplitSpec::DEFAULT).unwrap();
        let (z, _) = standardize(train_ms).unwrap();
        let config = TrainConfig::default().with_learning_rate(1e-4);
        let (w, _) = train(&z, &arch, &config).unwrap();
        let eval = evaluate(&arch, &w, train_ms).unwrap();
        assert!(eval.mse < 0.05, "{eval:?}");
    }

    #[test]
    fn loss_mostly_non_increasing_after_warmup() {
        let arch = LstmArchitecture::new(2, 8).unwrap().with_dropout(0.0).with_sigma(0.0);
        let (z, _) = standardize(&sine(800, 50.0)).unwrap();
        let config = TrainConfig::default().with_epochs(300);
        let (_, report) = train(&z, &arch, &config).unwrap();
        let tail = &report.epoch_losses[50..];
        let ok = tail.windows(2).filter(|w| w[1] <= w[0]).count();
        assert!(ok as f64 >= 0.95 * (tail.len() - 1) as f64, "{ok} of {}", tail.len() - 1);
    }

    #[test]
    fn grid_picks_lower_test_mse_on_teacher_data() {
        let teacher_arch = LstmArchitecture::new(2, 8).unwrap().with_dropout(0.0);
        let teacher = ModelWeights::init(&teacher_arch, 77);
        let mut state = LstmState::zeros(&teacher_arch, 1);
        let mut rng = rng_for(5, "teacher");
        let mut x = 0.0;
        let series: Vec<f64> = (0..600)
            .map(|_| {
                let out = forward(&teacher_arch, &teacher, &[x], 1, &mut state, Mode::Infer, 0.5, &mut rng).unwrap();
                x = out.predictions[0];
                40.0 + 5.0 * x
            })
            .collect();
        let grid = HyperGrid {
            layers: vec![1, 2],
            hidden_units: vec![8],
            batch_sizes: vec![8],
            epochs: vec![5],
            dropout_rate: 0.0,
            sigma: 0.0,
        };
        let result = grid_search(&series[..480], &series[480..], &grid, 3).unwrap();
        assert_eq!(result.rows.len(), 2);
        assert!(result.rows.iter().all(|r| r.test_mse.is_finite()));
        let argmin = if result.rows[0].test_mse <= result.rows[1].test_mse { 0 } else { 1 };
        assert_eq!(result.best_point, result.rows[argmin].point);
        assert_eq!(result.best_report.test_mse, Some(result.rows[argmin].test_mse));
    }
}
