//! Stacked LSTM with inverted dropout on the last layer and a noisy-ELU dense head.
//!
//! Gate blocks inside every layer matrix are stored in the order
//! input, forget, output, candidate; row `g * N + u` belongs to gate `g`, unit `u`.

mod backward;
mod cell;
mod forward;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use backward::{backward, backward_trainable};
pub use cell::{lstm_cell_forward, GateRecord};
pub use forward::{
    elu, elu_derivative, forward, forward_fixed, probact_elu, sample_dropout_mask, ForwardOutput,
    ForwardTape, LstmState, Mode,
};

pub const GATE_INPUT: usize = 0;
pub const GATE_FORGET: usize = 1;
pub const GATE_OUTPUT: usize = 2;
pub const GATE_CANDIDATE: usize = 3;
pub const NUM_GATES: usize = 4;

pub const MAX_LAYERS: usize = 4;
pub const GRID_HIDDEN_UNITS: [usize; 7] = [8, 16, 32, 64, 128, 256, 512];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbAct {
    pub elu_alpha: f64,
    pub sigma: f64,
}

impl Default for ProbAct {
    fn default() -> Self {
        Self {
            elu_alpha: 1.0,
            sigma: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstmArchitecture {
    pub num_layers: usize,
    pub hidden_units: usize,
    pub dropout_rate: f64,
    pub probact: ProbAct,
}

impl LstmArchitecture {
    pub const DEFAULT_DROPOUT: f64 = 0.5;

    /// `layers × hidden` with dropout 0.5 and ProbAct(α = 1, σ = 1).
    pub fn new(num_layers: usize, hidden_units: usize) -> Result<Self> {
        let arch = Self {
            num_layers,
            hidden_units,
            dropout_rate: Self::DEFAULT_DROPOUT,
            probact: ProbAct::default(),
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn with_dropout(mut self, rate: f64) -> Self {
        self.dropout_rate = rate;
        self
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.probact.sigma = sigma;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=MAX_LAYERS).contains(&self.num_layers) {
            return Err(Error::Argument(format!(
                "layer count {} outside 1..={MAX_LAYERS}",
                self.num_layers
            )));
        }
        if self.hidden_units == 0 {
            return Err(Error::Argument("hidden units must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Argument(format!(
                "dropout rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        if !(self.probact.elu_alpha.is_finite() && self.probact.elu_alpha > 0.0) {
            return Err(Error::Argument("ELU alpha must be > 0".into()));
        }
        if !(self.probact.sigma.is_finite() && self.probact.sigma >= 0.0) {
            return Err(Error::Argument("ProbAct sigma must be >= 0".into()));
        }
        Ok(())
    }

    pub fn input_dim(&self, layer: usize) -> usize {
        if layer == 0 {
            1
        } else {
            self.hidden_units
        }
    }

    pub fn num_params(&self) -> usize {
        (0..self.num_layers)
            .map(|l| self.layer_params(l))
            .sum::<usize>()
            + self.hidden_units
            + 1
    }

    pub fn layer_params(&self, layer: usize) -> usize {
        let n = self.hidden_units;
        NUM_GATES * n * (self.input_dim(layer) + n + 1)
    }

    /// Parameters left trainable when the first `frozen_layers` layers are frozen.
    pub fn trainable_params(&self, frozen_layers: usize) -> usize {
        self.num_params()
            - (0..frozen_layers.min(self.num_layers))
                .map(|l| self.layer_params(l))
                .sum::<usize>()
    }
}

/// Weights of one LSTM layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerWeights {
    pub input_dim: usize,
    pub hidden: usize,
    /// `4N × input_dim`, row-major.
    pub w_x: Vec<f64>,
    /// `4N × N`, row-major.
    pub w_h: Vec<f64>,
    /// `4N`.
    pub bias: Vec<f64>,
}

impl LayerWeights {
    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        Self {
            input_dim,
            hidden,
            w_x: vec![0.0; NUM_GATES * hidden * input_dim],
            w_h: vec![0.0; NUM_GATES * hidden * hidden],
            bias: vec![0.0; NUM_GATES * hidden],
        }
    }

    /// Bias vector of one gate.
    pub fn gate_bias(&self, gate: usize) -> &[f64] {
        &self.bias[gate * self.hidden..(gate + 1) * self.hidden]
    }

    pub fn gate_bias_mut(&mut self, gate: usize) -> &mut [f64] {
        &mut self.bias[gate * self.hidden..(gate + 1) * self.hidden]
    }

    /// Input-weight block of one gate, `N × input_dim`.
    pub fn gate_w_x(&self, gate: usize) -> &[f64] {
        let rows = self.hidden * self.input_dim;
        &self.w_x[gate * rows..(gate + 1) * rows]
    }

    pub fn gate_w_h(&self, gate: usize) -> &[f64] {
        let rows = self.hidden * self.hidden;
        &self.w_h[gate * rows..(gate + 1) * rows]
    }

    fn shape_ok(&self) -> bool {
        self.w_x.len() == NUM_GATES * self.hidden * self.input_dim
            && self.w_h.len() == NUM_GATES * self.hidden * self.hidden
            && self.bias.len() == NUM_GATES * self.hidden
    }
}

/// All trainable parameters. Gradients and Adam moments reuse this shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelWeights {
    pub layers: Vec<LayerWeights>,
    pub dense_w: Vec<f64>,
    pub dense_b: f64,
}

impl ModelWeights {
    pub fn zeros(arch: &LstmArchitecture) -> Self {
        Self {
            layers: (0..arch.num_layers)
                .map(|l| LayerWeights::zeros(arch.input_dim(l), arch.hidden_units))
                .collect(),
            dense_w: vec![0.0; arch.hidden_units],
            dense_b: 0.0,
        }
    }

    /// Glorot-uniform weights, zero biases except forget-gate biases of 1.
    pub fn init(arch: &LstmArchitecture, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Self::zeros(arch);
        let n = arch.hidden_units;
        for layer in &mut weights.layers {
            let x_limit = glorot_limit(layer.input_dim, n);
            let h_limit = glorot_limit(n, n);
            fill_uniform(&mut layer.w_x, x_limit, &mut rng);
            fill_uniform(&mut layer.w_h, h_limit, &mut rng);
            layer.gate_bias_mut(GATE_FORGET).fill(1.0);
        }
        fill_uniform(&mut weights.dense_w, glorot_limit(n, 1), &mut rng);
        weights
    }

    /// Checks every tensor against the architecture and that all values are finite.
    pub fn validate(&self, arch: &LstmArchitecture) -> Result<()> {
        if self.layers.len() != arch.num_layers {
            return Err(Error::Contract(format!(
                "architecture has {} layers, weights have {}",
                arch.num_layers,
                self.layers.len()
            )));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            if layer.hidden != arch.hidden_units
                || layer.input_dim != arch.input_dim(l)
                || !layer.shape_ok()
            {
                return Err(Error::Contract(format!("layer {} has inconsistent shape", l + 1)));
            }
        }
        if self.dense_w.len() != arch.hidden_units {
            return Err(Error::Contract("dense head has inconsistent shape".into()));
        }
        if !self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite())) {
            return Err(Error::Contract("weights contain non-finite values".into()));
        }
        Ok(())
    }

    /// Flat view of every tensor: per layer `w_x, w_h, bias`, then `dense_w`, `dense_b`.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 3 + 2);
        for layer in &self.layers {
            out.push(layer.w_x.as_slice());
            out.push(layer.w_h.as_slice());
            out.push(layer.bias.as_slice());
        }
        out.push(self.dense_w.as_slice());
        out.push(std::slice::from_ref(&self.dense_b));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 3 + 2);
        for layer in &mut self.layers {
            out.push(layer.w_x.as_mut_slice());
            out.push(layer.w_h.as_mut_slice());
            out.push(layer.bias.as_mut_slice());
        }
        out.push(self.dense_w.as_mut_slice());
        out.push(std::slice::from_mut(&mut self.dense_b));
        out
    }

    /// LSTM layer owning each tensor of [`tensors`](Self::tensors); `None` for the head.
    pub fn tensor_layers(&self) -> Vec<Option<usize>> {
        let mut out: Vec<Option<usize>> = (0..self.layers.len())
            .flat_map(|l| [Some(l); 3])
            .collect();
        out.extend([None, None]);
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= factor);
        }
    }

    /// Bitwise equality of all parameters (distinguishes `0.0` from `-0.0`).
    pub fn bit_eq(&self, other: &Self) -> bool {
        let a = self.tensors();
        let b = other.tensors();
        a.len() == b.len()
            && a.iter().zip(&b).all(|(x, y)| {
                x.len() == y.len() && x.iter().zip(y.iter()).all(|(p, q)| p.to_bits() == q.to_bits())
            })
    }
}

/// Marks the first `frozen_layers` LSTM layers as not trainable.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FrozenMask {
    pub frozen_layers: usize,
}

impl FrozenMask {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn first(frozen_layers: usize) -> Self {
        Self { frozen_layers }
    }

    pub fn is_frozen(&self, layer: Option<usize>) -> bool {
        matches!(layer, Some(l) if l < self.frozen_layers)
    }

    /// Zeroes the gradients of frozen tensors.
    pub fn apply(&self, grads: &mut ModelWeights) {
        let owners = grads.tensor_layers();
        for (t, owner) in grads.tensors_mut().into_iter().zip(owners) {
            if self.is_frozen(owner) {
                t.fill(0.0);
            }
        }
    }
}

/// Mean of squared differences.
pub fn mse_loss(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    if predictions.len() != targets.len() || predictions.is_empty() {
        return Err(Error::Contract(format!(
            "mse over {} predictions and {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    Ok(predictions
        .iter()
        .zip(targets)
        .map(|(p, y)| (p - y) * (p - y))
        .sum::<f64>()
        / predictions.len() as f64)
}

fn glorot_limit(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

fn fill_uniform<R: Rng>(values: &mut [f64], limit: f64, rng: &mut R) {
    for v in values {
        *v = rng.random_range(-limit..limit);
    }
}
