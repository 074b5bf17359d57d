use rand::Rng;
use rand_distr::StandardNormal;

use super::cell::cell_step;
use super::{LstmArchitecture, ModelWeights, NUM_GATES};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Dropout active.
    Train,
    /// Dropout off.
    Infer,
}

pub fn elu(z: f64, alpha: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        alpha * z.exp_m1()
    }
}

pub fn elu_derivative(z: f64, alpha: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else {
        alpha * z.exp()
    }
}

/// ELU plus additive Gaussian noise `σ·ε`. No randomness is drawn when `sigma == 0`.
pub fn probact_elu<R: Rng + ?Sized>(z: f64, alpha: f64, sigma: f64, rng: &mut R) -> f64 {
    let base = elu(z, alpha);
    if sigma > 0.0 {
        let eps: f64 = rng.sample(StandardNormal);
        base + sigma * eps
    } else {
        base
    }
}

/// Hidden and memory state for every layer and lane.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmState {
    batch: usize,
    hidden: usize,
    /// per layer, `batch × hidden`
    h: Vec<Vec<f64>>,
    c: Vec<Vec<f64>>,
}

impl LstmState {
    pub fn zeros(arch: &LstmArchitecture, batch: usize) -> Self {
        let size = batch * arch.hidden_units;
        Self {
            batch,
            hidden: arch.hidden_units,
            h: vec![vec![0.0; size]; arch.num_layers],
            c: vec![vec![0.0; size]; arch.num_layers],
        }
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn reset(&mut self) {
        for v in self.h.iter_mut().chain(self.c.iter_mut()) {
            v.fill(0.0);
        }
    }

    /// Hidden vector of `layer` for `lane`.
    pub fn hidden(&self, layer: usize, lane: usize) -> &[f64] {
        &self.h[layer][lane * self.hidden..(lane + 1) * self.hidden]
    }

    pub fn cell(&self, layer: usize, lane: usize) -> &[f64] {
        &self.c[layer][lane * self.hidden..(lane + 1) * self.hidden]
    }

    fn matches(&self, arch: &LstmArchitecture, batch: usize) -> bool {
        self.batch == batch && self.hidden == arch.hidden_units && self.h.len() == arch.num_layers
    }
}

/// Activations of one layer at one timestep, all lanes.
#[derive(Clone, Debug)]
pub(crate) struct LayerStep {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    pub gates: Vec<f64>,
    pub tanh_c: Vec<f64>,
}

#[derive(Clone, Debug)]
pub(crate) struct StepRecord {
    pub layers: Vec<LayerStep>,
    /// dropout-scaled top hidden state, `batch × hidden`
    pub dense_in: Vec<f64>,
    /// pre-activation of the head, per lane
    pub z: Vec<f64>,
}

/// Everything backpropagation needs from a forward pass.
#[derive(Clone, Debug)]
pub struct ForwardTape {
    pub(crate) batch: usize,
    pub(crate) arch: LstmArchitecture,
    pub(crate) steps: Vec<StepRecord>,
    pub(crate) dropout_mask: Vec<f64>,
    pub(crate) noise: Vec<f64>,
    pub(crate) predictions: Vec<f64>,
}

impl ForwardTape {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Dropout multipliers (`0` or `1/(1-rate)`), `batch × hidden`.
    pub fn dropout_mask(&self) -> &[f64] {
        &self.dropout_mask
    }

    /// Additive head noise `σ·ε`, timestep-major.
    pub fn noise(&self) -> &[f64] {
        &self.noise
    }

    pub fn predictions(&self) -> &[f64] {
        &self.predictions
    }
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// One prediction per input, timestep-major (`t * batch + lane`).
    pub predictions: Vec<f64>,
    pub tape: ForwardTape,
}

/// Inverted-dropout multipliers for `batch × hidden` units.
pub fn sample_dropout_mask<R: Rng + ?Sized>(
    arch: &LstmArchitecture,
    batch: usize,
    rng: &mut R,
) -> Vec<f64> {
    let size = batch * arch.hidden_units;
    let rate = arch.dropout_rate;
    if rate == 0.0 {
        return vec![1.0; size];
    }
    let keep = 1.0 - rate;
    let scale = 1.0 / keep;
    (0..size)
        .map(|_| if rng.random::<f64>() < keep { scale } else { 0.0 })
        .collect()
}

/// Runs the stacked network over `inputs` (timestep-major, `batch` lanes per step),
/// carrying `state` forward. Train mode samples one dropout mask for the call.
#[allow(clippy::too_many_arguments)]
pub fn forward<R: Rng + ?Sized>(
    arch: &LstmArchitecture,
    weights: &ModelWeights,
    inputs: &[f64],
    batch: usize,
    state: &mut LstmState,
    mode: Mode,
    sigma: f64,
    rng: &mut R,
) -> Result<ForwardOutput> {
    let mask = match mode {
        Mode::Train => sample_dropout_mask(arch, batch, rng),
        Mode::Infer => vec![1.0; batch * arch.hidden_units],
    };
    let noise: Vec<f64> = if sigma > 0.0 {
        (0..inputs.len())
            .map(|_| sigma * rng.sample::<f64, _>(StandardNormal))
            .collect()
    } else {
        vec![0.0; inputs.len()]
    };
    forward_fixed(arch, weights, inputs, batch, state, &mask, &noise)
}

/// Forward pass with a caller-supplied dropout mask and head noise.
pub fn forward_fixed(
    arch: &LstmArchitecture,
    weights: &ModelWeights,
    inputs: &[f64],
    batch: usize,
    state: &mut LstmState,
    dropout_mask: &[f64],
    noise: &[f64],
) -> Result<ForwardOutput> {
    let n = arch.hidden_units;
    if batch == 0 || !inputs.len().is_multiple_of(batch) {
        return Err(Error::Contract(format!(
            "{} inputs do not fill {batch} lanes",
            inputs.len()
        )));
    }
    if !state.matches(arch, batch) {
        return Err(Error::Contract("state shape does not match batch/architecture".into()));
    }
    if weights.layers.len() != arch.num_layers || weights.dense_w.len() != n {
        return Err(Error::Contract("weights do not match architecture".into()));
    }
    if dropout_mask.len() != batch * n || noise.len() != inputs.len() {
        return Err(Error::Contract("dropout mask or noise has wrong length".into()));
    }
    let steps = inputs.len() / batch;
    let alpha = arch.probact.elu_alpha;

    let mut records = Vec::with_capacity(steps);
    let mut predictions = Vec::with_capacity(inputs.len());
    for t in 0..steps {
        let mut layer_records = Vec::with_capacity(arch.num_layers);
        let mut x: Vec<f64> = inputs[t * batch..(t + 1) * batch].to_vec();
        for (l, layer) in weights.layers.iter().enumerate() {
            let d = layer.input_dim;
            let h_prev = std::mem::take(&mut state.h[l]);
            let c_prev = std::mem::take(&mut state.c[l]);
            let mut gates = vec![0.0; batch * NUM_GATES * n];
            let mut c = vec![0.0; batch * n];
            let mut tanh_c = vec![0.0; batch * n];
            let mut h = vec![0.0; batch * n];
            for b in 0..batch {
                let lane = b * n..(b + 1) * n;
                cell_step(
                    layer,
                    &x[b * d..(b + 1) * d],
                    &h_prev[lane.clone()],
                    &c_prev[lane.clone()],
                    &mut gates[b * NUM_GATES * n..(b + 1) * NUM_GATES * n],
                    &mut c[lane.clone()],
                    &mut tanh_c[lane.clone()],
                    &mut h[lane],
                );
            }
            if !h.iter().chain(&c).all(|v| v.is_finite()) {
                return Err(Error::NumericOverflow { timestep: t });
            }
            state.h[l] = h.clone();
            state.c[l] = c;
            layer_records.push(LayerStep {
                x: std::mem::replace(&mut x, h),
                h_prev,
                c_prev,
                gates,
                tanh_c,
            });
        }
        // x now holds the top layer's hidden output
        let dense_in: Vec<f64> = x.iter().zip(dropout_mask).map(|(h, m)| h * m).collect();
        let mut z = Vec::with_capacity(batch);
        for b in 0..batch {
            let mut acc = weights.dense_b;
            for (w, v) in weights.dense_w.iter().zip(&dense_in[b * n..(b + 1) * n]) {
                acc += w * v;
            }
            let pred = elu(acc, alpha) + noise[t * batch + b];
            if !pred.is_finite() {
                return Err(Error::NumericOverflow { timestep: t });
            }
            z.push(acc);
            predictions.push(pred);
        }
        records.push(StepRecord {
            layers: layer_records,
            dense_in,
            z,
        });
    }

    Ok(ForwardOutput {
        predictions: predictions.clone(),
        tape: ForwardTape {
            batch,
            arch: *arch,
            steps: records,
            dropout_mask: dropout_mask.to_vec(),
            noise: noise.to_vec(),
            predictions,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn elu_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(probact_elu(2.0, 1.0, 0.0, &mut rng), 2.0);
        let v = probact_elu(-1.0, 1.0, 0.0, &mut rng);
        assert!((v - (-0.6321205588285577)).abs() < 1e-12);
        assert!((v - ((-1.0f64).exp() - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn probact_noise_is_zero_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for z in [-0.7, 0.4, 1.5] {
            let n = 100_000;
            let mean = (0..n)
                .map(|_| probact_elu(z, 1.0, 1.0, &mut rng))
                .sum::<f64>()
                / n as f64;
            assert!((mean - elu(z, 1.0)).abs() < 0.02, "z={z}: mean {mean}");
        }
    }

    #[test]
    fn zero_weights_predict_head_bias() {
        let arch = LstmArchitecture::new(2, 4).unwrap().with_sigma(0.0);
        let mut w = ModelWeights::zeros(&arch);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for b_d in [-0.8, 0.0, 1.3] {
            w.dense_b = b_d;
            let mut state = LstmState::zeros(&arch, 3);
            let out = forward(&arch, &w, &[1.0, -2.0, 3.0, 0.5, 0.1, 9.0], 3, &mut state, Mode::Train, 0.0, &mut rng)
                .unwrap();
            let expected = probact_elu(b_d, 1.0, 0.0, &mut rng);
            assert!(out.predictions.iter().all(|&p| p == expected));
        }
    }

    #[test]
    fn infer_without_noise_is_deterministic() {
        let arch = LstmArchitecture::new(3, 8).unwrap();
        let w = ModelWeights::init(&arch, 9);
        let inputs: Vec<f64> = (0..40).map(|i| (i as f64 * 0.3).sin()).collect();
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut state = LstmState::zeros(&arch, 2);
            forward(&arch, &w, &inputs, 2, &mut state, Mode::Infer, 0.0, &mut rng)
                .unwrap()
                .predictions
        };
        let a = run(1);
        let b = run(2);
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn state_carries_across_calls() {
        let arch = LstmArchitecture::new(2, 8).unwrap();
        let w = ModelWeights::init(&arch, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mask = sample_dropout_mask(&arch, 2, &mut rng);
        let inputs = [0.2, -0.4, 1.1, 0.7, -0.3, 0.05];
        let noise = [0.01, -0.2, 0.3, 0.0, 0.5, -0.1];

        let mut whole_state = LstmState::zeros(&arch, 2);
        let whole = forward_fixed(&arch, &w, &inputs, 2, &mut whole_state, &mask, &noise).unwrap();

        let mut state = LstmState::zeros(&arch, 2);
        let mut parts = Vec::new();
        for t in 0..3 {
            let r = t * 2..(t + 1) * 2;
            let out = forward_fixed(&arch, &w, &inputs[r.clone()], 2, &mut state, &mask, &noise[r]).unwrap();
            parts.extend(out.predictions);
        }
        assert!(whole.predictions.iter().zip(&parts).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(whole_state, state);
        assert_eq!(whole.tape.len(), 3);
    }

    #[test]
    fn overflow_names_timestep() {
        let arch = LstmArchitecture::new(1, 2).unwrap();
        let mut w = ModelWeights::zeros(&arch);
        w.dense_b = f64::MAX;
        w.dense_w = vec![f64::MAX; 2];
        w.layers[0].bias.fill(30.0);
        let mut state = LstmState::zeros(&arch, 1);
        let err = forward_fixed(&arch, &w, &[1.0, 1.0], 1, &mut state, &[1.0, 1.0], &[0.0, 0.0]).unwrap_err();
        assert!(matches!(err, Error::NumericOverflow { timestep: 0 }));
    }

    #[test]
    fn dropout_mask_statistics() {
        let arch = LstmArchitecture::new(1, 100).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mask = sample_dropout_mask(&arch, 100, &mut rng);
        assert!(mask.iter().all(|&m| m == 0.0 || m == 2.0));
        let kept = mask.iter().filter(|&&m| m > 0.0).count() as f64 / mask.len() as f64;
        assert!((kept - 0.5).abs() < 0.03);
        let none = sample_dropout_mask(&arch.with_dropout(0.0), 4, &mut rng);
        assert!(none.iter().all(|&m| m == 1.0));
    }
}
