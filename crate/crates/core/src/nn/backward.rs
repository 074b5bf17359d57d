use super::forward::{elu_derivative, ForwardTape};
use super::{ModelWeights, GATE_CANDIDATE, GATE_FORGET, GATE_INPUT, GATE_OUTPUT, NUM_GATES};
use crate::error::{Error, Result};

/// Exact gradient of the mean squared error over every prediction on the tape.
pub fn backward(tape: &ForwardTape, targets: &[f64], weights: &ModelWeights) -> Result<ModelWeights> {
    backward_trainable(tape, targets, weights, 0)
}

/// Like [`backward`], but skips layers below `first_trainable`; their gradients stay zero.
///
/// State entering the tape is treated as a constant, so gradients stop at the
/// first recorded timestep.
pub fn backward_trainable(
    tape: &ForwardTape,
    targets: &[f64],
    weights: &ModelWeights,
    first_trainable: usize,
) -> Result<ModelWeights> {
    let arch = &tape.arch;
    weights.validate(arch)?;
    if targets.len() != tape.predictions.len() {
        return Err(Error::Contract(format!(
            "{} targets for {} predictions",
            targets.len(),
            tape.predictions.len()
        )));
    }
    let mut grads = ModelWeights::zeros(arch);
    let steps = tape.steps.len();
    if steps == 0 {
        return Ok(grads);
    }
    let batch = tape.batch;
    let n = arch.hidden_units;
    let alpha = arch.probact.elu_alpha;
    let scale = 2.0 / tape.predictions.len() as f64;

    // head: pred = elu(z) + noise, z = w_d · (h_L ⊙ mask) + b_d
    let mut dh_above = vec![0.0; steps * batch * n];
    for (t, step) in tape.steps.iter().enumerate() {
        for b in 0..batch {
            let k = t * batch + b;
            let dz = scale * (tape.predictions[k] - targets[k]) * elu_derivative(step.z[b], alpha);
            grads.dense_b += dz;
            let input = &step.dense_in[b * n..(b + 1) * n];
            for u in 0..n {
                grads.dense_w[u] += dz * input[u];
                dh_above[k * n + u] = dz * weights.dense_w[u] * tape.dropout_mask[b * n + u];
            }
        }
    }

    let mut da = vec![0.0; NUM_GATES * n];
    for l in (first_trainable..arch.num_layers).rev() {
        let layer = &weights.layers[l];
        let grad = &mut grads.layers[l];
        let d = layer.input_dim;
        let propagate = l > first_trainable;
        let mut dh_below = if propagate {
            vec![0.0; steps * batch * d]
        } else {
            Vec::new()
        };
        for b in 0..batch {
            let mut dh_next = vec![0.0; n];
            let mut dc_next = vec![0.0; n];
            for t in (0..steps).rev() {
                let rec = &tape.steps[t].layers[l];
                let gates = &rec.gates[b * NUM_GATES * n..(b + 1) * NUM_GATES * n];
                let tanh_c = &rec.tanh_c[b * n..(b + 1) * n];
                let c_prev = &rec.c_prev[b * n..(b + 1) * n];
                let h_prev = &rec.h_prev[b * n..(b + 1) * n];
                let x = &rec.x[b * d..(b + 1) * d];
                let k = t * batch + b;
                for u in 0..n {
                    let i = gates[GATE_INPUT * n + u];
                    let f = gates[GATE_FORGET * n + u];
                    let o = gates[GATE_OUTPUT * n + u];
                    let g = gates[GATE_CANDIDATE * n + u];
                    let dh = dh_above[k * n + u] + dh_next[u];
                    let tc = tanh_c[u];
                    let dc = dc_next[u] + dh * o * (1.0 - tc * tc);
                    da[GATE_INPUT * n + u] = dc * g * i * (1.0 - i);
                    da[GATE_FORGET * n + u] = dc * c_prev[u] * f * (1.0 - f);
                    da[GATE_OUTPUT * n + u] = dh * tc * o * (1.0 - o);
                    da[GATE_CANDIDATE * n + u] = dc * i * (1.0 - g * g);
                    dc_next[u] = dc * f;
                }
                dh_next.fill(0.0);
                for r in 0..NUM_GATES * n {
                    let a = da[r];
                    grad.bias[r] += a;
                    let gx = &mut grad.w_x[r * d..(r + 1) * d];
                    for (gw, xv) in gx.iter_mut().zip(x) {
                        *gw += a * xv;
                    }
                    let gh = &mut grad.w_h[r * n..(r + 1) * n];
                    let wh = &layer.w_h[r * n..(r + 1) * n];
                    for j in 0..n {
                        gh[j] += a * h_prev[j];
                        dh_next[j] += a * wh[j];
                    }
                    if propagate {
                        let wx = &layer.w_x[r * d..(r + 1) * d];
                        let below = &mut dh_below[k * d..(k + 1) * d];
                        for (db, w) in below.iter_mut().zip(wx) {
                            *db += a * w;
                        }
                    }
                }
            }
        }
        if propagate {
            dh_above = dh_below;
        }
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{forward, forward_fixed, LstmArchitecture, LstmState, Mode};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn mse(p: &[f64], y: &[f64]) -> f64 {
        p.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / p.len() as f64
    }

    #[test]
    fn zero_residual_gives_zero_gradient() {
        let arch = LstmArchitecture::new(2, 8).unwrap();
        let w = ModelWeights::init(&arch, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let inputs: Vec<f64> = (0..30).map(|i| (i as f64 * 0.2).cos()).collect();
        let mut state = LstmState::zeros(&arch, 3);
        let out = forward(&arch, &w, &inputs, 3, &mut state, Mode::Train, 1.0, &mut rng).unwrap();
        let g = backward(&out.tape, &out.predictions, &w).unwrap();
        assert!(g.global_norm() < 1e-12);
    }

    #[test]
    fn trainable_cutoff_leaves_lower_layers_zero_and_upper_unchanged() {
        let arch = LstmArchitecture::new(3, 4).unwrap();
        let w = ModelWeights::init(&arch, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let inputs: Vec<f64> = (0..12).map(|i| (i as f64 * 0.7).sin()).collect();
        let targets: Vec<f64> = inputs.iter().map(|v| v * 0.5 + 0.1).collect();
        let mut state = LstmState::zeros(&arch, 2);
        let out = forward(&arch, &w, &inputs, 2, &mut state, Mode::Train, 0.3, &mut rng).unwrap();
        let full = backward(&out.tape, &targets, &w).unwrap();
        let cut = backward_trainable(&out.tape, &targets, &w, 2).unwrap();
        for l in 0..2 {
            assert!(cut.layers[l].w_x.iter().chain(&cut.layers[l].w_h).all(|&v| v == 0.0));
        }
        assert_eq!(cut.layers[2], full.layers[2]);
        assert_eq!(cut.dense_w, full.dense_w);
    }

    #[test]
    fn target_length_mismatch() {
        let arch = LstmArchitecture::new(1, 2).unwrap();
        let w = ModelWeights::init(&arch, 0);
        let mut state = LstmState::zeros(&arch, 1);
        let out = forward_fixed(&arch, &w, &[1.0, 2.0], 1, &mut state, &[1.0, 1.0], &[0.0, 0.0]).unwrap();
        assert!(matches!(backward(&out.tape, &[1.0], &w), Err(Error::Contract(_))));
    }

    #[test]
    fn matches_finite_differences_small() {
        let arch = LstmArchitecture::new(2, 3).unwrap();
        let w = ModelWeights::init(&arch, 21);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let batch = 2;
        let inputs: Vec<f64> = (0..16).map(|i| ((i * 7 % 11) as f64 - 5.0) / 3.0).collect();
        let targets: Vec<f64> = inputs.iter().map(|v| (v * 1.3).sin()).collect();
        let mut state = LstmState::zeros(&arch, batch);
        let out = forward(&arch, &w, &inputs, batch, &mut state, Mode::Train, 0.5, &mut rng).unwrap();
        let g = backward(&out.tape, &targets, &w).unwrap();
        let loss = |w: &ModelWeights| {
            let mut s = LstmState::zeros(&arch, batch);
            let o = forward_fixed(&arch, w, &inputs, batch, &mut s, out.tape.dropout_mask(), out.tape.noise()).unwrap();
            mse(&o.predictions, &targets)
        };
        let h = 1e-5;
        let analytic: Vec<f64> = g.tensors().iter().flat_map(|t| t.iter().copied()).collect();
        let mut idx = 0;
        for ti in 0..w.tensors().len() {
            for j in 0..w.tensors()[ti].len() {
                let mut plus = w.clone();
                plus.tensors_mut()[ti][j] += h;
                let mut minus = w.clone();
                minus.tensors_mut()[ti][j] -= h;
                let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
                let a = analytic[idx];
                assert!(
                    (a - fd).abs() <= 1e-7 || (a - fd).abs() <= 1e-4 * fd.abs(),
                    "tensor {ti} entry {j}: analytic {a} vs fd {fd}"
                );
                idx += 1;
            }
        }
    }
}
