//! Adam with bias-corrected moment estimates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{FrozenMask, ModelWeights};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
        }
    }
}

/// Moment accumulators shaped like the model, plus the step counter.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: ModelWeights,
    pub v: ModelWeights,
    pub t: u64,
}

impl AdamState {
    pub fn new(weights: &ModelWeights, config: AdamConfig) -> Self {
        let mut zero = weights.clone();
        for t in zero.tensors_mut() {
            t.fill(0.0);
        }
        Self {
            config,
            m: zero.clone(),
            v: zero,
            t: 0,
        }
    }
}

/// One Adam update on raw slices; `t` is the already-incremented step number.
pub fn adam_update(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: u64,
    config: &AdamConfig,
) {
    let AdamConfig {
        learning_rate,
        beta1,
        beta2,
        epsilon,
    } = *config;
    let exp = t.min(i32::MAX as u64) as i32;
    let m_correction = 1.0 - beta1.powi(exp);
    let v_correction = 1.0 - beta2.powi(exp);
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(m.iter_mut()).zip(v.iter_mut()) {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let m_hat = *m / m_correction;
        let v_hat = *v / v_correction;
        *p -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
    }
}

/// Applies one step to every trainable tensor. Frozen tensors and their moments are
/// left untouched. Non-finite gradients abort the step before anything changes.
pub fn adam_step(
    weights: &mut ModelWeights,
    grads: &ModelWeights,
    state: &mut AdamState,
    frozen: FrozenMask,
) -> Result<()> {
    let owners = weights.tensor_layers();
    let grad_tensors = grads.tensors();
    if grad_tensors.len() != owners.len() || state.m.tensors().len() != owners.len() {
        return Err(Error::Contract("gradient/state shape does not match weights".into()));
    }
    for (i, g) in grad_tensors.iter().enumerate() {
        if !frozen.is_frozen(owners[i]) && !g.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFiniteGradient { tensor: i });
        }
    }
    state.t += 1;
    let t = state.t;
    let config = state.config;
    let ms = state.m.tensors_mut();
    let vs = state.v.tensors_mut();
    for ((((p, g), m), v), owner) in weights
        .tensors_mut()
        .into_iter()
        .zip(grad_tensors)
        .zip(ms)
        .zip(vs)
        .zip(owners)
    {
        if frozen.is_frozen(owner) {
            continue;
        }
        if p.len() != g.len() || p.len() != m.len() {
            return Err(Error::Contract("tensor length mismatch".into()));
        }
        adam_update(p, g, m, v, t, &config);
    }
    Ok(())
}

/// Rescales `grads` so its global norm is at most `max_norm`. Returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut ModelWeights, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm && norm.is_finite() {
        grads.scale(max_norm / norm);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::LstmArchitecture;

    #[test]
    fn hand_derived_first_step() {
        let cfg = AdamConfig::default();
        let (mut p, mut m, mut v) = ([0.0], [0.0], [0.0]);
        adam_update(&mut p, &[2.0], &mut m, &mut v, 1, &cfg);
        assert!((m[0] - 0.2).abs() < 1e-15);
        assert!((v[0] - 0.004).abs() < 1e-15);
        let expected = -1e-5 * 2.0 / (2.0 + 1e-7);
        assert!((p[0] - expected).abs() < 1e-12);
        assert!((p[0] - (-9.9999995e-6)).abs() < 1e-12);
    }

    #[test]
    fn constant_gradient_moves_by_learning_rate() {
        let cfg = AdamConfig::default();
        let (mut p, mut m, mut v) = ([0.0], [0.0], [0.0]);
        let mut prev = 0.0;
        for t in 1..=50 {
            adam_update(&mut p, &[0.3], &mut m, &mut v, t, &cfg);
            let step = (p[0] - prev).abs();
            prev = p[0];
            if t == 50 {
                assert!((step - cfg.learning_rate).abs() < 0.01 * cfg.learning_rate);
            }
        }
    }

    #[test]
    fn zero_gradient_changes_nothing_but_the_counter() {
        let arch = LstmArchitecture::new(2, 4).unwrap();
        let mut w = crate::nn::ModelWeights::init(&arch, 1);
        let before = w.clone();
        let mut state = AdamState::new(&w, AdamConfig::default());
        let zero = crate::nn::ModelWeights::zeros(&arch);
        adam_step(&mut w, &zero, &mut state, FrozenMask::none()).unwrap();
        assert!(w.bit_eq(&before));
        assert_eq!(state.t, 1);
    }

    #[test]
    fn frozen_layers_are_bit_identical() {
        let arch = LstmArchitecture::new(3, 4).unwrap();
        let mut w = crate::nn::ModelWeights::init(&arch, 1);
        let before = w.clone();
        let mut grads = crate::nn::ModelWeights::init(&arch, 2);
        let mut state = AdamState::new(&w, AdamConfig { learning_rate: 0.1, ..AdamConfig::default() });
        for _ in 0..25 {
            adam_step(&mut w, &grads, &mut state, FrozenMask::first(2)).unwrap();
            grads.scale(-1.1);
        }
        for l in 0..2 {
            assert_eq!(w.layers[l], before.layers[l]);
            assert!(state.m.layers[l].w_x.iter().all(|&v| v == 0.0));
        }
        assert_ne!(w.layers[2], before.layers[2]);
        assert_eq!(state.t, 25);
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let arch = LstmArchitecture::new(1, 2).unwrap();
        let mut w = crate::nn::ModelWeights::init(&arch, 1);
        let before = w.clone();
        let mut g = crate::nn::ModelWeights::zeros(&arch);
        g.dense_w[0] = f64::NAN;
        let mut state = AdamState::new(&w, AdamConfig::default());
        assert!(matches!(
            adam_step(&mut w, &g, &mut state, FrozenMask::none()),
            Err(Error::NonFiniteGradient { .. })
        ));
        assert!(w.bit_eq(&before));
        assert_eq!(state.t, 0);
    }

    #[test]
    fn clipping_caps_norm() {
        let arch = LstmArchitecture::new(1, 4).unwrap();
        let mut g = crate::nn::ModelWeights::init(&arch, 3);
        g.scale(100.0);
        let pre = clip_global_norm(&mut g, 5.0);
        assert!(pre > 5.0);
        assert!((g.global_norm() - 5.0).abs() < 1e-9);
        let mut small = crate::nn::ModelWeights::zeros(&arch);
        small.dense_b = 0.5;
        clip_global_norm(&mut small, 5.0);
        assert_eq!(small.dense_b, 0.5);
    }
}
