//! Autoregressive synthetic trace generation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{forward, LstmState, Mode};
use crate::seed::rng_for;
use crate::trace::{RttTrace, DEFAULT_INTERVAL_MS};
use crate::transfer::LstmModel;

pub const BURN_IN_STEPS: usize = 10;
pub const MIN_RTT_MS: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationSpec {
    pub length: usize,
    /// Starting value in ms. `None` uses the model's training median, then its mean.
    pub seed_value: Option<f64>,
    pub seed: u64,
    /// Head noise. `None` uses the model's own σ.
    pub sigma: Option<f64>,
}

impl Default for GenerationSpec {
    fn default() -> Self {
        Self {
            length: 2500,
            seed_value: None,
            seed: 0,
            sigma: None,
        }
    }
}

impl GenerationSpec {
    pub fn new(length: usize, seed: u64) -> Self {
        Self {
            length,
            seed,
            ..Self::default()
        }
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.sigma = Some(sigma);
        self
    }

    pub fn with_seed_value(mut self, value: f64) -> Self {
        self.seed_value = Some(value);
        self
    }
}

/// Runs the model on its own output for `spec.length` steps after a burn-in on the seed value.
pub fn generate(model: &LstmModel, spec: &GenerationSpec) -> Result<RttTrace> {
    model.validate()?;
    if spec.length == 0 {
        return Err(Error::Argument("generation length must be >= 1".into()));
    }
    let seed_ms = spec
        .seed_value
        .or(model.metadata.median_ms)
        .unwrap_or(model.standardizer.mean);
    if !(seed_ms.is_finite() && seed_ms > 0.0) {
        return Err(Error::Argument(format!("seed value must be a positive number of ms, got {seed_ms}")));
    }
    let sigma = spec.sigma.unwrap_or(model.architecture.probact.sigma);
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::Argument(format!("sigma must be >= 0, got {sigma}")));
    }

    let arch = &model.architecture;
    let mut state = LstmState::zeros(arch, 1);
    let mut rng = rng_for(spec.seed, "generate");
    let seed_z = model.standardizer.apply_one(seed_ms);
    let mut step = |x: f64, state: &mut LstmState, k: usize| -> Result<f64> {
        let out = forward(arch, &model.weights, &[x], 1, state, Mode::Infer, sigma, &mut rng)
            .map_err(|_| Error::GenerationDiverged { step: k })?;
        let y = out.predictions[0];
        if y.is_finite() {
            Ok(y)
        } else {
            Err(Error::GenerationDiverged { step: k })
        }
    };

    for _ in 0..BURN_IN_STEPS {
        step(seed_z, &mut state, 0)?;
    }
    let mut samples = Vec::with_capacity(spec.length);
    let mut x = seed_z;
    for k in 0..spec.length {
        let y = step(x, &mut state, k)?;
        let ms = model.standardizer.invert_one(y);
        if !ms.is_finite() {
            return Err(Error::GenerationDiverged { step: k });
        }
        samples.push(ms.max(MIN_RTT_MS));
        x = y;
    }
    let context = format!("{} (synthetic)", model.metadata.context);
    RttTrace::new(samples, DEFAULT_INTERVAL_MS, context)
}

/// Root mean squared one-step error of `model` on `series_ms`, in standardized units.
/// A natural head-noise level for generation.
pub fn residual_sigma(model: &LstmModel, series_ms: &[f64]) -> Result<f64> {
    Ok(model.evaluate(series_ms)?.mse.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{LstmArchitecture, ModelWeights, GATE_OUTPUT};
    use crate::trace::{mean_and_population_std, Standardizer};
    use crate::transfer::ModelMetadata;

    fn model(seed: u64) -> LstmModel {
        let arch = LstmArchitecture::new(2, 8).unwrap();
        LstmModel {
            architecture: arch,
            weights: ModelWeights::init(&arch, seed),
            standardizer: Standardizer::new(40.0, 5.0).unwrap(),
            metadata: ModelMetadata {
                context: "wifi".into(),
                median_ms: Some(41.0),
                ..ModelMetadata::default()
            },
        }
    }

    #[test]
    fn length_and_interval() {
        let m = model(1);
        assert!(generate(&m, &GenerationSpec::new(0, 1)).is_err());
        let one = generate(&m, &GenerationSpec::new(1, 1)).unwrap();
        assert_eq!(one.len(), 1);
        let t = generate(&m, &GenerationSpec::new(2500, 1)).unwrap();
        assert_eq!(t.len(), 2500);
        assert_eq!(t.interval_ms(), 500.0);
        assert_eq!(t.context(), "wifi (synthetic)");
    }

    #[test]
    fn deterministic_and_varied() {
        let m = model(2);
        let spec = GenerationSpec::new(1000, 7);
        let a = generate(&m, &spec).unwrap();
        assert_eq!(a, generate(&m, &spec).unwrap());
        assert_ne!(a, generate(&m, &GenerationSpec::new(1000, 8)).unwrap());
        let (_, std) = mean_and_population_std(a.samples());
        assert!(std > 0.0);
        assert!(a.samples().iter().all(|v| v.is_finite() && *v >= MIN_RTT_MS));
    }

    #[test]
    fn clamps_low_values() {
        let mut m = model(3);
        // the ELU head bottoms out at -1, i.e. 0.5 - 1 = -0.5 ms
        m.weights.dense_w.fill(0.0);
        m.weights.dense_b = -50.0;
        m.standardizer = Standardizer::new(0.5, 1.0).unwrap();
        let t = generate(&m, &GenerationSpec::new(50, 1).with_sigma(0.0)).unwrap();
        assert!(t.samples().iter().all(|v| *v == MIN_RTT_MS));
    }

    #[test]
    fn noiseless_contraction_converges() {
        // small weights make the feedback map a contraction
        let mut m = model(4);
        for layer in &mut m.weights.layers {
            for w in layer.w_x.iter_mut().chain(layer.w_h.iter_mut()) {
                *w *= 0.3;
            }
            layer.gate_bias_mut(GATE_OUTPUT).fill(0.0);
        }
        let t = generate(&m, &GenerationSpec::new(200, 1).with_sigma(0.0)).unwrap();
        let steps: Vec<f64> = t.samples().windows(2).map(|w| (w[1] - w[0]).abs()).collect();
        for pair in steps.windows(2).skip(20) {
            assert!(pair[1] <= pair[0] + 1e-12, "{pair:?}");
        }
    }

    #[test]
    fn rejects_bad_spec() {
        let m = model(5);
        assert!(generate(&m, &GenerationSpec::new(5, 1).with_seed_value(-1.0)).is_err());
        assert!(generate(&m, &GenerationSpec::new(5, 1).with_sigma(f64::NAN)).is_err());
    }

    #[test]
    fn divergence_names_step() {
        let mut m = model(6);
        m.weights.dense_w.fill(1e308);
        m.standardizer = Standardizer::new(0.0, 1e308).unwrap();
        match generate(&m, &GenerationSpec::new(5, 1)) {
            Err(Error::GenerationDiverged { .. }) => {}
            other => panic!("{other:?}"),
        }
    }
}
