//! Seeded synthetic RTT-like series for experiments and tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Stationary AR(1) `x_t = mean + ρ (x_{t-1} − mean) + e_t`, scaled so the marginal std is `std`.
pub fn ar1(len: usize, rho: f64, mean: f64, std: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let innovation = std * (1.0 - rho * rho).sqrt();
    let mut dev = std * rng.sample::<f64, _>(StandardNormal);
    (0..len)
        .map(|_| {
            let out = mean + dev;
            dev = rho * dev + innovation * rng.sample::<f64, _>(StandardNormal);
            out
        })
        .collect()
}

pub fn white_noise(len: usize, mean: f64, std: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len)
        .map(|_| mean + std * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

pub fn sine(len: usize, period: f64, mean: f64, amplitude: f64) -> Vec<f64> {
    (0..len)
        .map(|i| mean + amplitude * (2.0 * std::f64::consts::PI * i as f64 / period).sin())
        .collect()
}

/// Lower-bounds every sample so the series is a valid RTT trace.
pub fn clamp_positive(series: &mut [f64], floor: f64) {
    for v in series {
        if *v < floor {
            *v = floor;
        }
    }
}
