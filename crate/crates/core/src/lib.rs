//! Access-time (RTT) modelling toolkit.
//!
//! Stacked-LSTM source models are trained on long RTT traces, stored in a
//! library, matched to a short target sample by dynamic time warping and
//! fine-tuned with their first layers frozen. A fine-tuned model generates
//! synthetic traces, which a time-driven delay simulator replays.

pub mod error;
pub mod generator;
pub mod metrics;
pub mod netem;
pub mod nn;
pub mod optim;
pub mod seed;
pub mod similarity;
pub mod synthetic;
pub mod trace;
pub mod train;
pub mod transfer;
pub mod validation;

pub use error::{Error, Result};
