use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use rttlab_core::generator::GenerationSpec;
use rttlab_core::netem::DEFAULT_PING_COUNT;
use rttlab_core::train::{HyperGrid, TrainConfig};
use rttlab_core::transfer::FreezeSpec;

/// Settings shared by every subcommand, loadable from `--config`. Flags win over file values.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub target: Option<PathBuf>,
    pub library: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub train: TrainConfig,
    /// Search space for `train-source`; a single 2×8 point when absent.
    pub grid: Option<HyperGrid>,
    pub freeze: FreezeSpec,
    pub generation: GenerationSpec,
    pub emulation: EmulationConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmulationConfig {
    pub runs: usize,
    pub pings: usize,
    pub update_interval_ms: f64,
    pub reconfig_cost_ms: f64,
    pub uplink_fraction: f64,
}

impl Default for EmulationConfig {
    fn default() -> Self {
        Self {
            runs: 1,
            pings: DEFAULT_PING_COUNT,
            update_interval_ms: 500.0,
            reconfig_cost_ms: 4.0,
            uplink_fraction: 0.5,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn default_grid(&self) -> HyperGrid {
        self.grid
            .clone()
            .unwrap_or_else(|| HyperGrid::single(2, 8, self.train.batch_size, self.train.epochs))
    }
}
