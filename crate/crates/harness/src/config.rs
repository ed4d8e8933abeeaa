//! Run configuration read from TOML.
//!
//! ```toml
//! data_seed = 7
//!
//! [task]
//! letters = "abcdefg"
//! sigma = 0.3
//!
//! [model]
//! mode = "coma"
//! tau = 2
//!
//! [train]
//! lr = 0.01
//! epochs = 10
//! seed = 1
//! ```
//!
//! Every section and field is optional; missing values take the defaults of
//! the standard toy task.

use std::path::Path;

use ctcattn::{EncoderConfig, Mode, ModelConfig};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::synth::TaskConfig;
use crate::train::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub mode: Mode,
    pub tau: usize,
    pub layers: usize,
    pub cells: usize,
    pub bidirectional: bool,
    pub stack: usize,
    pub skip: usize,
    pub proj_dim: usize,
    pub loc_filters: usize,
    pub loc_width: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let enc = EncoderConfig::default();
        ModelSection {
            mode: Mode::Coma,
            tau: 2,
            layers: enc.layers,
            cells: enc.cells_per_dir,
            bidirectional: enc.bidirectional,
            stack: enc.stack,
            skip: enc.skip,
            proj_dim: enc.proj_dim,
            loc_filters: 4,
            loc_width: 3,
        }
    }
}

impl ModelSection {
    pub fn model_config(&self, input_dim: usize, labels: usize) -> ModelConfig {
        let enc = EncoderConfig {
            input_dim,
            layers: self.layers,
            cells_per_dir: self.cells,
            bidirectional: self.bidirectional,
            stack: self.stack,
            skip: self.skip,
            proj_dim: self.proj_dim,
        };
        let mut cfg = ModelConfig::new(enc, self.mode, self.tau, labels);
        cfg.attn.loc_filters = self.loc_filters;
        cfg.attn.loc_width = self.loc_width;
        cfg
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seed of the synthetic task (prototypes and utterances).
    pub data_seed: u64,
    pub task: TaskConfig,
    pub model: ModelSection,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        RunConfig::parse(&std::fs::read_to_string(path)?)
    }

    /// Command-line overrides.
    pub fn apply_overrides(&mut self, seed: Option<u64>, mode: Option<Mode>, tau: Option<usize>) {
        if let Some(s) = seed {
            self.train.seed = s;
        }
        if let Some(m) = mode {
            self.model.mode = m;
        }
        if let Some(t) = tau {
            self.model.tau = t;
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.task.dim == 0 {
            return Err(HarnessError::Config("task dim must be > 0".into()));
        }
        Ok(())
    }
}
