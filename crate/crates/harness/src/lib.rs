//! Synthetic-task harness: data generation, training, evaluation, gradient
//! checks and the model-variant ablation.

pub mod ablate;
pub mod config;
pub mod error;
pub mod gradcheck;
pub mod optim;
pub mod run;
pub mod synth;
pub mod train;

pub use config::{ModelSection, RunConfig};
pub use error::{HarnessError, Result};
pub use run::{build_task, fresh_model, run_on, RunResult, Task};
pub use synth::{gen_dataset, Splits, SynthTaskSpec, TaskConfig, Utterance};
pub use train::{train, Scores, TrainConfig, TrainReport};
