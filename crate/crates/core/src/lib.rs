//! CTC acoustic models whose output layer attends over a local window of
//! encoder frames.
//!
//! The crate holds a small reverse-mode autodiff tape ([`Tape`]), an LSTM
//! encoder, the attention head with its ablation ladder ([`Mode`]), the CTC
//! objective and greedy decoding with error-rate scoring.

pub mod attention;
pub mod checkpoint;
pub mod ctc;
pub mod decode;
pub mod encoder;
pub mod error;
pub mod features;
mod kernels;
pub mod lstm;
pub mod model;
pub mod params;
pub mod tape;
pub mod tensor;

pub use attention::{AttnConfig, Features, Mode};
pub use ctc::{collapse, ctc_loss, ctc_loss_bruteforce, LabelSequence, LogPosteriorLattice};
pub use decode::{edit_distance, greedy_decode, Charset, EditStats, ErrorTally, Transcript};
pub use encoder::EncoderConfig;
pub use error::{Error, Result};
pub use features::FeatureSequence;
pub use model::{Model, ModelConfig};
pub use params::{ParamId, ParamSet};
pub use tape::{OpKind, Tape, Var};
pub use tensor::Tensor;
