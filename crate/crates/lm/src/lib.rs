//! Small GRU and transformer language models trained from scratch on a
//! reverse-mode tape, with train-time token-substitution and state-dropout
//! noise.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod gradcheck;
pub mod model;
pub mod noise;
pub mod tape;
pub mod train;

pub use config::{AdamConfig, Arch, LmConfig, NoiseConfig, TrainConfig};
pub use error::{LmError, Result};
pub use gradcheck::{grad_check_lm, GradCheckReport};
pub use model::{Example, Model};
pub use noise::{apply_token_noise, state_dropout};
pub use train::{lm_next_dist, make_example, train_lm, train_lm_with_progress, Provenance, TrainOutcome, TrainedLm};
