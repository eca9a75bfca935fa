//! Command-line pipeline for tablature-to-guitar style transfer: synthesize a
//! paired corpus, train the latent flow, transfer, evaluate and analyse ratings.

pub mod config;
pub mod error;
pub mod pipeline;

pub use config::PipelineConfig;
pub use error::{CliError, CliResult};
pub use pipeline::{Condition, Pipeline};
