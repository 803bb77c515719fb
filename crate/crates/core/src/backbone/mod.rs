//! Convolutional front end, transformer and recurrent branches, latent
//! fusion, reconstruction and two-pass forecast heads, and training.

mod checkpoint;
mod config;
mod model;

pub use checkpoint::{config_hash, from_bytes, load_checkpoint, save_checkpoint, to_bytes};
pub use config::{BackboneConfig, DEFAULT_EMBED_DIM};
pub use model::{composite_loss, Backbone, Evaluator, ForwardOutput, Objective};
