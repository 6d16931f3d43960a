//! File formats, checkpoints and the command-line pipeline around
//! [`herofilter_core`].

pub mod checkpoint;
pub mod cli;
pub mod dataset;
mod error;
pub mod formats;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use dataset::{load_dataset, save_dataset};
pub use error::{Error, Result};
pub use herofilter_core as core;
