//! The spoofing-detection backend over embedding sequences.

mod checkpoint;
mod config;
mod model;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint};
pub use config::DetectorConfig;
pub use model::{score, DetectorModel, Mode};
