//! Weakly supervised human-object interaction detection with an HOI knowledge bank.

pub mod config;
pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod learning;
pub mod model;
pub mod nn;
pub mod vocab;

pub use config::{KtnMode, ModelConfig};
pub use error::{Error, Result};
pub use geometry::BBox;
pub use vocab::Vocabulary;
