//! White-box reconstruction-distortion attacks on learned image codecs.

pub mod attack;
pub mod codec;
pub mod error;
pub mod frequency;
pub mod harness;
pub mod imaging;
pub mod metrics;
pub mod seed;

pub use error::{Error, Result};
