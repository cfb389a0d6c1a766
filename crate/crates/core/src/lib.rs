//! Core algorithms for HDR no-reference and full-reference video quality
//! assessment with a contrastively fine-tuned encoder.

mod container;
pub mod contrastive;
pub mod error;
pub mod features;
pub mod ladder;
pub mod media;
pub mod metrics;
pub mod nn;
pub mod probe;
pub mod quality;
pub mod seed;

pub use container::{file_sha256, sha256_hex};
pub use error::{Error, Result};
