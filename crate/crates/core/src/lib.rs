//! Toolkit for re-synthesizing portraits across decades with a family of
//! per-decade style-based generators.
//!
//! The pipeline fine-tunes one child generator per decade from a shared parent
//! ([`training`]), inverts a portrait into its source decade and learns a
//! parameter-space offset on that generator ([`inversion`]), then adds the same
//! offset to every other decade's weights to render the identity across time.
//! Supporting modules cover face masks and embeddings ([`perception`]),
//! evaluation metrics ([`metrics`]), weight-space diagnostics ([`weightspace`]),
//! clique-based identity clustering ([`clustering`]), dataset manifests and
//! artifacts ([`pipeline`]), and a synthetic portrait corpus ([`toy`]).

pub mod clustering;
pub mod decade;
pub mod error;
pub mod generator;
pub mod image;
pub mod inversion;
pub mod metrics;
pub mod nn;
pub mod perception;
pub mod pipeline;
pub mod toy;
pub mod training;
pub mod weightspace;

pub use decade::Decade;
pub use error::{Error, Result};
pub use image::Image;
