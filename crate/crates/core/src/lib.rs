//! Latent adversarial generator: sample plausible high-resolution images
//! from a tiny input image and a latent vector.
//!
//! The crate is generic over the floating-point element type ([`Scalar`]);
//! the aliases at the root fix it to `f64`, which is what training and the
//! gradient checks use.

pub mod diffcore;
pub mod error;
pub mod imaging;
pub mod losses;
pub mod nets;
mod scalar;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Graph64 = diffcore::Graph<f64>;
pub type Graph32 = diffcore::Graph<f32>;
pub type ImageBatch64 = imaging::ImageBatch<f64>;
pub type ImageBatch32 = imaging::ImageBatch<f32>;
pub type Params64 = nets::Params<f64>;
pub type TrainState64 = trainer::TrainState<f64>;
