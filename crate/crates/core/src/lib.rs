//! Soft-body proprioception: image encoder, folding decoders, metrics and
//! synthetic data.

pub mod baseline;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod image;
pub mod model;
pub mod numcore;
pub mod prototype;
pub mod synthdata;
pub mod training;

pub use error::{Error, Result};
pub use geometry::{Frame, NormalizationTransform, PointCloud};
pub use image::Image;
pub use model::{DecoderConfig, DecoderVariant, EncoderConfig, ModelConfig, ProprioModel};
pub use prototype::PrototypeGrid;
