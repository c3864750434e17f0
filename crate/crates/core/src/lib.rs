//! Bi-temporal change detection: a Siamese EfficientNet encoder, a
//! parameter-free layer-exchange FPN neck, a distance-gated layer-by-layer
//! decoder, and the data/evaluation machinery around them.

pub mod app;
pub mod backbone;
pub mod changefpn;
pub mod cli;
pub mod config;
pub mod datapipe;
pub mod decoder;
pub mod error;
pub mod layers;
pub mod model;
pub mod objective;
pub mod optim;
pub mod params;
pub mod tensor;

pub use error::{Error, Result};
