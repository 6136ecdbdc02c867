//! Core library for training a temporal-convolution text classifier that is
//! robust to label noise: a small exact-gradient numeric core, a text
//! pipeline, class-conditional noise injection, the classifier with its
//! stacked noise-adaptation layer, and the training/diagnostic loop.

pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod matrix;
pub mod model;
pub mod noise;
pub mod ops;
pub mod probe;
pub mod rng;
pub mod tape;
pub mod text;
pub mod train;

pub use error::{Error, Result};
pub use matrix::Matrix;
