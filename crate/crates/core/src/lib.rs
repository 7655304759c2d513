//! Forging labelled image-operation datasets and training a residual CNN
//! that identifies which processing operation an image went through.

pub mod dataset;
pub mod error;
pub mod gradsuite;
pub mod imageops;
pub mod model;
pub mod ndtensor;
pub mod trainer;

pub use error::{Error, Result};
