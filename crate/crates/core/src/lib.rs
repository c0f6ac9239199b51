pub mod degradation;
pub mod discriminator;
pub mod error;
pub mod evaluation;
pub mod generator;
pub mod image;
pub mod losses;
pub mod nn;
pub mod training;

pub use error::{Error, Result};
pub use image::ImageTensor;
