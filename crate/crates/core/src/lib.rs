pub mod analysis;
pub mod autodiff;
pub mod backbone;
pub mod cli;
pub mod config;
pub mod error;
pub mod frontend;
pub mod gradsuite;
pub mod model;
pub mod params;
pub mod signal;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Real, Tensor};
