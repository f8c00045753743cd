mod binio;
pub mod data;
pub mod error;
pub mod exec;
pub mod model;
pub mod rng;
pub mod style;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
