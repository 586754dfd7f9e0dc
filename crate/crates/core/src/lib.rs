pub mod baseline;
pub mod config;
pub mod dataset;
pub mod distortion;
pub mod error;
pub mod nav;
pub mod sar;

pub use error::{Error, Result};
