pub mod config;
pub mod data;
pub mod error;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod seed;
pub mod train;

pub use error::{Error, Result};
