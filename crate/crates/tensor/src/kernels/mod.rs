pub mod conv;
pub mod norm;
pub mod resize;
