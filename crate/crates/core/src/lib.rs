pub mod cli;
pub mod dcn;
pub mod error;
pub mod eval_metrics;
pub mod geometry;
pub mod lcn;
pub mod pointcloud_metrics;
pub mod synthetic_data;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
