pub mod entropy;
pub mod error;
pub mod flow;
pub mod geometry;
pub mod homogeneous;
pub mod linalg;
pub mod stability;
pub mod variation;

pub use error::{LabError, Result};
