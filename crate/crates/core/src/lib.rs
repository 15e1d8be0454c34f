pub mod cross;
pub mod data;
pub mod error;
pub mod infer;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, ErrorClass, Result};
pub use tensor::{Graph, Tensor, Var};
