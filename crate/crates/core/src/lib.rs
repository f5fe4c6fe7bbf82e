pub mod calib;
pub mod error;
pub mod eval;
pub mod flow;
pub mod image;
pub mod loss;
pub mod model;
pub mod pipeline;
pub mod prep;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
