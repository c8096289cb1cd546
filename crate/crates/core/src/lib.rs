pub mod architecture;
pub mod beliefs;
pub mod cli;
pub mod error;
pub mod evaluation;
pub mod synthdata;
pub mod tensor;
pub mod training;

pub use error::{CpmError, Result};
