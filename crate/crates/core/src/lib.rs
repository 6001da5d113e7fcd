pub mod cli;
pub mod corpus;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod nets;
pub mod training;

pub use error::{Error, Result};
