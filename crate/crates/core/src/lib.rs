//! Multilingual crossover encoder-decoder training laboratory.

pub mod crossover;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod model;
pub mod sampling;
pub mod synthdata;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
