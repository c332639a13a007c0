pub mod corpus;
pub mod decoding;
pub mod error;
pub mod metrics;
pub mod model;
pub mod seq2seq;
pub mod tensor;
pub mod training;
pub mod transformer;

pub use error::{Error, Result};
