pub mod error;
pub mod eval;
pub mod gan;
pub mod imageops;
pub mod nets;
pub mod phantom;
pub mod store;
pub mod synth;
pub mod task;
pub mod trainer;

pub use error::{Error, FieldError, Result};
