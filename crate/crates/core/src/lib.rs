//! Memory access prediction with a transformer over binary-encoded block
//! addresses, plus the trace tooling, baseline prefetchers and cache
//! simulator used to evaluate it.

pub mod address;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod infer;
pub mod labeling;
pub mod model;
pub mod prefetch;
pub mod sim;
pub mod tensor;
pub mod trace;
pub mod training;

pub use error::{Error, Result};
