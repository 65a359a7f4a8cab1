//! Mixed-effects analysis of the 2017 Houston Astros pitch/bang data.
pub mod descriptive;
pub mod error;
pub mod glmm;
pub mod inference;
pub mod ingest;
pub mod models;
pub mod pipeline;
pub mod synth;
pub mod trajectory;
pub use error::{Error, Result};
