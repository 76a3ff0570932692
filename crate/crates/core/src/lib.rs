pub mod benchmarks;
pub mod cli;
pub mod error;
pub mod learner;
pub mod models;
pub mod numerics;
pub mod oracle;
pub mod ocsolver;
pub mod pdpcore;

pub use error::{Error, Result};
