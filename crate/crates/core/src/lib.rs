pub mod classify;
pub mod cli;
pub mod config;
pub mod error;
pub mod estimator;
pub mod family;
pub mod fisher;
pub mod harness;
pub mod linalg;
pub mod model;
pub mod normal;
pub mod pmf;
pub mod quantizer;
pub mod scenario;

pub use error::{Error, Result};
