//! Discrepancy-aware workflow collection and instruct-masking dataset
//! construction for tool-using agents, exercised against a deterministic
//! simulated environment with unreliable tools.

pub mod config;
pub mod dsl;
pub mod engine;
pub mod error;
pub mod flagmask;
pub mod jsonl;
pub mod loss;
pub mod model;
pub mod protocol;
pub mod seed;
pub mod sim;
pub mod value;

pub use error::{Error, Result};

pub type LossReport64 = loss::LossReport<f64>;
pub type LossReport32 = loss::LossReport<f32>;
