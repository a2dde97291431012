//! Weight-sharing appraisal toolkit for cell-based neural architecture search.

pub mod bench;
pub mod cell;
pub mod config;
pub mod data;
pub mod error;
pub mod network;
pub mod pipeline;
pub mod report;
pub mod search;
pub mod stats;
pub mod supernet;
pub mod tensor;

pub use error::{Error, Result};
