//! Group authentication of DRAM latency-PUF devices from phenotype images.

pub mod authd;
pub mod classifiers;
pub mod dataset;
pub mod error;
pub mod features;
pub mod imgen;
pub mod pipeline;
pub mod puf_sim;
pub mod seed;

pub use error::{Error, Result};
