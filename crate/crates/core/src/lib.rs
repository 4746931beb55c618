//! Unified weight layout and DRAM address mapping for NPU/PIM systems,
//! plus the timing and latency models used to evaluate it.

pub mod compute;
pub mod config;
pub mod dram;
pub mod error;
pub mod exec;
pub mod experiment;
pub mod layout;
pub mod mapping;
pub mod report;
pub mod timing;
pub mod verify;
pub mod workload;

pub use error::{Error, Result};
