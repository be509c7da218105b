//! File formats, configuration and command layer for the multimodal
//! representation pipeline. The `mlr` binary is a thin argument parser over
//! [`commands`]; integration tests drive the same functions directly.

pub mod commands;
pub mod config;
pub mod container;
pub mod dataset;
pub mod error;
pub mod fnv;
pub mod model_io;
