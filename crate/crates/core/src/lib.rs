//! Mixed-scale triplet network for camouflaged object detection.
//!
//! The crate covers the whole loop: configuration ([`config`]), data loading
//! ([`data`]), the network ([`model`]), losses ([`objective`]), training
//! ([`train`]), checkpoints ([`checkpoint`]), foreground-map metrics
//! ([`eval`]) and structural self-checks ([`diagnostics`]). [`app`] wires
//! them into the four command-line entry points.

pub mod app;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod diagnostics;
pub mod eval;
mod error;
pub mod model;
pub mod nn;
pub mod objective;
pub mod params;
pub mod train;

pub use error::{Error, Result};
pub use mstnet_tensor as tensor;
