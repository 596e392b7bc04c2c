//! Goal-oriented resource allocation for edge networks.
//!
//! The crate bundles a closed-form Gaussian information bottleneck encoder, a wireless
//! channel model, the rate/complexity/distortion surrogate of a masked vector-quantized
//! image codec, per-slot drift-plus-penalty solvers, and a slot-based simulator that
//! drives them with virtual queues.

pub mod error;
pub mod channel;
pub mod cli;
pub mod config;
pub mod gib;
pub mod output;
pub mod slotopt;
pub mod sim;
pub mod surrogate;

pub use error::{Error, Result};
