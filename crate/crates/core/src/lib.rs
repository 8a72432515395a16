//! Corridor-constrained flow matching over extended action chunks.
//!
//! The crate is organised bottom-up:
//!
//! - [`geometry`]: polylines, RDP, minimax DP and uniform anchor selection
//! - [`synthdata`]: synthetic episodes, extended action chunks, anchor targets, dataset files
//! - [`diffcore`]: reverse-mode tape, MLPs, Adam, gradient checking
//! - [`flowmatch`]: interpolation, velocity model, decoding and Euler sampling
//! - [`corridor`]: anchor extraction, corridor width, buffer/consistency losses, combined objective
//! - [`harness`]: run configuration, training, evaluation, checkpoints and ablations
//! - [`cli`]: the command implementations behind the `corridorflow` binary

pub mod cli;
pub mod corridor;
pub mod diffcore;
pub mod error;
pub mod flowmatch;
pub mod geometry;
pub mod harness;
pub mod rng;
pub mod synthdata;

pub use error::{Error, Result};
