//! Residual network inference and unit visualization.
//!
//! The crate covers the whole pipeline: dense NCHW kernels ([`ops`]), the
//! layer graph with its RNW1 weight container and recording forward pass
//! ([`graph`]), backward projection of single units to pixel space
//! ([`backprop`]), top-k activation mining over a corpus ([`miner`]),
//! receptive-field arithmetic ([`rf`]) and image I/O plus montage rendering
//! ([`render`]).

pub mod error;
pub mod graph;
pub mod ops;
pub mod backprop;
pub mod miner;
pub mod render;
pub mod rf;
pub mod visualize;
pub mod tensor;

pub use error::{Error, LoadError, Result};
pub use tensor::{Switches, Tensor};
