//! Spiking neural network training with sparse spike tensors.
//!
//! Networks of leaky integrate-and-fire neurons are trained with
//! backpropagation through time and a surrogate gradient. Between layers,
//! spikes can travel either as dense binary matrices or as fixed-capacity
//! lists of neuron ids; both paths produce bit-identical results when no
//! spikes are dropped. A parametric model of a manycore chip with
//! tile-local memory estimates what sparse exchange buys on such hardware.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod bptt;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod linalg;
pub mod matrix;
pub mod model;
pub mod rng;
pub mod spikes;
pub mod tile;

pub use error::{Error, Result};
pub use matrix::Matrix;

/// Guide chapters, compiled so their examples run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/neurons.md")]
    mod neurons {}
    #[doc = include_str!("../../../book/src/sparse-spikes.md")]
    mod sparse_spikes {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/gradients.md")]
    mod gradients {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/tile-machine.md")]
    mod tile_machine {}
    #[doc = include_str!("../../../book/src/benchmarks.md")]
    mod benchmarks {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
