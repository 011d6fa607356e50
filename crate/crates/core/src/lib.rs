//! Compositional score functions for diffusion models on factor graphs.
//!
//! Large content (long sequences, big images, cubemaps) is represented as a
//! bipartite factor graph: factor nodes cover contiguous pieces of the joint
//! content, variable nodes cover the overlaps between pieces. A score model
//! per node is enough to assemble a joint score — factor scores summed,
//! variable scores weighted by `1 - degree` — which any diffusion sampler can
//! then integrate. Node evaluations are independent, so one denoising round
//! costs a single parallel sweep instead of a sequential pass per piece.
//!
//! The crate is `no_std` compatible (with `alloc`); everything here is pure
//! computation over `f64` buffers. IO, config files, and thread pools live in
//! the companion CLI crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod collage;
pub mod conditioning;
pub mod error;
pub mod eval;
pub mod exec;
pub mod graph;
pub mod linalg;
pub mod ou;
pub mod rng;
pub mod sampler;
pub mod schedule;
pub mod scoremodel;
pub mod testbed;

pub use error::{Error, Result};
