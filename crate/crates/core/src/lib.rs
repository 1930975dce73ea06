//! Core library for multi-view adaptive hypergraph risk forecasting.
//!
//! Everything in this crate is pure computation over owned buffers: dense
//! `f64` tensors, a reverse-mode tape, learned graph/hypergraph construction,
//! the spatiotemporal encoder/decoder stack, losses, evaluation metrics, and
//! a deterministic synthetic-city generator. File formats, logging, and the
//! command line live in the companion `riskcast` crate.
//!
//! The crate is `no_std` (with `alloc`); all floating-point math goes through
//! [`fmath`]. Determinism contract: every operation iterates in a fixed order,
//! so identical seeds and inputs produce bitwise-identical results in
//! single-threaded use.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod autodiff;
pub mod catalog;
pub mod decoder;
pub mod encoder;
pub mod fmath;
pub mod gradcheck;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod risk;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod views;

pub use tensor::Tensor;
