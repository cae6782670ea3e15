//! Geometry-aware THz UM-MIMO channel generation.
//!
//! The crate is split along the data path:
//!
//! * [`channel`] synthesizes ground-truth channels (planar, spherical and
//!   hybrid planar/spherical wave models) from stochastic multipath draws.
//! * [`beamspace`] maps channels to and from the sparse angular domain with
//!   block-diagonal DFT dictionaries.
//! * [`dataset`] builds, normalizes and splits conditional channel datasets.
//! * [`diffusion`] holds the denoiser-agnostic score-based machinery: forward
//!   perturbation, denoising loss, score recovery and the probability-flow
//!   Euler sampler.
//! * [`dit`] is the conditional diffusion transformer denoiser with hand
//!   written backpropagation, Adam and EMA training.
//! * [`metrics`] evaluates generated channels (SSIM, angular power, NMSE).
//!
//! Everything here is pure computation on `alloc` containers; file formats,
//! configuration and the command line live in the companion `thzgen` crate.
//! Enable the `parallel` feature to fan dataset generation and per-sample
//! gradients out over rayon; results do not depend on the worker count.
#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

pub mod beamspace;
pub mod channel;
pub mod dataset;
pub mod diffusion;
pub mod dit;
mod error;
pub mod math;
pub mod metrics;
mod par;
pub mod rng;

pub use error::{Error, Result};
