//! Core algorithms for inverse halftoning with a structure-aware CNN.
//!
//! Everything in this crate is pure computation: a minimal NCHW tensor
//! engine with analytic backward passes, the digital-halftoning forward
//! pipeline (grayscale conversion, Floyd-Steinberg error diffusion, Sobel
//! gradient maps), reference PSNR/SSIM metrics, and the three-subnetwork
//! reconstruction model plus its checkpoint codec. File handling, dataset
//! ingestion, training orchestration, and the CLI live in the companion
//! `detone` crate.
//!
//! The crate is `no_std`-compatible (`alloc` required) when built without
//! the default `std` feature.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod container;
pub mod gradcheck;
pub mod halftone;
pub mod metrics;
pub mod network;
pub mod rng;
pub mod tensor;

pub use tensor::{Dims, Scalar, Tensor};
