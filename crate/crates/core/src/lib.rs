//! Linear state-space recurrences whose step sizes are the irregular gaps
//! between input coordinates.
//!
//! The crate is organized around a single-input single-output (SISO)
//! linear time-varying recurrence over complex diagonal dynamics:
//!
//! ```text
//! h_k = exp(A * delta_k) .* h_{k-1} + b_k * u_k        y_k = Re(c_k . h_k)
//! ```
//!
//! - [`ssm`]: the exact recurrence, the pairwise interaction kernel, and the
//!   O(N^2) kernel oracle used as ground truth.
//! - [`scan`]: the associative pair formulation of the recurrence, chunked
//!   scans, and the reverse-direction adjoint scan for gradients.
//! - [`layer`]: token sequences, the irregular-step and input-only step-size
//!   parameterizations, and the multi-channel layer built from SISO scans.
//! - [`model`]: stacked blocks with hierarchical subsampling, token
//!   embeddings, classifier head, and a constant-memory streaming state.
//! - [`geometry`]: point-cloud serialization (3-axis sorting, FPS, kNN) and
//!   event-stream tokenization with CutMix-style augmentation.
//! - [`train`]: classification loss, Adam, and synthetic gap-structure tasks.
//!
//! The crate is `no_std`-compatible (requires `alloc`). The default `std`
//! feature only switches float math from `libm` to the platform intrinsics;
//! all results are computed in `f64`.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod geometry;
pub mod layer;
pub mod math;
pub mod model;
pub mod rng;
pub mod scan;
pub mod ssm;
pub mod tensor;
pub mod train;

pub use num_complex::Complex64;
