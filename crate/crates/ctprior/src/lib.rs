//! Tomographic reconstruction with a learned convolutional energy-based
//! regularizer.
//!
//! The crate covers the full pipeline at desk scale:
//!
//! * [`tensor`] — dense channel/height/width arrays, 2-D convolution and its
//!   exact reverse-mode derivatives.
//! * [`model`] — the convolutional energy network `R(x, φ)` mapping an image
//!   to a scalar, with gradients w.r.t. both the image and the parameters.
//! * [`tomo`] — the parallel-beam projection operator, its exact adjoint,
//!   Gaussian noise simulation and filtered backprojection.
//! * [`classical`] — SART and TV-regularized least squares baselines plus the
//!   PSNR metric.
//! * [`sampler`] — unadjusted Langevin dynamics and the persistent replay
//!   buffer.
//! * [`train`] — maximum-likelihood training of the energy model with Adam.
//! * [`solve`] — accelerated proximal gradient descent with Lipschitz
//!   backtracking; the data-term proximal map is solved by conjugate
//!   gradient.
//! * [`posterior`] — Langevin sampling of the posterior, streaming
//!   mean/variance maps, and the corruption / out-of-distribution
//!   experiments.
//! * [`phantom`], [`io`] — synthetic images and datasets, binary file
//!   formats (`TIMG`/`TSIN`/`TEBM`) and PGM/CSV export.
//!
//! The longer-form guide with derivations and worked examples lives in the
//! `book/` directory of the repository (`mdbook serve book`); its code
//! snippets are compiled and run as doc-tests by the `ctprior-book` crate.

pub mod classical;
pub mod error;
pub mod image;
pub mod io;
pub mod model;
pub mod phantom;
pub mod posterior;
pub mod rng;
pub mod sampler;
pub mod solve;
pub mod tensor;
pub mod tomo;
pub mod train;

pub use error::{Error, Result};
pub use image::Image;

/// Scalar type used for all numerics. `f64` by default; the
/// `single-precision` feature switches the whole crate to `f32`.
#[cfg(not(feature = "single-precision"))]
pub type Real = f64;
#[cfg(feature = "single-precision")]
pub type Real = f32;

/// π as [`Real`].
pub const PI: Real = std::f64::consts::PI as Real;
