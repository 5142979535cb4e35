//! Generalized zonal kernel (GZK) random features.
//!
//! A GZK writes a kernel on `R^d` as
//!
//! ```text
//! k(x, y) = sum_{l=0}^{q} < h_l(||x||), h_l(||y||) > * P_d^l(cos theta)
//! ```
//!
//! where `P_d^l` are Gegenbauer polynomials normalized to 1 at 1, `cos theta`
//! is the angle between `x` and `y`, and each `h_l` maps a point norm to an
//! `s`-vector of radial weights. Sampling directions uniformly on the sphere
//! turns the angular factor into an explicit random feature map whose Gram
//! matrix is an unbiased estimate of the truncated kernel, with spectral
//! approximation guarantees that transfer to ridge regression and k-means.
//!
//! Module map:
//! - [`special`]: Gegenbauer evaluation, harmonic dimension counts, sphere
//!   areas, log-gamma, weighted quadrature;
//! - [`kernel`]: kernel models (dot-product derivative sequences, Gaussian,
//!   numeric zonal including a two-layer ReLU NTK), expansion coefficients,
//!   truncation selection;
//! - [`features`]: sphere sampling, feature matrices, leverage scores;
//! - [`spectral`]: Gram assembly, symmetric eigensolver, approximation
//!   diagnostics;
//! - [`learning`]: kernel ridge regression, kernel k-means, Fourier-feature
//!   and Taylor baselines;
//! - [`data`] / [`cli`]: dataset ingestion, synthetic generators, and the
//!   command-line surface.
//!
//! Worker count is controlled by the `GZK_THREADS` environment variable
//! (default: logical cores); results are bit-identical for any worker count.

pub mod cli;
pub mod data;
pub mod error;
pub mod features;
pub mod kernel;
pub mod learning;
pub mod special;
pub mod spectral;

mod linalg;
mod threads;

pub use error::{Error, Result};
