//! Spectral shape analysis in the unit ball.
//!
//! The crate builds a complete radial function family on `[0, 1]`, pairs it with
//! complex spherical harmonics to obtain spectral moments of binned point clouds,
//! and evaluates a convolution whose zonal kernels both rotate and translate
//! radially inside the ball. A small two-layer network, trained with Adam on top
//! of that convolution, produces shape descriptors for retrieval.
//!
//! Module map:
//! - [`quadrature`]: Gauss–Legendre rules on `[0, 1]`.
//! - [`basis`]: base functions, weighted Gram–Schmidt, translation expansions.
//! - [`harmonics`]: associated Legendre functions, spherical harmonics, zonal rotation.
//! - [`transform`]: point clouds, ball grids, forward/latent moments and reconstruction.
//! - [`convolution`]: blended roto-translational convolution, ablation variant,
//!   spatial oracle and operation counts.
//! - [`learn`]: group norm, network, gradients, two-phase Adam training, synthetic data.
//! - [`retrieval`]: descriptors, similarity metrics, ranking and mAP.
//! - [`io`]: structured-text persistence and point-cloud readers.

pub mod basis;
pub mod convolution;
pub mod harmonics;
pub mod io;
pub mod learn;
pub mod quadrature;
pub mod retrieval;
pub mod transform;

pub use num_complex::Complex64;
