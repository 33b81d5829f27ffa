//! Sliding-motion image registration.
//!
//! LDDMM-style registration where each velocity field is synthesized from
//! zeroth-order momenta (kernel translations) and first-order momenta
//! (kernel partial derivatives). With the multiplicative C⁰ Wendland kernel
//! the first-order terms produce velocity fields that jump across
//! axis-aligned hyperplanes through the control points, which is what lets
//! the deformation slide along an interface.
//!
//! Module map:
//! - [`geometry`]: grids, images, vector fields, interpolation, warping and file I/O.
//! - [`kernels`]: Gaussian and multiplicative Wendland kernels with their derivatives.
//! - [`momenta`]: control-point momenta, velocity synthesis, energies.
//! - [`flow`]: forward/inverse map integration and particle shooting.
//! - [`nonsmooth`]: switching boundaries, saltation and fundamental solution matrices.
//! - [`registration`]: the energy, its exact discrete gradient and the optimizer.
//! - [`bench`]: synthetic generators, metrics, experiments and demos.

// NaN-rejecting `!(x > 0.0)` checks and index loops over small fixed dims are intended.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod bench;
pub mod error;
pub mod flow;
pub mod geometry;
pub mod kernels;
pub mod mat;
pub mod momenta;
pub mod nonsmooth;
pub mod registration;

pub use error::{Error, Result};
