//! Frequency-domain acoustic scattering through the Green-integral
//! (Lippmann–Schwinger) formulation of the 2D Helmholtz equation.
//!
//! * [`grid`]: grids, media, sources and the analytic background field.
//! * [`greens`]: the free-space Green's function, cell-averaged self-term and
//!   the padded FFT convolution kernel.
//! * [`operator`]: the discrete Green-integral map and the linear system
//!   `(I − A)·us = b`.
//! * [`iterative`]: direct solve, Born and Landweber iterations, spectral
//!   estimates.
//! * [`nn`]: sine-activated neural field, analytic derivatives, Adam and the
//!   empirical NTK product.
//! * [`training`]: Green-integral, PDE and hybrid losses, collocation sampling
//!   and the training loop.
//! * [`io`]: binary field files, velocity models and CSV traces.

// `!(x > 0.0)` deliberately rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod greens;
pub mod grid;
pub mod io;
pub mod iterative;
pub mod nn;
pub mod operator;
pub mod special;
pub mod training;

pub use error::{Error, Result};
pub use num_complex::Complex64;
