//! Joint defocus-map and all-in-focus image estimation from a single
//! dual-pixel (DP) capture.
//!
//! The scene is modelled as a multiplane image (MPI): `N` fronto-parallel
//! layers, each holding an intensity and an alpha channel at a fixed
//! defocus size. Left and right DP views are rendered from the MPI with
//! calibrated, spatially-varying half-aperture blur kernels, and the MPI is
//! fitted to an observed DP pair by minimizing a regularized, noise-bias
//! corrected loss with Adam.
//!
//! Module map:
//!
//! - [`numerics`]: images, kernels, FFT, convolution, resampling.
//! - [`kernels`]: kernel grids, defocus scaling, vignetting, calibration.
//! - [`mpi`]: the layered scene and its renderers.
//! - [`noisebias`]: two-view Wiener analysis and the bias-correction table.
//! - [`losses`]: the five loss terms and their primitives.
//! - [`optim`]: parameterization, gradient tape, Adam, the optimization loop.
//! - [`synth`]: forward-model generator for ground-truth scenes.
//! - [`metrics`]: image and defocus-map evaluation.
//!
//! With the default `parallel` feature, data-parallel inner loops run on
//! rayon; without it every loop is sequential. Results are bit-identical
//! either way.

pub mod error;
pub mod kernels;
pub mod losses;
pub mod metrics;
pub mod mpi;
pub mod noisebias;
pub mod numerics;
pub mod optim;
pub mod par;
pub mod synth;

pub use error::{Error, Result};
pub use kernels::{KernelGrid, SpatialBlur, View};
pub use mpi::Mpi;
pub use numerics::{Image, Kernel, Spectrum};
