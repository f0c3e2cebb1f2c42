//! Calibrated spatially-varying dual-pixel blur kernels.
//!
//! A [`KernelGrid`] stores an 8x6 (cols x rows) grid of kernels for one view at
//! a reference defocus size. Kernels at other sizes come from
//! [`scale_kernel`]; kernels between cell centers are bilinear blends of the
//! four surrounding cells. [`SpatialBlur`] applies the resulting
//! spatially-varying blur to whole images.
//!
//! Defocus sizes are kernel diameters in pixels and must be non-negative.

mod calib;
mod grid;
mod scale;
mod svblur;
mod vignetting;

pub use calib::{
    calibrate_kernels, render_latent_target, CalibOptions, CalibResult, CalibTarget,
};
pub use grid::{
    axis_weights, load_kernel_grid, read_kernel_grid, save_kernel_grid, write_kernel_grid,
    KernelGrid, View, GRID_COLS, GRID_ROWS,
};
pub use scale::scale_kernel;
pub use svblur::{blur_exact, SpatialBlur};
pub use vignetting::{correct_vignetting, estimate_vignetting, uncorrect_vignetting, VignettingField};
