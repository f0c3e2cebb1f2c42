//! Array, FFT, convolution and resampling primitives.
//!
//! All arithmetic is `f64`. Convolutions use edge replication at the image
//! boundary.

mod conv;
mod fft;
mod image;
pub mod io;
mod resample;

pub(crate) use conv::gaussian3_adjoint;
pub use conv::{
    convolve_fft, convolve_same, convolve_same_adjoint, convolve_spatial, gaussian3_blur,
    ConvPlan, Rect, FFT_THRESHOLD, GAUSS3,
};
pub use fft::{fft2, fft2_complex, ifft2, ifft2_complex, kernel_spectrum, Spectrum};
pub use image::{pairwise_sum, Image, Kernel};
pub use resample::resample_bilinear;
