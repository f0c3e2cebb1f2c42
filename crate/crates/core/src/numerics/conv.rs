use std::sync::OnceLock;

use rustfft::num_complex::Complex64;

use super::fft::{fft2_complex, good_size, ifft2_complex, kernel_spectrum};
use super::{Image, Kernel};
use crate::error::{Error, Result};

/// Kernels up to this size convolve in the spatial domain; larger ones use FFTs.
pub const FFT_THRESHOLD: usize = 9;

/// The fixed 3x3 Gaussian used by the windowed-variance regularizers.
pub const GAUSS3: [f64; 9] = [
    1.0 / 16.0,
    1.0 / 8.0,
    1.0 / 16.0,
    1.0 / 8.0,
    1.0 / 4.0,
    1.0 / 8.0,
    1.0 / 16.0,
    1.0 / 8.0,
    1.0 / 16.0,
];

fn gauss3_kernel() -> &'static Kernel {
    static G: OnceLock<Kernel> = OnceLock::new();
    G.get_or_init(|| Kernel::from_weights(3, GAUSS3.to_vec()).expect("valid kernel"))
}

/// Axis-aligned pixel rectangle `[y0, y0+h) x [x0, x0+w)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Rect {
    pub y0: usize,
    pub x0: usize,
    pub h: usize,
    pub w: usize,
}

impl Rect {
    pub fn full(height: usize, width: usize) -> Self {
        Self {
            y0: 0,
            x0: 0,
            h: height,
            w: width,
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.h * self.w
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.h == 0 || self.w == 0
    }
}

#[derive(Clone, Debug)]
enum Path {
    Spatial {
        /// Kernel flipped in both axes, so the inner loop is a correlation.
        flipped: Vec<f64>,
    },
    Fft {
        nh: usize,
        nw: usize,
        spectrum: Vec<Complex64>,
    },
}

/// A kernel prepared for repeated replicate-boundary convolution over a fixed
/// output rectangle of a fixed-size image.
#[derive(Clone, Debug)]
pub struct ConvPlan {
    kernel: Kernel,
    rect: Rect,
    extents: (usize, usize),
    path: Path,
}

impl ConvPlan {
    pub fn new(kernel: &Kernel, rect: Rect, extents: (usize, usize)) -> Self {
        Self::with_fft(kernel, rect, extents, kernel.size() > FFT_THRESHOLD)
    }

    pub fn with_fft(kernel: &Kernel, rect: Rect, extents: (usize, usize), use_fft: bool) -> Self {
        assert!(rect.y0 + rect.h <= extents.0 && rect.x0 + rect.w <= extents.1);
        let r = kernel.radius();
        let path = if use_fft {
            let nh = good_size(rect.h + 2 * r);
            let nw = good_size(rect.w + 2 * r);
            Path::Fft {
                nh,
                nw,
                spectrum: kernel_spectrum(kernel, nh, nw).data,
            }
        } else {
            let n = kernel.size();
            let mut flipped = vec![0.0; n * n];
            for a in 0..n {
                for b in 0..n {
                    flipped[a * n + b] = kernel.tap(n - 1 - a, n - 1 - b);
                }
            }
            Path::Spatial { flipped }
        };
        Self {
            kernel: kernel.clone(),
            rect,
            extents,
            path,
        }
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn rect(&self) -> Rect {
        self.rect
    }

    fn padded_dims(&self) -> (usize, usize) {
        let r = self.kernel.radius();
        (self.rect.h + 2 * r, self.rect.w + 2 * r)
    }

    fn padded_patch(&self, img: &Image) -> Vec<f64> {
        let r = self.kernel.radius() as isize;
        let (ph, pw) = self.padded_dims();
        let (y0, x0) = (self.rect.y0 as isize - r, self.rect.x0 as isize - r);
        let mut p = Vec::with_capacity(ph * pw);
        for py in 0..ph as isize {
            for px in 0..pw as isize {
                p.push(img.get_clamped(y0 + py, x0 + px));
            }
        }
        p
    }

    /// Folds a padded-domain adjoint back onto the image through the
    /// edge-replication map.
    fn fold(&self, z: impl Fn(usize, usize) -> f64, out: &mut Image) {
        let r = self.kernel.radius() as isize;
        let (ph, pw) = self.padded_dims();
        let (h, w) = self.extents;
        let (y0, x0) = (self.rect.y0 as isize - r, self.rect.x0 as isize - r);
        let data = out.data_mut();
        for py in 0..ph {
            let yy = (y0 + py as isize).clamp(0, h as isize - 1) as usize;
            for px in 0..pw {
                let xx = (x0 + px as isize).clamp(0, w as isize - 1) as usize;
                data[yy * w + xx] += z(py, px);
            }
        }
    }

    /// Convolution output over the plan's rectangle, row-major.
    pub fn apply(&self, img: &Image) -> Vec<f64> {
        debug_assert_eq!(img.extents(), self.extents);
        let p = self.padded_patch(img);
        let (_, pw) = self.padded_dims();
        let r = self.kernel.radius();
        let Rect { h, w, .. } = self.rect;
        match &self.path {
            Path::Spatial { flipped } => {
                let n = self.kernel.size();
                let mut out = vec![0.0; h * w];
                for iy in 0..h {
                    let row = &mut out[iy * w..(iy + 1) * w];
                    for a in 0..n {
                        let prow = &p[(iy + a) * pw..(iy + a + 1) * pw];
                        let krow = &flipped[a * n..(a + 1) * n];
                        for (ix, o) in row.iter_mut().enumerate() {
                            let win = &prow[ix..ix + n];
                            let mut acc = 0.0;
                            for (kv, pv) in krow.iter().zip(win) {
                                acc += kv * pv;
                            }
                            *o += acc;
                        }
                    }
                }
                out
            }
            Path::Fft { nh, nw, spectrum } => {
                let (ph, _) = self.padded_dims();
                let mut buf = vec![Complex64::new(0.0, 0.0); nh * nw];
                for py in 0..ph {
                    for px in 0..pw {
                        buf[py * nw + px].re = p[py * pw + px];
                    }
                }
                fft2_complex(&mut buf, *nh, *nw);
                for (b, k) in buf.iter_mut().zip(spectrum) {
                    *b *= k;
                }
                ifft2_complex(&mut buf, *nh, *nw);
                let mut out = Vec::with_capacity(h * w);
                for iy in 0..h {
                    for ix in 0..w {
                        out.push(buf[(iy + r) * nw + ix + r].re);
                    }
                }
                out
            }
        }
    }

    /// Adds the adjoint of [`ConvPlan::apply`] applied to `g` (values over the
    /// plan's rectangle) into `out`.
    pub fn adjoint_accumulate(&self, g: &[f64], out: &mut Image) {
        let z = self.adjoint_padded(g);
        self.fold_into(&z, out);
    }

    /// Adjoint of [`ConvPlan::apply`] on the replicate-padded patch domain,
    /// before folding back onto the image. Pair with [`ConvPlan::fold_into`].
    pub fn adjoint_padded(&self, g: &[f64]) -> Vec<f64> {
        debug_assert_eq!(g.len(), self.rect.len());
        let (ph, pw) = self.padded_dims();
        let r = self.kernel.radius();
        let Rect { h, w, .. } = self.rect;
        match &self.path {
            Path::Spatial { flipped } => {
                let n = self.kernel.size();
                let mut z = vec![0.0; ph * pw];
                for iy in 0..h {
                    let grow = &g[iy * w..(iy + 1) * w];
                    for a in 0..n {
                        let zrow = &mut z[(iy + a) * pw..(iy + a + 1) * pw];
                        let krow = &flipped[a * n..(a + 1) * n];
                        for (ix, gv) in grow.iter().enumerate() {
                            if *gv == 0.0 {
                                continue;
                            }
                            for (zv, kv) in zrow[ix..ix + n].iter_mut().zip(krow) {
                                *zv += kv * gv;
                            }
                        }
                    }
                }
                z
            }
            Path::Fft { nh, nw, spectrum } => {
                let mut buf = vec![Complex64::new(0.0, 0.0); nh * nw];
                for iy in 0..h {
                    for ix in 0..w {
                        buf[(iy + r) * nw + ix + r].re = g[iy * w + ix];
                    }
                }
                fft2_complex(&mut buf, *nh, *nw);
                for (b, k) in buf.iter_mut().zip(spectrum) {
                    *b *= k.conj();
                }
                ifft2_complex(&mut buf, *nh, *nw);
                let mut z = Vec::with_capacity(ph * pw);
                for py in 0..ph {
                    for px in 0..pw {
                        z.push(buf[py * nw + px].re);
                    }
                }
                z
            }
        }
    }

    /// Accumulates a padded-domain adjoint into `out` through the
    /// edge-replication map.
    pub fn fold_into(&self, z: &[f64], out: &mut Image) {
        let (_, pw) = self.padded_dims();
        self.fold(|py, px| z[py * pw + px], out);
    }
}

fn check_kernel_fits(img: &Image, k: &Kernel) -> Result<()> {
    if k.size() > 2 * img.height().min(img.width()) {
        return Err(Error::Kernel(format!(
            "kernel {}x{} larger than twice the image extent {}x{}",
            k.size(),
            k.size(),
            img.height(),
            img.width()
        )));
    }
    Ok(())
}

fn run(img: &Image, k: &Kernel, use_fft: bool) -> Result<Image> {
    check_kernel_fits(img, k)?;
    let plan = ConvPlan::with_fft(k, Rect::full(img.height(), img.width()), img.extents(), use_fft);
    Image::new(img.height(), img.width(), plan.apply(img))
}

/// Same-extent convolution with edge replication; picks the spatial or FFT
/// path by kernel size.
pub fn convolve_same(img: &Image, k: &Kernel) -> Result<Image> {
    run(img, k, k.size() > FFT_THRESHOLD)
}

pub fn convolve_spatial(img: &Image, k: &Kernel) -> Result<Image> {
    run(img, k, false)
}

pub fn convolve_fft(img: &Image, k: &Kernel) -> Result<Image> {
    run(img, k, true)
}

/// Adjoint (transpose) of [`convolve_same`] with respect to its image input.
pub fn convolve_same_adjoint(grad: &Image, k: &Kernel) -> Result<Image> {
    check_kernel_fits(grad, k)?;
    let plan = ConvPlan::new(k, Rect::full(grad.height(), grad.width()), grad.extents());
    let mut out = Image::zeros(grad.height(), grad.width())?;
    plan.adjoint_accumulate(grad.data(), &mut out);
    Ok(out)
}

/// Convolution with the fixed 3x3 Gaussian [`GAUSS3`].
pub fn gaussian3_blur(img: &Image) -> Image {
    let plan = ConvPlan::with_fft(
        gauss3_kernel(),
        Rect::full(img.height(), img.width()),
        img.extents(),
        false,
    );
    Image::new(img.height(), img.width(), plan.apply(img)).expect("same extents")
}

/// Adjoint of [`gaussian3_blur`].
pub(crate) fn gaussian3_adjoint(grad: &Image) -> Image {
    let plan = ConvPlan::with_fft(
        gauss3_kernel(),
        Rect::full(grad.height(), grad.width()),
        grad.extents(),
        false,
    );
    let mut out = Image::zeros(grad.height(), grad.width()).expect("valid extents");
    plan.adjoint_accumulate(grad.data(), &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(h: usize, w: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(h, w, |_, _| rng.random_range(0.0..1.0)).unwrap()
    }

    fn random_kernel(n: usize, seed: u64) -> Kernel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Kernel::from_weights(n, (0..n * n).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
    }

    /// Direct nested-loop oracle with explicit clamping.
    fn naive(img: &Image, k: &Kernel) -> Image {
        let r = k.radius() as isize;
        Image::from_fn(img.height(), img.width(), |y, x| {
            let mut acc = 0.0;
            for dy in -r..=r {
                for dx in -r..=r {
                    acc += k.at_offset(dy, dx) * img.get_clamped(y as isize - dy, x as isize - dx);
                }
            }
            acc
        })
        .unwrap()
    }

    fn max_abs_diff(a: &Image, b: &Image) -> f64 {
        a.data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn identity_kernel_is_noop() {
        let img = random_image(9, 13, 1);
        assert_eq!(convolve_same(&img, &Kernel::identity()).unwrap(), img);
    }

    #[test]
    fn constant_image_stays_constant() {
        let img = Image::filled(20, 17, 0.37).unwrap();
        for n in [3, 5, 15] {
            let out = convolve_same(&img, &random_kernel(n, n as u64)).unwrap();
            assert!(out.data().iter().all(|v| (v - 0.37).abs() < 1e-12));
        }
    }

    #[test]
    fn matches_naive_oracle() {
        let img = random_image(32, 32, 2);
        let k = random_kernel(5, 3);
        assert!(max_abs_diff(&convolve_same(&img, &k).unwrap(), &naive(&img, &k)) < 1e-9);
    }

    #[test]
    fn asymmetric_kernel_orientation() {
        // Kernel with all mass at offset (0, +1) shifts content right by one.
        let mut w = vec![0.0; 9];
        w[5] = 1.0;
        let k = Kernel::from_weights(3, w).unwrap();
        let img = random_image(4, 6, 4);
        let out = convolve_same(&img, &k).unwrap();
        for y in 0..4 {
            for x in 1..6 {
                assert_eq!(out.get(y, x), img.get(y, x - 1));
            }
        }
    }

    #[test]
    fn fft_path_agrees_with_spatial_path() {
        let img = random_image(64, 64, 5);
        for n in [3, 11, 21] {
            let k = random_kernel(n, 10 + n as u64);
            let a = convolve_spatial(&img, &k).unwrap();
            let b = convolve_fft(&img, &k).unwrap();
            assert!(max_abs_diff(&a, &b) < 1e-7);
        }
    }

    #[test]
    fn adjoint_identity_both_paths() {
        let x = random_image(23, 19, 6);
        let g = random_image(23, 19, 7);
        for (n, fft) in [(5, false), (5, true), (13, true), (13, false)] {
            let k = random_kernel(n, 20 + n as u64);
            let plan = ConvPlan::with_fft(&k, Rect::full(23, 19), (23, 19), fft);
            let ax = plan.apply(&x);
            let mut atg = Image::zeros(23, 19).unwrap();
            plan.adjoint_accumulate(g.data(), &mut atg);
            let lhs: f64 = ax.iter().zip(g.data()).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.data().iter().zip(atg.data()).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0), "n={n} fft={fft}");
        }
    }

    #[test]
    fn region_plan_matches_full_image() {
        let img = random_image(30, 25, 8);
        let k = random_kernel(7, 9);
        let full = convolve_same(&img, &k).unwrap();
        let rect = Rect {
            y0: 4,
            x0: 10,
            h: 12,
            w: 15,
        };
        for fft in [false, true] {
            let vals = ConvPlan::with_fft(&k, rect, img.extents(), fft).apply(&img);
            for iy in 0..rect.h {
                for ix in 0..rect.w {
                    let d = vals[iy * rect.w + ix] - full.get(rect.y0 + iy, rect.x0 + ix);
                    assert!(d.abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn oversized_kernel_rejected() {
        let img = random_image(4, 4, 1);
        assert!(convolve_same(&img, &random_kernel(9, 1)).is_err());
        assert!(convolve_same(&img, &random_kernel(7, 1)).is_ok());
    }

    #[test]
    fn gaussian_impulse_response() {
        let mut img = Image::zeros(7, 7).unwrap();
        img.set(3, 3, 1.0);
        let out = gaussian3_blur(&img);
        for dy in 0..3 {
            for dx in 0..3 {
                assert_eq!(out.get(2 + dy, 2 + dx), GAUSS3[dy * 3 + dx]);
            }
        }
        assert_eq!(out.sum(), 1.0);
        let c = Image::filled(5, 5, 0.8).unwrap();
        assert!(gaussian3_blur(&c).data().iter().all(|v| (v - 0.8).abs() < 1e-15));
    }
}
