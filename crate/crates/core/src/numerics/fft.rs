use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::{Image, Kernel};
use crate::error::{Error, Result};
use crate::par;

/// Complex 2-D spectrum in row-major order (`height` rows of `width` bins).
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    pub height: usize,
    pub width: usize,
    pub data: Vec<Complex64>,
}

impl Spectrum {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![Complex64::new(0.0, 0.0); height * width],
        }
    }

    #[inline]
    pub fn get(&self, fy: usize, fx: usize) -> Complex64 {
        self.data[fy * self.width + fx]
    }

    /// Sum of squared magnitudes over all bins.
    pub fn energy(&self) -> f64 {
        let v: Vec<f64> = self.data.iter().map(|c| c.norm_sqr()).collect();
        super::pairwise_sum(&v)
    }
}

type PlanKey = (usize, bool);

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    static CACHE: OnceLock<Mutex<(FftPlanner<f64>, HashMap<PlanKey, Arc<dyn Fft<f64>>>)>> =
        OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new((FftPlanner::new(), HashMap::new())));
    let mut guard = cache.lock().expect("fft plan cache poisoned");
    let (planner, plans) = &mut *guard;
    plans
        .entry((n, inverse))
        .or_insert_with(|| {
            if inverse {
                planner.plan_fft_inverse(n)
            } else {
                planner.plan_fft_forward(n)
            }
        })
        .clone()
}

fn transform_rows(buf: &mut [Complex64], len: usize, inverse: bool) {
    let fft = plan(len, inverse);
    let rows_per_task = (4096 / len).max(1);
    par::for_each_chunk_mut(buf, len * rows_per_task, |_, chunk| {
        let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
        fft.process_with_scratch(chunk, &mut scratch);
    });
}

fn transpose(src: &[Complex64], h: usize, w: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); h * w];
    for y in 0..h {
        for x in 0..w {
            out[x * h + y] = src[y * w + x];
        }
    }
    out
}

/// In-place unnormalized 2-D DFT of a `h x w` complex buffer.
pub fn fft2_complex(buf: &mut Vec<Complex64>, h: usize, w: usize) {
    dft2(buf, h, w, false);
}

/// In-place 2-D inverse DFT, normalized by `1 / (h * w)`.
pub fn ifft2_complex(buf: &mut Vec<Complex64>, h: usize, w: usize) {
    dft2(buf, h, w, true);
    let s = 1.0 / (h * w) as f64;
    for v in buf.iter_mut() {
        *v *= s;
    }
}

fn dft2(buf: &mut Vec<Complex64>, h: usize, w: usize, inverse: bool) {
    assert_eq!(buf.len(), h * w);
    transform_rows(buf, w, inverse);
    let mut t = transpose(buf, h, w);
    transform_rows(&mut t, h, inverse);
    *buf = transpose(&t, w, h);
}

/// Unnormalized forward DFT of `img` zero-padded to `pad_to = (h, w)`.
pub fn fft2(img: &Image, pad_to: (usize, usize)) -> Result<Spectrum> {
    let (ph, pw) = pad_to;
    if ph < img.height() || pw < img.width() {
        return Err(Error::InvalidArgument(format!(
            "pad extents {ph}x{pw} smaller than image {}x{}",
            img.height(),
            img.width()
        )));
    }
    let n = ph
        .checked_mul(pw)
        .ok_or(Error::Extents {
            height: ph,
            width: pw,
            reason: "extent overflow",
        })?;
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for y in 0..img.height() {
        for x in 0..img.width() {
            buf[y * pw + x] = Complex64::new(img.get(y, x), 0.0);
        }
    }
    fft2_complex(&mut buf, ph, pw);
    Ok(Spectrum {
        height: ph,
        width: pw,
        data: buf,
    })
}

/// Inverse DFT returning the real part.
pub fn ifft2(spec: &Spectrum) -> Image {
    let mut buf = spec.data.clone();
    ifft2_complex(&mut buf, spec.height, spec.width);
    Image::new(
        spec.height,
        spec.width,
        buf.into_iter().map(|c| c.re).collect(),
    )
    .expect("spectrum extents are valid")
}

/// DFT of `k` embedded in an `h x w` grid with its center tap at the origin
/// (negative offsets wrap around).
pub fn kernel_spectrum(k: &Kernel, h: usize, w: usize) -> Spectrum {
    let r = k.radius() as isize;
    let mut buf = vec![Complex64::new(0.0, 0.0); h * w];
    for a in 0..k.size() {
        for b in 0..k.size() {
            let y = (a as isize - r).rem_euclid(h as isize) as usize;
            let x = (b as isize - r).rem_euclid(w as isize) as usize;
            buf[y * w + x] += Complex64::new(k.tap(a, b), 0.0);
        }
    }
    fft2_complex(&mut buf, h, w);
    Spectrum {
        height: h,
        width: w,
        data: buf,
    }
}

/// Smallest integer `>= n` whose only prime factors are 2, 3 and 5.
pub(crate) fn good_size(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for p in [2, 3, 5] {
            while r % p == 0 {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}
