use crate::error::{Error, Result};

/// Single-channel 2-D field of `f64` values in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        check_extents(height, width)?;
        if data.len() != height * width {
            return Err(Error::Extents {
                height,
                width,
                reason: "data length does not match extents",
            });
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        check_extents(height, width)?;
        Ok(Self {
            height,
            width,
            data: vec![value; height * width],
        })
    }

    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        Self::filled(height, width, 0.0)
    }

    /// Builds an image by evaluating `f(y, x)` at every pixel.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        check_extents(height, width)?;
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn extents(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    /// Pixel lookup with coordinates clamped into the image (edge replication).
    #[inline]
    pub fn get_clamped(&self, y: isize, x: isize) -> f64 {
        let yy = y.clamp(0, self.height as isize - 1) as usize;
        let xx = x.clamp(0, self.width as isize - 1) as usize;
        self.data[yy * self.width + xx]
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Image {
        Image {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Image, f: impl Fn(f64, f64) -> f64) -> Result<Image> {
        self.ensure_same_extents(other)?;
        Ok(Image {
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn ensure_same_extents(&self, other: &Image) -> Result<()> {
        if self.extents() != other.extents() {
            return Err(Error::ExtentMismatch {
                expected: self.extents(),
                got: other.extents(),
            });
        }
        Ok(())
    }

    pub fn sum(&self) -> f64 {
        pairwise_sum(&self.data)
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Copies the sub-rectangle `[y0, y0+h) x [x0, x0+w)`.
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<Image> {
        if y0 + h > self.height || x0 + w > self.width {
            return Err(Error::InvalidArgument(format!(
                "crop {h}x{w} at ({y0},{x0}) exceeds {}x{}",
                self.height, self.width
            )));
        }
        Image::from_fn(h, w, |y, x| self.get(y0 + y, x0 + x))
    }

    /// Mirrors the image left-to-right.
    pub fn flip_horizontal(&self) -> Image {
        let w = self.width;
        Image::from_fn(self.height, w, |y, x| self.get(y, w - 1 - x)).expect("same extents")
    }
}

impl std::ops::Index<(usize, usize)> for Image {
    type Output = f64;

    fn index(&self, (y, x): (usize, usize)) -> &f64 {
        &self.data[y * self.width + x]
    }
}

fn check_extents(height: usize, width: usize) -> Result<()> {
    if height == 0 || width == 0 {
        return Err(Error::Extents {
            height,
            width,
            reason: "extents must be at least 1x1",
        });
    }
    if height.checked_mul(width).is_none() || height > u32::MAX as usize || width > u32::MAX as usize {
        return Err(Error::Extents {
            height,
            width,
            reason: "extent overflow",
        });
    }
    Ok(())
}

/// Fixed-order pairwise summation.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const LEAF: usize = 64;
    if values.len() <= LEAF {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Square, odd-sized, non-negative blur kernel whose taps sum to one.
///
/// Tap `(a, b)` sits at offset `(a - r, b - r)` from the kernel center, where
/// `r = (size - 1) / 2`.
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel {
    size: usize,
    weights: Vec<f64>,
}

impl Kernel {
    /// Validates and normalizes raw tap weights.
    pub fn from_weights(size: usize, weights: Vec<f64>) -> Result<Self> {
        if size == 0 || size % 2 == 0 {
            return Err(Error::Kernel(format!("size {size} must be odd and positive")));
        }
        if weights.len() != size * size {
            return Err(Error::Kernel(format!(
                "expected {} weights, got {}",
                size * size,
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Kernel("weights must be finite and non-negative".into()));
        }
        let total = pairwise_sum(&weights);
        if total <= 0.0 {
            return Err(Error::Kernel("weights sum to zero".into()));
        }
        let weights = weights.into_iter().map(|w| w / total).collect();
        Ok(Self { size, weights })
    }

    /// Taps that already sum to one within `tol`, kept bit-exact so stored
    /// kernels reload unchanged.
    pub fn from_normalized(size: usize, weights: Vec<f64>, tol: f64) -> Result<Self> {
        let total = pairwise_sum(&weights);
        if !((total - 1.0).abs() <= tol) {
            return Err(Error::Kernel(format!("weights sum to {total}, expected 1")));
        }
        Self::from_weights(size, weights.clone())?;
        Ok(Self { size, weights })
    }

    pub fn identity() -> Self {
        Self {
            size: 1,
            weights: vec![1.0],
        }
    }

    #[inline]
    pub fn size(&self) -> usize {
        self.size
    }

    #[inline]
    pub fn radius(&self) -> usize {
        (self.size - 1) / 2
    }

    #[inline]
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    #[inline]
    pub fn tap(&self, a: usize, b: usize) -> f64 {
        self.weights[a * self.size + b]
    }

    /// Tap at signed offset `(dy, dx)` from the center, zero outside support.
    pub fn at_offset(&self, dy: isize, dx: isize) -> f64 {
        let r = self.radius() as isize;
        if dy.abs() > r || dx.abs() > r {
            return 0.0;
        }
        self.tap((dy + r) as usize, (dx + r) as usize)
    }

    /// Zero-pads the kernel to a larger odd size, keeping it centered.
    pub fn padded_to(&self, size: usize) -> Kernel {
        assert!(size >= self.size && size % 2 == 1);
        let off = (size - self.size) / 2;
        let mut w = vec![0.0; size * size];
        for a in 0..self.size {
            for b in 0..self.size {
                w[(a + off) * size + b + off] = self.tap(a, b);
            }
        }
        Kernel { size, weights: w }
    }

    /// Mirrors the kernel left-to-right.
    pub fn flip_horizontal(&self) -> Kernel {
        let n = self.size;
        let mut w = vec![0.0; n * n];
        for a in 0..n {
            for b in 0..n {
                w[a * n + b] = self.tap(a, n - 1 - b);
            }
        }
        Kernel { size: n, weights: w }
    }

    /// Center of mass `(dy, dx)` relative to the kernel center.
    pub fn centroid(&self) -> (f64, f64) {
        let r = self.radius() as f64;
        let (mut cy, mut cx) = (0.0, 0.0);
        for a in 0..self.size {
            for b in 0..self.size {
                let w = self.tap(a, b);
                cy += w * (a as f64 - r);
                cx += w * (b as f64 - r);
            }
        }
        (cy, cx)
    }

    pub fn as_image(&self) -> Image {
        Image::new(self.size, self.size, self.weights.clone()).expect("kernel extents are valid")
    }
}
