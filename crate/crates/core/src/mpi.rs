//! Multiplane image: `N` fronto-parallel layers ordered back (index 0) to
//! front, each with an intensity image, an alpha image and a defocus size.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::kernels::{KernelGrid, SpatialBlur};
use crate::numerics::io::{
    expect_magic, read_f64s, read_image, read_u32, write_f64s, write_image, write_u32,
};
use crate::numerics::Image;
use crate::par;

pub const MPI_MAGIC: &[u8; 8] = b"MPIDMPS1";

/// Tolerance for alpha, transmittance and output values straying outside
/// their valid range through rounding.
const DRIFT_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct Mpi {
    colors: Vec<Image>,
    alphas: Vec<Image>,
    defocus: Vec<f64>,
}

/// `n` defocus sizes evenly spaced from `back` (farthest layer) to `front`.
///
/// Defocus size is linear in inverse depth, so even spacing in `d` is even
/// spacing in diopters. A single layer sits at `back`.
pub fn layer_defocus_sizes(n: usize, front: f64, back: f64) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one layer".into()));
    }
    if !(front >= 0.0) || !back.is_finite() || !front.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "defocus range [{front}, {back}] must be finite and non-negative"
        )));
    }
    if n == 1 {
        return Ok(vec![back]);
    }
    if !(back > front) {
        return Err(Error::InvalidArgument(format!(
            "back defocus {back} must exceed front defocus {front}"
        )));
    }
    let step = (back - front) / (n - 1) as f64;
    Ok((0..n)
        .map(|i| if i == n - 1 { front } else { back - step * i as f64 })
        .collect())
}

impl Mpi {
    /// Validates and builds an MPI. `colors[0]`/`alphas[0]` is the farthest
    /// layer and its alpha must be identically one.
    pub fn new(colors: Vec<Image>, alphas: Vec<Image>, defocus: Vec<f64>) -> Result<Self> {
        let n = colors.len();
        if n == 0 {
            return Err(Error::InvalidMpi("no layers".into()));
        }
        if alphas.len() != n || defocus.len() != n {
            return Err(Error::InvalidMpi(format!(
                "{n} colors, {} alphas, {} defocus sizes",
                alphas.len(),
                defocus.len()
            )));
        }
        for img in colors.iter().chain(&alphas) {
            colors[0].ensure_same_extents(img)?;
            if !img.is_finite() {
                return Err(Error::NonFinite("MPI layer".into()));
            }
        }
        if defocus.iter().any(|d| !(*d >= 0.0) || !d.is_finite()) {
            return Err(Error::InvalidMpi("defocus sizes must be finite and >= 0".into()));
        }
        if defocus.windows(2).any(|w| !(w[0] > w[1])) {
            return Err(Error::InvalidMpi(
                "defocus sizes must strictly decrease from back to front".into(),
            ));
        }
        if colors.iter().any(|c| c.min() < 0.0) {
            return Err(Error::InvalidMpi("negative layer intensity".into()));
        }
        if alphas.iter().any(|a| a.min() < 0.0 || a.max() > 1.0) {
            return Err(Error::InvalidMpi("alpha outside [0, 1]".into()));
        }
        if alphas[0].data().iter().any(|&a| a != 1.0) {
            return Err(Error::InvalidMpi("farthest layer must be opaque".into()));
        }
        Ok(Self {
            colors,
            alphas,
            defocus,
        })
    }

    pub fn num_layers(&self) -> usize {
        self.colors.len()
    }

    pub fn extents(&self) -> (usize, usize) {
        self.colors[0].extents()
    }

    pub fn colors(&self) -> &[Image] {
        &self.colors
    }

    pub fn alphas(&self) -> &[Image] {
        &self.alphas
    }

    pub fn defocus_sizes(&self) -> &[f64] {
        &self.defocus
    }
}

/// Per-layer transmittance `T_i = a_i * prod_{j>i} (1 - a_j)`.
pub fn transmittances(mpi: &Mpi) -> Vec<Image> {
    let n = mpi.num_layers();
    let (h, w) = mpi.extents();
    let mut out = vec![Image::zeros(h, w).expect("valid MPI extents"); n];
    let mut occ = vec![1.0; h * w];
    for i in (0..n).rev() {
        let a = mpi.alphas[i].data();
        let t = out[i].data_mut();
        for p in 0..h * w {
            t[p] = a[p] * occ[p];
            occ[p] *= 1.0 - a[p];
        }
    }
    out
}

fn weighted_sum(weights: &[Image], f: impl Fn(usize, usize) -> f64) -> Image {
    let (h, w) = weights[0].extents();
    let mut out = Image::zeros(h, w).expect("valid MPI extents");
    for (i, t) in weights.iter().enumerate() {
        for (p, (o, tv)) in out.data_mut().iter_mut().zip(t.data()).enumerate() {
            *o += tv * f(i, p);
        }
    }
    out
}

/// All-in-focus image `sum_i T_i c_i`.
pub fn composite_sharp(mpi: &Mpi) -> Image {
    let t = transmittances(mpi);
    weighted_sum(&t, |i, p| mpi.colors[i].data()[p])
}

/// Defocus map `sum_i T_i d_i`.
pub fn composite_defocus_map(mpi: &Mpi) -> Image {
    let t = transmittances(mpi);
    weighted_sum(&t, |i, _| mpi.defocus[i])
}

/// Per-layer blurs for one view, built in parallel over layers.
pub fn layer_blurs(grid: &KernelGrid, defocus: &[f64], extents: (usize, usize)) -> Result<Vec<SpatialBlur>> {
    par::map_slice(defocus, |&d| SpatialBlur::new(grid, d, extents))
        .into_iter()
        .collect()
}

/// Renders one defocused view with prepared per-layer blurs:
/// `sum_i (K_i * (c_i a_i)) prod_{j>i} (1 - K_j * a_j)`.
pub fn render_with(mpi: &Mpi, blurs: &[SpatialBlur]) -> Result<Image> {
    let n = mpi.num_layers();
    if blurs.len() != n {
        return Err(Error::InvalidArgument(format!(
            "{} layer blurs for {n} layers",
            blurs.len()
        )));
    }
    if blurs.iter().any(|b| b.extents() != mpi.extents()) {
        return Err(Error::ExtentMismatch {
            expected: mpi.extents(),
            got: blurs[0].extents(),
        });
    }
    let (h, w) = mpi.extents();
    let blurred: Vec<(Image, Image)> = par::map_range(n, |i| {
        let ca = mpi.colors[i]
            .zip_map(&mpi.alphas[i], |c, a| c * a)
            .expect("layers share extents");
        (blurs[i].apply(&ca), blurs[i].apply(&mpi.alphas[i]))
    });
    let mut out = vec![0.0; h * w];
    let mut occ = vec![1.0; h * w];
    for i in (0..n).rev() {
        let (bca, ba) = &blurred[i];
        for p in 0..h * w {
            out[p] += bca.data()[p] * occ[p];
            if i > 0 {
                occ[p] *= 1.0 - ba.data()[p];
            }
        }
        if i > 0 {
            if let Some(v) = occ
                .iter()
                .find(|v| !(**v >= -DRIFT_TOL && **v <= 1.0 + DRIFT_TOL))
            {
                return Err(Error::Drift(format!("occlusion product {v} outside [0, 1]")));
            }
        }
    }
    for v in out.iter_mut() {
        if *v < 0.0 {
            if *v < -DRIFT_TOL {
                return Err(Error::Drift(format!("rendered value {v} below zero")));
            }
            *v = 0.0;
        }
    }
    Image::new(h, w, out)
}

/// Renders the view blurred by `grid`'s kernels.
pub fn render_defocused(mpi: &Mpi, grid: &KernelGrid) -> Result<Image> {
    let blurs = layer_blurs(grid, &mpi.defocus, mpi.extents())?;
    render_with(mpi, &blurs)
}

/// Renders the left and right views of one MPI.
pub fn render_pair(mpi: &Mpi, left: &KernelGrid, right: &KernelGrid) -> Result<(Image, Image)> {
    Ok((render_defocused(mpi, left)?, render_defocused(mpi, right)?))
}

/// Serializes an MPI as magic `MPIDMPS1`, `u32` layer count, the defocus
/// sizes as `f64`, then each layer's intensity and alpha as `IMG1` blocks.
pub fn write_mpi<W: Write>(w: &mut W, mpi: &Mpi) -> Result<()> {
    w.write_all(MPI_MAGIC)?;
    write_u32(w, mpi.num_layers() as u32)?;
    write_f64s(w, &mpi.defocus)?;
    for (c, a) in mpi.colors.iter().zip(&mpi.alphas) {
        write_image(w, c)?;
        write_image(w, a)?;
    }
    Ok(())
}

pub fn read_mpi<R: Read>(r: &mut R) -> Result<Mpi> {
    expect_magic(r, MPI_MAGIC, "MPIS1")?;
    let n = read_u32(r)? as usize;
    if n == 0 || n > 4096 {
        return Err(Error::format("MPIS1", format!("layer count {n}")));
    }
    let defocus = read_f64s(r, n)?;
    let mut colors = Vec::with_capacity(n);
    let mut alphas = Vec::with_capacity(n);
    for _ in 0..n {
        colors.push(read_image(r)?);
        alphas.push(read_image(r)?);
    }
    Mpi::new(colors, alphas, defocus)
}

pub fn save_mpi(path: impl AsRef<Path>, mpi: &Mpi) -> Result<()> {
    let mut buf = Vec::new();
    write_mpi(&mut buf, mpi)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_mpi(path: impl AsRef<Path>) -> Result<Mpi> {
    let bytes = fs::read(path)?;
    let mut cursor = bytes.as_slice();
    let mpi = read_mpi(&mut cursor)?;
    if !cursor.is_empty() {
        return Err(Error::format("MPIS1", "trailing bytes"));
    }
    Ok(mpi)
}
