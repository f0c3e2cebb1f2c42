use super::grid::{axis_weights, KernelGrid, GRID_COLS, GRID_ROWS};
use crate::error::{Error, Result};
use crate::numerics::{ConvPlan, Image, Kernel, Rect};
use crate::par;

#[derive(Clone, Debug)]
struct Tile {
    plan: ConvPlan,
    /// Row weights for `rect.y0 .. rect.y0 + rect.h`.
    wy: Vec<f64>,
    /// Column weights for `rect.x0 .. rect.x0 + rect.w`.
    wx: Vec<f64>,
}

#[derive(Clone, Debug)]
enum Mode {
    Uniform(ConvPlan),
    Tiled(Vec<Tile>),
}

/// Spatially-varying blur of a fixed image size at one defocus size.
///
/// Each grid cell's kernel is scaled to the defocus size and convolved over
/// the region where that cell has non-zero bilinear weight; the cell outputs
/// are blended with the same partition-of-unity weights [`KernelGrid::kernel_at`]
/// uses. A grid whose cells are all equal collapses to one convolution.
#[derive(Clone, Debug)]
pub struct SpatialBlur {
    extents: (usize, usize),
    defocus: f64,
    mode: Mode,
}

/// Per-pixel weights along one axis: `(cell index, weight)` pairs.
fn axis_table(len: usize, offset: f64, cov: usize, cells: usize) -> Vec<[(usize, f64); 2]> {
    (0..len)
        .map(|p| {
            let (i0, i1, w0, w1) = axis_weights(p as f64 + offset, cov, cells);
            [(i0, w0), (i1, w1)]
        })
        .collect()
}

/// Contiguous pixel range on which `cell` has non-zero weight, with the weights.
fn axis_range(table: &[[(usize, f64); 2]], cell: usize) -> Option<(usize, Vec<f64>)> {
    let weight = |p: usize| -> f64 {
        table[p]
            .iter()
            .filter(|(i, _)| *i == cell)
            .map(|(_, w)| *w)
            .sum()
    };
    let first = (0..table.len()).find(|&p| weight(p) > 0.0)?;
    let last = (0..table.len()).rev().find(|&p| weight(p) > 0.0)?;
    Some((first, (first..=last).map(weight).collect()))
}

impl SpatialBlur {
    /// Prepares the blur of an image with `extents` centered in the grid's
    /// coverage.
    pub fn new(grid: &KernelGrid, defocus: f64, extents: (usize, usize)) -> Result<Self> {
        let (h, w) = extents;
        let (ch, cw) = grid.coverage();
        if h > ch || w > cw {
            return Err(Error::InvalidArgument(format!(
                "image {h}x{w} exceeds kernel grid coverage {ch}x{cw}"
            )));
        }
        let cells = grid.scaled_cells(defocus)?;
        Self::from_cells(&cells, grid.coverage(), defocus, extents)
    }

    /// Same as [`SpatialBlur::new`] from already-scaled cell kernels.
    pub fn from_cells(
        cells: &[Kernel],
        coverage: (usize, usize),
        defocus: f64,
        extents: (usize, usize),
    ) -> Result<Self> {
        let (h, w) = extents;
        if cells.len() != GRID_ROWS * GRID_COLS {
            return Err(Error::InvalidArgument("expected 48 cell kernels".into()));
        }
        let max_size = cells.iter().map(Kernel::size).max().unwrap_or(1);
        if max_size > 2 * h.min(w) {
            return Err(Error::Kernel(format!(
                "kernel {max_size}x{max_size} larger than twice the image extent {h}x{w}"
            )));
        }
        if cells.iter().all(|k| k == &cells[0]) {
            return Ok(Self {
                extents,
                defocus,
                mode: Mode::Uniform(ConvPlan::new(&cells[0], Rect::full(h, w), extents)),
            });
        }
        let off_y = (coverage.0 - h) as f64 / 2.0;
        let off_x = (coverage.1 - w) as f64 / 2.0;
        let ty = axis_table(h, off_y, coverage.0, GRID_ROWS);
        let tx = axis_table(w, off_x, coverage.1, GRID_COLS);
        let mut tiles = Vec::new();
        for r in 0..GRID_ROWS {
            let Some((y0, wy)) = axis_range(&ty, r) else {
                continue;
            };
            for c in 0..GRID_COLS {
                let Some((x0, wx)) = axis_range(&tx, c) else {
                    continue;
                };
                let rect = Rect {
                    y0,
                    x0,
                    h: wy.len(),
                    w: wx.len(),
                };
                tiles.push(Tile {
                    plan: ConvPlan::new(&cells[r * GRID_COLS + c], rect, extents),
                    wy: wy.clone(),
                    wx,
                });
            }
        }
        Ok(Self {
            extents,
            defocus,
            mode: Mode::Tiled(tiles),
        })
    }

    pub fn extents(&self) -> (usize, usize) {
        self.extents
    }

    pub fn defocus(&self) -> f64 {
        self.defocus
    }

    /// Whether every cell shares one kernel.
    pub fn is_uniform(&self) -> bool {
        matches!(self.mode, Mode::Uniform(_))
    }

    /// Largest kernel extent in use.
    pub fn max_kernel_size(&self) -> usize {
        match &self.mode {
            Mode::Uniform(p) => p.kernel().size(),
            Mode::Tiled(t) => t.iter().map(|t| t.plan.kernel().size()).max().unwrap_or(1),
        }
    }

    pub fn apply(&self, img: &Image) -> Image {
        assert_eq!(img.extents(), self.extents, "blur extents mismatch");
        let (h, w) = self.extents;
        match &self.mode {
            Mode::Uniform(plan) => Image::new(h, w, plan.apply(img)).expect("valid extents"),
            Mode::Tiled(tiles) => {
                let parts = par::map_slice(tiles, |t| t.plan.apply(img));
                let mut out = Image::zeros(h, w).expect("valid extents");
                let data = out.data_mut();
                for (t, vals) in tiles.iter().zip(&parts) {
                    let rect = t.plan.rect();
                    for (iy, wy) in t.wy.iter().enumerate() {
                        let row = &mut data[(rect.y0 + iy) * w + rect.x0..][..rect.w];
                        let src = &vals[iy * rect.w..(iy + 1) * rect.w];
                        for ((o, v), wx) in row.iter_mut().zip(src).zip(&t.wx) {
                            *o += wy * wx * v;
                        }
                    }
                }
                out
            }
        }
    }

    /// Adjoint of [`SpatialBlur::apply`].
    pub fn adjoint(&self, grad: &Image) -> Image {
        assert_eq!(grad.extents(), self.extents, "blur extents mismatch");
        let (h, w) = self.extents;
        let mut out = Image::zeros(h, w).expect("valid extents");
        match &self.mode {
            Mode::Uniform(plan) => plan.adjoint_accumulate(grad.data(), &mut out),
            Mode::Tiled(tiles) => {
                let padded = par::map_slice(tiles, |t| {
                    let rect = t.plan.rect();
                    let mut g = Vec::with_capacity(rect.len());
                    for (iy, wy) in t.wy.iter().enumerate() {
                        let row = &grad.data()[(rect.y0 + iy) * w + rect.x0..][..rect.w];
                        for (v, wx) in row.iter().zip(&t.wx) {
                            g.push(wy * wx * v);
                        }
                    }
                    t.plan.adjoint_padded(&g)
                });
                for (t, z) in tiles.iter().zip(&padded) {
                    t.plan.fold_into(z, &mut out);
                }
            }
        }
        out
    }
}

/// Exact per-pixel spatially-varying blur: every output pixel uses its own
/// interpolated, scaled kernel from [`KernelGrid::kernel_at`]. Slow; kept as
/// the reference for [`SpatialBlur`].
pub fn blur_exact(img: &Image, grid: &KernelGrid, defocus: f64) -> Result<Image> {
    let (h, w) = img.extents();
    let (ch, cw) = grid.coverage();
    if h > ch || w > cw {
        return Err(Error::InvalidArgument("image exceeds grid coverage".into()));
    }
    let off_y = (ch - h) as f64 / 2.0;
    let off_x = (cw - w) as f64 / 2.0;
    let rows = par::map_range(h, |y| -> Result<Vec<f64>> {
        let mut row = Vec::with_capacity(w);
        for x in 0..w {
            let k = grid.kernel_at(x as f64 + off_x, y as f64 + off_y, defocus)?;
            let r = k.radius() as isize;
            let mut acc = 0.0;
            for dy in -r..=r {
                for dx in -r..=r {
                    acc += k.at_offset(dy, dx) * img.get_clamped(y as isize - dy, x as isize - dx);
                }
            }
            row.push(acc);
        }
        Ok(row)
    });
    let mut data = Vec::with_capacity(h * w);
    for r in rows {
        data.extend(r?);
    }
    Image::new(h, w, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::View;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_grid(seed: u64, size: usize) -> KernelGrid {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cells = (0..48)
            .map(|_| {
                Kernel::from_weights(size, (0..size * size).map(|_| rng.random_range(0.0..1.0)).collect())
                    .unwrap()
            })
            .collect();
        KernelGrid::new(View::Left, size as f64, (40, 56), cells).unwrap()
    }

    fn random_image(h: usize, w: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(h, w, |_, _| rng.random_range(0.0..1.0)).unwrap()
    }

    #[test]
    fn tiled_matches_exact_at_reference_scale() {
        let g = random_grid(1, 5);
        let img = random_image(40, 56, 2);
        let blur = SpatialBlur::new(&g, 5.0, img.extents()).unwrap();
        assert!(!blur.is_uniform());
        let a = blur.apply(&img);
        let b = blur_exact(&img, &g, 5.0).unwrap();
        let err = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(err < 1e-12, "{err}");
    }

    #[test]
    fn tiled_matches_exact_when_scaled() {
        let g = random_grid(3, 7);
        let img = random_image(40, 56, 4);
        for d in [3.0, 9.5] {
            let blur = SpatialBlur::new(&g, d, img.extents()).unwrap();
            let a = blur.apply(&img);
            let b = blur_exact(&img, &g, d).unwrap();
            let err = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            assert!(err < 2e-3, "d={d}: {err}");
        }
    }

    #[test]
    fn partition_of_unity_preserves_constants() {
        let g = random_grid(5, 5);
        let img = Image::filled(40, 56, 0.42).unwrap();
        let out = SpatialBlur::new(&g, 7.0, img.extents()).unwrap().apply(&img);
        assert!(out.data().iter().all(|v| (v - 0.42).abs() < 1e-12));
    }

    #[test]
    fn adjoint_identity() {
        let g = random_grid(6, 5);
        let x = random_image(40, 56, 7);
        let y = random_image(40, 56, 8);
        for d in [5.0, 15.0] {
            let blur = SpatialBlur::new(&g, d, x.extents()).unwrap();
            let ax = blur.apply(&x);
            let aty = blur.adjoint(&y);
            let lhs: f64 = ax.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.data().iter().zip(aty.data()).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-9 * lhs.abs());
        }
    }

    #[test]
    fn smaller_image_is_centered_in_coverage() {
        let g = random_grid(9, 3);
        let img = random_image(20, 30, 10);
        let a = SpatialBlur::new(&g, 3.0, img.extents()).unwrap().apply(&img);
        let b = blur_exact(&img, &g, 3.0).unwrap();
        let err = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(err < 1e-12);
        let too_big = random_image(41, 10, 1);
        assert!(SpatialBlur::new(&g, 3.0, too_big.extents()).is_err());
    }
}
