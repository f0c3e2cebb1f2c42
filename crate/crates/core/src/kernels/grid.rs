use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::scale::scale_kernel;
use crate::error::{Error, Result};
use crate::numerics::io::{
    expect_magic, read_f64, read_f64s, read_u32, write_f64, write_f64s, write_u32,
};
use crate::numerics::Kernel;

pub const GRID_ROWS: usize = 6;
pub const GRID_COLS: usize = 8;

const KGRID_MAGIC: &[u8; 8] = b"MPIKGRD1";

/// Which dual-pixel sub-image a kernel grid belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum View {
    Left,
    Right,
}

impl View {
    pub fn tag(self) -> u32 {
        match self {
            View::Left => 0,
            View::Right => 1,
        }
    }

    pub fn from_tag(tag: u32) -> Result<Self> {
        match tag {
            0 => Ok(View::Left),
            1 => Ok(View::Right),
            t => Err(Error::format("KGRID1", format!("unknown view tag {t}"))),
        }
    }
}

/// Bilinear interpolation weights along one axis with `cells` cells spread
/// over `extent` pixels. Returns `(i0, i1, w0, w1)`; coordinates outside the
/// outermost cell centers clamp to the nearest cell.
pub fn axis_weights(coord: f64, extent: usize, cells: usize) -> (usize, usize, f64, f64) {
    if cells == 1 {
        return (0, 0, 1.0, 0.0);
    }
    let f = ((coord + 0.5) * cells as f64 / extent as f64 - 0.5).clamp(0.0, (cells - 1) as f64);
    let i0 = (f.floor() as usize).min(cells - 2);
    let t = f - i0 as f64;
    (i0, i0 + 1, 1.0 - t, t)
}

/// An 8x6 grid of normalized blur kernels for one view at a reference defocus.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelGrid {
    view: View,
    reference_defocus: f64,
    coverage: (usize, usize),
    cells: Vec<Kernel>,
}

impl KernelGrid {
    /// `cells` is row-major: `GRID_ROWS` rows of `GRID_COLS` kernels.
    pub fn new(
        view: View,
        reference_defocus: f64,
        coverage: (usize, usize),
        cells: Vec<Kernel>,
    ) -> Result<Self> {
        if cells.len() != GRID_ROWS * GRID_COLS {
            return Err(Error::InvalidArgument(format!(
                "kernel grid needs {} cells, got {}",
                GRID_ROWS * GRID_COLS,
                cells.len()
            )));
        }
        if !(reference_defocus > 0.0) || !reference_defocus.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "reference defocus {reference_defocus} must be > 0"
            )));
        }
        if coverage.0 == 0 || coverage.1 == 0 {
            return Err(Error::InvalidArgument("empty grid coverage".into()));
        }
        Ok(Self {
            view,
            reference_defocus,
            coverage,
            cells,
        })
    }

    /// Grid with the same kernel in every cell.
    pub fn uniform(view: View, kernel: Kernel, reference_defocus: f64, coverage: (usize, usize)) -> Result<Self> {
        Self::new(
            view,
            reference_defocus,
            coverage,
            vec![kernel; GRID_ROWS * GRID_COLS],
        )
    }

    pub fn view(&self) -> View {
        self.view
    }

    pub fn reference_defocus(&self) -> f64 {
        self.reference_defocus
    }

    pub fn coverage(&self) -> (usize, usize) {
        self.coverage
    }

    pub fn cells(&self) -> &[Kernel] {
        &self.cells
    }

    pub fn cell(&self, row: usize, col: usize) -> &Kernel {
        &self.cells[row * GRID_COLS + col]
    }

    pub fn is_uniform(&self) -> bool {
        self.cells.iter().all(|k| k == &self.cells[0])
    }

    /// Pixel position `(y, x)` of a cell center.
    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        let (h, w) = self.coverage;
        (
            (row as f64 + 0.5) * h as f64 / GRID_ROWS as f64 - 0.5,
            (col as f64 + 0.5) * w as f64 / GRID_COLS as f64 - 0.5,
        )
    }

    /// Bilinear blend of the four cells around `(x, y)`, before any scaling.
    pub fn blended_at(&self, x: f64, y: f64) -> Result<Kernel> {
        let (h, w) = self.coverage;
        if !(x >= -0.5 && y >= -0.5 && x <= w as f64 - 0.5 && y <= h as f64 - 0.5) {
            return Err(Error::InvalidArgument(format!(
                "query ({x}, {y}) outside grid coverage {w}x{h}"
            )));
        }
        let (r0, r1, wr0, wr1) = axis_weights(y, h, GRID_ROWS);
        let (c0, c1, wc0, wc1) = axis_weights(x, w, GRID_COLS);
        let parts = [
            (self.cell(r0, c0), wr0 * wc0),
            (self.cell(r0, c1), wr0 * wc1),
            (self.cell(r1, c0), wr1 * wc0),
            (self.cell(r1, c1), wr1 * wc1),
        ];
        let size = parts.iter().map(|(k, _)| k.size()).max().unwrap_or(1);
        let mut acc = vec![0.0; size * size];
        for (k, wt) in parts {
            if wt == 0.0 {
                continue;
            }
            let p = k.padded_to(size);
            for (a, v) in acc.iter_mut().zip(p.weights()) {
                *a += wt * v;
            }
        }
        Kernel::from_weights(size, acc)
    }

    /// Kernel at pixel `(x, y)` scaled to defocus `d`.
    pub fn kernel_at(&self, x: f64, y: f64, d: f64) -> Result<Kernel> {
        let blended = self.blended_at(x, y)?;
        scale_kernel(&blended, self.reference_defocus, d)
    }

    /// Kernel at the center of the covered field, scaled to `d`.
    pub fn center_kernel(&self, d: f64) -> Result<Kernel> {
        let (h, w) = self.coverage;
        self.kernel_at((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0, d)
    }

    /// Every cell kernel scaled to `d`.
    pub fn scaled_cells(&self, d: f64) -> Result<Vec<Kernel>> {
        if self.is_uniform() {
            let k = scale_kernel(&self.cells[0], self.reference_defocus, d)?;
            return Ok(vec![k; self.cells.len()]);
        }
        self.cells
            .iter()
            .map(|k| scale_kernel(k, self.reference_defocus, d))
            .collect()
    }

    /// Left-right mirror of every cell kernel and of the cell layout.
    pub fn mirrored(&self, view: View) -> KernelGrid {
        let mut cells = Vec::with_capacity(self.cells.len());
        for r in 0..GRID_ROWS {
            for c in 0..GRID_COLS {
                cells.push(self.cell(r, GRID_COLS - 1 - c).flip_horizontal());
            }
        }
        KernelGrid {
            view,
            reference_defocus: self.reference_defocus,
            coverage: self.coverage,
            cells,
        }
    }
}

/// Serializes a grid as `KGRID1`.
///
/// Layout (little-endian): magic `MPIKGRD1`, `u32` view tag (0 left, 1 right),
/// `f64` reference defocus, `u32` rows, `u32` cols, `u32` coverage height,
/// `u32` coverage width, then `rows * cols` kernels as `u32` size `k`
/// followed by `k * k` `f64` taps.
pub fn write_kernel_grid<W: Write>(w: &mut W, grid: &KernelGrid) -> Result<()> {
    w.write_all(KGRID_MAGIC)?;
    write_u32(w, grid.view.tag())?;
    write_f64(w, grid.reference_defocus)?;
    write_u32(w, GRID_ROWS as u32)?;
    write_u32(w, GRID_COLS as u32)?;
    write_u32(w, grid.coverage.0 as u32)?;
    write_u32(w, grid.coverage.1 as u32)?;
    for k in &grid.cells {
        write_u32(w, k.size() as u32)?;
        write_f64s(w, k.weights())?;
    }
    Ok(())
}

pub fn read_kernel_grid<R: Read>(r: &mut R) -> Result<KernelGrid> {
    expect_magic(r, KGRID_MAGIC, "KGRID1")?;
    let view = View::from_tag(read_u32(r)?)?;
    let reference_defocus = read_f64(r)?;
    let rows = read_u32(r)? as usize;
    let cols = read_u32(r)? as usize;
    if rows != GRID_ROWS || cols != GRID_COLS {
        return Err(Error::format(
            "KGRID1",
            format!("grid dims {cols}x{rows}, expected {GRID_COLS}x{GRID_ROWS}"),
        ));
    }
    let cov_h = read_u32(r)? as usize;
    let cov_w = read_u32(r)? as usize;
    let mut cells = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        let k = read_u32(r)? as usize;
        if k == 0 || k % 2 == 0 || k > 4097 {
            return Err(Error::format("KGRID1", format!("bad kernel size {k}")));
        }
        let taps = read_f64s(r, k * k)?;
        let kernel = Kernel::from_normalized(k, taps, 1e-9)
            .map_err(|e| Error::format("KGRID1", e.to_string()))?;
        cells.push(kernel);
    }
    KernelGrid::new(view, reference_defocus, (cov_h, cov_w), cells)
}

pub fn save_kernel_grid(path: impl AsRef<Path>, grid: &KernelGrid) -> Result<()> {
    let mut buf = Vec::new();
    write_kernel_grid(&mut buf, grid)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_kernel_grid(path: impl AsRef<Path>) -> Result<KernelGrid> {
    let bytes = fs::read(path)?;
    let mut cur = bytes.as_slice();
    let g = read_kernel_grid(&mut cur)?;
    if !cur.is_empty() {
        return Err(Error::format("KGRID1", "trailing bytes"));
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_kernel(n: usize, rng: &mut ChaCha8Rng) -> Kernel {
        Kernel::from_weights(n, (0..n * n).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
    }

    fn random_grid(seed: u64) -> KernelGrid {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cells = (0..48)
            .map(|i| random_kernel(if i % 3 == 0 { 5 } else { 3 }, &mut rng))
            .collect();
        KernelGrid::new(View::Left, 5.0, (48, 64), cells).unwrap()
    }

    #[test]
    fn cell_center_query_returns_cell() {
        let g = random_grid(1);
        let (y, x) = g.cell_center(2, 5);
        let k = g.kernel_at(x, y, 5.0).unwrap();
        let cell = g.cell(2, 5);
        assert_eq!(k.size(), cell.size());
        for (a, b) in k.weights().iter().zip(cell.weights()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn midway_between_identical_cells() {
        let g = random_grid(2);
        let mut cells = g.cells().to_vec();
        cells[3 * GRID_COLS + 4] = cells[3 * GRID_COLS + 3].clone();
        let g = KernelGrid::new(View::Left, 5.0, (48, 64), cells).unwrap();
        let (y, x0) = g.cell_center(3, 3);
        let (_, x1) = g.cell_center(3, 4);
        let k = g.blended_at((x0 + x1) / 2.0, y).unwrap();
        for (a, b) in k.weights().iter().zip(g.cell(3, 3).weights()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn quarter_point_blend_matches_hand_weights() {
        let g = random_grid(3);
        let (y0, x0) = g.cell_center(1, 2);
        let (y1, x1) = g.cell_center(2, 3);
        let (tx, ty) = (0.25, 0.75);
        let k = g.blended_at(x0 + tx * (x1 - x0), y0 + ty * (y1 - y0)).unwrap();
        let parts = [
            (g.cell(1, 2), (1.0 - ty) * (1.0 - tx)),
            (g.cell(1, 3), (1.0 - ty) * tx),
            (g.cell(2, 2), ty * (1.0 - tx)),
            (g.cell(2, 3), ty * tx),
        ];
        let size = parts.iter().map(|p| p.0.size()).max().unwrap();
        let r = (size / 2) as isize;
        for dy in -r..=r {
            for dx in -r..=r {
                let expect: f64 = parts.iter().map(|(c, w)| w * c.at_offset(dy, dx)).sum();
                assert!((k.at_offset(dy, dx) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn outside_hull_clamps_and_outside_coverage_errors() {
        let g = random_grid(4);
        let k = g.blended_at(0.0, 0.0).unwrap();
        assert_eq!(k.weights(), g.cell(0, 0).weights());
        assert!(g.kernel_at(-3.0, 4.0, 5.0).is_err());
        assert!(g.kernel_at(4.0, 48.0, 5.0).is_err());
    }

    #[test]
    fn kgrid_round_trip() {
        let g = random_grid(5);
        let mut buf = Vec::new();
        write_kernel_grid(&mut buf, &g).unwrap();
        assert_eq!(&buf[..8], b"MPIKGRD1");
        let back = read_kernel_grid(&mut buf.as_slice()).unwrap();
        assert_eq!(back.view(), View::Left);
        assert_eq!(back.coverage(), (48, 64));
        for (a, b) in back.cells().iter().zip(g.cells()) {
            assert_eq!(a.size(), b.size());
            for (x, y) in a.weights().iter().zip(b.weights()) {
                assert_eq!(x, y);
            }
        }
    }

    #[test]
    fn rejects_wrong_cell_count() {
        assert!(KernelGrid::new(View::Right, 3.0, (10, 10), vec![Kernel::identity(); 47]).is_err());
    }
}
