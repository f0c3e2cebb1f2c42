use super::grid::{KernelGrid, View, GRID_COLS, GRID_ROWS};
use crate::error::{Error, Result};
use crate::numerics::{Image, Kernel};
use crate::par;

/// Regular pattern of circular discs shown to the camera during calibration.
#[derive(Clone, Debug, PartialEq)]
pub struct CalibTarget {
    /// Disc centers as `(y, x)` pixel positions.
    pub centers: Vec<(f64, f64)>,
    pub radius: f64,
    pub extents: (usize, usize),
}

impl CalibTarget {
    /// Discs on a square lattice with the given spacing, keeping every disc at
    /// least `margin` pixels (beyond its radius) from the border.
    pub fn regular_grid(extents: (usize, usize), spacing: f64, radius: f64, margin: f64) -> Result<Self> {
        if !(spacing > 0.0) || !(radius > 0.0) || margin < 0.0 {
            return Err(Error::InvalidArgument(
                "target spacing and radius must be positive".into(),
            ));
        }
        let (h, w) = extents;
        let lo = radius + margin;
        let mut centers = Vec::new();
        let mut y = lo + spacing / 2.0;
        while y <= h as f64 - 1.0 - lo {
            let mut x = lo + spacing / 2.0;
            while x <= w as f64 - 1.0 - lo {
                centers.push((y, x));
                x += spacing;
            }
            y += spacing;
        }
        let t = Self {
            centers,
            radius,
            extents,
        };
        t.validate(margin)?;
        Ok(t)
    }

    /// Checks every disc stays `radius + margin` away from the border.
    pub fn validate(&self, margin: f64) -> Result<()> {
        let (h, w) = self.extents;
        let lo = self.radius + margin;
        for &(y, x) in &self.centers {
            if y < lo || x < lo || y > h as f64 - 1.0 - lo || x > w as f64 - 1.0 - lo {
                return Err(Error::InvalidArgument(format!(
                    "disc at ({y}, {x}) closer than {lo} px to the border"
                )));
            }
        }
        Ok(())
    }

    /// Binary disc mask: 1 where the pixel center lies inside a disc.
    pub fn mask(&self) -> Image {
        let (h, w) = self.extents;
        let r2 = self.radius * self.radius;
        let mut m = Image::zeros(h, w).expect("target extents are valid");
        for &(cy, cx) in &self.centers {
            let y0 = (cy - self.radius).floor().max(0.0) as usize;
            let y1 = ((cy + self.radius).ceil() as usize).min(h - 1);
            let x0 = (cx - self.radius).floor().max(0.0) as usize;
            let x1 = ((cx + self.radius).ceil() as usize).min(w - 1);
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let (dy, dx) = (y as f64 - cy, x as f64 - cx);
                    if dy * dy + dx * dx <= r2 {
                        m.set(y, x, 1.0);
                    }
                }
            }
        }
        m
    }
}

/// Radiometrically corrected latent target: `M * white + (1 - M) * black`.
pub fn render_latent_target(target: &CalibTarget, white: &Image, black: &Image) -> Result<Image> {
    white.ensure_same_extents(black)?;
    if white.extents() != target.extents {
        return Err(Error::ExtentMismatch {
            expected: target.extents,
            got: white.extents(),
        });
    }
    let m = target.mask();
    Image::from_fn(white.height(), white.width(), |y, x| {
        let mv = m.get(y, x);
        mv * white.get(y, x) + (1.0 - mv) * black.get(y, x)
    })
}

#[derive(Clone, Debug)]
pub struct CalibOptions {
    /// Odd kernel extent to solve for.
    pub kernel_extent: usize,
    /// Gradient-smoothness weight, relative to the mean diagonal of the data
    /// term's normal matrix.
    pub reg_weight: f64,
    pub iterations: usize,
    pub view: View,
    /// Defocus size the recovered kernels correspond to.
    pub reference_defocus: f64,
}

impl Default for CalibOptions {
    fn default() -> Self {
        Self {
            kernel_extent: 7,
            reg_weight: 1e-4,
            iterations: 2000,
            view: View::Left,
            reference_defocus: 7.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CalibResult {
    pub grid: KernelGrid,
    /// `(row, col)` of cells without usable texture, filled from neighbors.
    pub flagged: Vec<(usize, usize)>,
}

/// Cell normal equations for `min ||X K - c||^2` with column-centered data.
struct Normal {
    gram: Vec<f64>,
    rhs: Vec<f64>,
}

fn cell_normal(captured: &Image, latent: &Image, rows: (usize, usize), cols: (usize, usize), k: usize) -> Option<Normal> {
    let n = k * k;
    let r = (k / 2) as isize;
    let mut gram = vec![0.0; n * n];
    let mut rhs = vec![0.0; n];
    let mut mu = vec![0.0; n];
    let mut mc = 0.0;
    let mut count = 0usize;
    let mut row = vec![0.0; n];
    for y in rows.0..rows.1 {
        for x in cols.0..cols.1 {
            for a in 0..k {
                for b in 0..k {
                    let yy = y as isize - (a as isize - r);
                    let xx = x as isize - (b as isize - r);
                    row[a * k + b] = latent.get(yy as usize, xx as usize);
                }
            }
            let c = captured.get(y, x);
            for i in 0..n {
                let ri = row[i];
                mu[i] += ri;
                rhs[i] += ri * c;
                let g = &mut gram[i * n..(i + 1) * n];
                for (gj, rj) in g.iter_mut().zip(&row) {
                    *gj += ri * rj;
                }
            }
            mc += c;
            count += 1;
        }
    }
    if count == 0 {
        return None;
    }
    let p = count as f64;
    for m in mu.iter_mut() {
        *m /= p;
    }
    mc /= p;
    for i in 0..n {
        rhs[i] -= p * mu[i] * mc;
        for j in 0..n {
            gram[i * n + j] -= p * mu[i] * mu[j];
        }
    }
    Some(Normal { gram, rhs })
}

/// `D^T D` for forward differences along both kernel axes.
fn smoothness_matrix(k: usize) -> Vec<f64> {
    let n = k * k;
    let mut m = vec![0.0; n * n];
    let mut add_pair = |i: usize, j: usize| {
        m[i * n + i] += 1.0;
        m[j * n + j] += 1.0;
        m[i * n + j] -= 1.0;
        m[j * n + i] -= 1.0;
    };
    for a in 0..k {
        for b in 0..k {
            if b + 1 < k {
                add_pair(a * k + b, a * k + b + 1);
            }
            if a + 1 < k {
                add_pair(a * k + b, (a + 1) * k + b);
            }
        }
    }
    m
}

fn matvec(m: &[f64], v: &[f64], out: &mut [f64]) {
    let n = v.len();
    for (i, o) in out.iter_mut().enumerate() {
        *o = m[i * n..(i + 1) * n].iter().zip(v).map(|(a, b)| a * b).sum();
    }
}

fn largest_eigenvalue(m: &[f64], n: usize) -> f64 {
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + (i % 7) as f64 * 0.1).collect();
    let mut w = vec![0.0; n];
    let mut lambda = 0.0;
    for _ in 0..300 {
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        matvec(m, &v, &mut w);
        lambda = v.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
        std::mem::swap(&mut v, &mut w);
    }
    lambda
}

/// Euclidean projection onto the probability simplex.
pub(crate) fn project_simplex(v: &mut [f64]) {
    let mut u: Vec<f64> = v.to_vec();
    u.sort_by(|a, b| b.partial_cmp(a).expect("finite values"));
    let mut css = 0.0;
    let mut theta = 0.0;
    for (i, ui) in u.iter().enumerate() {
        css += ui;
        let t = (css - 1.0) / (i + 1) as f64;
        if ui - t > 0.0 {
            theta = t;
        }
    }
    for x in v.iter_mut() {
        *x = (*x - theta).max(0.0);
    }
}

/// Projected Nesterov gradient descent on `K^T Q K - 2 b^T K` over the simplex.
fn solve_cell(normal: &Normal, smooth: &[f64], k: usize, opts: &CalibOptions) -> Vec<f64> {
    let n = k * k;
    let trace: f64 = (0..n).map(|i| normal.gram[i * n + i]).sum();
    let mu = opts.reg_weight * trace / n as f64;
    let q: Vec<f64> = normal
        .gram
        .iter()
        .zip(smooth)
        .map(|(g, s)| g + mu * s)
        .collect();
    let lip = 2.0 * largest_eigenvalue(&q, n) * 1.01;
    let step = 1.0 / lip;
    let mut x = vec![1.0 / n as f64; n];
    let mut y = x.clone();
    let mut t = 1.0f64;
    let mut qy = vec![0.0; n];
    for _ in 0..opts.iterations {
        matvec(&q, &y, &mut qy);
        let mut next: Vec<f64> = y
            .iter()
            .zip(&qy)
            .zip(&normal.rhs)
            .map(|((yi, qi), bi)| yi - step * 2.0 * (qi - bi))
            .collect();
        project_simplex(&mut next);
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        let beta = (t - 1.0) / t_next;
        for i in 0..n {
            y[i] = next[i] + beta * (next[i] - x[i]);
        }
        x = next;
        t = t_next;
    }
    x
}

/// Solves for an 8x6 grid of blur kernels mapping `latent` to `captured`.
///
/// Each cell minimizes `||K * latent - captured||^2 + reg * ||grad K||^2`
/// over its pixels, subject to `K >= 0` and `sum K = 1`, with per-cell means
/// removed from both images so a global affine intensity change of the pair
/// leaves the solution unchanged. Cells without texture are flagged and
/// filled with the average of their valid neighbors.
pub fn calibrate_kernels(captured: &Image, latent: &Image, opts: &CalibOptions) -> Result<CalibResult> {
    captured.ensure_same_extents(latent)?;
    let k = opts.kernel_extent;
    if k == 0 || k % 2 == 0 {
        return Err(Error::InvalidArgument(format!("kernel extent {k} must be odd")));
    }
    if !(opts.reg_weight >= 0.0) {
        return Err(Error::InvalidArgument("reg_weight must be >= 0".into()));
    }
    let (h, w) = captured.extents();
    let r = k / 2;
    if h < 2 * r + GRID_ROWS || w < 2 * r + GRID_COLS {
        return Err(Error::InvalidArgument("capture too small for the kernel grid".into()));
    }
    let smooth = smoothness_matrix(k);
    let cells = par::map_range(GRID_ROWS * GRID_COLS, |idx| {
        let (row, col) = (idx / GRID_COLS, idx % GRID_COLS);
        let ys = ((row * h / GRID_ROWS).max(r), ((row + 1) * h / GRID_ROWS).min(h - r));
        let xs = ((col * w / GRID_COLS).max(r), ((col + 1) * w / GRID_COLS).min(w - r));
        if ys.0 >= ys.1 || xs.0 >= xs.1 {
            return None;
        }
        let normal = cell_normal(captured, latent, ys, xs, k)?;
        let n = k * k;
        let trace: f64 = (0..n).map(|i| normal.gram[i * n + i]).sum();
        let pixels = ((ys.1 - ys.0) * (xs.1 - xs.0)) as f64;
        if !(trace > 1e-10 * pixels) {
            return None;
        }
        Some(solve_cell(&normal, &smooth, k, opts))
    });

    let mut flagged = Vec::new();
    let mut kernels: Vec<Option<Vec<f64>>> = cells;
    let solved = kernels.clone();
    for row in 0..GRID_ROWS {
        for col in 0..GRID_COLS {
            if solved[row * GRID_COLS + col].is_some() {
                continue;
            }
            flagged.push((row, col));
            let mut acc = vec![0.0; k * k];
            let mut count = 0;
            for dr in -1isize..=1 {
                for dc in -1isize..=1 {
                    let (rr, cc) = (row as isize + dr, col as isize + dc);
                    if rr < 0 || cc < 0 || rr >= GRID_ROWS as isize || cc >= GRID_COLS as isize {
                        continue;
                    }
                    if let Some(kv) = &solved[rr as usize * GRID_COLS + cc as usize] {
                        acc.iter_mut().zip(kv).for_each(|(a, v)| *a += v);
                        count += 1;
                    }
                }
            }
            kernels[row * GRID_COLS + col] = if count > 0 {
                Some(acc)
            } else {
                Some(Kernel::identity().padded_to(k).weights().to_vec())
            };
        }
    }
    let cells = kernels
        .into_iter()
        .map(|kv| Kernel::from_weights(k, kv.expect("every cell filled")))
        .collect::<Result<Vec<_>>>()?;
    Ok(CalibResult {
        grid: KernelGrid::new(opts.view, opts.reference_defocus, (h, w), cells)?,
        flagged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simplex_projection() {
        let mut v = vec![0.5, 0.5, 0.5];
        project_simplex(&mut v);
        assert!(v.iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-15));
        let mut v = vec![2.0, -1.0, 0.0];
        project_simplex(&mut v);
        assert_eq!(v, vec![1.0, 0.0, 0.0]);
        let mut v = vec![0.2, 0.3, 0.5];
        project_simplex(&mut v);
        assert!((v[0] - 0.2).abs() < 1e-15 && (v[2] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn latent_target_radiometry() {
        let t = CalibTarget {
            centers: vec![(10.0, 10.0)],
            radius: 4.0,
            extents: (21, 21),
        };
        let white = Image::filled(21, 21, 0.9).unwrap();
        let black = Image::filled(21, 21, 0.1).unwrap();
        let l = render_latent_target(&t, &white, &black).unwrap();
        assert_eq!(l.get(10, 10), 0.9);
        assert_eq!(l.get(10, 14), 0.9);
        assert_eq!(l.get(0, 0), 0.1);
        assert_eq!(l.get(10, 15), 0.1);

        let ones = Image::filled(21, 21, 1.0).unwrap();
        let zeros = Image::zeros(21, 21).unwrap();
        assert_eq!(render_latent_target(&t, &ones, &zeros).unwrap(), t.mask());

        let empty = CalibTarget {
            centers: vec![],
            radius: 4.0,
            extents: (21, 21),
        };
        assert_eq!(render_latent_target(&empty, &white, &black).unwrap(), black);
    }

    #[test]
    fn regular_grid_respects_margin() {
        let t = CalibTarget::regular_grid((60, 80), 12.0, 3.0, 4.0).unwrap();
        assert!(!t.centers.is_empty());
        t.validate(4.0).unwrap();
        let bad = CalibTarget {
            centers: vec![(2.0, 30.0)],
            radius: 3.0,
            extents: (60, 80),
        };
        assert!(bad.validate(1.0).is_err());
    }

    #[test]
    fn smoothness_matrix_annihilates_constants() {
        let m = smoothness_matrix(5);
        let ones = vec![1.0; 25];
        let mut out = vec![0.0; 25];
        matvec(&m, &ones, &mut out);
        assert!(out.iter().all(|v| v.abs() < 1e-15));
    }
}
