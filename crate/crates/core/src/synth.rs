//! Ground-truth scene generator: known MPIs rendered through known kernel
//! grids with additive Gaussian noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::kernels::{CalibTarget, KernelGrid, View, GRID_COLS, GRID_ROWS};
use crate::mpi::{self, Mpi};
use crate::numerics::{resample_bilinear, Image, Kernel};

/// Subsamples per pixel axis when rasterizing discs.
const SUPERSAMPLE: usize = 16;

fn rasterize(radius: f64, keep: impl Fn(f64) -> bool) -> Kernel {
    if radius < 0.5 {
        return Kernel::identity();
    }
    let half = (radius - 0.5).ceil() as isize;
    let size = (2 * half + 1) as usize;
    let r2 = radius * radius;
    let step = 1.0 / SUPERSAMPLE as f64;
    let mut w = vec![0.0; size * size];
    for a in 0..size {
        for b in 0..size {
            let (py, px) = ((a as isize - half) as f64, (b as isize - half) as f64);
            let mut hits = 0usize;
            for sy in 0..SUPERSAMPLE {
                let y = py - 0.5 + (sy as f64 + 0.5) * step;
                for sx in 0..SUPERSAMPLE {
                    let x = px - 0.5 + (sx as f64 + 0.5) * step;
                    if x * x + y * y <= r2 && keep(x) {
                        hits += 1;
                    }
                }
            }
            w[a * size + b] = hits as f64;
        }
    }
    Kernel::from_weights(size, w).expect("disc rasterization has positive mass")
}

/// Anti-aliased, normalized disc of the given radius in pixels; radii below
/// half a pixel give the identity kernel.
pub fn disc_kernel(radius: f64) -> Kernel {
    rasterize(radius, |_| true)
}

/// Normalized half disc: the left view keeps `x < 0`, the right view `x > 0`.
pub fn half_disc_kernel(radius: f64, view: View) -> Kernel {
    match view {
        View::Left => rasterize(radius, |x| x < 0.0),
        View::Right => rasterize(radius, |x| x > 0.0),
    }
}

/// Grid of identical half-disc kernels with reference defocus `2 * radius`.
pub fn make_disc_kernels(radius_ref: f64, view: View, coverage: (usize, usize)) -> Result<KernelGrid> {
    if !(radius_ref >= 0.0) || !radius_ref.is_finite() {
        return Err(Error::InvalidArgument(format!("disc radius {radius_ref} must be >= 0")));
    }
    KernelGrid::uniform(
        view,
        half_disc_kernel(radius_ref, view),
        (2.0 * radius_ref).max(1.0),
        coverage,
    )
}

/// Multiplies every non-zero tap of every cell by an independent factor in
/// `[1 - amount, 1 + amount]` and renormalizes, giving a spatially varying grid.
pub fn perturb_grid(grid: &KernelGrid, amount: f64, seed: u64) -> Result<KernelGrid> {
    if !(0.0..1.0).contains(&amount) {
        return Err(Error::InvalidArgument(format!("perturbation {amount} outside [0, 1)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cells = grid
        .cells()
        .iter()
        .map(|k| {
            let w = k
                .weights()
                .iter()
                .map(|&v| v * (1.0 + amount * rng.random_range(-1.0..=1.0)))
                .collect();
            Kernel::from_weights(k.size(), w)
        })
        .collect::<Result<Vec<_>>>()?;
    KernelGrid::new(grid.view(), grid.reference_defocus(), grid.coverage(), cells)
}

#[derive(Clone, Debug, PartialEq)]
pub enum Shape {
    Full,
    Rect { y0: f64, x0: f64, h: f64, w: f64 },
    Disc { cy: f64, cx: f64, r: f64 },
}

impl Shape {
    fn contains(&self, y: f64, x: f64) -> bool {
        match *self {
            Shape::Full => true,
            Shape::Rect { y0, x0, h, w } => y >= y0 && y < y0 + h && x >= x0 && x < x0 + w,
            Shape::Disc { cy, cx, r } => (y - cy).powi(2) + (x - cx).powi(2) <= r * r,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Texture {
    /// Textureless region of constant intensity.
    Flat(f64),
    /// Uniform noise on a lattice of `cell`-pixel spacing, bilinearly
    /// interpolated, spanning `mean +- amplitude`.
    Noise { mean: f64, amplitude: f64, cell: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerSpec {
    pub defocus: f64,
    pub shape: Shape,
    pub texture: Texture,
}

/// Layers back to front; the first layer is always made fully opaque.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub extents: (usize, usize),
    pub layers: Vec<LayerSpec>,
    pub sigma2: f64,
    pub seed: u64,
}

impl SceneSpec {
    /// Textured background, a textured rectangle and a textured disc in
    /// front, at defocus sizes `back`, midway and `front`.
    pub fn three_layer(extents: (usize, usize), back: f64, front: f64, sigma2: f64, seed: u64) -> Self {
        let (h, w) = (extents.0 as f64, extents.1 as f64);
        let noise = |mean| Texture::Noise {
            mean,
            amplitude: 0.3,
            cell: 3.0,
        };
        Self {
            extents,
            layers: vec![
                LayerSpec {
                    defocus: back,
                    shape: Shape::Full,
                    texture: noise(0.5),
                },
                LayerSpec {
                    defocus: (back + front) / 2.0,
                    shape: Shape::Rect {
                        y0: 0.1 * h,
                        x0: 0.45 * w,
                        h: 0.5 * h,
                        w: 0.45 * w,
                    },
                    texture: noise(0.45),
                },
                LayerSpec {
                    defocus: front,
                    shape: Shape::Disc {
                        cy: 0.65 * h,
                        cx: 0.3 * w,
                        r: 0.22 * h.min(w),
                    },
                    texture: noise(0.55),
                },
            ],
            sigma2,
            seed,
        }
    }

    /// One opaque textured plane at defocus `d`.
    pub fn single_plane(extents: (usize, usize), d: f64, sigma2: f64, seed: u64) -> Self {
        Self {
            extents,
            layers: vec![LayerSpec {
                defocus: d,
                shape: Shape::Full,
                texture: Texture::Noise {
                    mean: 0.5,
                    amplitude: 0.3,
                    cell: 3.0,
                },
            }],
            sigma2,
            seed,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticScene {
    pub mpi: Mpi,
    pub left: KernelGrid,
    pub right: KernelGrid,
    pub sigma2: f64,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct DpSample {
    pub left: Image,
    pub right: Image,
    pub gt_sharp: Image,
    pub gt_defocus: Image,
}

fn texture_image(t: &Texture, extents: (usize, usize), rng: &mut ChaCha8Rng) -> Result<Image> {
    let (h, w) = extents;
    match *t {
        Texture::Flat(v) => Image::filled(h, w, v),
        Texture::Noise {
            mean,
            amplitude,
            cell,
        } => {
            if !(cell >= 1.0) {
                return Err(Error::InvalidArgument(format!("texture cell {cell} must be >= 1")));
            }
            let ch = ((h as f64 / cell).ceil() as usize + 1).max(2);
            let cw = ((w as f64 / cell).ceil() as usize + 1).max(2);
            let coarse = Image::from_fn(ch, cw, |_, _| {
                mean + amplitude * rng.random_range(-1.0..=1.0)
            })?;
            Ok(resample_bilinear(&coarse, extents)?.map(|v| v.max(0.0)))
        }
    }
}

/// Builds the ground-truth MPI of `spec` with the given kernels.
pub fn make_scene(spec: &SceneSpec, left: &KernelGrid, right: &KernelGrid) -> Result<SyntheticScene> {
    if !(spec.sigma2 >= 0.0) {
        return Err(Error::InvalidArgument("sigma2 must be >= 0".into()));
    }
    let (h, w) = spec.extents;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut colors = Vec::with_capacity(spec.layers.len());
    let mut alphas = Vec::with_capacity(spec.layers.len());
    for (i, layer) in spec.layers.iter().enumerate() {
        colors.push(texture_image(&layer.texture, spec.extents, &mut rng)?);
        alphas.push(Image::from_fn(h, w, |y, x| {
            if i == 0 || layer.shape.contains(y as f64, x as f64) {
                1.0
            } else {
                0.0
            }
        })?);
    }
    let defocus = spec.layers.iter().map(|l| l.defocus).collect();
    Ok(SyntheticScene {
        mpi: Mpi::new(colors, alphas, defocus)?,
        left: left.clone(),
        right: right.clone(),
        sigma2: spec.sigma2,
        seed: spec.seed,
    })
}

/// Adds i.i.d. zero-mean Gaussian noise of variance `sigma2`.
pub fn add_noise(img: &Image, sigma2: f64, rng: &mut ChaCha8Rng) -> Result<Image> {
    if sigma2 == 0.0 {
        return Ok(img.clone());
    }
    let normal = Normal::new(0.0, sigma2.sqrt())
        .map_err(|e| Error::InvalidArgument(format!("noise variance {sigma2}: {e}")))?;
    let data = img.data().iter().map(|v| v + normal.sample(rng)).collect();
    Image::new(img.height(), img.width(), data)
}

/// Renders the DP pair and draws independent noise for each view (left first).
pub fn observe(scene: &SyntheticScene) -> Result<DpSample> {
    let (l, r) = mpi::render_pair(&scene.mpi, &scene.left, &scene.right)?;
    let mut rng = ChaCha8Rng::seed_from_u64(scene.seed);
    rng.set_stream(1);
    let left = add_noise(&l, scene.sigma2, &mut rng)?;
    let right = add_noise(&r, scene.sigma2, &mut rng)?;
    Ok(DpSample {
        left,
        right,
        gt_sharp: mpi::composite_sharp(&scene.mpi),
        gt_defocus: mpi::composite_defocus_map(&scene.mpi),
    })
}

/// `key=value` lines describing a scene.
pub fn scene_meta(scene: &SyntheticScene) -> String {
    let (h, w) = scene.mpi.extents();
    let sizes: Vec<String> = scene
        .mpi
        .defocus_sizes()
        .iter()
        .map(|d| format!("{d}"))
        .collect();
    format!(
        "height={h}\nwidth={w}\nlayers={}\ndefocus_sizes={}\nsigma2={}\nseed={}\nreference_defocus={}\n",
        scene.mpi.num_layers(),
        sizes.join(","),
        scene.sigma2,
        scene.seed,
        scene.left.reference_defocus(),
    )
}

/// Blurs with each grid cell's reference kernel applied, unblended, to the
/// pixels of its cell. Matches the piecewise-constant model calibration
/// solves for.
pub fn blur_piecewise(img: &Image, grid: &KernelGrid) -> Result<Image> {
    let (h, w) = img.extents();
    if grid.coverage() != (h, w) {
        return Err(Error::ExtentMismatch {
            expected: grid.coverage(),
            got: (h, w),
        });
    }
    Image::from_fn(h, w, |y, x| {
        let k = grid.cell(GRID_ROWS * y / h, GRID_COLS * x / w);
        let r = k.radius() as isize;
        let mut acc = 0.0;
        for dy in -r..=r {
            for dx in -r..=r {
                acc += k.at_offset(dy, dx) * img.get_clamped(y as isize - dy, x as isize - dx);
            }
        }
        acc
    })
}

/// Captured image of a disc target under white/black levels, blurred by the
/// grid's cell kernels, plus noise.
pub fn calibration_capture(
    target: &CalibTarget,
    grid: &KernelGrid,
    white: f64,
    black: f64,
    sigma2: f64,
    seed: u64,
) -> Result<(Image, Image)> {
    let (h, w) = target.extents;
    let latent = crate::kernels::render_latent_target(
        target,
        &Image::filled(h, w, white)?,
        &Image::filled(h, w, black)?,
    )?;
    let clean = blur_piecewise(&latent, grid)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((add_noise(&clean, sigma2, &mut rng)?, latent))
}
