use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Result};
use clap::{Parser, ValueEnum};

use mpidefocus::kernels::{CalibTarget, KernelGrid};
use mpidefocus::synth::{
    calibration_capture, make_disc_kernels, make_scene, observe, perturb_grid, scene_meta, SceneSpec,
};
use mpidefocus::View;

use super::ensure_dir;
use crate::files::Outputs;
use crate::manifest::{RunManifest, MANIFEST_FILE};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Kind {
    /// Textured background, rectangle and disc at three depths.
    ThreeLayer,
    /// One opaque textured plane at the back defocus size.
    SinglePlane,
    /// Disc calibration target seen through both views' kernels.
    Calibration,
}

#[derive(Parser, Debug)]
pub struct Args {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "three-layer")]
    pub kind: Kind,
    #[arg(long, default_value_t = 64)]
    pub height: usize,
    #[arg(long, default_value_t = 64)]
    pub width: usize,
    /// Defocus size of the farthest layer, in pixels.
    #[arg(long, default_value_t = 10.0)]
    pub back: f64,
    /// Defocus size of the nearest layer, in pixels.
    #[arg(long, default_value_t = 2.0)]
    pub front: f64,
    /// Noise variance added to each view.
    #[arg(long, default_value_t = 5e-5)]
    pub sigma2: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Half-disc radius of the reference kernels; defaults to half of
    /// `--back` for scenes and 3 for calibration targets.
    #[arg(long)]
    pub kernel_radius: Option<f64>,
    /// Relative random perturbation of every kernel weight.
    #[arg(long, default_value_t = 0.0)]
    pub perturb: f64,
    /// Disc spacing of the calibration target.
    #[arg(long, default_value_t = 10.0)]
    pub spacing: f64,
    /// Disc radius of the calibration target.
    #[arg(long, default_value_t = 3.0)]
    pub radius: f64,
    /// Extra clearance between discs and the border.
    #[arg(long, default_value_t = 4.0)]
    pub margin: f64,
    #[arg(long, default_value_t = 1.0)]
    pub white: f64,
    #[arg(long, default_value_t = 0.1)]
    pub black: f64,
}

fn grids(a: &Args, radius: f64) -> Result<(KernelGrid, KernelGrid)> {
    let coverage = (a.height, a.width);
    let mut l = make_disc_kernels(radius, View::Left, coverage)?;
    let mut r = make_disc_kernels(radius, View::Right, coverage)?;
    if a.perturb > 0.0 {
        l = perturb_grid(&l, a.perturb, a.seed)?;
        r = perturb_grid(&r, a.perturb, a.seed.wrapping_add(1))?;
    }
    Ok((l, r))
}

fn config_text(a: &Args) -> String {
    format!(
        "kind = {:?}\nheight = {}\nwidth = {}\nback = {}\nfront = {}\nsigma2 = {}\nkernel_radius = {:?}\nperturb = {}\nspacing = {}\nradius = {}\nmargin = {}\nwhite = {}\nblack = {}\n",
        a.kind, a.height, a.width, a.back, a.front, a.sigma2, a.kernel_radius, a.perturb, a.spacing,
        a.radius, a.margin, a.white, a.black
    )
}

/// Target description read back by `calibrate --target`.
pub fn target_text(a: &Args) -> String {
    format!(
        "spacing = {}\nradius = {}\nmargin = {}\nwhite = {}\nblack = {}\n",
        a.spacing, a.radius, a.margin, a.white, a.black
    )
}

pub fn run(a: Args) -> Result<()> {
    let start = Instant::now();
    if a.height == 0 || a.width == 0 {
        bail!("extents must be positive");
    }
    ensure_dir(&a.out)?;
    let out = |name: &str| a.out.join(name);
    let mut outputs = Outputs::default();
    match a.kind {
        Kind::Calibration => {
            let (l, r) = grids(&a, a.kernel_radius.unwrap_or(3.0))?;
            let target = CalibTarget::regular_grid((a.height, a.width), a.spacing, a.radius, a.margin)?;
            let (cl, latent) = calibration_capture(&target, &l, a.white, a.black, a.sigma2, a.seed)?;
            let (cr, _) = calibration_capture(&target, &r, a.white, a.black, a.sigma2, a.seed.wrapping_add(1))?;
            outputs.image("left_capture", &out("left_capture.img"), &cl)?;
            outputs.image("right_capture", &out("right_capture.img"), &cr)?;
            outputs.image("latent", &out("latent.img"), &latent)?;
            outputs.kernel_grid("left_kernels", &out("left.kgrid"), &l)?;
            outputs.kernel_grid("right_kernels", &out("right.kgrid"), &r)?;
            outputs.text("target", &out("target.txt"), &target_text(&a))?;
            log::info!("calibration capture with {} discs", target.centers.len());
        }
        Kind::ThreeLayer | Kind::SinglePlane => {
            let (l, r) = grids(&a, a.kernel_radius.unwrap_or(a.back / 2.0))?;
            let extents = (a.height, a.width);
            let spec = if a.kind == Kind::ThreeLayer {
                SceneSpec::three_layer(extents, a.back, a.front, a.sigma2, a.seed)
            } else {
                SceneSpec::single_plane(extents, a.back, a.sigma2, a.seed)
            };
            let scene = make_scene(&spec, &l, &r)?;
            let sample = observe(&scene)?;
            outputs.image("left", &out("left.img"), &sample.left)?;
            outputs.image("right", &out("right.img"), &sample.right)?;
            outputs.image("gt_sharp", &out("gt_sharp.img"), &sample.gt_sharp)?;
            outputs.image("gt_defocus", &out("gt_defocus.img"), &sample.gt_defocus)?;
            outputs.text("meta", &out("meta.txt"), &scene_meta(&scene))?;
            outputs.kernel_grid("left_kernels", &out("left.kgrid"), &l)?;
            outputs.kernel_grid("right_kernels", &out("right.kgrid"), &r)?;
            log::info!("scene with {} layers", scene.mpi.num_layers());
        }
    }
    let manifest = RunManifest::new("synth", a.seed, config_text(&a));
    let path = manifest.finish(&a.out.join(MANIFEST_FILE), &outputs, start.elapsed())?;
    print_outputs(&outputs, Some(&path));
    Ok(())
}

/// Lists written files on standard output.
pub fn print_outputs(outputs: &Outputs, manifest: Option<&Path>) {
    for (k, p, _) in &outputs.files {
        println!("{k}\t{}", p.display());
    }
    if let Some(m) = manifest {
        println!("manifest\t{}", m.display());
    }
}
