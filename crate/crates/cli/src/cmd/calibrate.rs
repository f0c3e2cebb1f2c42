use std::path::PathBuf;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::Parser;

use mpidefocus::kernels::{
    calibrate_kernels, correct_vignetting, estimate_vignetting, render_latent_target, CalibOptions,
    CalibTarget,
};
use mpidefocus::{Image, View};

use super::ensure_dir;
use super::synth::print_outputs;
use crate::files::{read_image, Outputs};
use crate::manifest::{RunManifest, MANIFEST_FILE};

#[derive(Parser, Debug)]
pub struct Args {
    #[arg(long)]
    pub left_capture: PathBuf,
    #[arg(long)]
    pub right_capture: PathBuf,
    /// `key = value` target description (spacing, radius, margin, white,
    /// black); flags override its entries.
    #[arg(long)]
    pub target: Option<PathBuf>,
    #[arg(long)]
    pub spacing: Option<f64>,
    #[arg(long)]
    pub radius: Option<f64>,
    #[arg(long)]
    pub margin: Option<f64>,
    /// Radiometric level of the white discs.
    #[arg(long)]
    pub white: Option<f64>,
    /// Radiometric level of the black background.
    #[arg(long)]
    pub black: Option<f64>,
    /// Flat-field captures of the left view for vignetting estimation.
    #[arg(long, num_args = 1..)]
    pub diffuser_left: Vec<PathBuf>,
    #[arg(long, num_args = 1..)]
    pub diffuser_right: Vec<PathBuf>,
    #[arg(long, default_value_t = 7)]
    pub kernel_extent: usize,
    #[arg(long, default_value_t = CalibOptions::default().reg_weight)]
    pub reg: f64,
    #[arg(long, default_value_t = CalibOptions::default().iterations)]
    pub iterations: usize,
    /// Defocus size the recovered kernels represent, in pixels.
    #[arg(long, default_value_t = CalibOptions::default().reference_defocus)]
    pub reference_defocus: f64,
    #[arg(long)]
    pub out: PathBuf,
    /// Print the plan and exit without writing anything.
    #[arg(long)]
    pub dry_run: bool,
}

#[derive(Clone, Debug, PartialEq)]
struct TargetSpec {
    spacing: f64,
    radius: f64,
    margin: f64,
    white: f64,
    black: f64,
}

impl TargetSpec {
    fn resolve(a: &Args) -> Result<Self> {
        let mut t = Self {
            spacing: f64::NAN,
            radius: f64::NAN,
            margin: 4.0,
            white: 1.0,
            black: 0.0,
        };
        if let Some(path) = &a.target {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading target {}", path.display()))?;
            for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
                let (k, v) = line
                    .split_once('=')
                    .with_context(|| format!("target line {line:?} is not key = value"))?;
                let v: f64 = v.trim().parse().with_context(|| format!("target entry {line:?}"))?;
                match k.trim() {
                    "spacing" => t.spacing = v,
                    "radius" => t.radius = v,
                    "margin" => t.margin = v,
                    "white" => t.white = v,
                    "black" => t.black = v,
                    other => bail!("unknown target key {other:?}"),
                }
            }
        }
        let set = |dst: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *dst = v;
            }
        };
        set(&mut t.spacing, a.spacing);
        set(&mut t.radius, a.radius);
        set(&mut t.margin, a.margin);
        set(&mut t.white, a.white);
        set(&mut t.black, a.black);
        if t.spacing.is_nan() || t.radius.is_nan() {
            bail!("target spacing and radius are required (--target or --spacing/--radius)");
        }
        Ok(t)
    }

    fn text(&self) -> String {
        format!(
            "spacing = {}\nradius = {}\nmargin = {}\nwhite = {}\nblack = {}\n",
            self.spacing, self.radius, self.margin, self.white, self.black
        )
    }
}

fn vignetting(paths: &[PathBuf]) -> Result<Option<Image>> {
    if paths.is_empty() {
        return Ok(None);
    }
    let caps = paths.iter().map(|p| read_image(p)).collect::<Result<Vec<_>>>()?;
    Ok(Some(estimate_vignetting(&caps)?))
}

pub fn run(a: Args) -> Result<()> {
    let start = Instant::now();
    let spec = TargetSpec::resolve(&a)?;
    for p in [&a.left_capture, &a.right_capture]
        .into_iter()
        .chain(&a.diffuser_left)
        .chain(&a.diffuser_right)
    {
        if !p.is_file() {
            bail!("missing input file {}", p.display());
        }
    }
    if a.diffuser_left.is_empty() != a.diffuser_right.is_empty() {
        bail!("give diffuser captures for both views or neither");
    }
    if a.dry_run {
        println!("calibrate {} and {}", a.left_capture.display(), a.right_capture.display());
        println!("target {}", spec.text().trim_end().replace('\n', ", "));
        println!(
            "kernel extent {} reg {} iterations {} reference defocus {}",
            a.kernel_extent, a.reg, a.iterations, a.reference_defocus
        );
        let mut files = vec!["left.kgrid", "right.kgrid"];
        if !a.diffuser_left.is_empty() {
            files.extend(["vignetting_left.img", "vignetting_right.img"]);
        }
        files.push("manifest.txt");
        for f in files {
            println!("would write {}", a.out.join(f).display());
        }
        return Ok(());
    }
    let left = read_image(&a.left_capture)?;
    let right = read_image(&a.right_capture)?;
    left.ensure_same_extents(&right)?;
    let target = CalibTarget::regular_grid(left.extents(), spec.spacing, spec.radius, spec.margin)?;
    let (h, w) = left.extents();
    let latent = render_latent_target(
        &target,
        &Image::filled(h, w, spec.white)?,
        &Image::filled(h, w, spec.black)?,
    )?;
    let vl = vignetting(&a.diffuser_left)?;
    let vr = vignetting(&a.diffuser_right)?;
    let left = match &vl {
        Some(f) => correct_vignetting(&left, f)?,
        None => left,
    };
    let right = match &vr {
        Some(f) => correct_vignetting(&right, f)?,
        None => right,
    };
    ensure_dir(&a.out)?;
    let mut outputs = Outputs::default();
    for (view, cap, name) in [(View::Left, &left, "left"), (View::Right, &right, "right")] {
        let opts = CalibOptions {
            kernel_extent: a.kernel_extent,
            reg_weight: a.reg,
            iterations: a.iterations,
            view,
            reference_defocus: a.reference_defocus,
        };
        let res = calibrate_kernels(cap, &latent, &opts)?;
        if !res.flagged.is_empty() {
            log::warn!("{name}: cells {:?} lacked texture and were filled from neighbors", res.flagged);
        }
        let file = format!("{name}.kgrid");
        outputs.kernel_grid(&format!("{name}_kernels"), &a.out.join(file), &res.grid)?;
    }
    if let (Some(l), Some(r)) = (&vl, &vr) {
        outputs.image("vignetting_left", &a.out.join("vignetting_left.img"), l)?;
        outputs.image("vignetting_right", &a.out.join("vignetting_right.img"), r)?;
    }
    let config = format!(
        "{}kernel_extent = {}\nreg = {:?}\niterations = {}\nreference_defocus = {:?}\n",
        spec.text(),
        a.kernel_extent,
        a.reg,
        a.iterations,
        a.reference_defocus
    );
    let mut manifest = RunManifest::new("calibrate", 0, config);
    manifest.input("left_capture", &a.left_capture)?;
    manifest.input("right_capture", &a.right_capture)?;
    for (i, p) in a.diffuser_left.iter().enumerate() {
        manifest.input(&format!("diffuser_left.{i}"), p)?;
    }
    for (i, p) in a.diffuser_right.iter().enumerate() {
        manifest.input(&format!("diffuser_right.{i}"), p)?;
    }
    let path = manifest.finish(&a.out.join(MANIFEST_FILE), &outputs, start.elapsed())?;
    print_outputs(&outputs, Some(&path));
    Ok(())
}
