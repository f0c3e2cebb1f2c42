use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Result};
use clap::Parser;
use rayon::prelude::*;

use mpidefocus::metrics::{align_affine_then_crop, evaluate, warp, EvalReport, DEFAULT_BORDER};
use mpidefocus::Image;

use super::{sidecar, with_jobs};
use crate::files::{read_image, Outputs};
use crate::manifest::RunManifest;

/// Scores prediction directories (`all_in_focus.img`, `defocus.img`)
/// against ground-truth directories (`gt_sharp.img`, `gt_defocus.img` and an
/// optional `conf.img` confidence mask), pairwise in the order given.
#[derive(Parser, Debug)]
pub struct Args {
    #[arg(long, required = true)]
    pub pred: Vec<PathBuf>,
    #[arg(long, required = true)]
    pub gt: Vec<PathBuf>,
    /// Confidence mask overriding `conf.img`; only valid for one scene.
    #[arg(long)]
    pub conf: Option<PathBuf>,
    /// Intensity peak used by PSNR and SSIM.
    #[arg(long, default_value_t = 1.0)]
    pub peak: f64,
    /// Affine-align each prediction to its ground truth and crop a border.
    #[arg(long)]
    pub align: bool,
    #[arg(long, default_value_t = DEFAULT_BORDER)]
    pub border: usize,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long)]
    pub out: PathBuf,
}

struct Scene {
    name: String,
    aif: Image,
    defocus: Image,
    gt_aif: Image,
    gt_defocus: Image,
    conf: Option<Image>,
}

fn load_scene(pred: &Path, gt: &Path, conf: Option<&Path>) -> Result<Scene> {
    let conf_path = conf.map(Path::to_path_buf).unwrap_or_else(|| gt.join("conf.img"));
    let conf = if conf_path.is_file() {
        Some(read_image(&conf_path)?)
    } else if conf.is_some() {
        bail!("missing confidence file {}", conf_path.display());
    } else {
        None
    };
    Ok(Scene {
        name: pred
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| pred.display().to_string()),
        aif: read_image(&pred.join("all_in_focus.img"))?,
        defocus: read_image(&pred.join("defocus.img"))?,
        gt_aif: read_image(&gt.join("gt_sharp.img"))?,
        gt_defocus: read_image(&gt.join("gt_defocus.img"))?,
        conf,
    })
}

fn score(s: &Scene, a: &Args) -> Result<EvalReport> {
    if !a.align {
        return Ok(evaluate(&s.aif, &s.gt_aif, &s.defocus, &s.gt_defocus, s.conf.as_ref(), a.peak)?);
    }
    let (aif, gt_aif, p) = align_affine_then_crop(&s.aif, &s.gt_aif, a.border)?;
    let b = a.border;
    let (h, w) = gt_aif.extents();
    let crop = |img: &Image| img.crop(b, b, h, w);
    let defocus = crop(&warp(&s.defocus, &p))?;
    let gt_defocus = crop(&s.gt_defocus)?;
    let conf = s.conf.as_ref().map(crop).transpose()?;
    Ok(evaluate(&aif, &gt_aif, &defocus, &gt_defocus, conf.as_ref(), a.peak)?)
}

fn table(names: &[String], reports: &[EvalReport], mean: &EvalReport) -> String {
    let width = names.iter().map(String::len).max().unwrap_or(0).max(5);
    let mut t = format!(
        "{:<width$}  {:>9}  {:>7}  {:>8}  {:>8}  {:>8}  {:>8}\n",
        "scene", "PSNR", "SSIM", "MAE", "AIWE(1)", "AIWE(2)", "1-|rho|"
    );
    let rows = names.iter().map(String::as_str).zip(reports).chain([("mean", mean)]);
    for (n, r) in rows {
        let _ = writeln!(
            t,
            "{n:<width$}  {:>9.3}  {:>7.4}  {:>8.5}  {:>8.4}  {:>8.4}  {:>8.4}",
            r.psnr, r.ssim, r.mae, r.aiwe1, r.aiwe2, r.spearman_term
        );
    }
    t
}

pub fn run(a: Args) -> Result<()> {
    let start = Instant::now();
    if a.pred.len() != a.gt.len() {
        bail!("{} prediction and {} ground-truth directories", a.pred.len(), a.gt.len());
    }
    if a.conf.is_some() && a.pred.len() != 1 {
        bail!("--conf applies to a single scene");
    }
    let scenes = a
        .pred
        .iter()
        .zip(&a.gt)
        .map(|(p, g)| load_scene(p, g, a.conf.as_deref()))
        .collect::<Result<Vec<_>>>()?;
    let reports = with_jobs(a.jobs, || {
        scenes.par_iter().map(|s| score(s, &a)).collect::<Result<Vec<_>>>()
    })??;
    let mean = EvalReport::mean(&reports).expect("at least one scene");
    let names: Vec<String> = scenes.iter().map(|s| s.name.clone()).collect();
    let mut csv = format!("scene,{}\n", EvalReport::CSV_HEADER);
    for (n, r) in names.iter().zip(&reports) {
        let _ = writeln!(csv, "{n},{}", r.csv_row());
    }
    let _ = writeln!(csv, "mean,{}", mean.csv_row());
    let mut outputs = Outputs::default();
    outputs.text("csv", &a.out, &csv)?;
    let config = format!(
        "peak = {:?}\nalign = {}\nborder = {}\n",
        a.peak, a.align, a.border
    );
    let mut manifest = RunManifest::new("eval", 0, config);
    for (i, (p, g)) in a.pred.iter().zip(&a.gt).enumerate() {
        manifest.input(&format!("pred.{i}.all_in_focus"), &p.join("all_in_focus.img"))?;
        manifest.input(&format!("pred.{i}.defocus"), &p.join("defocus.img"))?;
        manifest.input(&format!("gt.{i}.sharp"), &g.join("gt_sharp.img"))?;
        manifest.input(&format!("gt.{i}.defocus"), &g.join("gt_defocus.img"))?;
    }
    manifest.finish(&sidecar(&a.out), &outputs, start.elapsed())?;
    eprint!("{}", table(&names, &reports, &mean));
    print!("{csv}");
    Ok(())
}
