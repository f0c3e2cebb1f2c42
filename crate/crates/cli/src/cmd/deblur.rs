use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::Parser;

use mpidefocus::kernels::correct_vignetting;
use mpidefocus::losses::LossBreakdown;
use mpidefocus::optim::{load_state, OptimConfig, Optimizer};

use super::ensure_dir;
use super::synth::print_outputs;
use crate::files::{read_grid, read_image, Outputs};
use crate::manifest::{RunManifest, MANIFEST_FILE};

pub const STATE_FILE: &str = "state.opt";
pub const CHECKPOINT_FILE: &str = "checkpoint.mpis";

/// Overrides for the optimizer configuration; unset flags keep the value
/// from `--config` or the default.
#[derive(Parser, Debug, Default)]
pub struct OptimArgs {
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub lr_start: Option<f64>,
    #[arg(long)]
    pub lr_end: Option<f64>,
    #[arg(long)]
    pub lambda1: Option<f64>,
    #[arg(long)]
    pub lambda2: Option<f64>,
    #[arg(long)]
    pub lambda3: Option<f64>,
    #[arg(long)]
    pub lambda4: Option<f64>,
    #[arg(long)]
    pub lambda5: Option<f64>,
    #[arg(long)]
    pub sigma2: Option<f64>,
    #[arg(long)]
    pub phi2: Option<f64>,
    #[arg(long)]
    pub front_scale: Option<f64>,
    #[arg(long)]
    pub back_scale: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Differentiate through the edge masks of the alpha term.
    #[arg(long)]
    pub edge_mask_grad: bool,
}

impl OptimArgs {
    pub fn apply(&self, c: &mut OptimConfig) -> Result<()> {
        let mut set = |k: &str, v: Option<String>| -> Result<()> {
            if let Some(v) = v {
                c.set(k, &v)?;
            }
            Ok(())
        };
        let s = |v: Option<f64>| v.map(|v| format!("{v:?}"));
        set("iterations", self.iterations.map(|v| v.to_string()))?;
        set("layers", self.layers.map(|v| v.to_string()))?;
        set("lr_start", s(self.lr_start))?;
        set("lr_end", s(self.lr_end))?;
        set("lambda1", s(self.lambda1))?;
        set("lambda2", s(self.lambda2))?;
        set("lambda3", s(self.lambda3))?;
        set("lambda4", s(self.lambda4))?;
        set("lambda5", s(self.lambda5))?;
        set("sigma2", s(self.sigma2))?;
        set("phi2", s(self.phi2))?;
        set("front_scale", s(self.front_scale))?;
        set("back_scale", s(self.back_scale))?;
        set("seed", self.seed.map(|v| v.to_string()))?;
        set("checkpoint_every", self.checkpoint_every.map(|v| v.to_string()))?;
        if self.edge_mask_grad {
            set("edge_mask_grad", Some("true".into()))?;
        }
        Ok(())
    }
}

#[derive(Parser, Debug)]
pub struct Args {
    #[arg(long)]
    pub left: PathBuf,
    #[arg(long)]
    pub right: PathBuf,
    #[arg(long)]
    pub left_kernels: PathBuf,
    #[arg(long)]
    pub right_kernels: PathBuf,
    /// `key = value` optimizer configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, requires = "vignetting_right")]
    pub vignetting_left: Option<PathBuf>,
    #[arg(long, requires = "vignetting_left")]
    pub vignetting_right: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from the saved state in the output directory, if any.
    #[arg(long)]
    pub resume: bool,
    /// Save state and stop after this many iterations in this invocation.
    #[arg(long)]
    pub stop_after: Option<usize>,
    #[command(flatten)]
    pub optim: OptimArgs,
}

pub fn resolve_config(path: Option<&Path>, overrides: &OptimArgs) -> Result<OptimConfig> {
    let mut c = OptimConfig::default();
    if let Some(p) = path {
        let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
        c.apply_text(&text)
            .with_context(|| format!("in config {}", p.display()))?;
    }
    overrides.apply(&mut c)?;
    c.validate()?;
    Ok(c)
}

fn loss_csv(history: &[LossBreakdown]) -> String {
    let mut s = String::from(LossBreakdown::CSV_HEADER);
    s.push('\n');
    for (i, l) in history.iter().enumerate() {
        let _ = writeln!(s, "{}", l.csv_row(i + 1));
    }
    s
}

fn checkpoint(opt: &Optimizer, out: &Path, outputs: &mut Outputs) -> Result<()> {
    outputs.state("state", &out.join(STATE_FILE), opt.state())?;
    outputs.mpi("checkpoint", &out.join(CHECKPOINT_FILE), &opt.current_mpi()?)?;
    Ok(())
}

pub fn run(a: Args) -> Result<()> {
    let start = Instant::now();
    let config = resolve_config(a.config.as_deref(), &a.optim)?;
    let mut left = read_image(&a.left)?;
    let mut right = read_image(&a.right)?;
    let lg = read_grid(&a.left_kernels)?;
    let rg = read_grid(&a.right_kernels)?;
    if left.extents() != right.extents() {
        bail!(
            "left image is {:?} but right image is {:?}",
            left.extents(),
            right.extents()
        );
    }
    if let (Some(vl), Some(vr)) = (&a.vignetting_left, &a.vignetting_right) {
        left = correct_vignetting(&left, &read_image(vl)?)?;
        right = correct_vignetting(&right, &read_image(vr)?)?;
    }
    ensure_dir(&a.out)?;
    let state_path = a.out.join(STATE_FILE);
    let mut opt = if a.resume && state_path.is_file() {
        let state = load_state(&state_path)
            .with_context(|| format!("loading {}", state_path.display()))?;
        log::info!("resuming at iteration {}", state.iteration);
        Optimizer::resume(&left, &right, &lg, &rg, &config, state)?
    } else {
        if a.resume {
            log::info!("no saved state in {}, starting fresh", a.out.display());
        }
        Optimizer::new(&left, &right, &lg, &rg, &config)?
    };
    let mut outputs = Outputs::default();
    let mut steps = 0;
    while !opt.is_done() {
        if a.stop_after == Some(steps) {
            checkpoint(&opt, &a.out, &mut outputs)?;
            log::info!("stopped at iteration {}; rerun with --resume to continue", opt.iteration());
            print_outputs(&outputs, None);
            return Ok(());
        }
        let loss = opt.step()?;
        steps += 1;
        let it = opt.iteration();
        if it % 100 == 0 || it == config.iterations {
            log::info!("iteration {it}/{} loss {:.6e}", config.iterations, loss.total);
        }
        if config.checkpoint_every > 0 && it % config.checkpoint_every == 0 && !opt.is_done() {
            checkpoint(&opt, &a.out, &mut outputs)?;
        }
    }
    let fit = opt.finish()?;
    let out = |name: &str| a.out.join(name);
    outputs.image("all_in_focus", &out("all_in_focus.img"), &fit.all_in_focus)?;
    outputs.image("defocus", &out("defocus.img"), &fit.defocus_map)?;
    outputs.mpi("mpi", &out("mpi.mpis"), &fit.mpi)?;
    outputs.state("state", &state_path, opt.state())?;
    outputs.files.retain(|(k, _, _)| k != "checkpoint");
    let stale = out(CHECKPOINT_FILE);
    if stale.is_file() {
        std::fs::remove_file(&stale)?;
    }
    outputs.text("loss", &out("loss.csv"), &loss_csv(&fit.history))?;
    log::info!("final loss {:.9e}", fit.final_loss.total);

    let mut manifest = RunManifest::new("deblur", config.seed, config.to_text());
    manifest.input("left", &a.left)?;
    manifest.input("right", &a.right)?;
    manifest.input("left_kernels", &a.left_kernels)?;
    manifest.input("right_kernels", &a.right_kernels)?;
    if let (Some(vl), Some(vr)) = (&a.vignetting_left, &a.vignetting_right) {
        manifest.input("vignetting_left", vl)?;
        manifest.input("vignetting_right", vr)?;
    }
    let path = manifest.finish(&a.out.join(MANIFEST_FILE), &outputs, start.elapsed())?;
    print_outputs(&outputs, Some(&path));
    println!("final_loss\t{:.16e}", fit.final_loss.total);
    Ok(())
}
