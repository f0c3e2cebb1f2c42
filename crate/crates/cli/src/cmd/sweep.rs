use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::Parser;
use rayon::prelude::*;

use mpidefocus::metrics::fmt_sig9;
use mpidefocus::noisebias::{hypothesis_grid, sweep, KernelFamily, PriorSpec, SPECTRAL_EXTENT};

use super::{sidecar, with_jobs};
use crate::files::{read_grid, Outputs};
use crate::manifest::RunManifest;

pub const CSV_HEADER: &str = "d_true,sigma2,argmin_uncorrected,argmin_corrected";

#[derive(Parser, Debug)]
pub struct Args {
    /// True defocus sizes, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [16.0, 32.0, 48.0])]
    pub d_true: Vec<f64>,
    /// Noise variances, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 5e-5])]
    pub sigma2: Vec<f64>,
    /// Prior power `|Phi|^2`.
    #[arg(long, default_value_t = 100.0)]
    pub phi2: f64,
    #[arg(long, default_value_t = 1.0)]
    pub lo: f64,
    #[arg(long, default_value_t = 60.0)]
    pub hi: f64,
    #[arg(long, default_value_t = 0.5)]
    pub step: f64,
    /// Side of the spectral grid the energies are evaluated on.
    #[arg(long, default_value_t = SPECTRAL_EXTENT)]
    pub extent: usize,
    /// Calibrated grids to scale instead of ideal half-disc kernels.
    #[arg(long, requires = "right_kernels")]
    pub left_kernels: Option<PathBuf>,
    #[arg(long, requires = "left_kernels")]
    pub right_kernels: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(a: Args) -> Result<()> {
    let start = Instant::now();
    let (d_true, sigma2) = (&a.d_true, &a.sigma2);
    let family = match (&a.left_kernels, &a.right_kernels) {
        (Some(l), Some(r)) => KernelFamily::from_grids(&read_grid(l)?, &read_grid(r)?)?,
        _ => KernelFamily::HalfDisc,
    };
    let hyps = hypothesis_grid(a.lo, a.hi, a.step)?;
    let cases: Vec<(f64, f64)> = d_true
        .iter()
        .flat_map(|&d| sigma2.iter().map(move |&s| (d, s)))
        .collect();
    let rows = with_jobs(a.jobs, || {
        cases
            .par_iter()
            .map(|&(d, s2)| -> Result<String> {
                let prior = PriorSpec::new(s2, a.phi2)?;
                let sw = sweep(d, &hyps, &family, prior, a.extent)
                    .with_context(|| format!("sweep at d_true {d}, sigma2 {s2}"))?;
                log::info!(
                    "d_true {d} sigma2 {s2}: uncorrected {} corrected {}",
                    sw.argmin_uncorrected,
                    sw.argmin_corrected
                );
                Ok(format!(
                    "{},{},{},{}",
                    fmt_sig9(d),
                    fmt_sig9(s2),
                    fmt_sig9(sw.argmin_uncorrected),
                    fmt_sig9(sw.argmin_corrected)
                ))
            })
            .collect::<Result<Vec<_>>>()
    })??;
    let mut csv = format!("{CSV_HEADER}\n");
    for r in &rows {
        let _ = writeln!(csv, "{r}");
    }
    let mut outputs = Outputs::default();
    outputs.text("csv", &a.out, &csv)?;
    let config = format!(
        "d_true = {d_true:?}\nsigma2 = {sigma2:?}\nphi2 = {:?}\nlo = {:?}\nhi = {:?}\nstep = {:?}\nextent = {}\n",
        a.phi2, a.lo, a.hi, a.step, a.extent
    );
    let mut manifest = RunManifest::new("sweep-bias", 0, config);
    if let (Some(l), Some(r)) = (&a.left_kernels, &a.right_kernels) {
        manifest.input("left_kernels", l)?;
        manifest.input("right_kernels", r)?;
    }
    manifest.finish(&sidecar(&a.out), &outputs, start.elapsed())?;
    print!("{csv}");
    Ok(())
}
