pub mod calibrate;
pub mod deblur;
pub mod eval;
pub mod sweep;
pub mod synth;

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

/// Runs `f` on a pool of `jobs` threads, capped by the thread limit.
pub fn with_jobs<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let cap = crate::thread_cap()?.unwrap_or(usize::MAX);
    let n = jobs.clamp(1, cap);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .context("building the job pool")?;
    Ok(pool.install(f))
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// Manifest path next to a single output file: `out.csv.manifest.txt`.
pub fn sidecar(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_os_string();
    name.push(".manifest.txt");
    PathBuf::from(name)
}
