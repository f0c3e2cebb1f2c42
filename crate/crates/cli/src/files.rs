//! Atomic, validated output files and input hashing.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use sha2::{Digest, Sha256};

use mpidefocus::kernels::{load_kernel_grid, write_kernel_grid, KernelGrid};
use mpidefocus::mpi::{load_mpi, write_mpi};
use mpidefocus::numerics::io::{load_image, write_image};
use mpidefocus::optim::{load_state, write_state, OptimState};
use mpidefocus::{Image, Mpi};

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn hash_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .with_context(|| format!("{} has no file name", path.display()))?;
    let mut tmp_name = name.to_os_string();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming to {}", path.display()))?;
    Ok(())
}

/// Paths and hashes of the files a command produced, in write order.
#[derive(Clone, Debug, Default)]
pub struct Outputs {
    pub files: Vec<(String, PathBuf, String)>,
}

impl Outputs {
    fn record(&mut self, key: &str, path: &Path, bytes: &[u8]) {
        self.files.retain(|(k, _, _)| k != key);
        self.files
            .push((key.to_string(), path.to_path_buf(), sha256_hex(bytes)));
    }

    /// Atomically writes `bytes` and checks that reading the file back
    /// through `decode` reproduces `expected`.
    fn put<T: PartialEq>(
        &mut self,
        key: &str,
        path: &Path,
        bytes: Vec<u8>,
        expected: &T,
        decode: impl Fn(&Path) -> mpidefocus::Result<T>,
    ) -> Result<()> {
        write_atomic(path, &bytes)?;
        let back = decode(path).with_context(|| format!("re-reading {}", path.display()))?;
        if &back != expected {
            bail!("{} did not round-trip", path.display());
        }
        self.record(key, path, &bytes);
        Ok(())
    }

    pub fn image(&mut self, key: &str, path: &Path, img: &Image) -> Result<()> {
        let mut buf = Vec::new();
        write_image(&mut buf, img)?;
        self.put(key, path, buf, img, |p| load_image(p))
    }

    pub fn kernel_grid(&mut self, key: &str, path: &Path, grid: &KernelGrid) -> Result<()> {
        let mut buf = Vec::new();
        write_kernel_grid(&mut buf, grid)?;
        self.put(key, path, buf, grid, |p| load_kernel_grid(p))
    }

    pub fn mpi(&mut self, key: &str, path: &Path, mpi: &Mpi) -> Result<()> {
        let mut buf = Vec::new();
        write_mpi(&mut buf, mpi)?;
        self.put(key, path, buf, mpi, |p| load_mpi(p))
    }

    pub fn state(&mut self, key: &str, path: &Path, state: &OptimState) -> Result<()> {
        let mut buf = Vec::new();
        write_state(&mut buf, state)?;
        self.put(key, path, buf, state, |p| load_state(p))
    }

    pub fn text(&mut self, key: &str, path: &Path, text: &str) -> Result<()> {
        let expected = text.to_string();
        self.put(key, path, text.as_bytes().to_vec(), &expected, |p| {
            Ok(fs::read_to_string(p)?)
        })
    }
}

pub fn read_image(path: &Path) -> Result<Image> {
    load_image(path).with_context(|| format!("loading image {}", path.display()))
}

pub fn read_grid(path: &Path) -> Result<KernelGrid> {
    load_kernel_grid(path).with_context(|| format!("loading kernel grid {}", path.display()))
}
