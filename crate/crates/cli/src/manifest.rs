//! Run manifest: what went in, what came out.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::Result;

use crate::files::{hash_file, write_atomic, Outputs};

pub const MANIFEST_FILE: &str = "manifest.txt";

#[derive(Clone, Debug)]
pub struct RunManifest {
    pub command: &'static str,
    pub seed: u64,
    pub config: String,
    pub inputs: Vec<(String, PathBuf, String)>,
    pub outputs: Vec<(String, PathBuf, String)>,
    pub wall_time: Duration,
}

impl RunManifest {
    pub fn new(command: &'static str, seed: u64, config: String) -> Self {
        Self {
            command,
            seed,
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
            wall_time: Duration::ZERO,
        }
    }

    pub fn input(&mut self, key: &str, path: &Path) -> Result<()> {
        let hash = hash_file(path)?;
        self.inputs
            .push((key.to_string(), path.to_path_buf(), hash));
        Ok(())
    }

    /// `key = value` text with a `[config]` section at the end.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "tool = mpidefocus {}", env!("CARGO_PKG_VERSION"));
        let _ = writeln!(s, "command = {}", self.command);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "wall_time_s = {:.3}", self.wall_time.as_secs_f64());
        for (k, p, h) in &self.inputs {
            let _ = writeln!(s, "input.{k} = {} sha256:{h}", p.display());
        }
        for (k, p, h) in &self.outputs {
            let _ = writeln!(s, "output.{k} = {} sha256:{h}", p.display());
        }
        let _ = writeln!(s, "[config]");
        s.push_str(&self.config);
        s
    }

    /// Records the outputs and atomically writes the manifest to `path`.
    pub fn finish(mut self, path: &Path, outputs: &Outputs, wall_time: Duration) -> Result<PathBuf> {
        self.outputs = outputs.files.clone();
        self.wall_time = wall_time;
        write_atomic(path, self.to_text().as_bytes())?;
        Ok(path.to_path_buf())
    }
}
