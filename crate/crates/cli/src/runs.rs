//! `runs/<run-id>/{checkpoints/, losses.csv, eval/, centers/, morphs/}`

use std::path::{Path, PathBuf};

use crate::error::{io_err, CliResult};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn open(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    /// Creates the run directory and its checkpoint folder.
    pub fn create(runs: &Path, id: &str) -> CliResult<Self> {
        let run = Self::open(runs.join(id));
        let ckpt = run.checkpoints();
        std::fs::create_dir_all(&ckpt).map_err(|e| io_err(&ckpt, e))?;
        Ok(run)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    pub fn initial_checkpoint(&self) -> PathBuf {
        self.checkpoints().join("init.ckpt")
    }

    pub fn final_checkpoint(&self) -> PathBuf {
        self.checkpoints().join("final.ckpt")
    }

    pub fn losses(&self) -> PathBuf {
        self.root.join("losses.csv")
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.csv")
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.toml")
    }

    pub fn eval(&self) -> PathBuf {
        self.root.join("eval")
    }

    pub fn centers(&self) -> PathBuf {
        self.root.join("centers")
    }

    pub fn morphs(&self) -> PathBuf {
        self.root.join("morphs")
    }
}

/// `<arch>-seed<seed>-<unix seconds>`
pub fn default_run_id(arch: &str, seed: u64) -> String {
    let secs = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    format!("{}-seed{seed}-{secs}", arch.to_ascii_lowercase())
}
