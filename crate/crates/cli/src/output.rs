//! Single writer for everything a run produces, plus the run manifest.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::config::StudyConfig;
use crate::error::CliError;

pub struct Output {
    dir: PathBuf,
    files: Vec<String>,
    started: Instant,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    cli_version: &'a str,
    seed: u64,
    threads: usize,
    wall_time_s: f64,
    files: &'a [String],
    config: &'a StudyConfig,
}

impl Output {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(CliError::io(dir))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
            started: Instant::now(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write_bytes(&mut self, rel: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.dir.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(CliError::io(parent))?;
        }
        std::fs::write(&path, bytes).map_err(CliError::io(&path))?;
        self.files.push(rel.to_string());
        Ok(())
    }

    /// Buffers whatever `f` writes and stores it under `rel`.
    pub fn write_with<F>(&mut self, rel: &str, f: F) -> Result<(), CliError>
    where
        F: FnOnce(&mut Vec<u8>) -> Result<(), CliError>,
    {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write_bytes(rel, &buf)
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value)
            .map_err(|e| CliError::Config(format!("cannot serialize {rel}: {e}")))?;
        text.push('\n');
        self.write_bytes(rel, text.as_bytes())
    }

    pub fn write_rows<T: Serialize>(&mut self, rel: &str, rows: &[T]) -> Result<(), CliError> {
        self.write_with(rel, |buf| {
            let mut w = csv::Writer::from_writer(buf);
            for r in rows {
                w.serialize(r).map_err(spin_ratchet::Error::from)?;
            }
            w.flush()
                .map_err(|e| spin_ratchet::Error::Csv(e.to_string()))?;
            Ok(())
        })
    }

    /// Writes `manifest.json`. Wall time makes this the one file that differs
    /// between otherwise identical runs.
    pub fn finish(mut self, command: &str, config: &StudyConfig) -> Result<PathBuf, CliError> {
        let files = std::mem::take(&mut self.files);
        let manifest = Manifest {
            command,
            cli_version: env!("CARGO_PKG_VERSION"),
            seed: config.seed,
            threads: rayon::current_num_threads(),
            wall_time_s: self.started.elapsed().as_secs_f64(),
            files: &files,
            config,
        };
        self.write_json("manifest.json", &manifest)?;
        Ok(self.dir)
    }
}
