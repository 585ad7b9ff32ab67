//! Provenance, output files and the plot manifest shared by all commands.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use esr_core::io::to_report_json;

use crate::config::PipelineConfig;

#[derive(Debug, Clone, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

/// Where a report came from: enough to rerun it and get the same bytes.
#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub config_sha256: String,
    pub inputs: Vec<InputDigest>,
    pub seed: Option<u64>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

impl Provenance {
    pub fn new(command: &'static str, config: &PipelineConfig, inputs: &[&Path], seed: Option<u64>) -> Result<Self> {
        let config_json = to_report_json(config)?;
        let inputs = inputs
            .iter()
            .map(|p| {
                let bytes = fs::read(p).with_context(|| format!("reading {}", p.display()))?;
                Ok(InputDigest { path: p.display().to_string(), sha256: sha256_hex(&bytes) })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            tool: "esr",
            version: env!("CARGO_PKG_VERSION"),
            command,
            config_sha256: sha256_hex(config_json.as_bytes()),
            inputs,
            seed,
        })
    }
}

/// One plottable data file.
#[derive(Debug, Clone, Serialize)]
pub struct PlotEntry {
    pub file: String,
    pub title: String,
    pub x: String,
    pub y: Vec<String>,
    pub x_scale: &'static str,
    pub y_scale: &'static str,
}

impl PlotEntry {
    pub fn linear(file: &str, title: impl Into<String>, x: &str, y: &[&str]) -> Self {
        Self {
            file: file.into(),
            title: title.into(),
            x: x.into(),
            y: y.iter().map(|s| s.to_string()).collect(),
            x_scale: "linear",
            y_scale: "linear",
        }
    }

    pub fn log_x(mut self) -> Self {
        self.x_scale = "log";
        self
    }
}

#[derive(Debug, Serialize)]
struct PlotManifest<'a> {
    command: &'static str,
    plots: &'a [PlotEntry],
}

/// Output directory that refuses to write the same file twice in one run.
pub struct OutputDir {
    dir: PathBuf,
    written: Vec<String>,
    plots: Vec<PlotEntry>,
}

impl OutputDir {
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))?;
        Ok(Self { dir: dir.to_path_buf(), written: Vec::new(), plots: Vec::new() })
    }

    fn claim(&mut self, name: &str) -> Result<PathBuf> {
        if self.written.iter().any(|w| w == name) {
            bail!("two outputs would be written to {name}; give the inputs distinct file names");
        }
        self.written.push(name.to_string());
        Ok(self.dir.join(name))
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> Result<()> {
        let path = self.claim(name)?;
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }

    pub fn write_json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<()> {
        let text = to_report_json(value)?;
        self.write_text(name, &text)
    }

    /// Write through a callback that fills an in-memory buffer.
    pub fn write_with(&mut self, name: &str, f: impl FnOnce(&mut Vec<u8>) -> esr_core::Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        f(&mut buf).with_context(|| format!("formatting {name}"))?;
        let path = self.claim(name)?;
        fs::write(&path, buf).with_context(|| format!("writing {}", path.display()))
    }

    pub fn add_plot(&mut self, entry: PlotEntry) {
        self.plots.push(entry);
    }

    /// Write `plot_manifest.json` listing the plottable files.
    pub fn finish(mut self, command: &'static str) -> Result<Vec<String>> {
        let plots = std::mem::take(&mut self.plots);
        self.write_json("plot_manifest.json", &PlotManifest { command, plots: &plots })?;
        Ok(self.written)
    }
}

/// File stem used to name per-input outputs.
pub fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| "input".to_string(), |s| s.to_string_lossy().into_owned())
}
