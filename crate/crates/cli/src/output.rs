//! Buffered, all-or-nothing output: files are staged in memory and only
//! written (each via a temp file and rename) once the command has succeeded.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use protoscope::fingerprint;
use serde::Serialize;

use crate::config::RunConfig;

#[derive(Debug, Clone, Serialize)]
pub struct InputRecord {
    pub role: String,
    pub source: String,
    pub fingerprint: String,
}

#[derive(Debug, Clone, Serialize)]
struct OutputRecord {
    path: String,
    fingerprint: String,
}

/// Everything needed to rerun a command: `protoscope <command...> --config <manifest>`.
#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a [String],
    config: &'a RunConfig,
    inputs: &'a [InputRecord],
    outputs: Vec<OutputRecord>,
}

#[derive(Debug, Default)]
pub struct Outputs {
    files: Vec<(String, Vec<u8>)>,
    inputs: Vec<InputRecord>,
}

impl Outputs {
    pub fn input(&mut self, role: &str, source: &str, fingerprint: String) {
        self.inputs.push(InputRecord { role: role.into(), source: source.into(), fingerprint });
    }

    /// Stages `name` (relative to the output directory) with bytes produced by `fill`.
    pub fn file<F>(&mut self, name: impl Into<String>, fill: F) -> anyhow::Result<()>
    where
        F: FnOnce(&mut Vec<u8>) -> protoscope::Result<()>,
    {
        let name = name.into();
        let mut buf = Vec::new();
        fill(&mut buf).with_context(|| format!("rendering {name}"))?;
        self.files.push((name, buf));
        Ok(())
    }

    #[cfg(test)]
    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.files.iter().map(|(n, _)| n.as_str())
    }

    /// Writes every staged file and a `<manifest_name>.manifest.json`.
    /// Returns the written paths.
    pub fn commit(mut self, cfg: &RunConfig, command: &[String], manifest_name: &str) -> anyhow::Result<Vec<PathBuf>> {
        let outputs = self.files.iter().map(|(n, b)| OutputRecord { path: n.clone(), fingerprint: fingerprint(b) }).collect();
        let manifest = Manifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command,
            config: cfg,
            inputs: &self.inputs,
            outputs,
        };
        let mut json = serde_json::to_vec_pretty(&manifest)?;
        json.push(b'\n');
        self.files.push((format!("{manifest_name}.manifest.json"), json));

        std::fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
        self.files
            .iter()
            .map(|(name, bytes)| {
                let path = cfg.out.join(name);
                write_atomic(&path, bytes)?;
                Ok(path)
            })
            .collect()
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).with_context(|| format!("staging {}", path.display()))?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}
