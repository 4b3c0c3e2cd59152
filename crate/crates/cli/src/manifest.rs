//! Run manifests: what ran, with which resolved options, and the hashes of
//! everything read and written. No timestamps, so identical runs produce
//! identical manifests.

use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use toml::Table;

use crate::error::{CliError, CliResult};

#[derive(Serialize)]
struct FileEntry {
    path: String,
    bytes: u64,
    sha256: String,
}

pub struct Manifest {
    command: &'static str,
    seed: Option<u64>,
    config: Table,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    out_dir: PathBuf,
}

pub fn sha256_file(path: &Path) -> CliResult<(u64, String)> {
    let data = std::fs::read(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok((data.len() as u64, format!("{:x}", Sha256::digest(&data))))
}

impl Manifest {
    pub fn new<T: Serialize>(
        command: &'static str,
        seed: Option<u64>,
        config: &T,
        out_dir: &Path,
    ) -> CliResult<Self> {
        let config = match toml::Value::try_from(config) {
            Ok(toml::Value::Table(t)) => t,
            _ => return Err(CliError::Validation("cannot encode configuration".into())),
        };
        Ok(Self {
            command,
            seed,
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
            out_dir: out_dir.to_path_buf(),
        })
    }

    pub fn input(&mut self, path: impl Into<PathBuf>) {
        self.inputs.push(path.into());
    }

    /// Record a file written into the output directory.
    pub fn output(&mut self, name: impl Into<PathBuf>) -> PathBuf {
        let name = name.into();
        self.outputs.push(name.clone());
        self.out_dir.join(name)
    }

    pub fn write(self) -> CliResult<PathBuf> {
        let entry = |display: &Path, full: &Path| -> CliResult<FileEntry> {
            let (bytes, sha256) = sha256_file(full)?;
            Ok(FileEntry {
                path: display.display().to_string(),
                bytes,
                sha256,
            })
        };
        let inputs: Vec<FileEntry> = self
            .inputs
            .iter()
            .map(|p| entry(p, p))
            .collect::<CliResult<_>>()?;
        let outputs: Vec<FileEntry> = self
            .outputs
            .iter()
            .map(|p| entry(p, &self.out_dir.join(p)))
            .collect::<CliResult<_>>()?;

        let mut run = Table::new();
        run.insert("tool".into(), "mcsep".into());
        run.insert("version".into(), env!("CARGO_PKG_VERSION").into());
        run.insert("command".into(), self.command.into());
        if let Some(seed) = self.seed {
            run.insert("seed".into(), toml::Value::Integer(seed as i64));
        }
        let mut doc = Table::new();
        doc.insert("run".into(), run.into());
        doc.insert(self.command.into(), self.config.into());
        let encode = |v: &Vec<FileEntry>| toml::Value::try_from(v).expect("file entries encode");
        // An empty array would be emitted as `inputs = []` above every table.
        if !inputs.is_empty() {
            doc.insert("inputs".into(), encode(&inputs));
        }
        doc.insert("outputs".into(), encode(&outputs));
        let text = format!(
            "# Re-run with: mcsep {} --config <this file>\n{}",
            self.command,
            toml::to_string(&doc).map_err(|e| CliError::Validation(e.to_string()))?
        );
        let path = self.out_dir.join("manifest.toml");
        std::fs::write(&path, text)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Ok(path)
    }
}
