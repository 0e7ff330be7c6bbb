//! Output staging and the run manifest. Files are written to a temporary name
//! and renamed into place; the manifest goes last, after every output exists.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// Version of the output formats; bumped whenever a CSV header or JSON layout changes.
pub const FORMAT_VERSION: &str = "1";

#[derive(Clone, Debug, Serialize)]
pub struct OutputRecord {
    pub file: String,
    pub bytes: usize,
    pub sha256: String,
    /// First line of CSV outputs.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub csv_header: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct RunManifest<'a, C: Serialize> {
    pub artifact: &'static str,
    pub artifact_version: &'static str,
    pub format_version: &'static str,
    pub command: &'a str,
    pub config: &'a C,
    pub started_unix_seconds: u64,
    pub duration_seconds: f64,
    pub outputs: Vec<OutputRecord>,
}

/// Creates `dir` if needed and confirms a file can be written there.
pub fn prepare_dir(dir: &Path) -> Result<(), CliError> {
    let unwritable = |e: std::io::Error| CliError::config("out", format!("{} is not writable: {e}", dir.display()));
    fs::create_dir_all(dir).map_err(unwritable)?;
    let probe = dir.join(format!(".ising-factor-probe-{}", std::process::id()));
    fs::write(&probe, b"").map_err(unwritable)?;
    let _ = fs::remove_file(probe);
    Ok(())
}

pub fn hex_sha256(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Outputs held in memory until [`OutputSet::commit`].
#[derive(Default)]
pub struct OutputSet {
    files: Vec<(String, Vec<u8>)>,
}

impl OutputSet {
    pub fn add(&mut self, name: impl Into<String>, bytes: Vec<u8>) {
        self.files.push((name.into(), bytes));
    }

    /// Writes every output and then `<stem>.manifest.json`. On failure, files
    /// already moved into place are removed again.
    pub fn commit<C: Serialize>(
        self,
        dir: &Path,
        stem: &str,
        command: &str,
        config: &C,
        started: SystemTime,
    ) -> Result<PathBuf, CliError> {
        let mut written: Vec<PathBuf> = Vec::new();
        let result = self.commit_inner(dir, stem, command, config, started, &mut written);
        if result.is_err() {
            for path in written {
                let _ = fs::remove_file(path);
            }
        }
        result
    }

    fn commit_inner<C: Serialize>(
        self,
        dir: &Path,
        stem: &str,
        command: &str,
        config: &C,
        started: SystemTime,
        written: &mut Vec<PathBuf>,
    ) -> Result<PathBuf, CliError> {
        let mut outputs = Vec::with_capacity(self.files.len());
        for (name, bytes) in &self.files {
            written.push(write_atomic(dir, name, bytes)?);
            let csv_header =
                name.ends_with(".csv").then(|| String::from_utf8_lossy(bytes).lines().next().unwrap_or("").to_string());
            outputs.push(OutputRecord {
                file: name.clone(),
                bytes: bytes.len(),
                sha256: hex_sha256(bytes),
                csv_header,
            });
        }
        let manifest = RunManifest {
            artifact: env!("CARGO_PKG_NAME"),
            artifact_version: env!("CARGO_PKG_VERSION"),
            format_version: FORMAT_VERSION,
            command,
            config,
            started_unix_seconds: started.duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            duration_seconds: started.elapsed().unwrap_or(Duration::ZERO).as_secs_f64(),
            outputs,
        };
        let json = serde_json::to_vec_pretty(&manifest).map_err(|e| CliError::Runtime(e.to_string()))?;
        let path = write_atomic(dir, &format!("{stem}.manifest.json"), &json)?;
        written.push(path.clone());
        Ok(path)
    }
}

fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
    let target = dir.join(name);
    let tmp = dir.join(format!(".{name}.tmp"));
    let attempt = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, &target)
    })();
    if let Err(e) = attempt {
        let _ = fs::remove_file(&tmp);
        return Err(CliError::Runtime(format!("writing {}: {e}", target.display())));
    }
    Ok(target)
}
