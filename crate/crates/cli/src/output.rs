//! Run directories, manifests and CSV helpers.

use std::fs::{self, File};
use std::io::{BufWriter, ErrorKind};
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const MANIFEST: &str = "manifest.json";

/// Provenance of one command invocation, written last into its run
/// directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: Option<String>,
    pub seed: Option<u64>,
    pub tool_version: String,
    pub started_at: String,
    pub finished_at: String,
    /// File names relative to the run directory.
    pub outputs: Vec<String>,
    pub jobs: Option<usize>,
}

/// A fresh output directory `<base>/<command>-<UTC timestamp>[-k]`.
/// Existing directories are never reused.
pub struct RunDir {
    path: PathBuf,
    outputs: Vec<String>,
    started: DateTime<Utc>,
}

impl RunDir {
    pub fn create(base: &Path, command: &str) -> Result<Self> {
        fs::create_dir_all(base).map_err(|e| CliError::io(base, e))?;
        let started = Utc::now();
        let stem = format!("{command}-{}", started.format("%Y%m%dT%H%M%SZ"));
        for k in 1.. {
            let name = if k == 1 { stem.clone() } else { format!("{stem}-{k}") };
            let path = base.join(name);
            match fs::create_dir(&path) {
                Ok(()) => return Ok(Self { path, outputs: Vec::new(), started }),
                Err(e) if e.kind() == ErrorKind::AlreadyExists => continue,
                Err(e) => return Err(CliError::io(&path, e)),
            }
        }
        unreachable!("unbounded suffix search")
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn register(&mut self, name: &str) -> PathBuf {
        self.outputs.push(name.to_string());
        self.path.join(name)
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> Result<()> {
        let path = self.register(name);
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let text = serde_json::to_string_pretty(value).expect("output records serialize to JSON");
        self.write_text(name, &(text + "\n"))
    }

    pub fn csv(&mut self, name: &str, header: &[String]) -> Result<CsvOut> {
        let path = self.register(name);
        let file = File::create(&path).map_err(|e| CliError::io(&path, e))?;
        let mut out = CsvOut { writer: csv::Writer::from_writer(BufWriter::new(file)), path };
        out.row(header)?;
        Ok(out)
    }

    /// Write the manifest and return it.
    pub fn finish(self, command: &str, config_path: Option<&Path>, seed: Option<u64>, jobs: Option<usize>) -> Result<RunManifest> {
        let stamp = |t: DateTime<Utc>| t.to_rfc3339_opts(SecondsFormat::Millis, true);
        let manifest = RunManifest {
            command: command.to_string(),
            config_path: config_path.map(|p| p.display().to_string()),
            seed,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            started_at: stamp(self.started),
            finished_at: stamp(Utc::now()),
            outputs: self.outputs.clone(),
            jobs,
        };
        let path = self.path.join(MANIFEST);
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        Ok(manifest)
    }
}

pub struct CsvOut {
    writer: csv::Writer<BufWriter<File>>,
    path: PathBuf,
}

impl CsvOut {
    pub fn row<S: AsRef<[u8]>>(&mut self, fields: impl IntoIterator<Item = S>) -> Result<()> {
        self.writer.write_record(fields).map_err(|e| CliError::io(&self.path, e.into()))
    }

    pub fn finish(mut self) -> Result<()> {
        self.writer.flush().map_err(|e| CliError::io(&self.path, e))
    }
}

/// Shortest round-trip decimal form.
pub fn num(v: f64) -> String {
    format!("{v}")
}

pub fn header(fields: &[&str]) -> Vec<String> {
    fields.iter().map(|s| s.to_string()).collect()
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}
