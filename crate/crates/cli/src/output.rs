use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::RunConfig;
use crate::error::CliError;

/// Output directory; every file in it is written by exactly one call.
pub struct Bundle {
    dir: PathBuf,
    files: Vec<String>,
}

impl Bundle {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<(), CliError> {
        fs::write(self.path(name), contents)?;
        self.files.push(name.to_string());
        Ok(())
    }

    pub fn write_csv(
        &mut self,
        name: &str,
        header: &[&str],
        rows: &[Vec<String>],
    ) -> Result<(), CliError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::data(e.to_string()))?;
        fs::write(self.path(name), bytes)?;
        self.files.push(name.to_string());
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, &text)
    }

    /// Record everything needed to rerun: the canonical config, its hash and
    /// the seeds in use. Written last, so it also lists the other files.
    pub fn finish(
        mut self,
        command: &str,
        cfg: &RunConfig,
        seeds: BTreeMap<String, u64>,
    ) -> Result<(), CliError> {
        #[derive(Serialize)]
        struct Provenance<'a> {
            tool: &'static str,
            version: &'static str,
            command: &'a str,
            config_hash: String,
            config: serde_json::Value,
            seeds: BTreeMap<String, u64>,
            files: Vec<String>,
        }
        self.files.sort();
        let files = self.files.clone();
        let p = Provenance {
            tool: "focal",
            version: env!("CARGO_PKG_VERSION"),
            command,
            config_hash: cfg.hash(),
            config: serde_json::from_str(&cfg.canonical())?,
            seeds,
            files,
        };
        self.write_json("provenance.json", &p)
    }
}

pub fn num(v: f64) -> String {
    v.to_string()
}

pub fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

/// Append-only line writer shared by worker threads.
pub struct NdjsonSink {
    file: std::sync::Mutex<fs::File>,
}

impl NdjsonSink {
    pub fn append(path: &Path) -> Result<Self, CliError> {
        let file = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)?;
        Ok(Self {
            file: std::sync::Mutex::new(file),
        })
    }

    pub fn push<T: Serialize>(&self, row: &T) {
        let mut line = serde_json::to_string(row).expect("row serializes");
        line.push('\n');
        let mut f = self.file.lock().expect("sink lock");
        if let Err(e) = f.write_all(line.as_bytes()).and_then(|_| f.flush()) {
            log::error!("failed to append row: {e}");
        }
    }
}
