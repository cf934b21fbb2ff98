//! Run manifests: `<out>.manifest.json` next to every primary output.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

/// Fail with exit code 4 if any target exists and `force` is off.
pub fn check_writable(paths: &[&Path], force: bool) -> Result<()> {
    if force {
        return Ok(());
    }
    match paths.iter().find(|p| p.exists()) {
        Some(p) => Err(CliError::Overwrite(p.to_path_buf())),
        None => Ok(()),
    }
}

pub struct RunManifest {
    subcommand: String,
    started: Instant,
    config: Option<String>,
    seeds: BTreeMap<String, u64>,
    inputs: Vec<Value>,
    outputs: Vec<Value>,
    report: Value,
}

impl RunManifest {
    pub fn new(subcommand: &str) -> Self {
        Self {
            subcommand: subcommand.to_string(),
            started: Instant::now(),
            config: None,
            seeds: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            report: Value::Null,
        }
    }

    pub fn config(&mut self, text: String) -> &mut Self {
        self.config = Some(text);
        self
    }

    pub fn seed(&mut self, label: &str, seed: u64) -> &mut Self {
        self.seeds.insert(label.to_string(), seed);
        self
    }

    pub fn input(&mut self, path: &Path, bytes: &[u8]) -> &mut Self {
        self.inputs.push(json!({
            "path": path.display().to_string(),
            "sha256": sha256_hex(bytes),
        }));
        self
    }

    pub fn report(&mut self, report: Value) -> &mut Self {
        self.report = report;
        self
    }

    /// Write an output file and record its hash.
    pub fn write_output(&mut self, path: &Path, bytes: &[u8]) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| CliError::io(format!("cannot create {}", dir.display()), e))?;
        }
        fs::write(path, bytes).map_err(|e| CliError::io(format!("cannot write {}", path.display()), e))?;
        self.outputs.push(json!({
            "path": path.display().to_string(),
            "sha256": sha256_hex(bytes),
            "bytes": bytes.len(),
        }));
        Ok(())
    }

    pub fn to_json(&self) -> Value {
        json!({
            "tool": "tclswarm",
            "version": env!("CARGO_PKG_VERSION"),
            "subcommand": self.subcommand,
            "config": self.config,
            "seeds": self.seeds,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "report": self.report,
            "wall_clock_s": self.started.elapsed().as_secs_f64(),
        })
    }

    /// Write `<out>.manifest.json`.
    pub fn finish(&self, out: &Path) -> Result<PathBuf> {
        let path = manifest_path(out);
        let text = serde_json::to_string_pretty(&self.to_json())
            .map_err(|e| CliError::Runtime(format!("manifest encoding failed: {e}")))?;
        fs::write(&path, text + "\n").map_err(|e| CliError::io(format!("cannot write {}", path.display()), e))?;
        Ok(path)
    }
}
