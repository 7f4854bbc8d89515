// SPDX-License-Identifier: MIT OR Apache-2.0

//! Run manifests written next to every output file.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    /// The resolved configuration of the run.
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub tool_version: String,
    pub started_unix: u64,
    pub finished_unix: u64,
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

impl RunManifest {
    pub fn start(command: &str, args: Vec<String>, config: serde_json::Value) -> Self {
        RunManifest {
            command: command.to_string(),
            args,
            config,
            seeds: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            started_unix: now(),
            finished_unix: 0,
        }
    }

    /// `<output>.manifest.json`.
    pub fn path_for(output: &Path) -> PathBuf {
        let mut name = output.file_name().unwrap_or_default().to_os_string();
        name.push(".manifest.json");
        output.with_file_name(name)
    }

    /// Stamps the finish time and writes one manifest per output.
    pub fn finish(mut self) -> io::Result<Vec<PathBuf>> {
        self.finished_unix = now();
        let json = serde_json::to_string_pretty(&self).map_err(io::Error::other)?;
        let mut written = Vec::new();
        for out in &self.outputs {
            let p = Self::path_for(out);
            fs::write(&p, &json)?;
            written.push(p);
        }
        Ok(written)
    }
}
