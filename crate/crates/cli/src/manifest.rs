use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use chrono::{SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Written next to every output file as `<out>.manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub argv: Vec<String>,
    /// Every flag after defaults are filled in.
    pub options: Value,
    pub seed: Option<u64>,
    pub versions: Versions,
    pub started: String,
    pub finished: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Versions {
    pub autfn: String,
    pub cli: String,
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

impl RunManifest {
    pub fn start(subcommand: &str, options: &impl Serialize, seed: Option<u64>) -> RunManifest {
        RunManifest {
            subcommand: subcommand.to_string(),
            argv: std::env::args().collect(),
            options: serde_json::to_value(options).unwrap_or(Value::Null),
            seed,
            versions: Versions { autfn: autfn::VERSION.to_string(), cli: env!("CARGO_PKG_VERSION").to_string() },
            started: now(),
            finished: None,
        }
    }

    pub fn path_for(out: &Path) -> PathBuf {
        let mut name = out.as_os_str().to_owned();
        name.push(".manifest.json");
        PathBuf::from(name)
    }

    /// Stamps the end time and writes the sidecar for `out`.
    pub fn finish(mut self, out: &Path) -> Result<()> {
        self.finished = Some(now());
        let path = RunManifest::path_for(out);
        fs::write(&path, serde_json::to_string_pretty(&self)? + "\n").with_context(|| format!("writing {}", path.display()))
    }
}
