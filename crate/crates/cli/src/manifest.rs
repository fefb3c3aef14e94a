//! Run manifest: the resolved settings of a command, when it ran and what it
//! wrote. Its `key = value` body is itself a valid config file, so a run is
//! repeated with `dflprivacy rerun <manifest>`.

use std::fmt::Write as _;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use crate::error::CliError;
use crate::settings::{read_key_values, Entry};

pub const MANIFEST_FILE: &str = "manifest.txt";

#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub settings: Vec<(String, String)>,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub outputs: Vec<String>,
}

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl RunManifest {
    pub fn render(&self) -> String {
        let mut out = String::from("# dflprivacy run manifest\n");
        let _ = writeln!(out, "command = {}", self.command);
        let _ = writeln!(out, "version = {}", self.version);
        for (k, v) in &self.settings {
            let _ = writeln!(out, "{k} = {v}");
        }
        let _ = writeln!(out, "started_unix = {}", self.started_unix);
        let _ = writeln!(out, "finished_unix = {}", self.finished_unix);
        for o in &self.outputs {
            let _ = writeln!(out, "output = {o}");
        }
        out
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let entries = read_key_values(path)?;
        Self::from_entries(&entries, &path.display().to_string())
    }

    pub fn from_entries(entries: &[Entry], origin: &str) -> Result<Self, CliError> {
        let mut m = RunManifest {
            command: String::new(),
            version: String::new(),
            settings: Vec::new(),
            started_unix: 0,
            finished_unix: 0,
            outputs: Vec::new(),
        };
        for e in entries {
            let time = || {
                e.value
                    .parse::<u64>()
                    .map_err(|_| CliError::Usage(format!("{origin}:{}: invalid timestamp `{}`", e.line, e.value)))
            };
            match e.key.as_str() {
                "command" => m.command = e.value.clone(),
                "version" => m.version = e.value.clone(),
                "started_unix" => m.started_unix = time()?,
                "finished_unix" => m.finished_unix = time()?,
                "output" => m.outputs.push(e.value.clone()),
                _ => m.settings.push((e.key.clone(), e.value.clone())),
            }
        }
        if m.command.is_empty() {
            return Err(CliError::Usage(format!("{origin}: manifest has no `command`")));
        }
        Ok(m)
    }

    /// Settings as config entries, for re-application.
    pub fn setting_entries(&self) -> Vec<Entry> {
        self.settings
            .iter()
            .enumerate()
            .map(|(i, (k, v))| Entry {
                line: i + 1,
                key: k.clone(),
                value: v.clone(),
            })
            .collect()
    }
}
