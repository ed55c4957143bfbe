use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Everything needed to repeat a run: the resolved argument list alone
/// reproduces the outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Resolved arguments after the program name, config file and
    /// environment folded in.
    pub argv: Vec<String>,
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub schema_hash: Option<String>,
    pub wall_time_s: f64,
}

/// Manifest location for an output: `manifest.json` inside an output
/// directory, `<file>.manifest.json` next to an output file.
pub fn manifest_path(out: &Path, is_dir: bool) -> PathBuf {
    if is_dir {
        out.join(MANIFEST_FILE)
    } else {
        let mut name = out.file_name().unwrap_or_default().to_os_string();
        name.push(".manifest.json");
        out.with_file_name(name)
    }
}

impl Manifest {
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text).with_context(|| format!("writing manifest {}", path.display()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading manifest {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))
    }

    /// The recorded arguments with `--out` pointed at `out`. The training
    /// log path is dropped since it would otherwise be overwritten.
    pub fn argv_with_out(&self, out: Option<&Path>) -> Vec<String> {
        let Some(out) = out else {
            return self.argv.clone();
        };
        let mut argv = Vec::with_capacity(self.argv.len());
        let mut it = self.argv.iter().peekable();
        while let Some(a) = it.next() {
            match a.as_str() {
                "--out" => {
                    it.next();
                    argv.push("--out".into());
                    argv.push(out.display().to_string());
                }
                "--log" => {
                    it.next();
                }
                s if s.starts_with("--out=") || s.starts_with("--log=") => {
                    if s.starts_with("--out=") {
                        argv.push(format!("--out={}", out.display()));
                    }
                }
                _ => argv.push(a.clone()),
            }
        }
        argv
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn out_override() {
        let m = Manifest {
            tool: "cloudformer".into(),
            version: "0".into(),
            command: "train".into(),
            argv: ["train", "--out", "a.ckpt", "--log", "l.json", "--seed", "3"].map(String::from).to_vec(),
            config: serde_json::Value::Null,
            seeds: vec![3],
            inputs: vec![],
            outputs: vec![],
            schema_hash: None,
            wall_time_s: 0.0,
        };
        assert_eq!(m.argv_with_out(Some(Path::new("b.ckpt"))), ["train", "--out", "b.ckpt", "--seed", "3"]);
        assert_eq!(manifest_path(Path::new("x/r.json"), false), PathBuf::from("x/r.json.manifest.json"));
        assert_eq!(manifest_path(Path::new("x/d"), true), PathBuf::from("x/d/manifest.json"));
    }
}
