//! Resolves flags from the command line, a TOML config file and the
//! environment into one explicit argument list.
//!
//! Precedence is flags > file > env > built-in defaults. The file may set
//! keys at top level (applied to whichever command has that flag) or in a
//! table named after the command, which wins over top-level keys.

use std::ffi::OsString;
use std::fs;
use std::path::Path;

use clap::parser::ValueSource;
use clap::{ArgMatches, CommandFactory};

use crate::args::Cli;

#[derive(Debug)]
pub enum ResolveError {
    /// Bad flags or config keys: exit code 2.
    Usage(String),
    Clap(clap::Error),
}

fn toml_to_arg(v: &toml::Value) -> Option<String> {
    match v {
        toml::Value::String(s) => Some(s.clone()),
        toml::Value::Integer(i) => Some(i.to_string()),
        toml::Value::Float(f) => Some(f.to_string()),
        toml::Value::Boolean(b) => Some(b.to_string()),
        toml::Value::Array(a) => Some(a.iter().filter_map(toml_to_arg).collect::<Vec<_>>().join(",")),
        _ => None,
    }
}

fn load_file(path: &Path, command: &str) -> Result<Vec<(String, toml::Value)>, ResolveError> {
    let text = fs::read_to_string(path).map_err(|e| ResolveError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    let table: toml::Table = text
        .parse()
        .map_err(|e| ResolveError::Usage(format!("config {} is not valid TOML: {e}", path.display())))?;
    let mut out: Vec<(String, toml::Value)> = table
        .iter()
        .filter(|(_, v)| !v.is_table())
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();
    if let Some(toml::Value::Table(sec)) = table.get(command) {
        for (k, v) in sec {
            out.retain(|(key, _)| key.replace('-', "_") != k.replace('-', "_"));
            out.push((k.clone(), v.clone()));
        }
    }
    Ok(out)
}

fn from_cli(m: &ArgMatches, id: &str) -> bool {
    matches!(m.value_source(id), Some(ValueSource::CommandLine))
}

/// Returns an argument list that reproduces the invocation without the
/// config file or environment.
pub fn resolve(raw: Vec<OsString>) -> Result<Vec<String>, ResolveError> {
    let raw: Vec<String> = raw.into_iter().map(|s| s.to_string_lossy().into_owned()).collect();
    let root = Cli::command();
    let matches = root.clone().try_get_matches_from(&raw).map_err(ResolveError::Clap)?;
    let Some((sub_name, sub_m)) = matches.subcommand() else {
        return Ok(raw);
    };
    let sub = root
        .find_subcommand(sub_name)
        .expect("matched subcommand exists")
        .clone();
    let mut argv = strip_config(&raw);
    let mut from_file: Vec<String> = Vec::new();

    if let Some(path) = matches.get_one::<std::path::PathBuf>("config") {
        let file = load_file(path, sub_name)?;
        for (key, value) in file {
            let id = key.replace('-', "_");
            let arg = sub.get_arguments().find(|a| a.get_id().as_str() == id);
            if arg.is_none() {
                if id == "jobs" {
                    if !from_cli(&matches, &id) && !from_cli(sub_m, &id) {
                        argv.push(format!("--{}", id.replace('_', "-")));
                        argv.push(toml_to_arg(&value).unwrap_or_default());
                    }
                    continue;
                }
                let in_other = root
                    .get_subcommands()
                    .any(|c| c.get_arguments().any(|a| a.get_id().as_str() == id));
                if in_other {
                    continue;
                }
                return Err(ResolveError::Usage(format!("unknown config key {key:?}")));
            }
            let arg = arg.expect("checked");
            if from_cli(sub_m, &id) {
                continue;
            }
            let long = arg.get_long().unwrap_or(id.as_str()).to_string();
            let takes_value = arg.get_action().takes_values();
            match (&value, takes_value) {
                (toml::Value::Boolean(true), false) => argv.push(format!("--{long}")),
                (toml::Value::Boolean(false), false) => {}
                (_, false) => return Err(ResolveError::Usage(format!("config key {key:?} must be a boolean"))),
                _ => {
                    let v = toml_to_arg(&value).ok_or_else(|| ResolveError::Usage(format!("config key {key:?} has an unsupported value")))?;
                    argv.push(format!("--{long}"));
                    argv.push(v);
                }
            }
            from_file.push(id);
        }
    }
    Ok(append_env(argv, &sub, sub_m, &from_file))
}

fn append_env(mut argv: Vec<String>, sub: &clap::Command, sub_m: &ArgMatches, from_file: &[String]) -> Vec<String> {
    for a in sub.get_arguments() {
        let id = a.get_id().as_str();
        if from_file.iter().any(|f| f == id) {
            continue;
        }
        if let Some(ValueSource::EnvVariable) = sub_m.value_source(id) {
            if let Some(v) = sub_m.get_raw(id).and_then(|mut vals| vals.next()) {
                argv.push(format!("--{}", a.get_long().unwrap_or(id)));
                argv.push(v.to_string_lossy().into_owned());
            }
        }
    }
    argv
}

/// Drops `--config FILE` / `--config=FILE` from an argument list.
pub fn strip_config(raw: &[String]) -> Vec<String> {
    let mut out = Vec::with_capacity(raw.len());
    let mut skip = false;
    for a in raw {
        if skip {
            skip = false;
            continue;
        }
        if a == "--config" {
            skip = true;
            continue;
        }
        if a.starts_with("--config=") {
            continue;
        }
        out.push(a.clone());
    }
    out
}
