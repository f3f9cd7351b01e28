//! `--config` files: a JSON object of option values (or a run manifest, whose
//! `options` object is used) merged under the flags given on the command line.

use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::parser::ValueSource;
use clap::{ArgMatches, CommandFactory};
use serde_json::Value;

use crate::Cli;

/// Appends `--key value` for every config entry not set on the command line.
pub fn merge(mut argv: Vec<OsString>, matches: &ArgMatches) -> Result<Vec<OsString>> {
    let Some((name, sub)) = matches.subcommand() else { return Ok(argv) };
    let Some(path) = sub.get_one::<PathBuf>("config") else { return Ok(argv) };
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let root: Value = serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
    let options = match root.get("options") {
        Some(o) => o.clone(),
        None => root,
    };
    let Value::Object(options) = options else {
        bail!("config {} must be a JSON object", path.display());
    };
    let cmd = Cli::command();
    let sub_cmd = cmd.find_subcommand(name).expect("parsed subcommand exists");
    for (key, value) in options {
        if key == "config" {
            continue;
        }
        if !sub_cmd.get_arguments().any(|a| a.get_id() == key.as_str()) {
            bail!("config key `{key}` is not an option of `{name}`");
        }
        if sub.value_source(&key) == Some(ValueSource::CommandLine) {
            continue;
        }
        let flag = format!("--{}", key.replace('_', "-"));
        let text = match value {
            Value::Null | Value::Bool(false) => continue,
            Value::Bool(true) => {
                argv.push(flag.into());
                continue;
            }
            Value::String(s) => s,
            Value::Number(n) => n.to_string(),
            Value::Array(items) => items.iter().map(scalar).collect::<Result<Vec<_>>>()?.join(","),
            Value::Object(_) => bail!("config key `{key}` has an object value"),
        };
        argv.push(flag.into());
        argv.push(text.into());
    }
    Ok(argv)
}

fn scalar(v: &Value) -> Result<String> {
    match v {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        Value::Bool(b) => Ok(b.to_string()),
        _ => bail!("config arrays hold numbers or strings"),
    }
}
