//! `--config` expansion: JSON keys become flags placed before the explicit ones,
//! so flags given on the command line win.

use std::ffi::OsString;

use serde_json::Value;
use sssa_core::{Error, Result};

fn config_path(args: &[OsString]) -> Option<OsString> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().cloned();
        }
        if let Some(p) = s.strip_prefix("--config=") {
            return Some(p.into());
        }
    }
    None
}

/// Flag tokens for one JSON object of settings.
pub fn to_flags(v: &Value) -> Result<Vec<OsString>> {
    let obj = v
        .as_object()
        .ok_or_else(|| Error::Config("config file must hold a JSON object".into()))?;
    let mut out = Vec::new();
    for (key, val) in obj {
        if key == "config" {
            continue;
        }
        let flag = OsString::from(format!("--{}", key.replace('_', "-")));
        let scalar = |x: &Value| -> Result<OsString> {
            match x {
                Value::String(s) => Ok(s.into()),
                Value::Number(n) => Ok(n.to_string().into()),
                _ => Err(Error::Config(format!("unsupported value for {key}: {x}"))),
            }
        };
        match val {
            Value::Null | Value::Bool(false) => {}
            Value::Bool(true) => out.push(flag),
            Value::Array(items) => {
                out.push(flag);
                for x in items {
                    out.push(scalar(x)?);
                }
            }
            x => {
                out.push(flag);
                out.push(scalar(x)?);
            }
        }
    }
    Ok(out)
}

/// Splices the settings of the `--config` file in right after the subcommand.
pub fn expand(argv: Vec<OsString>) -> Result<Vec<OsString>> {
    let Some(sub) = argv.iter().skip(1).position(|a| !a.to_string_lossy().starts_with('-')) else {
        return Ok(argv);
    };
    let sub = sub + 1;
    let Some(path) = config_path(&argv[sub + 1..]) else {
        return Ok(argv);
    };
    let text = std::fs::read_to_string(&path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.to_string_lossy())))?;
    let value: Value = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("config {} is not valid JSON: {e}", path.to_string_lossy())))?;
    let mut out = argv[..=sub].to_vec();
    out.extend(to_flags(&value)?);
    out.extend_from_slice(&argv[sub + 1..]);
    Ok(out)
}
