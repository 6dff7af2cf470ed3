//! Flat `key = value` run configs, merged under the command line.

use std::fs;
use std::path::Path;

use clap::{ArgAction, Command};

use crate::UsageError;

/// One `key = value` pair per line; `#` starts a comment. Keys may use
/// `_` or `-`.
pub fn parse(text: &str) -> Result<Vec<(String, String)>, UsageError> {
    let mut out = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| UsageError(format!("config line {}: expected key = value", no + 1)))?;
        let key = k.trim().replace('_', "-");
        if key.is_empty() {
            return Err(UsageError(format!("config line {}: empty key", no + 1)));
        }
        if out.iter().any(|(seen, _): &(String, String)| *seen == key) {
            return Err(UsageError(format!("config line {}: duplicate key {key:?}", no + 1)));
        }
        out.push((key, v.trim().to_string()));
    }
    Ok(out)
}

fn given(argv: &[String], long: &str) -> bool {
    let flag = format!("--{long}");
    argv.iter().any(|a| *a == flag || a.starts_with(&format!("{flag}=")))
}

/// Appends config entries to `argv` as flags, skipping any flag already
/// present so that the command line wins. Keys must name a flag of the
/// chosen subcommand.
pub fn merge(mut argv: Vec<String>, root: &Command) -> Result<Vec<String>, UsageError> {
    let Some(pos) = argv.iter().position(|a| a == "--config" || a.starts_with("--config=")) else {
        return Ok(argv);
    };
    let path = match argv[pos].strip_prefix("--config=") {
        Some(p) => p.to_string(),
        None => argv.get(pos + 1).cloned().ok_or_else(|| UsageError("--config needs a file".into()))?,
    };
    let text = fs::read_to_string(Path::new(&path)).map_err(|e| UsageError(format!("cannot read config {path}: {e}")))?;
    let entries = parse(&text)?;

    let sub_name = argv.iter().skip(1).find(|a| root.find_subcommand(a.as_str()).is_some()).cloned();
    let sub = sub_name.as_deref().and_then(|n| root.find_subcommand(n)).ok_or_else(|| UsageError("a config file needs a subcommand".into()))?;
    let mut extra = Vec::new();
    for (key, value) in entries {
        let arg = sub
            .get_arguments()
            .chain(root.get_arguments())
            .find(|a| a.get_long() == Some(key.as_str()) && key != "config" && key != "help" && key != "version")
            .ok_or_else(|| UsageError(format!("unknown config key {key:?} for {}", sub.get_name())))?;
        if given(&argv, &key) {
            continue;
        }
        match arg.get_action() {
            ArgAction::SetTrue => match value.as_str() {
                "true" => extra.push(format!("--{key}")),
                "false" => {}
                _ => return Err(UsageError(format!("config key {key:?} takes true or false, got {value:?}"))),
            },
            _ => extra.push(format!("--{key}={value}")),
        }
    }
    argv.extend(extra);
    Ok(argv)
}

/// Renders a serialisable argument struct as `key = value` lines, sorted,
/// omitting unset options.
pub fn render<S: serde::Serialize>(args: &S) -> String {
    let value = serde_json::to_value(args).expect("arguments serialise");
    let mut lines = Vec::new();
    if let serde_json::Value::Object(map) = value {
        for (k, v) in map {
            let v = match v {
                serde_json::Value::Null => continue,
                serde_json::Value::String(s) => s,
                serde_json::Value::Array(items) => items.iter().map(|i| i.as_str().map_or_else(|| i.to_string(), str::to_string)).collect::<Vec<_>>().join(","),
                other => other.to_string(),
            };
            lines.push(format!("{} = {v}", k.replace('_', "-")));
        }
    }
    lines.sort();
    lines.join("\n") + "\n"
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_normalises_keys() {
        let e = parse("# run\nbatch_size = 32\n\n seed=7 # trailing\n").unwrap();
        assert_eq!(e, vec![("batch-size".into(), "32".into()), ("seed".into(), "7".into())]);
    }

    #[test]
    fn rejects_malformed_and_duplicate_lines() {
        assert!(parse("seed 7").is_err());
        assert!(parse("seed = 1\nseed = 2").is_err());
        assert!(parse(" = 3").is_err());
    }
}
