//! `key = value` config files whose keys mirror the long flag names.
//!
//! Lines are `key = value` or a bare `key` for switches; `#` starts a
//! comment. `true`/`false` values turn into `--key`/`--no-key`.

use std::path::Path;

use crate::{Error, Result};

/// Environment variable naming the default root for run outputs.
pub const OUT_ROOT_ENV: &str = "TCONV_OUT_ROOT";

pub fn parse_config(text: &str) -> Result<Vec<String>> {
    let mut args = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = match line.split_once('=') {
            Some((k, v)) => (k.trim(), Some(v.trim())),
            None => (line, None),
        };
        let valid = !key.is_empty()
            && key
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
        if !valid {
            return Err(Error::Config(format!(
                "config line {}: invalid key {key:?}",
                i + 1
            )));
        }
        let key = key.replace('_', "-");
        match value {
            None | Some("true") => args.push(format!("--{key}")),
            Some("false") => args.push(format!("--no-{key}")),
            Some(v) => args.push(format!("--{key}={v}")),
        }
    }
    Ok(args)
}

/// Pulls `--config FILE` out of `argv` and splices the file's flags in right
/// after the subcommand, so flags given on the command line win.
pub fn expand_config_args(argv: Vec<String>) -> Result<Vec<String>> {
    let mut rest = Vec::with_capacity(argv.len());
    let mut config = None;
    let mut it = argv.into_iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            config = Some(
                it.next()
                    .ok_or_else(|| Error::Config("--config needs a file path".into()))?,
            );
        } else if let Some(p) = a.strip_prefix("--config=") {
            config = Some(p.to_string());
        } else {
            rest.push(a);
        }
    }
    let Some(path) = config else {
        return Ok(rest);
    };
    let text = std::fs::read_to_string(Path::new(&path)).map_err(Error::io(&path))?;
    let extra = parse_config(&text)?;
    // argv[0] is the binary, argv[1] the subcommand.
    let at = rest.len().min(2);
    rest.splice(at..at, extra);
    Ok(rest)
}
