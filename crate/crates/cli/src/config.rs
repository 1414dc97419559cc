//! `key = value` config files merged into the argument list.
//!
//! Each key is a long flag name. Global keys go right after the program name,
//! subcommand keys right after the subcommand token, so flags given on the
//! command line always come later and override them.

use std::collections::HashSet;
use std::ffi::OsString;
use std::path::Path;

use clap::Command;

#[derive(Debug, PartialEq)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

pub fn parse(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut entries = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| ConfigError(format!("config line {}: expected `key = value`", i + 1)))?;
        let key = key.trim().trim_start_matches("--");
        if key.is_empty() {
            return Err(ConfigError(format!("config line {}: empty key", i + 1)));
        }
        entries.push((key.to_string(), value.trim().to_string()));
    }
    Ok(entries)
}

fn find_config_path(args: &[OsString]) -> Option<OsString> {
    let mut iter = args.iter().skip(1);
    while let Some(arg) = iter.next() {
        let s = arg.to_string_lossy();
        if s == "--" {
            return None;
        }
        if s == "--config" {
            return iter.next().cloned();
        }
        if let Some(path) = s.strip_prefix("--config=") {
            return Some(path.into());
        }
    }
    None
}

fn long_names<'a>(args: impl Iterator<Item = &'a clap::Arg>) -> HashSet<String> {
    args.filter_map(|a| a.get_long().map(str::to_string))
        .collect()
}

fn takes_value(cmd: &Command, long: &str) -> bool {
    cmd.get_arguments()
        .find(|a| a.get_long() == Some(long))
        .is_some_and(|a| a.get_action().takes_values())
}

fn tokens(cmd: &Command, key: &str, value: &str) -> Result<Vec<OsString>, ConfigError> {
    let flag = OsString::from(format!("--{key}"));
    if takes_value(cmd, key) {
        return Ok(vec![flag, value.into()]);
    }
    match value.to_ascii_lowercase().as_str() {
        "" | "true" | "yes" | "1" => Ok(vec![flag]),
        "false" | "no" | "0" => Ok(Vec::new()),
        other => Err(ConfigError(format!(
            "`{key}` is a switch; `{other}` is not a boolean"
        ))),
    }
}

/// Returns `args` with the entries of the `--config` file spliced in, or
/// `args` unchanged when no config file is named.
pub fn merge(cmd: &Command, args: Vec<OsString>) -> Result<Vec<OsString>, ConfigError> {
    let Some(path) = find_config_path(&args) else {
        return Ok(args);
    };
    let text = std::fs::read_to_string(Path::new(&path)).map_err(|e| {
        ConfigError(format!(
            "cannot read config {}: {e}",
            Path::new(&path).display()
        ))
    })?;
    merge_entries(cmd, args, &parse(&text)?)
}

pub fn merge_entries(
    cmd: &Command,
    args: Vec<OsString>,
    entries: &[(String, String)],
) -> Result<Vec<OsString>, ConfigError> {
    let globals: HashSet<String> = long_names(cmd.get_arguments().filter(|a| a.is_global_set()));
    let sub_pos = args
        .iter()
        .enumerate()
        .skip(1)
        .find(|(_, a)| cmd.find_subcommand(a.to_string_lossy().as_ref()).is_some())
        .map(|(i, _)| i);
    let sub = sub_pos.and_then(|i| cmd.find_subcommand(args[i].to_string_lossy().as_ref()));
    let known_anywhere: HashSet<String> = cmd
        .get_subcommands()
        .flat_map(|s| long_names(s.get_arguments()))
        .chain(globals.iter().cloned())
        .collect();

    let mut front = Vec::new();
    let mut after_sub = Vec::new();
    for (key, value) in entries {
        if key == "config" {
            return Err(ConfigError(
                "config files cannot include other config files".into(),
            ));
        }
        if globals.contains(key) {
            front.extend(tokens(cmd, key, value)?);
        } else if let Some(sub) = sub.filter(|s| {
            s.get_arguments()
                .any(|a| a.get_long() == Some(key.as_str()))
        }) {
            after_sub.extend(tokens(sub, key, value)?);
        } else if !known_anywhere.contains(key) {
            return Err(ConfigError(format!("unknown config key `{key}`")));
        }
    }

    let mut merged = Vec::with_capacity(args.len() + front.len() + after_sub.len());
    let mut rest = args.into_iter();
    merged.extend(rest.next());
    merged.extend(front);
    match sub_pos {
        Some(pos) => {
            merged.extend(rest.by_ref().take(pos));
            merged.extend(after_sub);
            merged.extend(rest);
        }
        None => merged.extend(rest),
    }
    Ok(merged)
}
