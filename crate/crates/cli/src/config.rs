//! `--config FILE` support: `key = value` lines turned into flags.
//!
//! The file's flags are inserted directly after the subcommand name, so any
//! flag given on the command line comes later and overrides them. A plain key
//! applies to every subcommand that has a flag of that name; `sub.key` applies
//! to one subcommand only. Keys no subcommand understands are rejected.

use std::fs;
use std::path::Path;

use clap::Command;

use crate::usage;

struct Entry {
    line: usize,
    scope: Option<String>,
    key: String,
    value: String,
}

fn parse(text: &str, path: &Path) -> anyhow::Result<Vec<Entry>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(usage(format!("{}:{}: expected key = value", path.display(), i + 1)));
        };
        let k = k.trim().replace('_', "-");
        let (scope, key) = match k.split_once('.') {
            Some((s, k)) => (Some(s.to_string()), k.to_string()),
            None => (None, k),
        };
        out.push(Entry {
            line: i + 1,
            scope,
            key,
            value: v.trim().trim_matches('"').to_string(),
        });
    }
    Ok(out)
}

fn find_arg<'a>(sub: &'a Command, key: &str) -> Option<&'a clap::Arg> {
    sub.get_arguments()
        .filter(|a| !matches!(a.get_id().as_str(), "config" | "help" | "version"))
        .find(|a| a.get_long() == Some(key))
}

/// Returns `raw` with the config file's flags spliced in.
pub fn inject(cmd: &Command, mut raw: Vec<String>) -> anyhow::Result<Vec<String>> {
    let mut config = None;
    let mut sub_at = None;
    let mut i = 1;
    while i < raw.len() {
        let a = &raw[i];
        if a == "--config" {
            config = raw.get(i + 1).cloned();
            i += 2;
            continue;
        }
        if let Some(v) = a.strip_prefix("--config=") {
            config = Some(v.to_string());
        } else if sub_at.is_none() && !a.starts_with('-') {
            sub_at = Some(i);
        }
        i += 1;
    }
    let (Some(config), Some(sub_at)) = (config, sub_at) else {
        return Ok(raw);
    };
    let Some(sub) = cmd.find_subcommand(&raw[sub_at]) else {
        return Ok(raw);
    };
    let path = Path::new(&config);
    let text = fs::read_to_string(path).map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;

    let mut extra = Vec::new();
    for e in parse(&text, path)? {
        let at = || format!("{}:{}", path.display(), e.line);
        let target = match &e.scope {
            Some(scope) => {
                let Some(scoped) = cmd.find_subcommand(scope) else {
                    return Err(usage(format!("{}: unknown subcommand {scope:?}", at())));
                };
                if find_arg(scoped, &e.key).is_none() {
                    return Err(usage(format!("{}: {scope} has no option {:?}", at(), e.key)));
                }
                (scoped.get_name() == sub.get_name()).then_some(sub)
            }
            None => {
                if !cmd.get_subcommands().any(|s| find_arg(s, &e.key).is_some()) {
                    return Err(usage(format!("{}: unknown key {:?}", at(), e.key)));
                }
                Some(sub)
            }
        };
        let Some(arg) = target.and_then(|s| find_arg(s, &e.key)) else {
            continue;
        };
        if arg.get_action().takes_values() {
            extra.push(format!("--{}={}", e.key, e.value));
        } else {
            match e.value.as_str() {
                "true" => extra.push(format!("--{}", e.key)),
                "false" => {}
                v => return Err(usage(format!("{}: {} expects true or false, got {v:?}", at(), e.key))),
            }
        }
    }
    raw.splice(sub_at + 1..sub_at + 1, extra);
    Ok(raw)
}
