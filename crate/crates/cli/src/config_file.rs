//! Flat `key = value` configuration files, merged into argv ahead of the
//! user's own flags so that the command line wins.

use std::ffi::OsString;
use std::path::Path;

use jtcse::{Error, Result};

/// Parses `key = value` lines; `#` starts a comment, blank lines are
/// skipped. Keys may use `_` or `-`.
pub fn parse(text: &str, origin: &Path) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Config(format!(
                "{}:{}: expected `key = value`, got `{line}`",
                origin.display(),
                i + 1
            )));
        };
        let key = key.trim().replace('_', "-");
        if key.is_empty() || key == "config" {
            return Err(Error::Config(format!(
                "{}:{}: invalid key `{key}`",
                origin.display(),
                i + 1
            )));
        }
        out.push((key, value.trim().to_string()));
    }
    Ok(out)
}

/// Finds `--config PATH` or `--config=PATH` in raw arguments.
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

/// Inserts the file's settings right after the subcommand name.
pub fn merge(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let Some(path) = config_path(&args) else {
        return Ok(args);
    };
    let path = Path::new(&path);
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config file {}: {e}", path.display())))?;
    let pairs = parse(&text, path)?;
    // The subcommand is the first bare argument after argv[0] that is not
    // the value of `--config`.
    let mut sub = None;
    let mut i = 1;
    while i < args.len() {
        let s = args[i].to_string_lossy();
        if s == "--config" {
            i += 2;
            continue;
        }
        if !s.starts_with('-') {
            sub = Some(i);
            break;
        }
        i += 1;
    }
    let Some(sub) = sub else {
        return Ok(args);
    };
    let at = sub + 1;
    let mut out: Vec<OsString> = args[..at].to_vec();
    out.extend(pairs.into_iter().map(|(k, v)| format!("--{k}={v}").into()));
    out.extend(args[at..].iter().cloned());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn os(v: &[&str]) -> Vec<OsString> {
        v.iter().map(OsString::from).collect()
    }

    #[test]
    fn parses_comments_and_normalizes_keys() {
        let p = parse("# run\nbatch_size = 8\n\nlr=0.01 # fast\n", Path::new("x")).unwrap();
        assert_eq!(p, vec![("batch-size".into(), "8".into()), ("lr".into(), "0.01".into())]);
        assert!(parse("oops", Path::new("x")).is_err());
        assert!(parse("config = y", Path::new("x")).is_err());
    }

    #[test]
    fn file_settings_precede_user_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "steps = 5\n").unwrap();
        let p = path.to_str().unwrap();
        let merged = merge(os(&["jtcse", "--config", p, "train", "--steps", "9"])).unwrap();
        assert_eq!(merged, os(&["jtcse", "--config", p, "train", "--steps=5", "--steps", "9"]));
        let merged = merge(os(&["jtcse", "train", &format!("--config={p}")])).unwrap();
        assert_eq!(merged[2], OsString::from("--steps=5"));
    }
}
