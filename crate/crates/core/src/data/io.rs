use std::fs;
use std::path::Path;

use super::StsExample;
use crate::error::{Error, Result};

fn read_input(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

/// One sentence per line; blank lines are skipped.
pub fn read_corpus(path: &Path) -> Result<Vec<String>> {
    let text = read_input(path)?;
    let lines: Vec<String> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect();
    if lines.is_empty() {
        return Err(Error::Data(format!("{}: corpus is empty", path.display())));
    }
    Ok(lines)
}

pub fn write_corpus(path: &Path, lines: &[String]) -> Result<()> {
    let mut out = lines.join("\n");
    out.push('\n');
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// `sentence_a<TAB>sentence_b<TAB>gold` per line.
pub fn read_sts(path: &Path) -> Result<Vec<StsExample>> {
    let text = read_input(path)?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |what: &str| Error::Data(format!("{}:{}: {what}", path.display(), lineno + 1));
        let cols: Vec<&str> = line.split('\t').collect();
        let [a, b, gold] = cols[..] else {
            return Err(bad(&format!(
                "expected 3 tab-separated columns, found {}",
                cols.len()
            )));
        };
        let gold: f64 = gold
            .trim()
            .parse()
            .map_err(|_| bad(&format!("bad gold score {gold:?}")))?;
        out.push(StsExample::new(a, b, gold).map_err(|e| bad(&e.to_string()))?);
    }
    if out.is_empty() {
        return Err(Error::Data(format!("{}: no STS pairs", path.display())));
    }
    Ok(out)
}

pub fn write_sts(path: &Path, pairs: &[StsExample]) -> Result<()> {
    let mut out = String::new();
    for p in pairs {
        out.push_str(&format!("{}\t{}\t{}\n", p.sentence_a, p.sentence_b, p.gold));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
