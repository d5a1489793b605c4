//! JSONL datasets and plain-text probe files.

use std::path::Path;

use geosteer_core::eval::MCItem;
use geosteer_core::ContrastivePair;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats::{read_string, write_bytes};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PairLine {
    question: String,
    positive: String,
    negative: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MCLine {
    question: String,
    choices: Vec<String>,
    correct: Vec<usize>,
}

/// One object per non-blank line, each validated by `convert`. Errors carry
/// the 1-based line number.
fn load_jsonl<L, T>(path: &Path, convert: impl Fn(L) -> geosteer_core::Result<T>) -> Result<Vec<T>>
where
    L: DeserializeOwned,
{
    let text = read_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse { path: path.to_path_buf(), line: i + 1, message };
        let raw: L = serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
        out.push(convert(raw).map_err(|e| parse_err(e.to_string()))?);
    }
    Ok(out)
}

fn write_jsonl<L: Serialize>(path: &Path, lines: impl Iterator<Item = L>) -> Result<()> {
    let mut s = String::new();
    for l in lines {
        s.push_str(&serde_json::to_string(&l).expect("plain data serialises"));
        s.push('\n');
    }
    write_bytes(path, s.as_bytes())
}

pub fn load_pairs(path: &Path) -> Result<Vec<ContrastivePair>> {
    load_jsonl(path, |l: PairLine| ContrastivePair::new(l.question, l.positive, l.negative))
}

pub fn write_pairs(path: &Path, pairs: &[ContrastivePair]) -> Result<()> {
    write_jsonl(
        path,
        pairs.iter().map(|p| PairLine {
            question: p.question.clone(),
            positive: p.positive.clone(),
            negative: p.negative.clone(),
        }),
    )
}

pub fn load_mc(path: &Path) -> Result<Vec<MCItem>> {
    load_jsonl(path, |l: MCLine| MCItem::new(l.question, l.choices, l.correct))
}

pub fn write_mc(path: &Path, items: &[MCItem]) -> Result<()> {
    write_jsonl(
        path,
        items.iter().map(|i| MCLine {
            question: i.question.clone(),
            choices: i.choices.clone(),
            correct: i.correct.clone(),
        }),
    )
}

/// Probe texts, one per non-empty line.
pub fn load_probes(path: &Path) -> Result<Vec<String>> {
    let probes: Vec<String> = read_string(path)?.lines().filter(|l| !l.trim().is_empty()).map(str::to_owned).collect();
    if probes.is_empty() {
        return Err(Error::format(path, "no probe texts"));
    }
    Ok(probes)
}

pub fn write_probes(path: &Path, probes: &[String]) -> Result<()> {
    let mut s = probes.join("\n");
    s.push('\n');
    write_bytes(path, s.as_bytes())
}
