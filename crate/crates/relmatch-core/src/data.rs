//! Dataset files, evaluation and metric reporting.
//!
//! One instance per line:
//!
//! ```text
//! question TAB start:end TAB entity_alias TAB gold_relation TAB cand1|cand2|...
//! ```
//!
//! `start:end` is the entity mention as a half-open token range over the
//! whitespace-tokenized question. Candidates are relation ids; duplicates
//! are removed (and counted). In the train split the gold relation must be
//! among the candidates; offending lines are skipped with a warning rather
//! than rejected.

use std::collections::HashMap;
use std::io::Write as _;
use std::path::Path;

use crate::embed::{tokenize_question, Embedder};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::typeminer::TypeProfile;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Dev,
    Test,
}

/// One question with its candidate relations.
#[derive(Debug, Clone, PartialEq)]
pub struct QuestionInstance {
    /// Lowercased whitespace tokens of the question.
    pub tokens: Vec<String>,
    /// Entity mention as a half-open token range.
    pub mention: (usize, usize),
    /// Tokenized KB alias of the mentioned entity.
    pub alias_tokens: Vec<String>,
    pub gold: String,
    pub candidates: Vec<String>,
}

impl QuestionInstance {
    pub fn mention_tokens(&self) -> &[String] {
        &self.tokens[self.mention.0..self.mention.1]
    }

    pub fn negatives(&self) -> impl Iterator<Item = &str> {
        self.candidates
            .iter()
            .filter(move |c| **c != self.gold)
            .map(|c| c.as_str())
    }
}

#[derive(Debug, Clone, Default)]
pub struct LoadStats {
    pub duplicates_removed: usize,
    pub skipped_instances: usize,
    pub warnings: Vec<String>,
}

#[derive(Debug)]
pub struct DatasetFile {
    pub instances: Vec<QuestionInstance>,
    pub split: Split,
    pub stats: LoadStats,
}

pub fn load_dataset(path: &Path, split: Split) -> Result<DatasetFile> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text, &path.display().to_string(), split)
}

pub fn parse_dataset(text: &str, label: &str, split: Split) -> Result<DatasetFile> {
    let mut instances = Vec::new();
    let mut stats = LoadStats::default();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |msg: String| Error::Parse {
            path: label.to_string(),
            line: lineno,
            msg,
        };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 5 {
            return Err(bad(format!(
                "expected 5 tab-separated fields, found {}",
                fields.len()
            )));
        }
        let tokens = tokenize_question(fields[0]);
        if tokens.is_empty() {
            return Err(bad("empty question".to_string()));
        }
        let (start, end) = fields[1]
            .split_once(':')
            .and_then(|(s, e)| Some((s.parse::<usize>().ok()?, e.parse::<usize>().ok()?)))
            .ok_or_else(|| bad(format!("bad mention span `{}`", fields[1])))?;
        if start >= end || end > tokens.len() {
            return Err(bad(format!(
                "mention span {start}:{end} out of bounds for {} tokens",
                tokens.len()
            )));
        }
        let alias_tokens = tokenize_question(fields[2]);
        if alias_tokens.is_empty() {
            return Err(bad("empty entity alias".to_string()));
        }
        let gold = fields[3].trim().to_string();
        if gold.is_empty() {
            return Err(bad("empty gold relation".to_string()));
        }
        let mut candidates: Vec<String> = Vec::new();
        for c in fields[4].split('|') {
            let c = c.trim();
            if c.is_empty() {
                continue;
            }
            if candidates.iter().any(|x| x == c) {
                stats.duplicates_removed += 1;
            } else {
                candidates.push(c.to_string());
            }
        }
        if candidates.is_empty() {
            return Err(bad("empty candidate list".to_string()));
        }
        if split == Split::Train && !candidates.contains(&gold) {
            stats.skipped_instances += 1;
            stats.warnings.push(format!(
                "{label}:{lineno}: gold relation `{gold}` missing from candidates; instance skipped"
            ));
            continue;
        }
        instances.push(QuestionInstance {
            tokens,
            mention: (start, end),
            alias_tokens,
            gold,
            candidates,
        });
    }
    Ok(DatasetFile {
        instances,
        split,
        stats,
    })
}

/// Inverse of `parse_dataset` for the instances it accepted.
pub fn serialize_dataset(ds: &DatasetFile) -> String {
    let mut out = String::new();
    for inst in &ds.instances {
        out.push_str(&format!(
            "{}\t{}:{}\t{}\t{}\t{}\n",
            inst.tokens.join(" "),
            inst.mention.0,
            inst.mention.1,
            inst.alias_tokens.join(" "),
            inst.gold,
            inst.candidates.join("|"),
        ));
    }
    out
}

pub fn save_dataset(path: &Path, ds: &DatasetFile) -> Result<()> {
    write_atomic(path, serialize_dataset(ds).as_bytes())
}

/// Top-1 accuracy of the model over a dataset.
pub fn evaluate(
    model: &Model,
    emb: &Embedder,
    profiles: &HashMap<String, TypeProfile>,
    ds: &DatasetFile,
) -> Result<f64> {
    if ds.instances.is_empty() {
        return Err(Error::Empty {
            what: "evaluation dataset",
        });
    }
    let mut correct = 0usize;
    for inst in &ds.instances {
        let ranked = model.rank_candidates(emb, profiles, inst)?;
        if ranked[0].0 == inst.gold {
            correct += 1;
        }
    }
    Ok(correct as f64 / ds.instances.len() as f64)
}

// ── metrics ──────────────────────────────────────────────────────────

/// `metric TAB value` lines.
pub fn metrics_to_tsv(pairs: &[(String, f64)]) -> String {
    let mut out = String::new();
    for (name, value) in pairs {
        out.push_str(&format!("{name}\t{value}\n"));
    }
    out
}

/// Flat JSON object for machine consumption.
pub fn metrics_to_json(pairs: &[(String, f64)]) -> String {
    let body: Vec<String> = pairs
        .iter()
        .map(|(name, value)| format!("  \"{name}\": {value}"))
        .collect();
    format!("{{\n{}\n}}\n", body.join(",\n"))
}

/// Write a file atomically: temp file in the same directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let tmp = match dir {
        Some(d) => d.join(format!(
            ".{}.tmp-{}",
            path.file_name().and_then(|n| n.to_str()).unwrap_or("out"),
            std::process::id()
        )),
        None => std::path::PathBuf::from(format!(".{}.tmp-{}", path.display(), std::process::id())),
    };
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(())
}
