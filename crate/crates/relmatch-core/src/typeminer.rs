//! Offline mining of tail-entity-type profiles from a KB triple dump.
//!
//! For each relation we sample at most `cap` distinct tail entities (all of
//! them when there are fewer), look up their type assertions, and retain
//! only the types carried by at least `threshold` of the sampled tails.
//! A relation whose retained set comes out empty gets the reserved default
//! type token, so the type view of a candidate is never empty.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::embed::DEFAULT_TYPE_TOKEN;
use crate::error::{Error, Result};

pub const DEFAULT_SAMPLE_CAP: usize = 500;
pub const DEFAULT_THRESHOLD: f64 = 0.95;

/// Triples plus type assertions, indexed for the two lookups mining needs.
#[derive(Debug, Default)]
pub struct TripleStore {
    /// relation -> tail entity ids, in input order.
    tails_by_relation: BTreeMap<String, Vec<String>>,
    /// entity -> type strings, in input order.
    types_by_entity: HashMap<String, Vec<String>>,
    pub triple_count: usize,
}

impl TripleStore {
    pub fn new() -> Self {
        TripleStore::default()
    }

    pub fn add_triple(&mut self, subject: &str, relation: &str, object: &str) {
        let _ = subject; // head entities play no part in tail-type mining
        self.tails_by_relation
            .entry(relation.to_string())
            .or_default()
            .push(object.to_string());
        self.triple_count += 1;
    }

    pub fn add_type(&mut self, entity: &str, ty: &str) {
        let types = self.types_by_entity.entry(entity.to_string()).or_default();
        if !types.iter().any(|t| t == ty) {
            types.push(ty.to_string());
        }
    }

    pub fn relations(&self) -> impl Iterator<Item = &str> {
        self.tails_by_relation.keys().map(|s| s.as_str())
    }

    pub fn has_relation(&self, relation: &str) -> bool {
        self.tails_by_relation.contains_key(relation)
    }

    pub fn tails(&self, relation: &str) -> &[String] {
        self.tails_by_relation
            .get(relation)
            .map(|v| v.as_slice())
            .unwrap_or(&[])
    }

    pub fn entity_types(&self, entity: &str) -> &[String] {
        self.types_by_entity
            .get(entity)
            .map(|v| v.as_slice())
            .unwrap_or(&[])
    }

    /// Load from TSV files: triples as `subject TAB relation TAB object`,
    /// type assertions as `entity TAB type`.
    pub fn load(triples_path: &Path, types_path: &Path) -> Result<Self> {
        let mut store = TripleStore::new();
        let triples =
            std::fs::read_to_string(triples_path).map_err(|e| Error::io(triples_path, e))?;
        for (idx, line) in triples.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split('\t');
            match (fields.next(), fields.next(), fields.next()) {
                (Some(s), Some(r), Some(o)) if !r.is_empty() && !o.is_empty() => {
                    store.add_triple(s, r, o)
                }
                _ => {
                    return Err(Error::Parse {
                        path: triples_path.display().to_string(),
                        line: idx + 1,
                        msg: "expected `subject TAB relation TAB object`".to_string(),
                    })
                }
            }
        }
        let types = std::fs::read_to_string(types_path).map_err(|e| Error::io(types_path, e))?;
        for (idx, line) in types.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split('\t');
            match (fields.next(), fields.next()) {
                (Some(e), Some(t)) if !e.is_empty() && !t.is_empty() => store.add_type(e, t),
                _ => {
                    return Err(Error::Parse {
                        path: types_path.display().to_string(),
                        line: idx + 1,
                        msg: "expected `entity TAB type`".to_string(),
                    })
                }
            }
        }
        Ok(store)
    }
}

/// Mined tail types for one relation.
#[derive(Debug, Clone, PartialEq)]
pub struct TypeProfile {
    pub relation: String,
    /// Lexicographically sorted; `[DEFAULT_TYPE_TOKEN]` when nothing passed
    /// the threshold.
    pub retained: Vec<String>,
    pub sample_size: usize,
}

impl TypeProfile {
    pub fn default_for(relation: &str) -> Self {
        TypeProfile {
            relation: relation.to_string(),
            retained: vec![DEFAULT_TYPE_TOKEN.to_string()],
            sample_size: 0,
        }
    }

    pub fn is_default(&self) -> bool {
        self.retained.len() == 1 && self.retained[0] == DEFAULT_TYPE_TOKEN
    }

    /// Token sequence of the profile: each retained type contributes its
    /// words in order.
    pub fn tokens(&self) -> Vec<String> {
        self.retained
            .iter()
            .flat_map(|t| crate::embed::tokenize_type(t))
            .collect()
    }
}

/// Distinct tail entities for a relation: all of them in first-seen order
/// when at most `cap`, otherwise a seeded uniform sample without
/// replacement of exactly `cap`.
pub fn sample_instances(
    store: &TripleStore,
    relation: &str,
    cap: usize,
    seed: u64,
) -> Result<Vec<String>> {
    if !store.has_relation(relation) {
        return Err(Error::UnknownRelation(relation.to_string()));
    }
    let mut seen = std::collections::HashSet::new();
    let distinct: Vec<&String> = store
        .tails(relation)
        .iter()
        .filter(|t| seen.insert(t.as_str()))
        .collect();
    if distinct.len() <= cap {
        return Ok(distinct.into_iter().cloned().collect());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked = rand::seq::index::sample(&mut rng, distinct.len(), cap);
    Ok(picked.into_iter().map(|i| distinct[i].clone()).collect())
}

/// Mine the tail-type profile of one relation. A type is retained iff at
/// least `ceil(threshold * sample_size)` of the sampled tails carry it.
pub fn extract_tail_types(
    store: &TripleStore,
    relation: &str,
    threshold: f64,
    cap: usize,
    seed: u64,
) -> Result<TypeProfile> {
    if !(0.0 < threshold && threshold <= 1.0) {
        return Err(Error::Config(format!(
            "type threshold must be in (0, 1], got {threshold}"
        )));
    }
    if !store.has_relation(relation) || store.tails(relation).is_empty() {
        return Ok(TypeProfile::default_for(relation));
    }
    let sample = sample_instances(store, relation, cap, seed)?;
    let needed = (threshold * sample.len() as f64).ceil() as usize;

    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for entity in &sample {
        for ty in store.entity_types(entity) {
            *counts.entry(ty.as_str()).or_insert(0) += 1;
        }
    }
    let retained: Vec<String> = counts
        .into_iter()
        .filter(|&(_, n)| n >= needed)
        .map(|(t, _)| t.to_string())
        .collect();

    Ok(TypeProfile {
        relation: relation.to_string(),
        retained: if retained.is_empty() {
            vec![DEFAULT_TYPE_TOKEN.to_string()]
        } else {
            retained
        },
        sample_size: sample.len(),
    })
}

/// Mine every relation in the store.
pub fn extract_all(
    store: &TripleStore,
    threshold: f64,
    cap: usize,
    seed: u64,
) -> Result<Vec<TypeProfile>> {
    store
        .relations()
        .map(|r| extract_tail_types(store, r, threshold, cap, seed))
        .collect()
}

// ── profile file format: `relation TAB type1|type2|...` ────────────────

pub fn profiles_to_tsv(profiles: &[TypeProfile]) -> String {
    let mut out = String::new();
    for p in profiles {
        out.push_str(&p.relation);
        out.push('\t');
        out.push_str(&p.retained.join("|"));
        out.push('\n');
    }
    out
}

pub fn parse_profiles(text: &str, label: &str) -> Result<HashMap<String, TypeProfile>> {
    let mut out = HashMap::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (relation, types) = line.split_once('\t').ok_or_else(|| Error::Parse {
            path: label.to_string(),
            line: idx + 1,
            msg: "expected `relation TAB type1|type2|...`".to_string(),
        })?;
        let retained: Vec<String> = types
            .split('|')
            .filter(|t| !t.is_empty())
            .map(|t| t.to_string())
            .collect();
        let retained = if retained.is_empty() {
            vec![DEFAULT_TYPE_TOKEN.to_string()]
        } else {
            retained
        };
        out.insert(
            relation.to_string(),
            TypeProfile {
                relation: relation.to_string(),
                retained,
                sample_size: 0,
            },
        );
    }
    Ok(out)
}

pub fn load_profiles(path: &Path) -> Result<HashMap<String, TypeProfile>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_profiles(&text, &path.display().to_string())
}

/// Write profiles atomically: temp file in the target directory, then
/// rename over the destination.
pub fn save_profiles(path: &Path, profiles: &[TypeProfile]) -> Result<()> {
    crate::data::write_atomic(path, profiles_to_tsv(profiles).as_bytes())
}
