//! Shared fixtures for the integration suites: a tiny deterministic
//! pretrained-embedding file, synthetic corpora, and the independent
//! forward-pass oracle.

#![allow(dead_code)]

pub mod oracle;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use relmatch_core::data::{DatasetFile, LoadStats, QuestionInstance, Split};
use relmatch_core::embed::{parse_pretrained, CharVocab, EmbeddingTable, Vocabulary};
use relmatch_core::typeminer::TypeProfile;
use std::collections::HashMap;

/// Words every fixture embedding file carries. The first five double as
/// discriminative type/signal words in the synthetic corpora.
pub const FIXTURE_WORDS: &[&str] = &[
    "city", "person", "film", "river", "music", "what", "which", "is", "the", "of", "in", "a",
    "name", "find", "show", "place", "made", "from", "holds", "near", "born", "wrote", "plays",
    "runs", "contains", "adjoin", "s", "located", "country", "balkan", "peninsula", "rel",
    "link", "location", "edge", "area",
];

pub struct Fixture {
    pub table: EmbeddingTable,
    pub vocab: Vocabulary,
    pub chars: CharVocab,
}

pub fn embedding_text(words: &[&str], dim: usize, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = String::new();
    for w in words {
        out.push_str(w);
        for _ in 0..dim {
            out.push_str(&format!(" {:.4}", rng.random_range(-0.5..0.5)));
        }
        out.push('\n');
    }
    out
}

pub fn fixture(dim: usize) -> Fixture {
    let text = embedding_text(FIXTURE_WORDS, dim, 40);
    let (table, vocab) = parse_pretrained(&text, "fixture", dim, true).unwrap();
    let chars = CharVocab::build(FIXTURE_WORDS.iter().copied());
    Fixture {
        table,
        vocab,
        chars,
    }
}

pub fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(|t| t.to_string()).collect()
}

pub fn dataset(instances: Vec<QuestionInstance>, split: Split) -> DatasetFile {
    DatasetFile {
        instances,
        split,
        stats: LoadStats::default(),
    }
}

/// Signal words for the synthetic corpora; all in the fixture vocabulary.
pub const SIGNALS: [&str; 5] = ["city", "person", "film", "river", "music"];

/// Profiles mapping relation ids to one signal type word per class.
pub fn class_profiles(relations: &[String]) -> HashMap<String, TypeProfile> {
    relations
        .iter()
        .enumerate()
        .map(|(i, r)| {
            (
                r.clone(),
                TypeProfile {
                    relation: r.clone(),
                    retained: vec![SIGNALS[i % SIGNALS.len()].to_string()],
                    sample_size: 1,
                },
            )
        })
        .collect()
}

/// Eight questions over four relations whose type tokens identify the gold
/// relation; relation names are out-of-vocabulary ids that embed as UNK.
pub fn overfit_corpus() -> (DatasetFile, HashMap<String, TypeProfile>) {
    let relations: Vec<String> = (0..4).map(|i| format!("q{i}")).collect();
    let profiles = class_profiles(&relations);
    let fillers = ["what", "which"];
    let mut instances = Vec::new();
    for i in 0..8 {
        let class = i % 4;
        let filler = fillers[i / 4];
        let tokens = vec![
            filler.to_string(),
            SIGNALS[class].to_string(),
            "of".to_string(),
            format!("m{i}"),
        ];
        instances.push(QuestionInstance {
            tokens,
            mention: (3, 4),
            alias_tokens: vec![format!("m{i}")],
            gold: relations[class].clone(),
            candidates: relations.clone(),
        });
    }
    (dataset(instances, Split::Train), profiles)
}

/// Corpus where only the type view can identify the gold relation: one
/// candidate per signal class, gold chosen by the question's signal word,
/// and every relation name an out-of-vocabulary id (all names embed alike).
pub fn ablation_corpus(
    n_instances: usize,
    seed: u64,
) -> (DatasetFile, HashMap<String, TypeProfile>) {
    let classes = SIGNALS.len();
    let per_class = 5usize;
    let relations: Vec<String> = (0..classes * per_class).map(|i| format!("r{i:02}")).collect();
    let profiles = class_profiles(&relations);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fillers = [
        ["what", "is", "the"],
        ["which", "is", "a"],
        ["find", "the", "near"],
        ["show", "a", "from"],
    ];
    let mut instances = Vec::new();
    for i in 0..n_instances {
        // One candidate per class, so exactly one candidate's type matches.
        let candidates: Vec<String> = (0..classes)
            .map(|class| {
                let pick = rng.random_range(0..per_class);
                relations[pick * classes + class].clone()
            })
            .collect();
        let gold_class = rng.random_range(0..classes);
        let gold = candidates[gold_class].clone();
        let filler = fillers[rng.random_range(0..fillers.len())];
        let tokens = vec![
            filler[0].to_string(),
            SIGNALS[gold_class].to_string(),
            filler[1].to_string(),
            filler[2].to_string(),
            format!("m{i}"),
        ];
        instances.push(QuestionInstance {
            tokens,
            mention: (4, 5),
            alias_tokens: vec![format!("m{i}")],
            gold,
            candidates,
        });
    }
    (dataset(instances, Split::Train), profiles)
}

/// Uniform-gold corpus: candidate sets of `k` distinct relations from a
/// pool, gold drawn uniformly among them and independent of everything the
/// model can see.
pub fn chance_corpus(
    n_instances: usize,
    k: usize,
    seed: u64,
) -> (DatasetFile, HashMap<String, TypeProfile>) {
    let pool: Vec<String> = (0..4 * k).map(|i| format!("c{i:02}")).collect();
    let profiles = class_profiles(&pool);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut instances = Vec::new();
    for i in 0..n_instances {
        let picked = rand::seq::index::sample(&mut rng, pool.len(), k);
        let candidates: Vec<String> = picked.iter().map(|j| pool[j].clone()).collect();
        let gold = candidates[rng.random_range(0..k)].clone();
        let a = FIXTURE_WORDS[rng.random_range(5..FIXTURE_WORDS.len())];
        let b = FIXTURE_WORDS[rng.random_range(5..FIXTURE_WORDS.len())];
        let tokens = vec![a.to_string(), b.to_string(), format!("m{i}")];
        instances.push(QuestionInstance {
            tokens,
            mention: (2, 3),
            alias_tokens: vec![format!("m{i}")],
            gold,
            candidates,
        });
    }
    (dataset(instances, Split::Dev), profiles)
}
