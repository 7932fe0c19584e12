//! Input vectors: fixed pretrained word embeddings plus an optional
//! trainable character-composed embedding.
//!
//! The word vocabulary is the pretrained file's tokens plus a handful of
//! reserved tokens. Pretrained rows are fixed (they are constants as far as
//! the graphs are concerned); the reserved rows live in a small trainable
//! matrix. The character side feeds each character of a word through a
//! unidirectional LSTM and takes the final hidden state, so the output
//! length does not depend on word length.

use std::collections::HashMap;
use std::path::Path;

use rand::Rng;

use crate::encoder::{lstm_step, BoundLstm, LstmParams};
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";
pub const ENTITY_TOKEN: &str = "<e>";
pub const DEFAULT_TYPE_TOKEN: &str = "__default_type__";
pub const SEP_TOKEN: &str = "<sep>";
pub const PATH_TOKEN: &str = "<path>";

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const ENTITY_ID: u32 = 2;
pub const DEFAULT_TYPE_ID: u32 = 3;
pub const SEP_ID: u32 = 4;
pub const PATH_ID: u32 = 5;
pub const NUM_SPECIALS: usize = 6;

const SPECIAL_TOKENS: [&str; NUM_SPECIALS] = [
    PAD_TOKEN,
    UNK_TOKEN,
    ENTITY_TOKEN,
    DEFAULT_TYPE_TOKEN,
    SEP_TOKEN,
    PATH_TOKEN,
];

/// Token ids, dense in `[0, len)`, with the reserved ids up front.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    by_token: HashMap<String, u32>,
    tokens: Vec<String>,
}

impl Vocabulary {
    fn with_specials() -> Self {
        let mut v = Vocabulary {
            by_token: HashMap::new(),
            tokens: Vec::new(),
        };
        for t in SPECIAL_TOKENS {
            v.by_token.insert(t.to_string(), v.tokens.len() as u32);
            v.tokens.push(t.to_string());
        }
        v
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false // specials are always present
    }

    /// Id for a token; unknown tokens map to the UNK id.
    pub fn id(&self, token: &str) -> u32 {
        self.by_token.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.by_token.contains_key(token)
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn is_special(id: u32) -> bool {
        (id as usize) < NUM_SPECIALS
    }

    /// Row index of a special token in the trainable matrix (PAD excluded:
    /// it embeds as zeros and is never trained).
    pub fn special_row(id: u32) -> Option<usize> {
        if id == PAD_ID || !Self::is_special(id) {
            None
        } else {
            Some(id as usize - 1)
        }
    }

    pub fn encode(&self, tokens: &[String], chars: Option<&CharVocab>) -> TokenSequence {
        let word_ids = tokens.iter().map(|t| self.id(t)).collect();
        let char_ids = tokens
            .iter()
            .map(|t| match chars {
                Some(cv) => t.chars().map(|c| cv.id(c)).collect(),
                None => Vec::new(),
            })
            .collect();
        TokenSequence {
            tokens: tokens.to_vec(),
            word_ids,
            char_ids,
        }
    }
}

/// One tokenized view: surface tokens with resolved word and character ids.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    pub tokens: Vec<String>,
    pub word_ids: Vec<u32>,
    pub char_ids: Vec<Vec<u32>>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Character ids; id 0 is the unknown character.
#[derive(Debug, Clone)]
pub struct CharVocab {
    by_char: HashMap<char, u32>,
    chars: Vec<char>,
}

pub const UNK_CHAR_ID: u32 = 0;

impl CharVocab {
    /// Build from every character seen in the given tokens, sorted for
    /// reproducibility across runs and processes.
    pub fn build<'a>(tokens: impl IntoIterator<Item = &'a str>) -> Self {
        let seen: std::collections::BTreeSet<char> =
            tokens.into_iter().flat_map(|t| t.chars()).collect();
        let mut by_char = HashMap::new();
        let mut chars = vec!['\u{fffd}'];
        for c in seen {
            by_char.insert(c, chars.len() as u32);
            chars.push(c);
        }
        CharVocab { by_char, chars }
    }

    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, c: char) -> u32 {
        self.by_char.get(&c).copied().unwrap_or(UNK_CHAR_ID)
    }
}

#[derive(Debug, Clone, Default)]
pub struct LoadStats {
    pub lines: usize,
    pub skipped: usize,
    pub duplicates: usize,
}

/// Fixed pretrained word vectors, one row per vocabulary id. Reserved rows
/// are zero here; their trainable values live in the model's parameter
/// store.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    pub dim: usize,
    rows: Vec<f64>,
    /// Mean of all pretrained rows; initializes the UNK row.
    pub mean_row: Vec<f64>,
    pub stats: LoadStats,
}

impl EmbeddingTable {
    pub fn row(&self, id: u32) -> &[f64] {
        let d = self.dim;
        &self.rows[id as usize * d..(id as usize + 1) * d]
    }
}

/// Parse a pretrained embedding file: one token per line followed by `dim`
/// decimals, whitespace separated. With `strict` set, a malformed line is
/// an error naming the line number; otherwise it is skipped and counted.
pub fn load_pretrained(path: &Path, dim: usize, strict: bool) -> Result<(EmbeddingTable, Vocabulary)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_pretrained(&text, &path.display().to_string(), dim, strict)
}

pub fn parse_pretrained(
    text: &str,
    label: &str,
    dim: usize,
    strict: bool,
) -> Result<(EmbeddingTable, Vocabulary)> {
    let mut vocab = Vocabulary::with_specials();
    let mut rows: Vec<f64> = vec![0.0; NUM_SPECIALS * dim];
    let mut stats = LoadStats::default();

    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        stats.lines += 1;
        let mut fields = line.split_whitespace();
        let token = fields.next().expect("non-empty line has a first field");
        let values: std::result::Result<Vec<f64>, _> =
            fields.map(|f| f.parse::<f64>()).collect();
        let bad = |msg: String| Error::Parse {
            path: label.to_string(),
            line: lineno,
            msg,
        };
        let values = match values {
            Ok(v) => v,
            Err(e) => {
                if strict {
                    return Err(bad(format!("unparseable embedding value: {e}")));
                }
                stats.skipped += 1;
                continue;
            }
        };
        if values.len() != dim {
            if strict {
                return Err(bad(format!(
                    "expected {dim} values for `{token}`, found {}",
                    values.len()
                )));
            }
            stats.skipped += 1;
            continue;
        }
        if vocab.contains(token) {
            stats.duplicates += 1;
            continue;
        }
        vocab.by_token.insert(token.to_string(), vocab.tokens.len() as u32);
        vocab.tokens.push(token.to_string());
        rows.extend_from_slice(&values);
    }

    let n_pretrained = vocab.len() - NUM_SPECIALS;
    if n_pretrained == 0 {
        return Err(Error::Parse {
            path: label.to_string(),
            line: 0,
            msg: "no usable embedding rows".to_string(),
        });
    }
    let mut mean_row = vec![0.0; dim];
    for r in NUM_SPECIALS..vocab.len() {
        for (m, v) in mean_row.iter_mut().zip(&rows[r * dim..(r + 1) * dim]) {
            *m += v;
        }
    }
    for m in &mut mean_row {
        *m /= n_pretrained as f64;
    }

    Ok((
        EmbeddingTable {
            dim,
            rows,
            mean_row,
            stats,
        },
        vocab,
    ))
}

/// Trainable pieces of the input layer.
#[derive(Debug, Clone)]
pub struct EmbedParams {
    /// Rows for the reserved tokens other than PAD, in id order.
    pub special: ParamId,
    pub char_embed: Option<ParamId>,
    pub char_lstm: Option<LstmParams>,
    pub d_char: usize,
    pub d_charh: usize,
}

impl EmbedParams {
    pub fn init<R: Rng>(
        store: &mut ParamStore,
        table: &EmbeddingTable,
        char_vocab_len: Option<usize>,
        d_char: usize,
        d_charh: usize,
        bound: f64,
        rng: &mut R,
    ) -> Self {
        // UNK starts at the pretrained mean; the other reserved rows start
        // like any other weight.
        let mut special = Tensor::zeros(&[NUM_SPECIALS - 1, table.dim]);
        for r in 0..NUM_SPECIALS - 1 {
            let row_id = (r + 1) as u32;
            for j in 0..table.dim {
                special.row_mut(r)[j] = if row_id == UNK_ID {
                    table.mean_row[j]
                } else {
                    rng.random_range(-bound..bound)
                };
            }
        }
        let special = store.register("embed.special", special);
        let (char_embed, char_lstm) = match char_vocab_len {
            Some(n) => (
                Some(store.register_uniform("embed.char", &[n, d_char], bound, rng)),
                Some(LstmParams::init(store, "embed.char_lstm", d_char, d_charh, bound, rng)),
            ),
            None => (None, None),
        };
        EmbedParams {
            special,
            char_embed,
            char_lstm,
            d_char,
            d_charh,
        }
    }
}

/// Read-only embedding resources shared by every graph build.
#[derive(Clone, Copy)]
pub struct Embedder<'a> {
    pub table: &'a EmbeddingTable,
    pub vocab: &'a Vocabulary,
    pub chars: Option<&'a CharVocab>,
}

impl<'a> Embedder<'a> {
    /// Vector length produced per token under this configuration.
    pub fn width(&self, params: &EmbedParams, use_char: bool) -> usize {
        self.table.dim + if use_char { params.d_charh } else { 0 }
    }

    /// Build input nodes for a whole sequence.
    pub fn embed_sequence(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        params: &EmbedParams,
        seq: &TokenSequence,
        use_char: bool,
    ) -> Result<Vec<NodeId>> {
        seq.word_ids
            .iter()
            .zip(&seq.char_ids)
            .map(|(&wid, cids)| self.embed_ids(g, store, params, wid, cids, use_char))
            .collect()
    }

    fn embed_ids(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        params: &EmbedParams,
        word_id: u32,
        char_ids: &[u32],
        use_char: bool,
    ) -> Result<NodeId> {
        if word_id == PAD_ID {
            return Ok(g.zeros(&[self.width(params, use_char)]));
        }
        let word_part = match Vocabulary::special_row(word_id) {
            Some(r) => {
                let special = g.param(store, params.special);
                g.row(special, r)?
            }
            None => g.leaf(Tensor::vector(self.table.row(word_id))),
        };
        if !use_char {
            return Ok(word_part);
        }
        let char_part = self.char_final_state(g, store, params, char_ids)?;
        g.concat(&[word_part, char_part])
    }

    /// Final hidden state of the character LSTM over a word's characters.
    fn char_final_state(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        params: &EmbedParams,
        char_ids: &[u32],
    ) -> Result<NodeId> {
        let (embed_id, lstm) = match (params.char_embed, &params.char_lstm) {
            (Some(e), Some(l)) => (e, l),
            _ => {
                return Err(Error::Config(
                    "character embeddings requested but not initialized".to_string(),
                ))
            }
        };
        if char_ids.is_empty() {
            return Ok(g.zeros(&[params.d_charh]));
        }
        let table = g.param(store, embed_id);
        let bound = BoundLstm::bind(g, store, lstm);
        let mut h = g.zeros(&[params.d_charh]);
        let mut c = g.zeros(&[params.d_charh]);
        for &cid in char_ids {
            let x = g.row(table, cid as usize)?;
            let (nh, nc) = lstm_step(g, &bound, x, h, c)?;
            h = nh;
            c = nc;
        }
        Ok(h)
    }

    /// Embed a single word on a throwaway graph and return the values.
    pub fn embed_token(
        &self,
        store: &ParamStore,
        params: &EmbedParams,
        word: &str,
        use_char: bool,
    ) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let wid = self.vocab.id(word);
        let cids: Vec<u32> = match self.chars {
            Some(cv) => word.chars().map(|c| cv.id(c)).collect(),
            None => Vec::new(),
        };
        let node = self.embed_ids(&mut g, store, params, wid, &cids, use_char)?;
        Ok(g.value(node).data().to_vec())
    }
}

// ── tokenization ─────────────────────────────────────────────────────

/// Questions: lowercase, whitespace tokens.
pub fn tokenize_question(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|t| t.to_lowercase())
        .collect()
}

/// Relation names factor into words on `.`, `/` and `_`. A `->` joint in a
/// candidate marks a hop boundary on a multi-relation path and becomes the
/// reserved path token.
pub fn tokenize_relation(name: &str) -> Vec<String> {
    let mut out = Vec::new();
    for (i, hop) in name.split("->").enumerate() {
        if i > 0 {
            out.push(PATH_TOKEN.to_string());
        }
        out.extend(split_kb_words(hop));
    }
    out
}

/// Type strings factor the same way as relation names.
pub fn tokenize_type(name: &str) -> Vec<String> {
    if name == DEFAULT_TYPE_TOKEN {
        return vec![DEFAULT_TYPE_TOKEN.to_string()];
    }
    split_kb_words(name)
}

fn split_kb_words(s: &str) -> Vec<String> {
    s.split(['.', '/', '_'])
        .filter(|w| !w.is_empty())
        .map(|w| w.to_lowercase())
        .collect()
}
