//! Text primitives shared by every stage: tokenization, vocabularies with
//! reserved ids, the built-in stop-word list and pretrained word embeddings
//! with mean-vector handling of out-of-vocabulary words.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A single lowercase text unit. Never empty, never contains whitespace.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Token(String);

impl Token {
    pub fn new(surface: impl Into<String>) -> Self {
        let s = surface.into();
        debug_assert!(!s.is_empty(), "empty token");
        debug_assert!(
            !s.chars().any(char::is_whitespace),
            "token {s:?} contains whitespace"
        );
        Token(s)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for Token {
    fn from(s: &str) -> Self {
        Token::new(s)
    }
}

/// Punctuation stripped from token edges; interior occurrences survive, so
/// "what's" keeps its apostrophe.
const EDGE_PUNCT: &[char] = &['.', ',', '!', '?', ';', ':', '\'', '"'];

/// Lowercase, split on whitespace, strip edge punctuation, drop empties.
pub fn tokenize(text: &str) -> Vec<Token> {
    text.split_whitespace()
        .filter_map(|raw| {
            let stripped = raw.trim_matches(EDGE_PUNCT);
            if stripped.is_empty() {
                None
            } else {
                Some(Token::new(stripped.to_lowercase()))
            }
        })
        .collect()
}

/// Join tokens with single spaces. `tokenize(&join(ts))` reproduces `ts`
/// for any tokenizer output.
pub fn join(tokens: &[Token]) -> String {
    tokens
        .iter()
        .map(Token::as_str)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Fifty high-frequency English function words. Used when picking slot
/// surrogates; overridable with a one-token-per-line file.
pub const STOP_WORDS: [&str; 50] = [
    "a", "an", "the", "of", "to", "in", "is", "it", "i", "you", "me", "my", "we", "for", "on",
    "at", "by", "with", "from", "up", "about", "into", "over", "after", "and", "or", "but", "not",
    "no", "yes", "do", "does", "did", "be", "been", "am", "are", "was", "were", "have", "has",
    "had", "will", "would", "can", "could", "should", "this", "that", "what",
];

pub fn default_stop_words() -> BTreeSet<Token> {
    STOP_WORDS.iter().map(|w| Token::new(*w)).collect()
}

/// Read a stop-word override file: one token per line, `#` comments allowed.
pub fn load_stop_words(path: &Path) -> Result<BTreeSet<Token>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = BTreeSet::new();
    for line in text.lines() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        out.insert(Token::new(line.to_lowercase()));
    }
    Ok(out)
}

pub const PAD_ID: usize = 0;
pub const BOS_ID: usize = 1;
pub const EOS_ID: usize = 2;
pub const UNK_ID: usize = 3;

pub const PAD_TOKEN: &str = "<pad>";
pub const BOS_TOKEN: &str = "<bos>";
pub const EOS_TOKEN: &str = "<eos>";
pub const UNK_TOKEN: &str = "<unk>";

const RESERVED: [&str; 4] = [PAD_TOKEN, BOS_TOKEN, EOS_TOKEN, UNK_TOKEN];

/// Token/id bijection with four fixed reserved ids and an explicit set of
/// slot-placeholder ids. Immutable once built.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "VocabRepr", into = "VocabRepr")]
pub struct Vocabulary {
    tokens: Vec<Token>,
    index: HashMap<Token, usize>,
    slot_ids: BTreeSet<usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabRepr {
    tokens: Vec<Token>,
    slot_token_ids: Vec<usize>,
}

impl From<Vocabulary> for VocabRepr {
    fn from(v: Vocabulary) -> Self {
        VocabRepr {
            tokens: v.tokens,
            slot_token_ids: v.slot_ids.into_iter().collect(),
        }
    }
}

impl TryFrom<VocabRepr> for Vocabulary {
    type Error = String;

    fn try_from(repr: VocabRepr) -> std::result::Result<Self, String> {
        if repr.tokens.len() < RESERVED.len() {
            return Err("vocabulary misses reserved tokens".into());
        }
        for (i, want) in RESERVED.iter().enumerate() {
            if repr.tokens[i].as_str() != *want {
                return Err(format!("reserved id {i} is {:?}, want {want:?}", repr.tokens[i]));
            }
        }
        let mut index = HashMap::with_capacity(repr.tokens.len());
        for (id, tok) in repr.tokens.iter().enumerate() {
            if index.insert(tok.clone(), id).is_some() {
                return Err(format!("duplicate token {tok:?}"));
            }
        }
        let slot_ids: BTreeSet<usize> = repr.slot_token_ids.into_iter().collect();
        if let Some(&bad) = slot_ids.iter().find(|&&id| id >= repr.tokens.len()) {
            return Err(format!("slot token id {bad} out of range"));
        }
        Ok(Vocabulary {
            tokens: repr.tokens,
            index,
            slot_ids,
        })
    }
}

impl Vocabulary {
    /// Build a vocabulary from a tokenized corpus. Tokens with frequency
    /// below `min_count` are dropped; `extra_tokens` (slot placeholders) are
    /// always included and flagged in `slot_token_ids`. Ids after the four
    /// reserved ones are assigned by descending frequency, ties broken
    /// lexicographically.
    pub fn build(corpus: &[Vec<Token>], min_count: usize, extra_tokens: &[Token]) -> Vocabulary {
        let min_count = min_count.max(1) as u64;
        let mut freq: HashMap<&Token, u64> = HashMap::new();
        for sentence in corpus {
            for tok in sentence {
                if RESERVED.contains(&tok.as_str()) {
                    continue;
                }
                *freq.entry(tok).or_insert(0) += 1;
            }
        }
        let extra: BTreeSet<&Token> = extra_tokens
            .iter()
            .filter(|t| !RESERVED.contains(&t.as_str()))
            .collect();

        let mut ranked: Vec<(&Token, u64)> = freq
            .iter()
            .filter(|(t, &n)| n >= min_count || extra.contains(*t))
            .map(|(&t, &n)| (t, n))
            .collect();
        for &t in &extra {
            if !freq.contains_key(t) {
                ranked.push((t, 0));
            }
        }
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

        let mut tokens: Vec<Token> = RESERVED.iter().map(|s| Token::new(*s)).collect();
        tokens.extend(ranked.iter().map(|(t, _)| (*t).clone()));

        let mut index = HashMap::with_capacity(tokens.len());
        for (id, tok) in tokens.iter().enumerate() {
            index.insert(tok.clone(), id);
        }
        let slot_ids = extra.iter().map(|t| index[*t]).collect();
        Vocabulary {
            tokens,
            index,
            slot_ids,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false // the reserved tokens are always present
    }

    pub fn id_of(&self, token: &Token) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn id_or_unk(&self, token: &Token) -> usize {
        self.id_of(token).unwrap_or(UNK_ID)
    }

    pub fn token_of(&self, id: usize) -> Option<&Token> {
        self.tokens.get(id)
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn is_slot_id(&self, id: usize) -> bool {
        self.slot_ids.contains(&id)
    }

    pub fn slot_token_ids(&self) -> &BTreeSet<usize> {
        &self.slot_ids
    }

    pub fn encode(&self, tokens: &[Token]) -> Vec<usize> {
        tokens.iter().map(|t| self.id_or_unk(t)).collect()
    }

    /// Map ids back to tokens. Panics on an out-of-range id.
    pub fn decode(&self, ids: &[usize]) -> Vec<Token> {
        ids.iter()
            .map(|&id| self.tokens[id].clone())
            .collect()
    }

    /// FNV-1a hash over the full ordered content, used to pair checkpoints
    /// with the vocabularies they were trained against.
    pub fn content_hash(&self) -> u64 {
        let mut h = Fnv::new();
        for (id, tok) in self.tokens.iter().enumerate() {
            h.write(&(id as u64).to_le_bytes());
            h.write(tok.as_str().as_bytes());
            h.write(&[0xff]);
        }
        for &id in &self.slot_ids {
            h.write(&(id as u64).to_le_bytes());
        }
        h.finish()
    }
}

pub(crate) struct Fnv(u64);

impl Fnv {
    pub(crate) fn new() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }

    pub(crate) fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= u64::from(b);
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    pub(crate) fn finish(&self) -> u64 {
        self.0
    }
}

pub(crate) fn fnv_hash(bytes: &[u8]) -> u64 {
    let mut h = Fnv::new();
    h.write(bytes);
    h.finish()
}

/// Fixed word-embedding table. Lookups are total: any absent token maps to
/// the mean of all loaded vectors.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: HashMap<Token, Vec<f64>>,
    unk: Vec<f64>,
}

impl EmbeddingTable {
    /// Load a text embedding file: one entry per line, token followed by
    /// `expected_dim` space-separated floats.
    pub fn load(path: &Path, expected_dim: usize) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(BufReader::new(file), expected_dim, &path.display().to_string())
    }

    pub fn from_reader(reader: impl Read, expected_dim: usize, origin: &str) -> Result<Self> {
        let reader = BufReader::new(reader);
        let mut vectors: HashMap<Token, Vec<f64>> = HashMap::new();
        let mut order: Vec<Token> = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let lineno = lineno + 1;
            let line = line.map_err(|e| Error::io(origin, e))?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split(' ');
            let token = Token::new(parts.next().unwrap().to_lowercase());
            let values: Vec<f64> = parts
                .map(|p| {
                    p.parse::<f64>().map_err(|_| Error::Embedding {
                        origin: origin.to_string(),
                        line: lineno,
                        message: format!("bad float {p:?}"),
                    })
                })
                .collect::<Result<_>>()?;
            if values.len() != expected_dim {
                return Err(Error::Embedding {
                    origin: origin.to_string(),
                    line: lineno,
                    message: format!("expected {expected_dim} values, found {}", values.len()),
                });
            }
            if vectors.insert(token.clone(), values).is_none() {
                order.push(token);
            }
        }
        if order.is_empty() {
            return Err(Error::Embedding {
                origin: origin.to_string(),
                line: 0,
                message: "empty embedding file".into(),
            });
        }
        let unk = mean_vector(expected_dim, order.iter().map(|t| &vectors[t]));
        Ok(EmbeddingTable {
            dim: expected_dim,
            vectors,
            unk,
        })
    }

    /// Deterministic stand-in table when no pretrained file is configured.
    /// Each token's vector is derived from a hash of its surface form.
    pub fn synthetic<'a>(tokens: impl IntoIterator<Item = &'a Token>, dim: usize, seed: u64) -> Self {
        let mut vectors: HashMap<Token, Vec<f64>> = HashMap::new();
        let mut order: Vec<Token> = Vec::new();
        for token in tokens {
            if vectors.contains_key(token) {
                continue;
            }
            let mut state = fnv_hash(token.as_str().as_bytes()) ^ seed;
            let v: Vec<f64> = (0..dim)
                .map(|_| {
                    state = splitmix64(state);
                    // uniform in [-0.5, 0.5)
                    (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
                })
                .collect();
            vectors.insert(token.clone(), v);
            order.push(token.clone());
        }
        let unk = if order.is_empty() {
            vec![0.0; dim]
        } else {
            mean_vector(dim, order.iter().map(|t| &vectors[t]))
        };
        EmbeddingTable { dim, vectors, unk }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lookup(&self, token: &Token) -> &[f64] {
        self.vectors.get(token).map_or(&self.unk, Vec::as_slice)
    }

    pub fn unk_vector(&self) -> &[f64] {
        &self.unk
    }

    pub fn contains(&self, token: &Token) -> bool {
        self.vectors.contains_key(token)
    }
}

fn mean_vector<'a>(dim: usize, vectors: impl Iterator<Item = &'a Vec<f64>>) -> Vec<f64> {
    let mut sum = vec![0.0; dim];
    let mut n = 0usize;
    for v in vectors {
        for (s, x) in sum.iter_mut().zip(v) {
            *s += x;
        }
        n += 1;
    }
    if n > 0 {
        for s in &mut sum {
            *s /= n as f64;
        }
    }
    sum
}

pub(crate) fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
