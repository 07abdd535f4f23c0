//! The copying mechanism that keeps slots intact through generation.
//!
//! Slots are handled entirely by pre- and post-processing, without touching
//! the model. On the source side every slot value is replaced by the
//! surrogate for its type (the most frequent non-stop-word value). On the
//! target side slot values become indexed placeholder tokens such as
//! `<City_1>`, numbered by order of appearance in the source. After
//! decoding, placeholders are swapped back for the original values; outputs
//! whose placeholders do not exactly match the input's slots are rejected.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grammar::{AnnotatedUtterance, SlotSpan, SlotType};
use crate::mining::ParaphrasePair;
use crate::textcore::{join, Token};

/// Indexed slot placeholder, e.g. `<City_2>`. Indices are 1-based.
pub fn slot_token(ty: &SlotType, index: usize) -> Token {
    debug_assert!(index >= 1);
    Token::new(format!("<{}_{}>", ty.as_str(), index))
}

/// Parse `<Type_k>` back into its type and 1-based index.
pub fn parse_slot_token(token: &Token) -> Option<(SlotType, usize)> {
    let inner = token.as_str().strip_prefix('<')?.strip_suffix('>')?;
    let (ty, idx) = inner.rsplit_once('_')?;
    if ty.is_empty() {
        return None;
    }
    let index: usize = idx.parse().ok()?;
    if index == 0 {
        return None;
    }
    Some((SlotType::new(ty), index))
}

pub fn is_slot_token(token: &Token) -> bool {
    parse_slot_token(token).is_some()
}

/// Every indexed slot token a vocabulary must carry: `<T_k>` for each type
/// and each k up to the largest slot count per utterance.
pub fn slot_token_extras(types: &[SlotType], max_per_utterance: usize) -> Vec<Token> {
    let mut out = Vec::new();
    for ty in types {
        for k in 1..=max_per_utterance {
            out.push(slot_token(ty, k));
        }
    }
    out
}

/// One surrogate value per slot type.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SurrogateMap {
    map: BTreeMap<SlotType, Vec<Token>>,
}

impl SurrogateMap {
    pub fn get(&self, ty: &SlotType) -> Option<&[Token]> {
        self.map.get(ty).map(Vec::as_slice)
    }

    pub fn insert(&mut self, ty: SlotType, value: Vec<Token>) {
        self.map.insert(ty, value);
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&SlotType, &Vec<Token>)> {
        self.map.iter()
    }
}

/// Pick, per slot type, the most frequent value whose tokens are not all
/// stop words; if every value is stop words only, the most frequent value
/// regardless. Ties break on the lexicographically smallest joined value.
pub fn build_surrogates(
    data: &[AnnotatedUtterance],
    stop_words: &std::collections::BTreeSet<Token>,
) -> SurrogateMap {
    let mut counts: BTreeMap<SlotType, BTreeMap<Vec<Token>, u64>> = BTreeMap::new();
    for u in data {
        for span in &u.slots {
            *counts
                .entry(span.slot_type.clone())
                .or_default()
                .entry(span.value.clone())
                .or_insert(0) += 1;
        }
    }

    let mut surrogates = SurrogateMap::default();
    for (ty, values) in counts {
        let content: Vec<(&Vec<Token>, u64)> = values
            .iter()
            .filter(|(v, _)| !v.iter().all(|t| stop_words.contains(t)))
            .map(|(v, &n)| (v, n))
            .collect();
        let pool: Vec<(&Vec<Token>, u64)> = if content.is_empty() {
            values.iter().map(|(v, &n)| (v, n)).collect()
        } else {
            content
        };
        let best = pool
            .into_iter()
            .max_by(|(va, na), (vb, nb)| na.cmp(nb).then_with(|| join(vb).cmp(&join(va))))
            .expect("catalog values are non-empty");
        surrogates.insert(ty, best.0.clone());
    }
    surrogates
}

/// Ordered record of a source slot: what was replaced, and with what type.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotBinding {
    pub slot_type: SlotType,
    pub value: Vec<Token>,
}

/// A paraphrase pair after copy-mechanism preprocessing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AbstractedPair {
    /// Source with slot values replaced by surrogates.
    pub source_tokens: Vec<Token>,
    /// Target with slot values replaced by `<Type_k>` tokens.
    pub target_tokens: Vec<Token>,
    /// Source slots in order of appearance; binding k backs `<Type_k>`.
    pub bindings: Vec<SlotBinding>,
}

fn substitute_surrogates(
    u: &AnnotatedUtterance,
    surrogates: &SurrogateMap,
) -> (Vec<Token>, Vec<SlotBinding>) {
    let mut tokens = Vec::with_capacity(u.tokens.len());
    let mut bindings = Vec::with_capacity(u.slots.len());
    let mut cursor = 0usize;
    for span in &u.slots {
        tokens.extend_from_slice(&u.tokens[cursor..span.start]);
        // Unknown type: keep the original value, an identity substitution.
        let replacement = surrogates.get(&span.slot_type).unwrap_or(&span.value);
        tokens.extend(replacement.iter().cloned());
        bindings.push(SlotBinding {
            slot_type: span.slot_type.clone(),
            value: span.value.clone(),
        });
        cursor = span.end;
    }
    tokens.extend_from_slice(&u.tokens[cursor..]);
    (tokens, bindings)
}

/// Preprocess a mined pair for training.
///
/// Target slots are matched to source slots of the same type by value
/// equality first, then by order of appearance. Panics if the pair's slot
/// multisets disagree, which mining rules out.
pub fn abstract_pair(pair: &ParaphrasePair, surrogates: &SurrogateMap) -> AbstractedPair {
    let (source_tokens, bindings) = substitute_surrogates(&pair.source, surrogates);

    let mut assigned = vec![false; bindings.len()];
    let mut target_tokens = Vec::with_capacity(pair.target.tokens.len());
    let mut cursor = 0usize;
    for span in &pair.target.slots {
        target_tokens.extend_from_slice(&pair.target.tokens[cursor..span.start]);
        let by_value = bindings.iter().enumerate().position(|(k, b)| {
            !assigned[k] && b.slot_type == span.slot_type && b.value == span.value
        });
        let k = by_value
            .or_else(|| {
                bindings
                    .iter()
                    .enumerate()
                    .position(|(k, b)| !assigned[k] && b.slot_type == span.slot_type)
            })
            .expect("paraphrase pair slot multisets must match");
        assigned[k] = true;
        target_tokens.push(slot_token(&span.slot_type, k + 1));
        cursor = span.end;
    }
    target_tokens.extend_from_slice(&pair.target.tokens[cursor..]);

    AbstractedPair {
        source_tokens,
        target_tokens,
        bindings,
    }
}

/// Generation-time source form: surrogate-substituted tokens plus the
/// bindings needed to restore slots afterwards. Slotless input is rejected.
pub fn abstract_input(
    u: &AnnotatedUtterance,
    surrogates: &SurrogateMap,
) -> Result<(Vec<Token>, Vec<SlotBinding>)> {
    if u.slots.is_empty() {
        return Err(Error::SlotlessUtterance);
    }
    Ok(substitute_surrogates(u, surrogates))
}

/// Why a candidate paraphrase was rejected during restoration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    /// An expected `<Type_k>` never appeared.
    MissingSlot,
    /// A slot token's index points past the input's slots.
    ExtraSlot,
    /// A slot token's type disagrees with the binding at its index.
    WrongType,
    /// The same `<Type_k>` appeared more than once.
    DuplicateIndex,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            RejectReason::MissingSlot => "missing-slot",
            RejectReason::ExtraSlot => "extra-slot",
            RejectReason::WrongType => "wrong-type",
            RejectReason::DuplicateIndex => "duplicate-index",
        };
        f.write_str(s)
    }
}

/// A generated sentence with slots restored.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Restored {
    pub tokens: Vec<Token>,
    pub slots: Vec<SlotSpan>,
}

/// Replace each `<Type_k>` with binding k's original value. Accepts only
/// when the generated slot tokens are exactly one `<Type_k>` per binding;
/// anything else is rejected with a reason.
pub fn restore_slots(
    generated: &[Token],
    bindings: &[SlotBinding],
) -> std::result::Result<Restored, RejectReason> {
    let mut seen = vec![false; bindings.len()];
    let mut tokens = Vec::with_capacity(generated.len());
    let mut slots = Vec::new();

    for tok in generated {
        match parse_slot_token(tok) {
            Some((ty, index)) => {
                if index > bindings.len() {
                    return Err(RejectReason::ExtraSlot);
                }
                let binding = &bindings[index - 1];
                if binding.slot_type != ty {
                    return Err(RejectReason::WrongType);
                }
                if seen[index - 1] {
                    return Err(RejectReason::DuplicateIndex);
                }
                seen[index - 1] = true;
                let start = tokens.len();
                tokens.extend(binding.value.iter().cloned());
                slots.push(SlotSpan::new(ty, start, tokens.len(), binding.value.clone()));
            }
            None => tokens.push(tok.clone()),
        }
    }

    if seen.iter().any(|&s| !s) {
        return Err(RejectReason::MissingSlot);
    }
    Ok(Restored { tokens, slots })
}
