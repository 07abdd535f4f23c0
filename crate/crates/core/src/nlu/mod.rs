//! Downstream baselines: a maximum-entropy intent classifier and a
//! linear-chain CRF slot tagger, the models whose accuracy the augmented
//! data is meant to move.

mod crf;
mod maxent;

pub use crf::{ner_features, ner_gradient, train_ner, CrfModel, Tag};
pub use maxent::{ic_features, ic_objective, train_ic, MaxEntModel};

use serde::{Deserialize, Serialize};

use crate::grammar::{AnnotatedUtterance, SlotSpan};
use crate::textcore::Token;

/// Shared hyperparameters for both trainers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NluConfig {
    pub l2: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for NluConfig {
    fn default() -> Self {
        NluConfig {
            l2: 0.1,
            learning_rate: 0.5,
            epochs: 100,
            seed: 0,
        }
    }
}

/// Encode an utterance's slot spans as per-token BIO tags.
pub fn spans_to_bio(u: &AnnotatedUtterance) -> Vec<Tag> {
    let mut tags = vec![Tag::Outside; u.tokens.len()];
    for span in &u.slots {
        tags[span.start] = Tag::Begin(span.slot_type.clone());
        for t in tags.iter_mut().take(span.end).skip(span.start + 1) {
            *t = Tag::Inside(span.slot_type.clone());
        }
    }
    tags
}

/// Decode BIO tags back into slot spans. An orphan I tag (impossible in
/// Viterbi output thanks to the transition constraints) opens a new span.
pub fn bio_to_spans(tokens: &[Token], tags: &[Tag]) -> Vec<SlotSpan> {
    let mut spans: Vec<SlotSpan> = Vec::new();
    let mut open: Option<(usize, crate::grammar::SlotType)> = None;
    for (i, tag) in tags.iter().enumerate() {
        match tag {
            Tag::Outside => {
                if let Some((start, ty)) = open.take() {
                    spans.push(SlotSpan::new(ty, start, i, tokens[start..i].to_vec()));
                }
            }
            Tag::Begin(ty) => {
                if let Some((start, prev_ty)) = open.take() {
                    spans.push(SlotSpan::new(prev_ty, start, i, tokens[start..i].to_vec()));
                }
                open = Some((i, ty.clone()));
            }
            Tag::Inside(ty) => match &open {
                Some((_, prev_ty)) if prev_ty == ty => {}
                _ => {
                    if let Some((start, prev_ty)) = open.take() {
                        spans.push(SlotSpan::new(prev_ty, start, i, tokens[start..i].to_vec()));
                    }
                    open = Some((i, ty.clone()));
                }
            },
        }
    }
    if let Some((start, ty)) = open.take() {
        spans.push(SlotSpan::new(
            ty,
            start,
            tags.len(),
            tokens[start..tags.len()].to_vec(),
        ));
    }
    spans
}

/// Viterbi-tag an utterance and return the decoded spans.
pub fn tag(model: &CrfModel, tokens: &[Token]) -> Vec<SlotSpan> {
    let tags = model.viterbi_tags(tokens);
    bio_to_spans(tokens, &tags)
}
