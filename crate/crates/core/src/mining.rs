//! Paraphrase-pair mining. Utterances that share skill, intent and
//! slot-type multiset are clustered by word overlap; every ordered pair
//! within a cluster becomes a training pair.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use crate::grammar::{AnnotatedUtterance, SlotType};
use crate::textcore::Token;

/// Grouping key: utterances only ever pair within the same key.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GroupKey {
    pub skill_id: String,
    pub intent: String,
    pub slot_counts: Vec<(SlotType, usize)>,
}

impl GroupKey {
    pub fn of(u: &AnnotatedUtterance) -> Self {
        GroupKey {
            skill_id: u.skill_id.clone(),
            intent: u.intent.clone(),
            slot_counts: u.slot_type_counts().into_iter().collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParaphraseGroup {
    pub key: GroupKey,
    pub members: Vec<AnnotatedUtterance>,
}

/// Source/target utterances agreeing on skill, intent and slot multiset,
/// with different token sequences.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParaphrasePair {
    pub source: AnnotatedUtterance,
    pub target: AnnotatedUtterance,
}

fn unique_symbols(u: &AnnotatedUtterance) -> BTreeSet<Token> {
    u.collapsed_tokens().into_iter().collect()
}

/// True iff the two utterances share strictly more than half of the longer
/// one's unique words, slot spans counting as a single type symbol.
pub fn overlap_ok(u1: &AnnotatedUtterance, u2: &AnnotatedUtterance) -> bool {
    let s1 = unique_symbols(u1);
    let s2 = unique_symbols(u2);
    let common = s1.intersection(&s2).count();
    let longer = s1.len().max(s2.len());
    2 * common > longer
}

/// Partition utterances into paraphrase groups.
///
/// Slotless utterances are discarded. Within a key, clustering is greedy
/// first-fit in input order: an utterance joins the first group whose every
/// member passes [`overlap_ok`] with it, otherwise it starts a new group.
/// Duplicate token sequences under one key are collapsed so every emitted
/// pair has distinct source and target. Groups of size one are dropped.
pub fn group_paraphrases(data: &[AnnotatedUtterance]) -> Vec<ParaphraseGroup> {
    let mut groups: Vec<ParaphraseGroup> = Vec::new();
    let mut by_key: HashMap<GroupKey, Vec<usize>> = HashMap::new();
    let mut seen: HashSet<(GroupKey, Vec<Token>)> = HashSet::new();

    for u in data {
        if u.slots.is_empty() {
            continue;
        }
        let key = GroupKey::of(u);
        if !seen.insert((key.clone(), u.tokens.clone())) {
            continue;
        }
        let candidates = by_key.entry(key.clone()).or_default();
        let joined = candidates.iter().copied().find(|&gi| {
            groups[gi].members.iter().all(|m| overlap_ok(m, u))
        });
        match joined {
            Some(gi) => groups[gi].members.push(u.clone()),
            None => {
                candidates.push(groups.len());
                groups.push(ParaphraseGroup {
                    key,
                    members: vec![u.clone()],
                });
            }
        }
    }

    groups.retain(|g| g.members.len() >= 2);
    groups
}

/// All ordered pairs within each group, in group order then member order.
/// A group of size n yields exactly n(n-1) pairs.
pub fn emit_pairs(groups: &[ParaphraseGroup]) -> Vec<ParaphrasePair> {
    let mut pairs = Vec::new();
    for group in groups {
        let n = group.members.len();
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    pairs.push(ParaphrasePair {
                        source: group.members[i].clone(),
                        target: group.members[j].clone(),
                    });
                }
            }
        }
    }
    pairs
}

/// Convenience: group then emit.
pub fn mine_pairs(data: &[AnnotatedUtterance]) -> (Vec<ParaphraseGroup>, Vec<ParaphrasePair>) {
    let groups = group_paraphrases(data);
    let pairs = emit_pairs(&groups);
    (groups, pairs)
}

#[allow(dead_code)]
fn slot_multisets_match(a: &AnnotatedUtterance, b: &AnnotatedUtterance) -> bool {
    let ca: BTreeMap<_, _> = a.slot_type_counts();
    let cb: BTreeMap<_, _> = b.slot_type_counts();
    ca == cb
}
