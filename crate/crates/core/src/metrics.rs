//! Evaluation: minimum-edit slot alignment, the pooled SER / SEMER / ICER
//! error rates, lexical coverage of live data by training data, and the
//! relative-change report.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grammar::{AnnotatedUtterance, SlotSpan, SlotType};
use crate::textcore::Token;

/// One slot as it enters alignment: its type and value, position implied by
/// list order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotItem {
    pub slot_type: SlotType,
    pub value: Vec<Token>,
}

impl From<&SlotSpan> for SlotItem {
    fn from(span: &SlotSpan) -> Self {
        SlotItem {
            slot_type: span.slot_type.clone(),
            value: span.value.clone(),
        }
    }
}

/// Counts from an edit-distance alignment of slot lists.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AlignmentCounts {
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
    pub matches: usize,
}

/// What counts as a slot match during alignment. The default compares
/// type and value; type-only matching exists for sensitivity analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotMatching {
    #[default]
    TypeAndValue,
    TypeOnly,
}

impl SlotMatching {
    fn matches(self, a: &SlotItem, b: &SlotItem) -> bool {
        match self {
            SlotMatching::TypeAndValue => a == b,
            SlotMatching::TypeOnly => a.slot_type == b.slot_type,
        }
    }
}

/// Align reference and hypothesis slots with unit edit costs; a match
/// requires equal type and value. Among minimum-cost alignments the one
/// with the most matches wins, which pins the counts down uniquely: for a
/// fixed cost and match count, S, I and D follow from the list lengths.
pub fn align_slots(reference: &[SlotItem], hypothesis: &[SlotItem]) -> AlignmentCounts {
    align_slots_with(reference, hypothesis, SlotMatching::TypeAndValue)
}

/// [`align_slots`] with an explicit matching rule.
pub fn align_slots_with(
    reference: &[SlotItem],
    hypothesis: &[SlotItem],
    matching: SlotMatching,
) -> AlignmentCounts {
    let n = reference.len();
    let m = hypothesis.len();
    // dp value: (cost, -matches), minimized lexicographically.
    let mut dp = vec![vec![(0usize, 0isize); m + 1]; n + 1];
    for i in 1..=n {
        dp[i][0] = (i, 0);
    }
    for j in 1..=m {
        dp[0][j] = (j, 0);
    }
    for i in 1..=n {
        for j in 1..=m {
            let eq = matching.matches(&reference[i - 1], &hypothesis[j - 1]);
            let diag = {
                let (c, negm) = dp[i - 1][j - 1];
                if eq {
                    (c, negm - 1)
                } else {
                    (c + 1, negm)
                }
            };
            let del = (dp[i - 1][j].0 + 1, dp[i - 1][j].1);
            let ins = (dp[i][j - 1].0 + 1, dp[i][j - 1].1);
            dp[i][j] = diag.min(del).min(ins);
        }
    }
    let (cost, negm) = dp[n][m];
    let matches = (-negm) as usize;
    let substitutions = n + m - 2 * matches - cost;
    AlignmentCounts {
        substitutions,
        insertions: m - matches - substitutions,
        deletions: n - matches - substitutions,
        matches,
    }
}

/// Pooled counts behind the semantic error rate: substitutions and correct
/// counts cover both slots and intents, insertions and deletions are slots
/// only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SemerCounts {
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
    pub correct: usize,
}

impl SemerCounts {
    pub fn rate(&self) -> Result<f64> {
        let denominator = self.substitutions + self.deletions + self.correct;
        if denominator == 0 {
            return Err(Error::UndefinedMetric(
                "SEMER denominator S+D+C is zero".into(),
            ));
        }
        Ok((self.substitutions + self.insertions + self.deletions) as f64 / denominator as f64)
    }
}

/// One evaluated utterance: the reference annotation next to the predicted
/// intent and slots.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalPair {
    pub ref_intent: String,
    pub hyp_intent: String,
    pub ref_slots: Vec<SlotItem>,
    pub hyp_slots: Vec<SlotItem>,
}

impl EvalPair {
    pub fn new(reference: &AnnotatedUtterance, hyp_intent: &str, hyp_slots: &[SlotSpan]) -> Self {
        EvalPair {
            ref_intent: reference.intent.clone(),
            hyp_intent: hyp_intent.to_string(),
            ref_slots: reference.slots.iter().map(SlotItem::from).collect(),
            hyp_slots: hyp_slots.iter().map(SlotItem::from).collect(),
        }
    }
}

fn pooled_counts(pairs: &[EvalPair]) -> SemerCounts {
    let mut counts = SemerCounts::default();
    for pair in pairs {
        let a = align_slots(&pair.ref_slots, &pair.hyp_slots);
        counts.substitutions += a.substitutions;
        counts.insertions += a.insertions;
        counts.deletions += a.deletions;
        counts.correct += a.matches;
        if pair.ref_intent == pair.hyp_intent {
            counts.correct += 1;
        } else {
            counts.substitutions += 1;
        }
    }
    counts
}

/// Semantic error rate (S+I+D)/(S+D+C), pooling slot alignment counts and
/// one intent decision per utterance over the whole corpus.
pub fn semer(pairs: &[EvalPair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::UndefinedMetric("SEMER of an empty corpus".into()));
    }
    pooled_counts(pairs).rate()
}

/// Slot error rate: slot edit errors over the number of reference slots.
pub fn ser(pairs: &[EvalPair]) -> Result<f64> {
    let mut errors = 0usize;
    let mut ref_slots = 0usize;
    for pair in pairs {
        let a = align_slots(&pair.ref_slots, &pair.hyp_slots);
        errors += a.substitutions + a.insertions + a.deletions;
        ref_slots += pair.ref_slots.len();
    }
    if ref_slots == 0 {
        return Err(Error::UndefinedMetric(
            "SER undefined without reference slots".into(),
        ));
    }
    Ok(errors as f64 / ref_slots as f64)
}

/// Intent classification error rate: fraction of utterances whose intent
/// was misclassified.
pub fn icer(pairs: &[EvalPair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::UndefinedMetric("ICER of an empty corpus".into()));
    }
    let wrong = pairs
        .iter()
        .filter(|p| p.ref_intent != p.hyp_intent)
        .count();
    Ok(wrong as f64 / pairs.len() as f64)
}

/// Fraction of the test data's unique words present in the training data.
pub fn word_coverage<'a>(
    train_tokens: impl IntoIterator<Item = &'a Token>,
    test_tokens: impl IntoIterator<Item = &'a Token>,
) -> Result<f64> {
    let train: BTreeSet<&Token> = train_tokens.into_iter().collect();
    let test: BTreeSet<&Token> = test_tokens.into_iter().collect();
    if test.is_empty() {
        return Err(Error::UndefinedMetric(
            "word coverage of an empty test set".into(),
        ));
    }
    let covered = test.iter().filter(|t| train.contains(*t)).count();
    Ok(covered as f64 / test.len() as f64)
}

/// Per-sentence fraction of adjacent-token bigrams present anywhere in the
/// training data, averaged over test sentences. Slot spans collapse to
/// their type symbol on both sides; a single-token sentence contributes 1.0
/// when its token appears in training, else 0.0.
pub fn bigram_coverage(train: &[AnnotatedUtterance], test: &[AnnotatedUtterance]) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::UndefinedMetric(
            "bigram coverage of an empty test set".into(),
        ));
    }
    let mut train_bigrams: BTreeSet<(Token, Token)> = BTreeSet::new();
    let mut train_unigrams: BTreeSet<Token> = BTreeSet::new();
    for u in train {
        let collapsed = u.collapsed_tokens();
        for w in collapsed.windows(2) {
            train_bigrams.insert((w[0].clone(), w[1].clone()));
        }
        train_unigrams.extend(collapsed);
    }

    let mut total = 0.0;
    for u in test {
        let collapsed = u.collapsed_tokens();
        if collapsed.len() == 1 {
            total += if train_unigrams.contains(&collapsed[0]) {
                1.0
            } else {
                0.0
            };
            continue;
        }
        let covered = collapsed
            .windows(2)
            .filter(|w| train_bigrams.contains(&(w[0].clone(), w[1].clone())))
            .count();
        total += covered as f64 / (collapsed.len() - 1) as f64;
    }
    Ok(total / test.len() as f64)
}

/// (new - baseline) / baseline; negative means improvement. `None` when the
/// baseline is zero.
pub fn relative_change(baseline: f64, new: f64) -> Option<f64> {
    if baseline == 0.0 {
        None
    } else {
        Some((new - baseline) / baseline)
    }
}

/// One configuration's row in the evaluation report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: String,
    pub bigram_coverage: f64,
    pub word_coverage: f64,
    /// Original (grammar-sampled) rows in the training data.
    pub input_size: usize,
    /// Generated rows in the training data.
    pub output_size: usize,
    pub icer: f64,
    pub ser: f64,
    pub semer: f64,
    pub rel_icer: Option<f64>,
    pub rel_ser: Option<f64>,
    pub rel_semer: Option<f64>,
}

/// Per-skill evaluation report: a baseline row plus one row per augmented
/// configuration, with relative error changes against the baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub skill_id: String,
    pub test_size: usize,
    /// Distinct slot-collapsed token sequences in the test data, a
    /// diversity measure.
    pub test_unique_patterns: usize,
    pub rows: Vec<ReportRow>,
}

fn pct(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{:+.1}%", x * 100.0),
        None => "n/a".to_string(),
    }
}

impl EvalReport {
    /// Aligned plain-text table: model, bigram coverage, input/output size,
    /// and relative ICER/SER/SEMER change over the baseline.
    pub fn render_text(&self) -> String {
        let mut rows: Vec<[String; 6]> = vec![[
            "Model".into(),
            "Bigram coverage".into(),
            "Input/output size".into(),
            "ICER".into(),
            "SER".into(),
            "SEMER".into(),
        ]];
        for (i, row) in self.rows.iter().enumerate() {
            let (icer, ser, semer) = if i == 0 {
                ("0%".to_string(), "0%".to_string(), "0%".to_string())
            } else {
                (pct(row.rel_icer), pct(row.rel_ser), pct(row.rel_semer))
            };
            rows.push([
                row.model.clone(),
                format!("{:.3}", row.bigram_coverage),
                format!("{}/{}", row.input_size, row.output_size),
                icer,
                ser,
                semer,
            ]);
        }
        let widths: Vec<usize> = (0..6)
            .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap())
            .collect();
        let mut out = String::new();
        out.push_str(&format!(
            "Skill {} | test size {} | unique patterns {}\n",
            self.skill_id, self.test_size, self.test_unique_patterns
        ));
        for (i, row) in rows.iter().enumerate() {
            let line: Vec<String> = row
                .iter()
                .zip(&widths)
                .map(|(cell, w)| format!("{cell:<w$}"))
                .collect();
            out.push_str(line.join("  ").trim_end());
            out.push('\n');
            if i == 0 {
                let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
                out.push_str(&rule.join("  "));
                out.push('\n');
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(json: &str) -> Result<Self> {
        serde_json::from_str(json).map_err(|e| Error::Json {
            origin: "eval report".into(),
            source: e,
        })
    }
}

/// Distinct slot-collapsed token sequences, the skill-diversity count.
pub fn unique_patterns(data: &[AnnotatedUtterance]) -> usize {
    let set: BTreeSet<Vec<Token>> = data.iter().map(AnnotatedUtterance::collapsed_tokens).collect();
    set.len()
}
