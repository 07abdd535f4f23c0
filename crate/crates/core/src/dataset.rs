//! JSON-lines readers and writers for the on-disk record formats: datasets
//! of annotated utterances, mined paraphrase pairs, generation logs, and
//! tab-separated parallel corpora.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::decode::RejectionStats;
use crate::error::{Error, Result};
use crate::grammar::{AnnotatedUtterance, SlotSpan};
use crate::mining::ParaphrasePair;
use crate::textcore::{tokenize, Token};

/// Where a dataset row came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    #[default]
    Grammar,
    Paraphrase,
}

impl Origin {
    fn is_grammar(&self) -> bool {
        matches!(self, Origin::Grammar)
    }
}

/// One dataset row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceRecord {
    pub skill: String,
    pub intent: String,
    pub tokens: Vec<Token>,
    pub slots: Vec<SlotSpan>,
    #[serde(default, skip_serializing_if = "Origin::is_grammar")]
    pub origin: Origin,
}

impl UtteranceRecord {
    pub fn new(u: AnnotatedUtterance, origin: Origin) -> Self {
        UtteranceRecord {
            skill: u.skill_id,
            intent: u.intent,
            tokens: u.tokens,
            slots: u.slots,
            origin,
        }
    }

    pub fn into_utterance(self) -> Result<(AnnotatedUtterance, Origin)> {
        let u = AnnotatedUtterance::new(self.skill, self.intent, self.tokens, self.slots)?;
        Ok((u, self.origin))
    }
}

fn data_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Data {
        origin: path.display().to_string(),
        line,
        message: message.into(),
    }
}

pub fn read_utterances(path: &Path) -> Result<Vec<(AnnotatedUtterance, Origin)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: UtteranceRecord = serde_json::from_str(line)
            .map_err(|e| data_err(path, lineno + 1, e.to_string()))?;
        let pair = record
            .into_utterance()
            .map_err(|e| data_err(path, lineno + 1, e.to_string()))?;
        out.push(pair);
    }
    Ok(out)
}

pub fn write_utterances(path: &Path, rows: &[(AnnotatedUtterance, Origin)]) -> Result<()> {
    let mut out = String::new();
    for (u, origin) in rows {
        let record = UtteranceRecord::new(u.clone(), *origin);
        writeln!(out, "{}", serde_json::to_string(&record).expect("record serializes"))
            .expect("string write");
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// One mined pair on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub skill: String,
    pub intent: String,
    pub source_tokens: Vec<Token>,
    pub source_slots: Vec<SlotSpan>,
    pub target_tokens: Vec<Token>,
    pub target_slots: Vec<SlotSpan>,
}

impl PairRecord {
    pub fn new(pair: &ParaphrasePair) -> Self {
        PairRecord {
            skill: pair.source.skill_id.clone(),
            intent: pair.source.intent.clone(),
            source_tokens: pair.source.tokens.clone(),
            source_slots: pair.source.slots.clone(),
            target_tokens: pair.target.tokens.clone(),
            target_slots: pair.target.slots.clone(),
        }
    }

    pub fn into_pair(self) -> Result<ParaphrasePair> {
        let source = AnnotatedUtterance::new(
            self.skill.clone(),
            self.intent.clone(),
            self.source_tokens,
            self.source_slots,
        )?;
        let target =
            AnnotatedUtterance::new(self.skill, self.intent, self.target_tokens, self.target_slots)?;
        Ok(ParaphrasePair { source, target })
    }
}

pub fn write_pairs(path: &Path, pairs: &[ParaphrasePair]) -> Result<()> {
    let mut out = String::new();
    for pair in pairs {
        writeln!(
            out,
            "{}",
            serde_json::to_string(&PairRecord::new(pair)).expect("record serializes")
        )
        .expect("string write");
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_pairs(path: &Path) -> Result<Vec<ParaphrasePair>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: PairRecord =
            serde_json::from_str(line).map_err(|e| data_err(path, lineno + 1, e.to_string()))?;
        out.push(
            record
                .into_pair()
                .map_err(|e| data_err(path, lineno + 1, e.to_string()))?,
        );
    }
    Ok(out)
}

/// Generation log records: one per accepted paraphrase, then a trailing
/// summary with the rejection statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum GenerationRecord {
    Paraphrase {
        source: Vec<Token>,
        output: Vec<Token>,
        score: f64,
        scheme: String,
    },
    Summary {
        inputs: usize,
        all_rejected_inputs: usize,
        skipped_slotless: usize,
        stats: RejectionStats,
    },
}

pub fn write_generation_log(path: &Path, records: &[GenerationRecord]) -> Result<()> {
    let mut out = String::new();
    for record in records {
        writeln!(out, "{}", serde_json::to_string(record).expect("record serializes"))
            .expect("string write");
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_generation_log(path: &Path) -> Result<Vec<GenerationRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(line).map_err(|e| data_err(path, lineno + 1, e.to_string()))?,
        );
    }
    Ok(out)
}

/// Read a parallel corpus: one pair per line, source TAB target, both sides
/// tokenized.
pub fn read_parallel(path: &Path) -> Result<Vec<(Vec<Token>, Vec<Token>)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (source, target) = line
            .split_once('\t')
            .ok_or_else(|| data_err(path, lineno + 1, "expected source TAB target"))?;
        let source = tokenize(source);
        let target = tokenize(target);
        if source.is_empty() || target.is_empty() {
            return Err(data_err(path, lineno + 1, "empty side in parallel pair"));
        }
        out.push((source, target));
    }
    Ok(out)
}
