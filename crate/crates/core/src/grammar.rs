//! Skill grammars: slot catalogs, intents with utterance templates, and
//! seeded sampling of annotated utterances from them.
//!
//! The text format has three kinds of sections:
//!
//! ```text
//! # comments run to end of line
//! skill flight_demo
//!
//! catalog City:
//!   seattle
//!   new york
//!
//! intent BookFlight:
//!   book a flight from {City} to {City}
//! ```

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::Path;

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::textcore::{tokenize, Token};

/// Identifier of a slot type, e.g. `City`. Case-sensitive.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SlotType(String);

impl SlotType {
    pub fn new(name: impl Into<String>) -> Self {
        SlotType(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// The placeholder symbol a slot span collapses to, e.g. `<City>`.
    pub fn symbol(&self) -> Token {
        Token::new(format!("<{}>", self.0))
    }
}

impl fmt::Display for SlotType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TemplateElement {
    Literal(Token),
    Slot(SlotType),
}

/// One utterance pattern: literal tokens mixed with `{SlotType}` placeholders.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    pub elements: Vec<TemplateElement>,
    /// Line in the source file, for error messages.
    pub line: usize,
}

impl Template {
    pub fn slot_types(&self) -> impl Iterator<Item = &SlotType> {
        self.elements.iter().filter_map(|e| match e {
            TemplateElement::Slot(ty) => Some(ty),
            TemplateElement::Literal(_) => None,
        })
    }

    pub fn slot_count(&self) -> usize {
        self.slot_types().count()
    }
}

/// A parsed, validated skill grammar.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkillGrammar {
    pub skill_id: String,
    pub catalogs: BTreeMap<SlotType, Vec<Vec<Token>>>,
    /// Intent label plus templates, in file order.
    pub intents: Vec<(String, Vec<Template>)>,
}

impl SkillGrammar {
    pub fn template_count(&self) -> usize {
        self.intents.iter().map(|(_, ts)| ts.len()).sum()
    }

    /// Tokens that can appear in utterances sampled from this grammar:
    /// template literals plus catalog values. Catalogs are shared developer
    /// data, so all values are included regardless of template usage.
    pub fn lexicon_sentences(&self) -> Vec<Vec<Token>> {
        let mut out = Vec::new();
        for (_, templates) in &self.intents {
            for t in templates {
                let literals: Vec<Token> = t
                    .elements
                    .iter()
                    .filter_map(|e| match e {
                        TemplateElement::Literal(tok) => Some(tok.clone()),
                        TemplateElement::Slot(_) => None,
                    })
                    .collect();
                if !literals.is_empty() {
                    out.push(literals);
                }
            }
        }
        for values in self.catalogs.values() {
            for v in values {
                out.push(v.clone());
            }
        }
        out
    }

    /// Largest number of placeholders in any template.
    pub fn max_slots_per_template(&self) -> usize {
        self.intents
            .iter()
            .flat_map(|(_, ts)| ts.iter().map(Template::slot_count))
            .max()
            .unwrap_or(0)
    }
}

/// A typed entity span over an utterance, half-open over token indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotSpan {
    pub slot_type: SlotType,
    pub start: usize,
    pub end: usize,
    pub value: Vec<Token>,
}

impl SlotSpan {
    pub fn new(slot_type: SlotType, start: usize, end: usize, value: Vec<Token>) -> Self {
        SlotSpan {
            slot_type,
            start,
            end,
            value,
        }
    }
}

/// A tokenized sentence with its intent label and slot annotations. The
/// universal data record flowing through mining, generation and evaluation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedUtterance {
    pub skill_id: String,
    pub intent: String,
    pub tokens: Vec<Token>,
    pub slots: Vec<SlotSpan>,
}

impl AnnotatedUtterance {
    pub fn new(
        skill_id: impl Into<String>,
        intent: impl Into<String>,
        tokens: Vec<Token>,
        slots: Vec<SlotSpan>,
    ) -> Result<Self> {
        let u = AnnotatedUtterance {
            skill_id: skill_id.into(),
            intent: intent.into(),
            tokens,
            slots,
        };
        u.validate()?;
        Ok(u)
    }

    pub fn validate(&self) -> Result<()> {
        if self.tokens.is_empty() {
            return Err(Error::invalid("utterance has no tokens"));
        }
        let mut prev_end = 0usize;
        for span in &self.slots {
            if span.start >= span.end || span.end > self.tokens.len() {
                return Err(Error::invalid(format!(
                    "slot span {}..{} out of range for {} tokens",
                    span.start,
                    span.end,
                    self.tokens.len()
                )));
            }
            if span.start < prev_end {
                return Err(Error::invalid("slot spans overlap or are out of order"));
            }
            if span.value != self.tokens[span.start..span.end] {
                return Err(Error::invalid(format!(
                    "slot value {:?} does not match tokens at {}..{}",
                    span.value, span.start, span.end
                )));
            }
            prev_end = span.end;
        }
        Ok(())
    }

    /// Slot-type multiset, the grouping key component for pair mining.
    pub fn slot_type_counts(&self) -> BTreeMap<SlotType, usize> {
        let mut counts = BTreeMap::new();
        for span in &self.slots {
            *counts.entry(span.slot_type.clone()).or_insert(0) += 1;
        }
        counts
    }

    /// Tokens with each slot span replaced by its single type symbol.
    pub fn collapsed_tokens(&self) -> Vec<Token> {
        let mut out = Vec::with_capacity(self.tokens.len());
        let mut cursor = 0usize;
        for span in &self.slots {
            out.extend_from_slice(&self.tokens[cursor..span.start]);
            out.push(span.slot_type.symbol());
            cursor = span.end;
        }
        out.extend_from_slice(&self.tokens[cursor..]);
        out
    }
}

pub fn parse_grammar(path: &Path) -> Result<SkillGrammar> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_grammar_str(&text, &path.display().to_string())
}

enum Section {
    None,
    Catalog(SlotType),
    Intent(usize),
}

/// Parse a grammar from text. `origin` names the source in errors.
pub fn parse_grammar_str(text: &str, origin: &str) -> Result<SkillGrammar> {
    let err = |line: usize, message: String| Error::Grammar {
        origin: origin.to_string(),
        line,
        message,
    };

    let mut skill_id: Option<String> = None;
    let mut catalogs: BTreeMap<SlotType, Vec<Vec<Token>>> = BTreeMap::new();
    let mut intents: Vec<(String, Vec<Template>)> = Vec::new();
    let mut intent_index: HashMap<String, usize> = HashMap::new();
    let mut section = Section::None;

    for (lineno, raw) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }

        if let Some(rest) = line.strip_prefix("skill ") {
            let id = rest.trim();
            if id.is_empty() || id.contains(char::is_whitespace) {
                return Err(err(lineno, format!("bad skill id {id:?}")));
            }
            if skill_id.is_some() {
                return Err(err(lineno, "duplicate skill declaration".into()));
            }
            skill_id = Some(id.to_string());
            section = Section::None;
        } else if let Some(rest) = line.strip_prefix("catalog ") {
            let name = rest
                .strip_suffix(':')
                .ok_or_else(|| err(lineno, "catalog header must end with ':'".into()))?
                .trim();
            if name.is_empty() || name.contains(char::is_whitespace) {
                return Err(err(lineno, format!("bad catalog name {name:?}")));
            }
            let ty = SlotType::new(name);
            if catalogs.contains_key(&ty) {
                return Err(err(lineno, format!("duplicate catalog {name}")));
            }
            catalogs.insert(ty.clone(), Vec::new());
            section = Section::Catalog(ty);
        } else if let Some(rest) = line.strip_prefix("intent ") {
            let label = rest
                .strip_suffix(':')
                .ok_or_else(|| err(lineno, "intent header must end with ':'".into()))?
                .trim();
            if label.is_empty() {
                return Err(err(lineno, "empty intent label".into()));
            }
            if intent_index.contains_key(label) {
                return Err(err(lineno, format!("duplicate intent label {label}")));
            }
            intent_index.insert(label.to_string(), intents.len());
            intents.push((label.to_string(), Vec::new()));
            section = Section::Intent(intents.len() - 1);
        } else {
            match &section {
                Section::None => {
                    return Err(err(lineno, format!("content outside any section: {line:?}")))
                }
                Section::Catalog(ty) => {
                    let value = tokenize(line);
                    if value.is_empty() {
                        return Err(err(lineno, "catalog value has no tokens".into()));
                    }
                    catalogs.get_mut(ty).unwrap().push(value);
                }
                Section::Intent(idx) => {
                    let template = parse_template(line, lineno, origin)?;
                    intents[*idx].1.push(template);
                }
            }
        }
    }

    let skill_id = skill_id
        .ok_or_else(|| err(0, "missing skill declaration".into()))?;
    for (ty, values) in &catalogs {
        if values.is_empty() {
            return Err(err(0, format!("catalog {ty} is empty")));
        }
    }
    for (label, templates) in &intents {
        if templates.is_empty() {
            return Err(err(0, format!("intent {label} has no templates")));
        }
        for t in templates {
            for ty in t.slot_types() {
                if !catalogs.contains_key(ty) {
                    return Err(err(
                        t.line,
                        format!("template in intent {label} references undeclared slot type {ty}"),
                    ));
                }
            }
        }
    }

    Ok(SkillGrammar {
        skill_id,
        catalogs,
        intents,
    })
}

fn parse_template(line: &str, lineno: usize, origin: &str) -> Result<Template> {
    let mut elements = Vec::new();
    for chunk in line.split_whitespace() {
        let chunk = chunk.trim_matches(&['.', ',', '!', '?', ';', ':', '\'', '"'][..]);
        if chunk.is_empty() {
            continue;
        }
        if let Some(inner) = chunk.strip_prefix('{').and_then(|c| c.strip_suffix('}')) {
            if inner.is_empty() {
                return Err(Error::Grammar {
                    origin: origin.to_string(),
                    line: lineno,
                    message: "empty slot placeholder".into(),
                });
            }
            elements.push(TemplateElement::Slot(SlotType::new(inner)));
        } else {
            for tok in tokenize(chunk) {
                elements.push(TemplateElement::Literal(tok));
            }
        }
    }
    if elements.is_empty() {
        return Err(Error::Grammar {
            origin: origin.to_string(),
            line: lineno,
            message: "template has no elements".into(),
        });
    }
    Ok(Template {
        elements,
        line: lineno,
    })
}

// Complete fillings are enumerated and shuffled below this bound; beyond it
// distinct fillings are rejection-sampled instead.
const ENUMERATION_LIMIT: u128 = 65_536;

/// Sample up to `per_template` distinct utterances per template, drawing
/// complete slot fillings uniformly without replacement. Deterministic for
/// a given seed.
pub fn sample_utterances(
    grammar: &SkillGrammar,
    per_template: usize,
    seed: u64,
) -> Vec<AnnotatedUtterance> {
    assert!(per_template >= 1, "per_template must be >= 1");
    let mut rng = StdRng::seed_from_u64(seed);
    let mut out = Vec::new();

    for (intent, templates) in &grammar.intents {
        for template in templates {
            // Distinct values per placeholder, preserving catalog order.
            let value_sets: Vec<Vec<&Vec<Token>>> = template
                .slot_types()
                .map(|ty| {
                    let mut seen = HashSet::new();
                    grammar.catalogs[ty]
                        .iter()
                        .filter(|v| seen.insert((*v).clone()))
                        .collect()
                })
                .collect();
            let total: u128 = value_sets.iter().map(|vs| vs.len() as u128).product();

            let fillings: Vec<Vec<usize>> = if total <= ENUMERATION_LIMIT {
                let mut all: Vec<Vec<usize>> = (0..total as usize)
                    .map(|mut i| {
                        let mut idx = Vec::with_capacity(value_sets.len());
                        for vs in value_sets.iter().rev() {
                            idx.push(i % vs.len());
                            i /= vs.len();
                        }
                        idx.reverse();
                        idx
                    })
                    .collect();
                all.shuffle(&mut rng);
                all.truncate(per_template);
                all
            } else {
                let mut chosen = Vec::new();
                let mut seen = HashSet::new();
                while chosen.len() < per_template {
                    let idx: Vec<usize> = value_sets
                        .iter()
                        .map(|vs| rng.gen_range(0..vs.len()))
                        .collect();
                    if seen.insert(idx.clone()) {
                        chosen.push(idx);
                    }
                }
                chosen
            };

            for filling in fillings {
                out.push(realize(grammar, intent, template, &value_sets, &filling));
            }
        }
    }
    out
}

fn realize(
    grammar: &SkillGrammar,
    intent: &str,
    template: &Template,
    value_sets: &[Vec<&Vec<Token>>],
    filling: &[usize],
) -> AnnotatedUtterance {
    let mut tokens = Vec::new();
    let mut slots = Vec::new();
    let mut slot_idx = 0usize;
    for element in &template.elements {
        match element {
            TemplateElement::Literal(tok) => tokens.push(tok.clone()),
            TemplateElement::Slot(ty) => {
                let value = value_sets[slot_idx][filling[slot_idx]];
                let start = tokens.len();
                tokens.extend(value.iter().cloned());
                slots.push(SlotSpan::new(ty.clone(), start, tokens.len(), value.clone()));
                slot_idx += 1;
            }
        }
    }
    AnnotatedUtterance {
        skill_id: grammar.skill_id.clone(),
        intent: intent.to_string(),
        tokens,
        slots,
    }
}
