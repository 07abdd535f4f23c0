//! Linear-chain conditional random field over BIO tags, trained with
//! forward-backward gradients and decoded with Viterbi. All arithmetic is
//! in log space; structurally invalid transitions (an I tag not preceded by
//! a same-type B or I) carry a fixed score of negative infinity and are not
//! trained.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grammar::SlotType;
use crate::textcore::Token;

use super::NluConfig;

/// A BIO tag.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Tag {
    Outside,
    Begin(SlotType),
    Inside(SlotType),
}

impl Tag {
    pub fn parse(s: &str) -> Result<Tag> {
        if s == "O" {
            return Ok(Tag::Outside);
        }
        if let Some(ty) = s.strip_prefix("B-") {
            return Ok(Tag::Begin(SlotType::new(ty)));
        }
        if let Some(ty) = s.strip_prefix("I-") {
            return Ok(Tag::Inside(SlotType::new(ty)));
        }
        Err(Error::invalid(format!("bad BIO tag {s:?}")))
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tag::Outside => f.write_str("O"),
            Tag::Begin(ty) => write!(f, "B-{ty}"),
            Tag::Inside(ty) => write!(f, "I-{ty}"),
        }
    }
}

/// Emission features for one position: word identity, previous word, next
/// word, and boundary indicators.
pub fn ner_features(tokens: &[Token], i: usize) -> Vec<String> {
    let mut feats = Vec::with_capacity(5);
    feats.push(format!("w={}", tokens[i]));
    feats.push(match i.checked_sub(1) {
        Some(p) => format!("w-1={}", tokens[p]),
        None => "w-1=<s>".to_string(),
    });
    feats.push(match tokens.get(i + 1) {
        Some(t) => format!("w+1={t}"),
        None => "w+1=</s>".to_string(),
    });
    if i == 0 {
        feats.push("first".to_string());
    }
    if i + 1 == tokens.len() {
        feats.push("last".to_string());
    }
    feats
}

fn transition_valid(from: &Tag, to: &Tag) -> bool {
    match to {
        Tag::Inside(ty) => matches!(from, Tag::Begin(t) | Tag::Inside(t) if t == ty),
        _ => true,
    }
}

fn start_valid(tag: &Tag) -> bool {
    !matches!(tag, Tag::Inside(_))
}

fn logsumexp(xs: &[f64]) -> f64 {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    xs.iter().map(|&x| (x - max).exp()).sum::<f64>().ln() + max
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CrfRepr", into = "CrfRepr")]
pub struct CrfModel {
    /// Canonical order: O first, then B-T, I-T per sorted type.
    tags: Vec<Tag>,
    /// Sorted feature names; weights live in `emission`.
    features: Vec<String>,
    feat_idx: HashMap<String, usize>,
    /// feature-major: emission[f * n_tags + t]
    emission: Vec<f64>,
    /// transition[from * n_tags + to]; NEG_INFINITY when invalid.
    transition: Vec<f64>,
    /// Trainable (from, to) cells, row-major.
    valid_transitions: Vec<(usize, usize)>,
}

#[derive(Serialize, Deserialize)]
struct CrfRepr {
    format_version: u32,
    tags: Vec<String>,
    emission: BTreeMap<String, Vec<f64>>,
    /// from-tag -> to-tag -> weight, valid cells only.
    transition: BTreeMap<String, BTreeMap<String, f64>>,
}

impl From<CrfModel> for CrfRepr {
    fn from(m: CrfModel) -> Self {
        let emission = m
            .features
            .iter()
            .enumerate()
            .map(|(fi, f)| {
                (
                    f.clone(),
                    m.emission[fi * m.tags.len()..(fi + 1) * m.tags.len()].to_vec(),
                )
            })
            .collect();
        let mut transition: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
        for &(a, b) in &m.valid_transitions {
            transition
                .entry(m.tags[a].to_string())
                .or_default()
                .insert(m.tags[b].to_string(), m.transition[a * m.tags.len() + b]);
        }
        CrfRepr {
            format_version: 1,
            tags: m.tags.iter().map(Tag::to_string).collect(),
            emission,
            transition,
        }
    }
}

impl TryFrom<CrfRepr> for CrfModel {
    type Error = String;

    fn try_from(repr: CrfRepr) -> std::result::Result<Self, String> {
        let tags: Vec<Tag> = repr
            .tags
            .iter()
            .map(|s| Tag::parse(s).map_err(|e| e.to_string()))
            .collect::<std::result::Result<_, _>>()?;
        let mut model = CrfModel::empty(tags);
        for (f, ws) in repr.emission {
            if ws.len() != model.tags.len() {
                return Err(format!("emission row for {f:?} has wrong arity"));
            }
            model.feat_idx.insert(f.clone(), model.features.len());
            model.features.push(f);
            model.emission.extend(ws);
        }
        for (from, tos) in &repr.transition {
            let a = model
                .tag_index(&Tag::parse(from).map_err(|e| e.to_string())?)
                .ok_or_else(|| format!("unknown tag {from:?}"))?;
            for (to, w) in tos {
                let b = model
                    .tag_index(&Tag::parse(to).map_err(|e| e.to_string())?)
                    .ok_or_else(|| format!("unknown tag {to:?}"))?;
                if !transition_valid(&model.tags[a], &model.tags[b]) {
                    return Err(format!("transition {from} -> {to} is structurally invalid"));
                }
                model.transition[a * model.tags.len() + b] = *w;
            }
        }
        Ok(model)
    }
}

impl CrfModel {
    /// Zero-weight model over the canonical tag set for `slot_types`.
    pub fn empty_for_types(slot_types: &[SlotType]) -> Self {
        let mut types: Vec<SlotType> = slot_types.to_vec();
        types.sort();
        types.dedup();
        let mut tags = vec![Tag::Outside];
        for ty in types {
            tags.push(Tag::Begin(ty.clone()));
            tags.push(Tag::Inside(ty));
        }
        Self::empty(tags)
    }

    fn empty(tags: Vec<Tag>) -> Self {
        let n = tags.len();
        let mut transition = vec![0.0; n * n];
        let mut valid_transitions = Vec::new();
        for a in 0..n {
            for b in 0..n {
                if transition_valid(&tags[a], &tags[b]) {
                    valid_transitions.push((a, b));
                } else {
                    transition[a * n + b] = f64::NEG_INFINITY;
                }
            }
        }
        CrfModel {
            tags,
            features: Vec::new(),
            feat_idx: HashMap::new(),
            emission: Vec::new(),
            transition,
            valid_transitions,
        }
    }

    pub fn tags(&self) -> &[Tag] {
        &self.tags
    }

    pub fn tag_index(&self, tag: &Tag) -> Option<usize> {
        self.tags.iter().position(|t| t == tag)
    }

    fn register_feature(&mut self, name: &str) -> usize {
        if let Some(&i) = self.feat_idx.get(name) {
            return i;
        }
        let i = self.features.len();
        self.features.push(name.to_string());
        self.feat_idx.insert(name.to_string(), i);
        self.emission.extend(std::iter::repeat(0.0).take(self.tags.len()));
        i
    }

    /// Emission score matrix: score[i][t].
    fn emissions(&self, tokens: &[Token]) -> Vec<Vec<f64>> {
        let n_tags = self.tags.len();
        (0..tokens.len())
            .map(|i| {
                let mut row = vec![0.0; n_tags];
                for f in ner_features(tokens, i) {
                    if let Some(&fi) = self.feat_idx.get(&f) {
                        for (t, r) in row.iter_mut().enumerate() {
                            *r += self.emission[fi * n_tags + t];
                        }
                    }
                }
                row
            })
            .collect()
    }

    /// Unnormalized log score of a tag sequence; negative infinity when the
    /// sequence is structurally invalid.
    pub fn sequence_score(&self, tokens: &[Token], tags: &[Tag]) -> f64 {
        assert_eq!(tokens.len(), tags.len());
        let emit = self.emissions(tokens);
        let idx: Vec<usize> = match tags.iter().map(|t| self.tag_index(t)).collect() {
            Some(v) => v,
            None => return f64::NEG_INFINITY,
        };
        if !start_valid(&self.tags[idx[0]]) {
            return f64::NEG_INFINITY;
        }
        let mut score = emit[0][idx[0]];
        for i in 1..idx.len() {
            score += self.transition[idx[i - 1] * self.tags.len() + idx[i]] + emit[i][idx[i]];
        }
        score
    }

    fn forward(&self, emit: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let n_tags = self.tags.len();
        let n = emit.len();
        let mut alpha = vec![vec![f64::NEG_INFINITY; n_tags]; n];
        for t in 0..n_tags {
            if start_valid(&self.tags[t]) {
                alpha[0][t] = emit[0][t];
            }
        }
        for i in 1..n {
            for b in 0..n_tags {
                let terms: Vec<f64> = (0..n_tags)
                    .map(|a| alpha[i - 1][a] + self.transition[a * n_tags + b])
                    .collect();
                alpha[i][b] = logsumexp(&terms) + emit[i][b];
            }
        }
        alpha
    }

    fn backward(&self, emit: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let n_tags = self.tags.len();
        let n = emit.len();
        let mut beta = vec![vec![0.0; n_tags]; n];
        for i in (0..n - 1).rev() {
            for a in 0..n_tags {
                let terms: Vec<f64> = (0..n_tags)
                    .map(|b| self.transition[a * n_tags + b] + emit[i + 1][b] + beta[i + 1][b])
                    .collect();
                beta[i][a] = logsumexp(&terms);
            }
        }
        beta
    }

    /// Log partition function via the forward recursion.
    pub fn log_partition(&self, tokens: &[Token]) -> f64 {
        let emit = self.emissions(tokens);
        let alpha = self.forward(&emit);
        logsumexp(alpha.last().unwrap())
    }

    /// Log partition function via the backward recursion; agrees with
    /// [`Self::log_partition`] up to floating-point noise.
    pub fn log_partition_backward(&self, tokens: &[Token]) -> f64 {
        let emit = self.emissions(tokens);
        let beta = self.backward(&emit);
        let terms: Vec<f64> = (0..self.tags.len())
            .map(|t| {
                if start_valid(&self.tags[t]) {
                    emit[0][t] + beta[0][t]
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect();
        logsumexp(&terms)
    }

    pub fn log_likelihood(&self, tokens: &[Token], tags: &[Tag]) -> f64 {
        self.sequence_score(tokens, tags) - self.log_partition(tokens)
    }

    /// Most likely tag sequence. Ties resolve to the lowest tag index.
    pub fn viterbi_tags(&self, tokens: &[Token]) -> Vec<Tag> {
        let n_tags = self.tags.len();
        let n = tokens.len();
        if n == 0 {
            return Vec::new();
        }
        let emit = self.emissions(tokens);
        let mut delta = vec![vec![f64::NEG_INFINITY; n_tags]; n];
        let mut back = vec![vec![0usize; n_tags]; n];
        for t in 0..n_tags {
            if start_valid(&self.tags[t]) {
                delta[0][t] = emit[0][t];
            }
        }
        for i in 1..n {
            for b in 0..n_tags {
                let mut best = f64::NEG_INFINITY;
                let mut arg = 0;
                for a in 0..n_tags {
                    let s = delta[i - 1][a] + self.transition[a * n_tags + b];
                    if s > best {
                        best = s;
                        arg = a;
                    }
                }
                delta[i][b] = best + emit[i][b];
                back[i][b] = arg;
            }
        }
        let mut last = 0;
        for t in 1..n_tags {
            if delta[n - 1][t] > delta[n - 1][last] {
                last = t;
            }
        }
        let mut path = vec![last; n];
        for i in (1..n).rev() {
            path[i - 1] = back[i][path[i]];
        }
        path.into_iter().map(|t| self.tags[t].clone()).collect()
    }

    // Parameter indexing: emissions feature-major, then valid transitions.

    pub fn num_parameters(&self) -> usize {
        self.emission.len() + self.valid_transitions.len()
    }

    pub fn get_parameter(&self, i: usize) -> f64 {
        if i < self.emission.len() {
            self.emission[i]
        } else {
            let (a, b) = self.valid_transitions[i - self.emission.len()];
            self.transition[a * self.tags.len() + b]
        }
    }

    pub fn set_parameter(&mut self, i: usize, value: f64) {
        if i < self.emission.len() {
            self.emission[i] = value;
        } else {
            let (a, b) = self.valid_transitions[i - self.emission.len()];
            self.transition[a * self.tags.len() + b] = value;
        }
    }

    /// Reorder features lexicographically. Training registers features in
    /// data order; sorting afterwards makes the in-memory layout match what
    /// deserialization produces.
    fn with_sorted_features(self) -> Self {
        let n_tags = self.tags.len();
        let mut order: Vec<usize> = (0..self.features.len()).collect();
        order.sort_by(|&a, &b| self.features[a].cmp(&self.features[b]));
        let mut features = Vec::with_capacity(self.features.len());
        let mut emission = Vec::with_capacity(self.emission.len());
        let mut feat_idx = HashMap::with_capacity(self.features.len());
        for &old in &order {
            feat_idx.insert(self.features[old].clone(), features.len());
            features.push(self.features[old].clone());
            emission.extend_from_slice(&self.emission[old * n_tags..(old + 1) * n_tags]);
        }
        CrfModel {
            features,
            feat_idx,
            emission,
            ..self
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&CrfRepr::from(self.clone())).expect("model serializes")
    }

    pub fn from_json(json: &str) -> Result<Self> {
        serde_json::from_str(json).map_err(|e| Error::Json {
            origin: "crf model".into(),
            source: e,
        })
    }
}

fn validate_bio(tokens: &[Token], tags: &[Tag]) -> Result<()> {
    if tokens.len() != tags.len() {
        return Err(Error::invalid(format!(
            "{} tokens but {} tags",
            tokens.len(),
            tags.len()
        )));
    }
    if tokens.is_empty() {
        return Err(Error::invalid("empty tagging example"));
    }
    if !start_valid(&tags[0]) {
        return Err(Error::invalid(format!("sequence starts with {}", tags[0])));
    }
    for w in tags.windows(2) {
        if !transition_valid(&w[0], &w[1]) {
            return Err(Error::invalid(format!("invalid BIO transition {} -> {}", w[0], w[1])));
        }
    }
    Ok(())
}

/// Objective and its gradient (indexed per [`CrfModel::get_parameter`]) for
/// the mean L2-regularized log-likelihood.
pub fn ner_gradient(
    model: &CrfModel,
    data: &[(Vec<Token>, Vec<Tag>)],
    l2: f64,
) -> (f64, Vec<f64>) {
    let n_tags = model.tags.len();
    let mut grad = vec![0.0; model.num_parameters()];
    let mut ll = 0.0;
    let inv_n = 1.0 / data.len() as f64;
    let trans_offset = model.emission.len();
    let trans_pos: HashMap<(usize, usize), usize> = model
        .valid_transitions
        .iter()
        .enumerate()
        .map(|(i, &ab)| (ab, i))
        .collect();

    for (tokens, tags) in data {
        let emit = model.emissions(tokens);
        let alpha = model.forward(&emit);
        let beta = model.backward(&emit);
        let log_z = logsumexp(alpha.last().unwrap());
        let gold: Vec<usize> = tags.iter().map(|t| model.tag_index(t).unwrap()).collect();
        ll += model.sequence_score(tokens, tags) - log_z;

        for i in 0..tokens.len() {
            let feats = ner_features(tokens, i);
            for t in 0..n_tags {
                let marginal = (alpha[i][t] + beta[i][t] - log_z).exp();
                let indicator = if gold[i] == t { 1.0 } else { 0.0 };
                let diff = (indicator - marginal) * inv_n;
                if diff == 0.0 {
                    continue;
                }
                for f in &feats {
                    if let Some(&fi) = model.feat_idx.get(f) {
                        grad[fi * n_tags + t] += diff;
                    }
                }
            }
        }
        for i in 1..tokens.len() {
            for &(a, b) in &model.valid_transitions {
                let pair = (alpha[i - 1][a]
                    + model.transition[a * n_tags + b]
                    + emit[i][b]
                    + beta[i][b]
                    - log_z)
                    .exp();
                let indicator = if gold[i - 1] == a && gold[i] == b { 1.0 } else { 0.0 };
                grad[trans_offset + trans_pos[&(a, b)]] += (indicator - pair) * inv_n;
            }
        }
    }

    let mut objective = ll * inv_n;
    for i in 0..model.num_parameters() {
        let w = model.get_parameter(i);
        objective -= 0.5 * l2 * w * w;
        grad[i] -= l2 * w;
    }
    (objective, grad)
}

/// Train the tagger by full-batch gradient ascent. Training data must be
/// valid BIO.
pub fn train_ner(data: &[(Vec<Token>, Vec<Tag>)], config: &NluConfig) -> Result<CrfModel> {
    if data.is_empty() {
        return Err(Error::invalid("tagger training data is empty"));
    }
    let mut types = Vec::new();
    for (tokens, tags) in data {
        validate_bio(tokens, tags)?;
        for tag in tags {
            match tag {
                Tag::Begin(ty) | Tag::Inside(ty) => types.push(ty.clone()),
                Tag::Outside => {}
            }
        }
    }
    let mut model = CrfModel::empty_for_types(&types);
    for (tokens, _) in data {
        for i in 0..tokens.len() {
            for f in ner_features(tokens, i) {
                model.register_feature(&f);
            }
        }
    }
    let mut model = model.with_sorted_features();
    for _ in 0..config.epochs {
        let (_, grad) = ner_gradient(&model, data, config.l2);
        for (i, g) in grad.iter().enumerate() {
            let w = model.get_parameter(i);
            model.set_parameter(i, w + config.learning_rate * g);
        }
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textcore::tokenize;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn city() -> SlotType {
        SlotType::new("City")
    }

    fn tags(spec: &str) -> Vec<Tag> {
        spec.split_whitespace().map(|s| Tag::parse(s).unwrap()).collect()
    }

    fn toy_data() -> Vec<(Vec<Token>, Vec<Tag>)> {
        vec![
            (tokenize("weather in seattle"), tags("O O B-City")),
            (tokenize("weather in new york"), tags("O O B-City I-City")),
            (tokenize("fly to boston today"), tags("O O B-City O")),
            (tokenize("play jazz"), tags("O B-Genre")),
        ]
    }

    /// Random finite weights over the model's parameters.
    fn randomize(model: &mut CrfModel, seed: u64) {
        let mut rng = StdRng::seed_from_u64(seed);
        for i in 0..model.num_parameters() {
            model.set_parameter(i, rng.gen_range(-1.0..1.0));
        }
    }

    fn all_sequences(n_tags: usize, len: usize) -> Vec<Vec<usize>> {
        let mut out = vec![vec![]];
        for _ in 0..len {
            let mut next = Vec::new();
            for seq in &out {
                for t in 0..n_tags {
                    let mut s = seq.clone();
                    s.push(t);
                    next.push(s);
                }
            }
            out = next;
        }
        out
    }

    #[test]
    fn partition_matches_brute_force_enumeration() {
        let mut model = CrfModel::empty_for_types(&[city(), SlotType::new("Genre")]);
        let tokens = tokenize("go to new york now");
        for i in 0..tokens.len() {
            for f in ner_features(&tokens, i) {
                model.register_feature(&f);
            }
        }
        randomize(&mut model, 3);
        let n_tags = model.tags().len();
        let scores: Vec<f64> = all_sequences(n_tags, tokens.len())
            .into_iter()
            .map(|seq| {
                let tag_seq: Vec<Tag> = seq.iter().map(|&t| model.tags()[t].clone()).collect();
                model.sequence_score(&tokens, &tag_seq)
            })
            .collect();
        let brute = logsumexp(&scores);
        let forward = model.log_partition(&tokens);
        assert!((brute - forward).abs() < 1e-9, "{brute} vs {forward}");
    }

    #[test]
    fn forward_and_backward_partitions_agree() {
        let mut model = CrfModel::empty_for_types(&[city()]);
        let tokens = tokenize("book a flight to boston");
        for i in 0..tokens.len() {
            for f in ner_features(&tokens, i) {
                model.register_feature(&f);
            }
        }
        randomize(&mut model, 7);
        let f = model.log_partition(&tokens);
        let b = model.log_partition_backward(&tokens);
        assert!(((f - b) / f.abs().max(1.0)).abs() < 1e-9, "{f} vs {b}");
    }

    #[test]
    fn single_label_corpus_has_zero_log_likelihood() {
        let data = vec![(tokenize("hello world"), tags("O O"))];
        let model = train_ner(&data, &NluConfig { l2: 0.1, learning_rate: 0.5, epochs: 3, seed: 0 }).unwrap();
        assert_eq!(model.tags().len(), 1);
        let ll = model.log_likelihood(&tokenize("anything goes here"), &tags("O O O"));
        assert!(ll.abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let data = toy_data();
        let mut model = CrfModel::empty_for_types(&[city(), SlotType::new("Genre")]);
        for (tokens, _) in &data {
            for i in 0..tokens.len() {
                for f in ner_features(tokens, i) {
                    model.register_feature(&f);
                }
            }
        }
        randomize(&mut model, 11);
        let l2 = 0.1;
        let (_, grad) = ner_gradient(&model, &data, l2);
        let eps = 1e-5;
        for i in 0..model.num_parameters() {
            let orig = model.get_parameter(i);
            model.set_parameter(i, orig + eps);
            let up = ner_gradient(&model, &data, l2).0;
            model.set_parameter(i, orig - eps);
            let down = ner_gradient(&model, &data, l2).0;
            model.set_parameter(i, orig);
            let numeric = (up - down) / (2.0 * eps);
            // The denominator floor keeps the ratio meaningful for
            // vanishing gradients dominated by f64 cancellation noise.
            let rel = (grad[i] - numeric).abs() / grad[i].abs().max(numeric.abs()).max(1e-4);
            assert!(rel < 1e-5, "param {i}: analytic {} vs numeric {numeric}", grad[i]);
        }
    }

    #[test]
    fn viterbi_matches_brute_force_argmax() {
        for seed in 0..20 {
            let mut model = CrfModel::empty_for_types(&[city()]);
            let tokens = tokenize("fly from new york");
            for i in 0..tokens.len() {
                for f in ner_features(&tokens, i) {
                    model.register_feature(&f);
                }
            }
            randomize(&mut model, seed);
            let n_tags = model.tags().len();
            let mut best: Option<(f64, Vec<usize>)> = None;
            for seq in all_sequences(n_tags, tokens.len()) {
                let tag_seq: Vec<Tag> = seq.iter().map(|&t| model.tags()[t].clone()).collect();
                let score = model.sequence_score(&tokens, &tag_seq);
                if score == f64::NEG_INFINITY {
                    continue;
                }
                let better = match &best {
                    None => true,
                    Some((bs, bseq)) => score > *bs || (score == *bs && seq < *bseq),
                };
                if better {
                    best = Some((score, seq));
                }
            }
            let brute: Vec<Tag> = best
                .unwrap()
                .1
                .iter()
                .map(|&t| model.tags()[t].clone())
                .collect();
            assert_eq!(model.viterbi_tags(&tokens), brute, "seed {seed}");
        }
    }

    #[test]
    fn viterbi_is_deterministic_and_respects_constraints() {
        let data = toy_data();
        let model = train_ner(&data, &NluConfig { l2: 0.1, learning_rate: 0.5, epochs: 30, seed: 0 }).unwrap();
        let tokens = tokenize("weather in new york");
        let a = model.viterbi_tags(&tokens);
        let b = model.viterbi_tags(&tokens);
        assert_eq!(a, b);
        assert!(start_valid(&a[0]));
        for w in a.windows(2) {
            assert!(transition_valid(&w[0], &w[1]));
        }
    }

    #[test]
    fn invalid_bio_training_data_is_fatal() {
        let cfg = NluConfig { l2: 0.1, learning_rate: 0.5, epochs: 1, seed: 0 };
        let bad_start = vec![(tokenize("a b"), tags("I-City O"))];
        assert!(train_ner(&bad_start, &cfg).is_err());
        let bad_chain = vec![(tokenize("a b c"), tags("O I-City O"))];
        assert!(train_ner(&bad_chain, &cfg).is_err());
        let bad_type = vec![(tokenize("a b"), tags("B-City I-Genre"))];
        assert!(train_ner(&bad_type, &cfg).is_err());
    }

    #[test]
    fn training_learns_toy_spans() {
        let data = toy_data();
        let model = train_ner(&data, &NluConfig { l2: 0.05, learning_rate: 0.5, epochs: 150, seed: 0 }).unwrap();
        for (tokens, gold) in &data {
            assert_eq!(&model.viterbi_tags(tokens), gold);
        }
    }

    #[test]
    fn model_json_round_trip() {
        let data = toy_data();
        let model = train_ner(&data, &NluConfig { l2: 0.1, learning_rate: 0.5, epochs: 10, seed: 0 }).unwrap();
        let back = CrfModel::from_json(&model.to_json()).unwrap();
        assert_eq!(model, back);
    }
}
