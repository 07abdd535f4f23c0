//! Maximum-entropy intent classifier over n-gram features, trained by
//! full-batch gradient ascent on the L2-regularized conditional
//! log-likelihood.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::textcore::Token;

use super::NluConfig;

/// Feature multiset for one utterance: unigrams, bigrams, a sentence-length
/// bucket and a bias feature. Repeats count.
pub fn ic_features(tokens: &[Token]) -> Vec<String> {
    let mut feats = Vec::with_capacity(tokens.len() * 2 + 2);
    feats.push("bias".to_string());
    for t in tokens {
        feats.push(format!("uni:{t}"));
    }
    for w in tokens.windows(2) {
        feats.push(format!("bi:{}_{}", w[0], w[1]));
    }
    let bucket = match tokens.len() {
        0..=2 => "1-2",
        3..=5 => "3-5",
        _ => "6+",
    };
    feats.push(format!("len:{bucket}"));
    feats
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaxEntModel {
    format_version: u32,
    /// Sorted, unique.
    labels: Vec<String>,
    /// feature -> one weight per label.
    weights: BTreeMap<String, Vec<f64>>,
}

impl MaxEntModel {
    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    fn scores(&self, feats: &[String]) -> Vec<f64> {
        let mut scores = vec![0.0; self.labels.len()];
        for f in feats {
            if let Some(ws) = self.weights.get(f) {
                for (s, w) in scores.iter_mut().zip(ws) {
                    *s += w;
                }
            }
        }
        scores
    }

    /// Per-label probabilities in label order.
    pub fn probabilities(&self, tokens: &[Token]) -> Vec<f64> {
        let scores = self.scores(&ic_features(tokens));
        softmax(&scores)
    }

    /// Most probable intent; ties go to the lexicographically first label.
    pub fn classify(&self, tokens: &[Token]) -> (String, f64) {
        let probs = self.probabilities(tokens);
        let mut best = 0;
        for (i, p) in probs.iter().enumerate() {
            if *p > probs[best] {
                best = i;
            }
        }
        (self.labels[best].clone(), probs[best])
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(json: &str) -> Result<Self> {
        serde_json::from_str(json).map_err(|e| Error::Json {
            origin: "maxent model".into(),
            source: e,
        })
    }
}

fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|&s| (s - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.iter().map(|e| e / z).collect()
}

/// Mean conditional log-likelihood minus the L2 penalty; the quantity
/// gradient ascent climbs.
pub fn ic_objective(model: &MaxEntModel, data: &[(Vec<Token>, String)], l2: f64) -> f64 {
    let mut ll = 0.0;
    for (tokens, label) in data {
        let probs = model.probabilities(tokens);
        let idx = model.labels.iter().position(|l| l == label).expect("known label");
        ll += probs[idx].ln();
    }
    let mut penalty = 0.0;
    for ws in model.weights.values() {
        for w in ws {
            penalty += w * w;
        }
    }
    ll / data.len() as f64 - 0.5 * l2 * penalty
}

/// Train the classifier. Needs at least two distinct intents.
pub fn train_ic(data: &[(Vec<Token>, String)], config: &NluConfig) -> Result<MaxEntModel> {
    if data.is_empty() {
        return Err(Error::invalid("intent training data is empty"));
    }
    let mut labels: Vec<String> = data.iter().map(|(_, l)| l.clone()).collect();
    labels.sort();
    labels.dedup();
    if labels.len() < 2 {
        return Err(Error::invalid(
            "intent classifier needs at least two distinct intents",
        ));
    }
    let label_idx: HashMap<&str, usize> = labels
        .iter()
        .enumerate()
        .map(|(i, l)| (l.as_str(), i))
        .collect();

    // Pre-extract feature counts per example.
    let examples: Vec<(BTreeMap<String, f64>, usize)> = data
        .iter()
        .map(|(tokens, label)| {
            let mut counts: BTreeMap<String, f64> = BTreeMap::new();
            for f in ic_features(tokens) {
                *counts.entry(f).or_insert(0.0) += 1.0;
            }
            (counts, label_idx[label.as_str()])
        })
        .collect();

    let mut features: Vec<String> = examples
        .iter()
        .flat_map(|(c, _)| c.keys().cloned())
        .collect();
    features.sort();
    features.dedup();
    let feat_idx: HashMap<&str, usize> = features
        .iter()
        .enumerate()
        .map(|(i, f)| (f.as_str(), i))
        .collect();

    let n_labels = labels.len();
    let mut weights = vec![0.0; features.len() * n_labels];
    let inv_n = 1.0 / examples.len() as f64;

    for _ in 0..config.epochs {
        let mut grad = vec![0.0; weights.len()];
        for (counts, gold) in &examples {
            let mut scores = vec![0.0; n_labels];
            for (f, c) in counts {
                let fi = feat_idx[f.as_str()];
                for (l, s) in scores.iter_mut().enumerate() {
                    *s += c * weights[fi * n_labels + l];
                }
            }
            let probs = softmax(&scores);
            for (f, c) in counts {
                let fi = feat_idx[f.as_str()];
                for l in 0..n_labels {
                    let indicator = if l == *gold { 1.0 } else { 0.0 };
                    grad[fi * n_labels + l] += c * (indicator - probs[l]);
                }
            }
        }
        for (w, g) in weights.iter_mut().zip(&grad) {
            *w += config.learning_rate * (g * inv_n - config.l2 * *w);
        }
    }

    let weights_map: BTreeMap<String, Vec<f64>> = features
        .iter()
        .enumerate()
        .map(|(fi, f)| {
            (
                f.clone(),
                weights[fi * n_labels..(fi + 1) * n_labels].to_vec(),
            )
        })
        .collect();

    Ok(MaxEntModel {
        format_version: 1,
        labels,
        weights: weights_map,
    })
}
