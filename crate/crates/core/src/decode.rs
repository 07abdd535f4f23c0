//! Left-to-right beam search for n-best hypotheses, an optional seeded
//! posterior-sampling mode, and the slot filter applied to candidates
//! before they become accepted paraphrases.

use std::collections::HashMap;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grammar::SlotSpan;
use crate::seq2seq::{DecoderState, Seq2SeqModel};
use crate::slotcopy::{restore_slots, RejectReason, SlotBinding};
use crate::textcore::{Token, Vocabulary, BOS_ID, EOS_ID};

/// A scored (partial or finished) output sequence. `token_ids` excludes the
/// implicit start symbol; finished hypotheses end with the end symbol.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub token_ids: Vec<usize>,
    /// Sum of per-step log probabilities; never positive.
    pub score: f64,
    pub finished: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamParams {
    pub beam_width: usize,
    pub n_best: usize,
    pub max_len: usize,
    /// Divide scores by emitted length when ranking. Off by default; raw
    /// log-probability sums are the reference behavior.
    pub length_normalize: bool,
}

impl Default for BeamParams {
    fn default() -> Self {
        BeamParams {
            beam_width: 8,
            n_best: 4,
            max_len: 20,
            length_normalize: false,
        }
    }
}

struct Live {
    ids: Vec<usize>,
    score: f64,
    state: DecoderState,
    prev: usize,
}

fn rank_score(score: f64, len: usize, normalize: bool) -> f64 {
    if normalize {
        score / len.max(1) as f64
    } else {
        score
    }
}

/// Standard beam search from the start symbol. Every live hypothesis is
/// expanded over the full output vocabulary; the top `beam_width` by score
/// survive. Finished hypotheses leave the beam for a completed pool; the
/// search stops once the pool holds `beam_width` of them or `max_len` steps
/// have run, at which point unfinished survivors join the pool flagged as
/// such. Ties break on lexicographic token-id order.
pub fn beam_search(
    model: &Seq2SeqModel,
    source_ids: &[usize],
    params: &BeamParams,
) -> Result<Vec<Hypothesis>> {
    if params.beam_width == 0 {
        return Err(Error::invalid("beam_width must be >= 1"));
    }
    if params.n_best == 0 || params.n_best > params.beam_width {
        return Err(Error::invalid("n_best must be in 1..=beam_width"));
    }
    if params.max_len == 0 {
        return Err(Error::invalid("max_len must be >= 1"));
    }

    let context = model.encode(source_ids)?;
    let vocab_size = model.output_vocab.len();
    let mut live = vec![Live {
        ids: Vec::new(),
        score: 0.0,
        state: model.init_decoder_state(&context),
        prev: BOS_ID,
    }];
    let mut pool: Vec<Hypothesis> = Vec::new();

    for _ in 0..params.max_len {
        if live.is_empty() || pool.len() >= params.beam_width {
            break;
        }
        let mut stepped: Vec<(Vec<f64>, DecoderState)> = Vec::with_capacity(live.len());
        for hyp in &live {
            stepped.push(model.step_decoder_logprobs(&hyp.state, hyp.prev)?);
        }
        // (parent index, token, candidate score)
        let mut candidates: Vec<(usize, usize, f64)> =
            Vec::with_capacity(live.len() * vocab_size);
        for (pi, (logp, _)) in stepped.iter().enumerate() {
            for (tok, lp) in logp.iter().enumerate() {
                candidates.push((pi, tok, live[pi].score + lp));
            }
        }
        candidates.sort_by(|a, b| {
            let la = a.2 / if params.length_normalize { (live[a.0].ids.len() + 1).max(1) as f64 } else { 1.0 };
            let lb = b.2 / if params.length_normalize { (live[b.0].ids.len() + 1).max(1) as f64 } else { 1.0 };
            lb.total_cmp(&la)
                .then_with(|| live[a.0].ids.cmp(&live[b.0].ids))
                .then_with(|| a.1.cmp(&b.1))
        });

        let mut next_live = Vec::with_capacity(params.beam_width);
        for &(pi, tok, score) in candidates.iter().take(params.beam_width) {
            let mut ids = live[pi].ids.clone();
            ids.push(tok);
            if tok == EOS_ID {
                pool.push(Hypothesis {
                    token_ids: ids,
                    score,
                    finished: true,
                });
            } else {
                next_live.push(Live {
                    ids,
                    score,
                    state: stepped[pi].1.clone(),
                    prev: tok,
                });
            }
        }
        live = next_live;
    }

    for hyp in live {
        pool.push(Hypothesis {
            token_ids: hyp.ids,
            score: hyp.score,
            finished: false,
        });
    }

    pool.sort_by(|a, b| {
        let sa = rank_score(a.score, a.token_ids.len(), params.length_normalize);
        let sb = rank_score(b.score, b.token_ids.len(), params.length_normalize);
        sb.total_cmp(&sa).then_with(|| a.token_ids.cmp(&b.token_ids))
    });
    pool.truncate(params.n_best);
    Ok(pool)
}

/// Greedy decoding: beam search with a single beam, returning the emitted
/// ids (ending with the end symbol when one was produced).
pub fn greedy_decode(model: &Seq2SeqModel, source_ids: &[usize], max_len: usize) -> Result<Vec<usize>> {
    let hyps = beam_search(
        model,
        source_ids,
        &BeamParams {
            beam_width: 1,
            n_best: 1,
            max_len,
            length_normalize: false,
        },
    )?;
    Ok(hyps.into_iter().next().map(|h| h.token_ids).unwrap_or_default())
}

/// Ancestral sampling from the decoder's per-step posterior, seeded. An
/// alternative to beam search for more diverse hypotheses; off by default
/// in the pipeline.
pub fn sample_hypotheses(
    model: &Seq2SeqModel,
    source_ids: &[usize],
    n_samples: usize,
    max_len: usize,
    seed: u64,
) -> Result<Vec<Hypothesis>> {
    if max_len == 0 {
        return Err(Error::invalid("max_len must be >= 1"));
    }
    let context = model.encode(source_ids)?;
    let mut rng = StdRng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let mut state = model.init_decoder_state(&context);
        let mut prev = BOS_ID;
        let mut ids = Vec::new();
        let mut score = 0.0;
        let mut finished = false;
        for _ in 0..max_len {
            let (logp, next) = model.step_decoder_logprobs(&state, prev)?;
            let draw: f64 = rng.gen();
            let mut acc = 0.0;
            let mut tok = logp.len() - 1;
            for (i, lp) in logp.iter().enumerate() {
                acc += lp.exp();
                if draw < acc {
                    tok = i;
                    break;
                }
            }
            score += logp[tok];
            ids.push(tok);
            if tok == EOS_ID {
                finished = true;
                break;
            }
            state = next;
            prev = tok;
        }
        out.push(Hypothesis {
            token_ids: ids,
            score,
            finished,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterOptions {
    /// Drop outputs identical to the original input tokens.
    pub drop_identity: bool,
}

impl Default for FilterOptions {
    fn default() -> Self {
        FilterOptions {
            drop_identity: true,
        }
    }
}

/// Bookkeeping for one generation call.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectionStats {
    pub hypotheses: usize,
    pub accepted: usize,
    pub missing_slot: usize,
    pub extra_slot: usize,
    pub wrong_type: usize,
    pub duplicate_index: usize,
    pub identity_dropped: usize,
    pub deduplicated: usize,
}

impl RejectionStats {
    pub fn add(&mut self, other: &RejectionStats) {
        self.hypotheses += other.hypotheses;
        self.accepted += other.accepted;
        self.missing_slot += other.missing_slot;
        self.extra_slot += other.extra_slot;
        self.wrong_type += other.wrong_type;
        self.duplicate_index += other.duplicate_index;
        self.identity_dropped += other.identity_dropped;
        self.deduplicated += other.deduplicated;
    }

    pub fn rejected(&self) -> usize {
        self.missing_slot + self.extra_slot + self.wrong_type + self.duplicate_index
    }

    fn bump(&mut self, reason: RejectReason) {
        match reason {
            RejectReason::MissingSlot => self.missing_slot += 1,
            RejectReason::ExtraSlot => self.extra_slot += 1,
            RejectReason::WrongType => self.wrong_type += 1,
            RejectReason::DuplicateIndex => self.duplicate_index += 1,
        }
    }
}

/// An accepted, slot-restored paraphrase.
#[derive(Debug, Clone, PartialEq)]
pub struct AcceptedParaphrase {
    pub tokens: Vec<Token>,
    pub slots: Vec<SlotSpan>,
    pub score: f64,
}

/// Map hypothesis ids back to tokens, dropping a trailing end symbol.
pub fn detokenize(hypothesis: &Hypothesis, vocab: &Vocabulary) -> Vec<Token> {
    let ids = &hypothesis.token_ids;
    let ids = match ids.last() {
        Some(&id) if id == EOS_ID => &ids[..ids.len() - 1],
        _ => &ids[..],
    };
    vocab.decode(ids)
}

/// Restore slots in each hypothesis and keep the survivors: rejects are
/// counted by reason, outputs equal to the original input are dropped when
/// `drop_identity` is set, and duplicate surface forms keep the best score.
/// Survivors stay in first-seen order, which is score order when the
/// hypotheses arrive ranked.
pub fn filter_candidates(
    hypotheses: &[Hypothesis],
    bindings: &[SlotBinding],
    original_tokens: &[Token],
    output_vocab: &Vocabulary,
    options: &FilterOptions,
) -> (Vec<AcceptedParaphrase>, RejectionStats) {
    let mut stats = RejectionStats::default();
    let mut accepted: Vec<AcceptedParaphrase> = Vec::new();
    let mut by_surface: HashMap<Vec<Token>, usize> = HashMap::new();

    for hyp in hypotheses {
        stats.hypotheses += 1;
        let tokens = detokenize(hyp, output_vocab);
        match restore_slots(&tokens, bindings) {
            Err(reason) => stats.bump(reason),
            Ok(restored) => {
                if options.drop_identity && restored.tokens == original_tokens {
                    stats.identity_dropped += 1;
                    continue;
                }
                match by_surface.get(&restored.tokens) {
                    Some(&idx) => {
                        stats.deduplicated += 1;
                        if hyp.score > accepted[idx].score {
                            accepted[idx].score = hyp.score;
                        }
                    }
                    None => {
                        by_surface.insert(restored.tokens.clone(), accepted.len());
                        accepted.push(AcceptedParaphrase {
                            tokens: restored.tokens,
                            slots: restored.slots,
                            score: hyp.score,
                        });
                    }
                }
            }
        }
    }
    stats.accepted = accepted.len();
    (accepted, stats)
}
