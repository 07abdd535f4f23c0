//! Training loops: the two-stage protocol and its schemes.
//!
//! Stage one trains the whole network as a translation model on one or
//! more parallel corpora, sharing the encoder across per-corpus decoders.
//! Stage two retrains on in-domain paraphrase pairs under one of three
//! schemes: `no_slot_copy` and `fixed_encoder` freeze the encoder,
//! `fine_tune` updates it.

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::textcore::{EmbeddingTable, Vocabulary};

use super::backprop::{accumulate_example, gradients, ModelGrads};
use super::{init_decoder, init_model, DecoderParams, ModelDims, Seq2SeqModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Stage one: translation pretraining on parallel corpora.
    MtPretrain,
    /// Stage two without the copying mechanism; encoder frozen.
    NoSlotCopy,
    /// Stage two on abstracted pairs; encoder frozen.
    FixedEncoder,
    /// Stage two on abstracted pairs; encoder updated too.
    FineTune,
}

impl Scheme {
    pub fn freezes_encoder(self) -> bool {
        matches!(self, Scheme::NoSlotCopy | Scheme::FixedEncoder)
    }

    pub fn uses_slot_copying(self) -> bool {
        matches!(self, Scheme::FixedEncoder | Scheme::FineTune)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::MtPretrain => "mt_pretrain",
            Scheme::NoSlotCopy => "no_slot_copy",
            Scheme::FixedEncoder => "fixed_encoder",
            Scheme::FineTune => "fine_tune",
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "mt_pretrain" => Ok(Scheme::MtPretrain),
            "no_slot_copy" => Ok(Scheme::NoSlotCopy),
            "fixed_encoder" => Ok(Scheme::FixedEncoder),
            "fine_tune" => Ok(Scheme::FineTune),
            other => Err(Error::Config(format!("unknown scheme {other:?}"))),
        }
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub scheme: Scheme,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub grad_clip_norm: f64,
    pub seed: u64,
    pub max_sequence_length: usize,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be > 0".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.grad_clip_norm > 0.0) {
            return Err(Error::Config("grad_clip_norm must be > 0".into()));
        }
        if self.max_sequence_length == 0 {
            return Err(Error::Config("max_sequence_length must be >= 1".into()));
        }
        Ok(())
    }
}

fn clip(grads: &mut ModelGrads, max_norm: f64) {
    let norm = grads.global_norm();
    if norm > max_norm {
        grads.scale(max_norm / norm);
    }
}

fn apply_update(model: &mut Seq2SeqModel, grads: &ModelGrads, lr: f64) {
    for ((_, p), (_, g)) in model.blocks_mut().into_iter().zip(grads.blocks()) {
        for (pv, gv) in p.iter_mut().zip(g) {
            *pv -= lr * gv;
        }
    }
}

/// Mini-batch gradient descent over `(source_ids, target_ids)` pairs.
/// Deterministic for a given seed. Returns per-epoch mean loss.
pub fn train(
    model: &mut Seq2SeqModel,
    corpus: &[(Vec<usize>, Vec<usize>)],
    config: &TrainConfig,
) -> Result<Vec<f64>> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(Error::invalid("training corpus is empty"));
    }
    for (src, tgt) in corpus {
        if src.is_empty() {
            return Err(Error::invalid("training corpus contains an empty source"));
        }
        if src.len() > config.max_sequence_length || tgt.len() + 1 > config.max_sequence_length {
            return Err(Error::invalid(format!(
                "sequence longer than max_sequence_length {}",
                config.max_sequence_length
            )));
        }
    }

    model.freeze_encoder = config.scheme.freezes_encoder();
    model.scheme = Some(config.scheme);

    let mut rng = StdRng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (batch_idx, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<(Vec<usize>, Vec<usize>)> =
                chunk.iter().map(|&i| corpus[i].clone()).collect();
            let (mut grads, mean_loss) = gradients(model, &batch)?;
            if !mean_loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: batch_idx,
                });
            }
            clip(&mut grads, config.grad_clip_norm);
            apply_update(model, &grads, config.learning_rate);
            epoch_loss += mean_loss * chunk.len() as f64;
        }
        history.push(epoch_loss / corpus.len() as f64);
    }
    Ok(history)
}

/// One parallel corpus for stage-one pretraining: encoded pairs plus the
/// output vocabulary its decoder projects onto.
#[derive(Debug, Clone)]
pub struct PretrainCorpus {
    pub pairs: Vec<(Vec<usize>, Vec<usize>)>,
    pub output_vocab: Vocabulary,
}

#[derive(Debug)]
pub struct MultiPretrainOutcome {
    /// Shared encoder plus the first corpus's decoder.
    pub model: Seq2SeqModel,
    /// Decoders of the remaining corpora, in corpus order.
    pub extra_decoders: Vec<DecoderParams>,
    /// Per-corpus, per-epoch mean loss.
    pub histories: Vec<Vec<f64>>,
}

/// Stage-one pretraining over 1..N parallel corpora with a shared encoder
/// and one decoder per corpus. Mini-batches from the corpora interleave
/// round-robin within each epoch. With a single corpus this is plain
/// translation pretraining.
///
/// The decoders are independent: a batch from corpus j only ever touches
/// the shared encoder and decoder j.
pub fn pretrain_multi(
    dims: ModelDims,
    input_vocab: Vocabulary,
    embeddings: &EmbeddingTable,
    corpora: &[PretrainCorpus],
    config: &TrainConfig,
) -> Result<MultiPretrainOutcome> {
    config.validate()?;
    if config.scheme != Scheme::MtPretrain {
        return Err(Error::Config(format!(
            "pretraining requires the mt_pretrain scheme, got {}",
            config.scheme
        )));
    }
    if corpora.is_empty() || corpora.iter().any(|c| c.pairs.is_empty()) {
        return Err(Error::invalid("pretraining needs at least one non-empty corpus"));
    }
    for c in corpora {
        for (src, tgt) in &c.pairs {
            if src.is_empty()
                || src.len() > config.max_sequence_length
                || tgt.len() + 1 > config.max_sequence_length
            {
                return Err(Error::invalid(
                    "pretraining corpus contains an empty or over-long pair",
                ));
            }
        }
    }

    let mut model = init_model(dims, input_vocab, corpora[0].output_vocab.clone(), config.seed);
    model.set_input_embeddings(embeddings)?;
    // Decoders for the remaining corpora continue the same seeded stream.
    let mut rng = StdRng::seed_from_u64(config.seed.wrapping_add(1));
    let mut extra_decoders: Vec<DecoderParams> = corpora[1..]
        .iter()
        .map(|c| init_decoder(dims, c.output_vocab.len(), &mut rng))
        .collect();

    let mut shuffle_rng = StdRng::seed_from_u64(config.seed.wrapping_add(2));
    let mut histories: Vec<Vec<f64>> = vec![Vec::new(); corpora.len()];

    for epoch in 0..config.epochs {
        let mut orders: Vec<Vec<usize>> = corpora
            .iter()
            .map(|c| (0..c.pairs.len()).collect())
            .collect();
        for order in &mut orders {
            order.shuffle(&mut shuffle_rng);
        }
        let mut cursors = vec![0usize; corpora.len()];
        let mut epoch_losses = vec![0.0; corpora.len()];
        let mut batch_idx = 0usize;
        loop {
            let mut any = false;
            for (j, corpus) in corpora.iter().enumerate() {
                if cursors[j] >= corpus.pairs.len() {
                    continue;
                }
                any = true;
                let hi = (cursors[j] + config.batch_size).min(corpus.pairs.len());
                let chunk = &orders[j][cursors[j]..hi];
                cursors[j] = hi;

                let decoder = if j == 0 {
                    &model.decoder
                } else {
                    &extra_decoders[j - 1]
                };
                let mut grads = ModelGrads::zeros_from_parts(&model.encoder, decoder);
                let mut loss = 0.0;
                for &i in chunk {
                    let (src, tgt) = &corpus.pairs[i];
                    let mut g = ModelGrads::zeros_from_parts(&model.encoder, decoder);
                    loss += accumulate_example(
                        &model.input_embeddings,
                        &model.encoder,
                        decoder,
                        dims.hidden_dim,
                        src,
                        tgt,
                        &mut g,
                    )?;
                    grads.add(&g);
                }
                let inv = 1.0 / chunk.len() as f64;
                grads.scale(inv);
                let mean_loss = loss * inv;
                if !mean_loss.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        epoch,
                        batch: batch_idx,
                    });
                }
                clip(&mut grads, config.grad_clip_norm);
                // Shared encoder update plus the owning corpus's decoder.
                let lr = config.learning_rate;
                let decoder = if j == 0 {
                    &mut model.decoder
                } else {
                    &mut extra_decoders[j - 1]
                };
                update_cell(&mut model.encoder.l1_fwd.w.data, &grads.enc_l1_fwd.w.data, lr);
                update_cell(&mut model.encoder.l1_fwd.u.data, &grads.enc_l1_fwd.u.data, lr);
                update_cell(&mut model.encoder.l1_fwd.b, &grads.enc_l1_fwd.b, lr);
                update_cell(&mut model.encoder.l1_bwd.w.data, &grads.enc_l1_bwd.w.data, lr);
                update_cell(&mut model.encoder.l1_bwd.u.data, &grads.enc_l1_bwd.u.data, lr);
                update_cell(&mut model.encoder.l1_bwd.b, &grads.enc_l1_bwd.b, lr);
                update_cell(&mut model.encoder.l2.w.data, &grads.enc_l2.w.data, lr);
                update_cell(&mut model.encoder.l2.u.data, &grads.enc_l2.u.data, lr);
                update_cell(&mut model.encoder.l2.b, &grads.enc_l2.b, lr);
                update_cell(&mut decoder.l1.w.data, &grads.dec_l1.w.data, lr);
                update_cell(&mut decoder.l1.u.data, &grads.dec_l1.u.data, lr);
                update_cell(&mut decoder.l1.b, &grads.dec_l1.b, lr);
                update_cell(&mut decoder.l2.w.data, &grads.dec_l2.w.data, lr);
                update_cell(&mut decoder.l2.u.data, &grads.dec_l2.u.data, lr);
                update_cell(&mut decoder.l2.b, &grads.dec_l2.b, lr);
                update_cell(&mut decoder.proj_w.data, &grads.proj_w.data, lr);
                update_cell(&mut decoder.proj_b, &grads.proj_b, lr);

                epoch_losses[j] += mean_loss * chunk.len() as f64;
                batch_idx += 1;
            }
            if !any {
                break;
            }
        }
        for (j, corpus) in corpora.iter().enumerate() {
            histories[j].push(epoch_losses[j] / corpus.pairs.len() as f64);
        }
    }

    model.scheme = Some(Scheme::MtPretrain);
    Ok(MultiPretrainOutcome {
        model,
        extra_decoders,
        histories,
    })
}

fn update_cell(params: &mut [f64], grads: &[f64], lr: f64) {
    for (p, g) in params.iter_mut().zip(grads) {
        *p -= lr * g;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seq2seq::{init_model, zero_model};
    use crate::textcore::{Token, EOS_ID};

    fn vocab(n: usize) -> Vocabulary {
        let corpus: Vec<Vec<Token>> = (0..n).map(|i| vec![Token::new(format!("w{i}"))]).collect();
        Vocabulary::build(&corpus, 1, &[])
    }

    fn toy_config(scheme: Scheme, epochs: usize) -> TrainConfig {
        TrainConfig {
            scheme,
            learning_rate: 0.5,
            epochs,
            batch_size: 4,
            grad_clip_norm: 5.0,
            seed: 7,
            max_sequence_length: 16,
        }
    }

    fn toy_corpus() -> Vec<(Vec<usize>, Vec<usize>)> {
        vec![
            (vec![4, 5], vec![5, 4]),
            (vec![5, 6], vec![6, 5]),
            (vec![6, 4], vec![4, 6]),
        ]
    }

    #[test]
    fn fixed_encoder_leaves_encoder_bits_untouched() {
        let mut model = init_model(
            ModelDims {
                embedding_dim: 3,
                hidden_dim: 4,
            },
            vocab(4),
            vocab(4),
            1,
        );
        let before: Vec<Vec<f64>> = model
            .blocks()
            .iter()
            .filter(|(n, _)| n.starts_with("enc_"))
            .map(|(_, b)| b.to_vec())
            .collect();
        train(&mut model, &toy_corpus(), &toy_config(Scheme::FixedEncoder, 10)).unwrap();
        let after: Vec<Vec<f64>> = model
            .blocks()
            .iter()
            .filter(|(n, _)| n.starts_with("enc_"))
            .map(|(_, b)| b.to_vec())
            .collect();
        assert_eq!(before, after);
    }

    #[test]
    fn fine_tune_changes_encoder() {
        let mut model = init_model(
            ModelDims {
                embedding_dim: 3,
                hidden_dim: 4,
            },
            vocab(4),
            vocab(4),
            1,
        );
        let before: Vec<f64> = model.encoder.l2.w.data.clone();
        train(&mut model, &toy_corpus(), &toy_config(Scheme::FineTune, 5)).unwrap();
        assert_ne!(before, model.encoder.l2.w.data);
    }

    #[test]
    fn training_is_deterministic() {
        let build = || {
            let mut m = init_model(
                ModelDims {
                    embedding_dim: 3,
                    hidden_dim: 4,
                },
                vocab(4),
                vocab(4),
                2,
            );
            let h = train(&mut m, &toy_corpus(), &toy_config(Scheme::FineTune, 6)).unwrap();
            (m, h)
        };
        let (m1, h1) = build();
        let (m2, h2) = build();
        assert_eq!(h1, h2);
        assert_eq!(m1, m2);
    }

    #[test]
    fn single_pair_is_memorizable() {
        let mut model = init_model(
            ModelDims {
                embedding_dim: 4,
                hidden_dim: 8,
            },
            vocab(4),
            vocab(4),
            3,
        );
        let corpus = vec![(vec![4, 5], vec![4, 5])];
        let mut cfg = toy_config(Scheme::FineTune, 500);
        cfg.batch_size = 1;
        cfg.learning_rate = 0.5;
        let history = train(&mut model, &corpus, &cfg).unwrap();
        assert!(
            history.last().unwrap() < &0.1,
            "final loss {}",
            history.last().unwrap()
        );
        // Greedy decode reproduces the memorized sequence.
        let ctx = model.encode(&[4, 5]).unwrap();
        let mut state = model.init_decoder_state(&ctx);
        let mut prev = crate::textcore::BOS_ID;
        let mut out = Vec::new();
        for _ in 0..5 {
            let (logp, next) = model.step_decoder_logprobs(&state, prev).unwrap();
            let argmax = logp
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
                .unwrap()
                .0;
            out.push(argmax);
            if argmax == EOS_ID {
                break;
            }
            state = next;
            prev = argmax;
        }
        assert_eq!(out, vec![4, 5, EOS_ID]);
    }

    #[test]
    fn zero_sized_corpus_is_rejected() {
        let mut model = zero_model(
            ModelDims {
                embedding_dim: 2,
                hidden_dim: 2,
            },
            vocab(1),
            vocab(1),
        );
        assert!(train(&mut model, &[], &toy_config(Scheme::FineTune, 1)).is_err());
    }

    #[test]
    fn pretrain_multi_decoders_are_independent() {
        let dims = ModelDims {
            embedding_dim: 3,
            hidden_dim: 4,
        };
        let emb = EmbeddingTable::synthetic(vocab(6).tokens().iter(), 3, 1);
        let corpora = vec![
            PretrainCorpus {
                pairs: vec![(vec![4, 5], vec![4]), (vec![5, 6], vec![5])],
                output_vocab: vocab(3),
            },
            PretrainCorpus {
                pairs: vec![(vec![4], vec![6, 4]), (vec![6], vec![4])],
                output_vocab: vocab(4),
            },
        ];
        let cfg = toy_config(Scheme::MtPretrain, 4);
        let out = pretrain_multi(dims, vocab(6), &emb, &corpora, &cfg).unwrap();
        assert_eq!(out.extra_decoders.len(), 1);
        assert_eq!(out.histories.len(), 2);
        assert_eq!(out.histories[0].len(), 4);

        // Gradients of a batch from corpus 1 do not depend on decoder 0:
        // wipe decoder 0 and recompute.
        let mut model = out.model;
        let dec1 = &out.extra_decoders[0];
        let compute = |m: &Seq2SeqModel| {
            let mut g = ModelGrads::zeros_from_parts(&m.encoder, dec1);
            accumulate_example(&m.input_embeddings, &m.encoder, dec1, 4, &[4], &[6, 4], &mut g)
                .unwrap();
            g.blocks()
                .iter()
                .map(|(_, b)| b.to_vec())
                .collect::<Vec<_>>()
        };
        let g_before = compute(&model);
        for (name, block) in model.blocks_mut() {
            if name.starts_with("dec_") || name.starts_with("proj") {
                block.fill(0.0);
            }
        }
        let g_after = compute(&model);
        assert_eq!(g_before, g_after);
    }

    #[test]
    fn pretrain_single_corpus_runs() {
        let dims = ModelDims {
            embedding_dim: 3,
            hidden_dim: 4,
        };
        let emb = EmbeddingTable::synthetic(vocab(6).tokens().iter(), 3, 1);
        let corpora = vec![PretrainCorpus {
            pairs: toy_corpus(),
            output_vocab: vocab(4),
        }];
        let out = pretrain_multi(dims, vocab(6), &emb, &corpora, &toy_config(Scheme::MtPretrain, 3))
            .unwrap();
        assert!(out.extra_decoders.is_empty());
        assert_eq!(out.histories[0].len(), 3);
        assert_eq!(out.model.scheme, Some(Scheme::MtPretrain));
    }
}
