//! The encoder-decoder paraphraser.
//!
//! The encoder is a bidirectional recurrent layer followed by a regular
//! one; the final hidden and cell state of the second layer is the sentence
//! embedding. The decoder is two recurrent layers fed, at every step, the
//! sentence embedding concatenated with the one-hot encoding of the
//! previously generated word, followed by a fully-connected layer and a
//! softmax. Input word embeddings are fixed and never trained.
//!
//! Training is plain mini-batch gradient descent over exact
//! backpropagation-through-time gradients, with global norm clipping.

mod backprop;
mod checkpoint;
mod lstm;
mod train;

pub use backprop::{gradients, ModelGrads};
pub use checkpoint::{load_checkpoint, load_checkpoint_with_vocabs, save_checkpoint};
pub use lstm::{log_softmax, LstmCell, LstmGrad, LstmState, LstmStepCache, Matrix};
pub use train::{pretrain_multi, train, MultiPretrainOutcome, PretrainCorpus, Scheme, TrainConfig};

use rand::distributions::{Distribution, Uniform};
use rand::rngs::StdRng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::textcore::{EmbeddingTable, Vocabulary, BOS_ID, EOS_ID, PAD_ID};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub embedding_dim: usize,
    pub hidden_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub l1_fwd: LstmCell,
    pub l1_bwd: LstmCell,
    pub l2: LstmCell,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderParams {
    pub l1: LstmCell,
    pub l2: LstmCell,
    /// |V_out| x hidden
    pub proj_w: Matrix,
    /// |V_out|
    pub proj_b: Vec<f64>,
}

/// Final hidden and cell state of the encoder's second layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextVector {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Seq2SeqModel {
    pub embedding_dim: usize,
    pub hidden_dim: usize,
    /// |V_in| x embedding_dim; fixed, excluded from training.
    pub input_embeddings: Matrix,
    pub encoder: EncoderParams,
    pub decoder: DecoderParams,
    pub input_vocab: Vocabulary,
    pub output_vocab: Vocabulary,
    /// When set, encoder blocks receive zero gradients.
    pub freeze_encoder: bool,
    /// Scheme of the most recent training run, stamped into checkpoints.
    pub scheme: Option<Scheme>,
}

pub(crate) fn init_decoder(
    dims: ModelDims,
    output_vocab_size: usize,
    rng: &mut StdRng,
) -> DecoderParams {
    let h = dims.hidden_dim;
    let bound = 1.0 / (h as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound);
    let mut dec = DecoderParams {
        l1: LstmCell::zeros(h + output_vocab_size, h),
        l2: LstmCell::zeros(h, h),
        proj_w: Matrix::zeros(output_vocab_size, h),
        proj_b: vec![0.0; output_vocab_size],
    };
    for m in [&mut dec.l1.w, &mut dec.l1.u, &mut dec.l2.w, &mut dec.l2.u, &mut dec.proj_w] {
        for v in &mut m.data {
            *v = dist.sample(rng);
        }
    }
    for cell in [&mut dec.l1, &mut dec.l2] {
        for k in h..2 * h {
            cell.b[k] = 1.0;
        }
    }
    dec
}

fn init_encoder(dims: ModelDims, rng: &mut StdRng) -> EncoderParams {
    let h = dims.hidden_dim;
    let bound = 1.0 / (h as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound);
    let mut enc = EncoderParams {
        l1_fwd: LstmCell::zeros(dims.embedding_dim, h),
        l1_bwd: LstmCell::zeros(dims.embedding_dim, h),
        l2: LstmCell::zeros(2 * h, h),
    };
    for cell in [&mut enc.l1_fwd, &mut enc.l1_bwd, &mut enc.l2] {
        for v in &mut cell.w.data {
            *v = dist.sample(rng);
        }
        for v in &mut cell.u.data {
            *v = dist.sample(rng);
        }
        for k in h..2 * h {
            cell.b[k] = 1.0;
        }
    }
    enc
}

/// Initialize a model. Weights are uniform in `[-1/sqrt(h), 1/sqrt(h)]`,
/// forget-gate biases start at 1.0, all other biases at 0. Deterministic
/// per seed.
pub fn init_model(
    dims: ModelDims,
    input_vocab: Vocabulary,
    output_vocab: Vocabulary,
    seed: u64,
) -> Seq2SeqModel {
    let mut rng = StdRng::seed_from_u64(seed);
    let bound = 1.0 / (dims.hidden_dim as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound);

    let mut input_embeddings = Matrix::zeros(input_vocab.len(), dims.embedding_dim);
    for v in &mut input_embeddings.data {
        *v = dist.sample(&mut rng);
    }
    let encoder = init_encoder(dims, &mut rng);
    let decoder = init_decoder(dims, output_vocab.len(), &mut rng);

    Seq2SeqModel {
        embedding_dim: dims.embedding_dim,
        hidden_dim: dims.hidden_dim,
        input_embeddings,
        encoder,
        decoder,
        input_vocab,
        output_vocab,
        freeze_encoder: false,
        scheme: None,
    }
}

/// All-zero parameters, mostly useful for exercising the architecture's
/// fixed points (uniform output distribution, zero context).
pub fn zero_model(dims: ModelDims, input_vocab: Vocabulary, output_vocab: Vocabulary) -> Seq2SeqModel {
    let h = dims.hidden_dim;
    Seq2SeqModel {
        embedding_dim: dims.embedding_dim,
        hidden_dim: h,
        input_embeddings: Matrix::zeros(input_vocab.len(), dims.embedding_dim),
        encoder: EncoderParams {
            l1_fwd: LstmCell::zeros(dims.embedding_dim, h),
            l1_bwd: LstmCell::zeros(dims.embedding_dim, h),
            l2: LstmCell::zeros(2 * h, h),
        },
        decoder: DecoderParams {
            l1: LstmCell::zeros(h + output_vocab.len(), h),
            l2: LstmCell::zeros(h, h),
            proj_w: Matrix::zeros(output_vocab.len(), h),
            proj_b: vec![0.0; output_vocab.len()],
        },
        input_vocab,
        output_vocab,
        freeze_encoder: false,
        scheme: None,
    }
}

/// Decoder recurrent state. Carries the context vector, which is fed to the
/// first decoder layer at every step.
#[derive(Debug, Clone)]
pub struct DecoderState {
    pub ctx_h: Vec<f64>,
    pub l1: LstmState,
    pub l2: LstmState,
}

impl Seq2SeqModel {
    pub fn dims(&self) -> ModelDims {
        ModelDims {
            embedding_dim: self.embedding_dim,
            hidden_dim: self.hidden_dim,
        }
    }

    /// Replace the input embedding rows with pretrained vectors. Reserved
    /// padding/boundary tokens get zero vectors; anything absent from the
    /// table gets its mean vector.
    pub fn set_input_embeddings(&mut self, table: &EmbeddingTable) -> Result<()> {
        if table.dim() != self.embedding_dim {
            return Err(Error::invalid(format!(
                "embedding table dim {} != model embedding dim {}",
                table.dim(),
                self.embedding_dim
            )));
        }
        for id in 0..self.input_vocab.len() {
            let row = self.input_embeddings.row_mut(id);
            if id == PAD_ID || id == BOS_ID || id == EOS_ID {
                row.fill(0.0);
            } else {
                let token = self.input_vocab.token_of(id).unwrap();
                row.copy_from_slice(table.lookup(token));
            }
        }
        Ok(())
    }

    fn check_source(&self, source_ids: &[usize]) -> Result<()> {
        if source_ids.is_empty() {
            return Err(Error::invalid("cannot encode an empty sequence"));
        }
        if let Some(&bad) = source_ids.iter().find(|&&id| id >= self.input_vocab.len()) {
            return Err(Error::invalid(format!(
                "input id {bad} out of range for vocabulary of {}",
                self.input_vocab.len()
            )));
        }
        Ok(())
    }

    /// Run the encoder and return the final hidden and cell state of its
    /// second layer.
    pub fn encode(&self, source_ids: &[usize]) -> Result<ContextVector> {
        self.check_source(source_ids)?;
        let h = self.hidden_dim;
        let n = source_ids.len();

        let mut fwd = LstmState::zeros(h);
        let mut fwd_h: Vec<Vec<f64>> = Vec::with_capacity(n);
        for &id in source_ids {
            fwd = self.encoder.l1_fwd.step_infer(self.input_embeddings.row(id), &fwd);
            fwd_h.push(fwd.h.clone());
        }
        let mut bwd = LstmState::zeros(h);
        let mut bwd_h: Vec<Vec<f64>> = vec![Vec::new(); n];
        for (pos, &id) in source_ids.iter().enumerate().rev() {
            bwd = self.encoder.l1_bwd.step_infer(self.input_embeddings.row(id), &bwd);
            bwd_h[pos] = bwd.h.clone();
        }

        let mut l2 = LstmState::zeros(h);
        for t in 0..n {
            let mut y = Vec::with_capacity(2 * h);
            y.extend_from_slice(&fwd_h[t]);
            y.extend_from_slice(&bwd_h[t]);
            l2 = self.encoder.l2.step_infer(&y, &l2);
        }
        Ok(ContextVector { h: l2.h, c: l2.c })
    }

    /// Initial decoder state: both decoder layers start from the context.
    pub fn init_decoder_state(&self, context: &ContextVector) -> DecoderState {
        DecoderState {
            ctx_h: context.h.clone(),
            l1: LstmState {
                h: context.h.clone(),
                c: context.c.clone(),
            },
            l2: LstmState {
                h: context.h.clone(),
                c: context.c.clone(),
            },
        }
    }

    pub(crate) fn decoder_input(&self, ctx_h: &[f64], prev_id: usize) -> Vec<f64> {
        let v = self.output_vocab.len();
        let mut x = vec![0.0; self.hidden_dim + v];
        x[..self.hidden_dim].copy_from_slice(ctx_h);
        x[self.hidden_dim + prev_id] = 1.0;
        x
    }

    /// One decoder step: log-probabilities over the output vocabulary and
    /// the advanced state.
    pub fn step_decoder_logprobs(
        &self,
        state: &DecoderState,
        prev_id: usize,
    ) -> Result<(Vec<f64>, DecoderState)> {
        if prev_id >= self.output_vocab.len() {
            return Err(Error::invalid(format!("output id {prev_id} out of range")));
        }
        let x = self.decoder_input(&state.ctx_h, prev_id);
        let l1 = self.decoder.l1.step_infer(&x, &state.l1);
        let l2 = self.decoder.l2.step_infer(&l1.h, &state.l2);
        let mut logits = self.decoder.proj_b.clone();
        self.decoder.proj_w.matvec_add(&l2.h, &mut logits);
        let logp = log_softmax(&logits);
        Ok((
            logp,
            DecoderState {
                ctx_h: state.ctx_h.clone(),
                l1,
                l2,
            },
        ))
    }

    /// One decoder step as a probability distribution (sums to one).
    pub fn step_decoder(
        &self,
        state: &DecoderState,
        prev_id: usize,
    ) -> Result<(Vec<f64>, DecoderState)> {
        let (logp, next) = self.step_decoder_logprobs(state, prev_id)?;
        Ok((logp.iter().map(|&l| l.exp()).collect(), next))
    }

    /// Teacher-forced negative log-likelihood of `target_ids` given
    /// `source_ids`. The target is implicitly wrapped as `BOS .. EOS`, so a
    /// target of n tokens contributes n+1 prediction steps.
    pub fn sequence_loss(&self, source_ids: &[usize], target_ids: &[usize]) -> Result<f64> {
        let context = self.encode(source_ids)?;
        let mut state = self.init_decoder_state(&context);
        let mut prev = BOS_ID;
        let mut loss = 0.0;
        for t in 0..=target_ids.len() {
            let gold = if t < target_ids.len() { target_ids[t] } else { EOS_ID };
            if gold >= self.output_vocab.len() {
                return Err(Error::invalid(format!("target id {gold} out of range")));
            }
            let (logp, next) = self.step_decoder_logprobs(&state, prev)?;
            loss -= logp[gold];
            state = next;
            prev = gold;
        }
        Ok(loss)
    }

    /// Named views of every trainable parameter block, in checkpoint order.
    /// Input embeddings are fixed and not listed here.
    pub fn blocks(&self) -> Vec<(&'static str, &[f64])> {
        vec![
            ("enc_l1_fwd.w", &self.encoder.l1_fwd.w.data),
            ("enc_l1_fwd.u", &self.encoder.l1_fwd.u.data),
            ("enc_l1_fwd.b", &self.encoder.l1_fwd.b),
            ("enc_l1_bwd.w", &self.encoder.l1_bwd.w.data),
            ("enc_l1_bwd.u", &self.encoder.l1_bwd.u.data),
            ("enc_l1_bwd.b", &self.encoder.l1_bwd.b),
            ("enc_l2.w", &self.encoder.l2.w.data),
            ("enc_l2.u", &self.encoder.l2.u.data),
            ("enc_l2.b", &self.encoder.l2.b),
            ("dec_l1.w", &self.decoder.l1.w.data),
            ("dec_l1.u", &self.decoder.l1.u.data),
            ("dec_l1.b", &self.decoder.l1.b),
            ("dec_l2.w", &self.decoder.l2.w.data),
            ("dec_l2.u", &self.decoder.l2.u.data),
            ("dec_l2.b", &self.decoder.l2.b),
            ("proj.w", &self.decoder.proj_w.data),
            ("proj.b", &self.decoder.proj_b),
        ]
    }

    pub fn blocks_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        vec![
            ("enc_l1_fwd.w", self.encoder.l1_fwd.w.data.as_mut_slice()),
            ("enc_l1_fwd.u", self.encoder.l1_fwd.u.data.as_mut_slice()),
            ("enc_l1_fwd.b", self.encoder.l1_fwd.b.as_mut_slice()),
            ("enc_l1_bwd.w", self.encoder.l1_bwd.w.data.as_mut_slice()),
            ("enc_l1_bwd.u", self.encoder.l1_bwd.u.data.as_mut_slice()),
            ("enc_l1_bwd.b", self.encoder.l1_bwd.b.as_mut_slice()),
            ("enc_l2.w", self.encoder.l2.w.data.as_mut_slice()),
            ("enc_l2.u", self.encoder.l2.u.data.as_mut_slice()),
            ("enc_l2.b", self.encoder.l2.b.as_mut_slice()),
            ("dec_l1.w", self.decoder.l1.w.data.as_mut_slice()),
            ("dec_l1.u", self.decoder.l1.u.data.as_mut_slice()),
            ("dec_l1.b", self.decoder.l1.b.as_mut_slice()),
            ("dec_l2.w", self.decoder.l2.w.data.as_mut_slice()),
            ("dec_l2.u", self.decoder.l2.u.data.as_mut_slice()),
            ("dec_l2.b", self.decoder.l2.b.as_mut_slice()),
            ("proj.w", self.decoder.proj_w.data.as_mut_slice()),
            ("proj.b", self.decoder.proj_b.as_mut_slice()),
        ]
    }

    /// Trainable parameter count plus the fixed embedding table size.
    pub fn parameter_count(&self) -> (usize, usize) {
        let trainable = self.blocks().iter().map(|(_, b)| b.len()).sum();
        (trainable, self.input_embeddings.data.len())
    }
}
