//! Exact gradients of the sequence loss via backpropagation through time.
//!
//! The context vector reaches the decoder three ways: as part of the input
//! at every step and as the initial state of both decoder layers. All three
//! paths are followed back into the encoder.

use crate::error::{Error, Result};
use crate::textcore::{BOS_ID, EOS_ID};

use super::lstm::{log_softmax, LstmGrad, LstmState, Matrix};
use super::{DecoderParams, EncoderParams, Seq2SeqModel};

/// Gradients for every trainable block, mirroring [`Seq2SeqModel`].
#[derive(Debug, Clone)]
pub struct ModelGrads {
    pub enc_l1_fwd: LstmGrad,
    pub enc_l1_bwd: LstmGrad,
    pub enc_l2: LstmGrad,
    pub dec_l1: LstmGrad,
    pub dec_l2: LstmGrad,
    pub proj_w: Matrix,
    pub proj_b: Vec<f64>,
}

impl ModelGrads {
    pub fn zeros(model: &Seq2SeqModel) -> Self {
        Self::zeros_from_parts(&model.encoder, &model.decoder)
    }

    pub(crate) fn zeros_from_parts(encoder: &EncoderParams, decoder: &DecoderParams) -> Self {
        ModelGrads {
            enc_l1_fwd: LstmGrad::zeros_like(&encoder.l1_fwd),
            enc_l1_bwd: LstmGrad::zeros_like(&encoder.l1_bwd),
            enc_l2: LstmGrad::zeros_like(&encoder.l2),
            dec_l1: LstmGrad::zeros_like(&decoder.l1),
            dec_l2: LstmGrad::zeros_like(&decoder.l2),
            proj_w: Matrix::zeros(decoder.proj_w.rows, decoder.proj_w.cols),
            proj_b: vec![0.0; decoder.proj_b.len()],
        }
    }

    pub fn blocks(&self) -> Vec<(&'static str, &[f64])> {
        vec![
            ("enc_l1_fwd.w", &self.enc_l1_fwd.w.data),
            ("enc_l1_fwd.u", &self.enc_l1_fwd.u.data),
            ("enc_l1_fwd.b", &self.enc_l1_fwd.b),
            ("enc_l1_bwd.w", &self.enc_l1_bwd.w.data),
            ("enc_l1_bwd.u", &self.enc_l1_bwd.u.data),
            ("enc_l1_bwd.b", &self.enc_l1_bwd.b),
            ("enc_l2.w", &self.enc_l2.w.data),
            ("enc_l2.u", &self.enc_l2.u.data),
            ("enc_l2.b", &self.enc_l2.b),
            ("dec_l1.w", &self.dec_l1.w.data),
            ("dec_l1.u", &self.dec_l1.u.data),
            ("dec_l1.b", &self.dec_l1.b),
            ("dec_l2.w", &self.dec_l2.w.data),
            ("dec_l2.u", &self.dec_l2.u.data),
            ("dec_l2.b", &self.dec_l2.b),
            ("proj.w", &self.proj_w.data),
            ("proj.b", &self.proj_b),
        ]
    }

    pub(crate) fn blocks_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        vec![
            ("enc_l1_fwd.w", self.enc_l1_fwd.w.data.as_mut_slice()),
            ("enc_l1_fwd.u", self.enc_l1_fwd.u.data.as_mut_slice()),
            ("enc_l1_fwd.b", self.enc_l1_fwd.b.as_mut_slice()),
            ("enc_l1_bwd.w", self.enc_l1_bwd.w.data.as_mut_slice()),
            ("enc_l1_bwd.u", self.enc_l1_bwd.u.data.as_mut_slice()),
            ("enc_l1_bwd.b", self.enc_l1_bwd.b.as_mut_slice()),
            ("enc_l2.w", self.enc_l2.w.data.as_mut_slice()),
            ("enc_l2.u", self.enc_l2.u.data.as_mut_slice()),
            ("enc_l2.b", self.enc_l2.b.as_mut_slice()),
            ("dec_l1.w", self.dec_l1.w.data.as_mut_slice()),
            ("dec_l1.u", self.dec_l1.u.data.as_mut_slice()),
            ("dec_l1.b", self.dec_l1.b.as_mut_slice()),
            ("dec_l2.w", self.dec_l2.w.data.as_mut_slice()),
            ("dec_l2.u", self.dec_l2.u.data.as_mut_slice()),
            ("dec_l2.b", self.dec_l2.b.as_mut_slice()),
            ("proj.w", self.proj_w.data.as_mut_slice()),
            ("proj.b", self.proj_b.as_mut_slice()),
        ]
    }

    pub fn add(&mut self, other: &ModelGrads) {
        for ((_, a), (_, b)) in self.blocks_mut().into_iter().zip(other.blocks()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for (_, block) in self.blocks_mut() {
            for x in block {
                *x *= s;
            }
        }
    }

    pub fn global_norm(&self) -> f64 {
        let mut sum = 0.0;
        for (_, block) in self.blocks() {
            for x in block {
                sum += x * x;
            }
        }
        sum.sqrt()
    }

    pub fn zero_encoder_blocks(&mut self) {
        for (name, block) in self.blocks_mut() {
            if name.starts_with("enc_") {
                block.fill(0.0);
            }
        }
    }
}

fn add_into(acc: &mut [f64], v: &[f64]) {
    for (a, b) in acc.iter_mut().zip(v) {
        *a += b;
    }
}

/// Forward plus backward for one example; parameter gradients (of the
/// summed loss) accumulate into `grads`. Returns the example loss.
pub(crate) fn accumulate_example(
    embeddings: &Matrix,
    encoder: &EncoderParams,
    decoder: &DecoderParams,
    hidden_dim: usize,
    source: &[usize],
    target: &[usize],
    grads: &mut ModelGrads,
) -> Result<f64> {
    let h = hidden_dim;
    let n = source.len();
    let v_out = decoder.proj_b.len();
    if n == 0 {
        return Err(Error::invalid("cannot encode an empty sequence"));
    }
    if let Some(&bad) = source.iter().find(|&&id| id >= embeddings.rows) {
        return Err(Error::invalid(format!("input id {bad} out of range")));
    }
    if let Some(&bad) = target.iter().find(|&&id| id >= v_out) {
        return Err(Error::invalid(format!("target id {bad} out of range")));
    }

    // Encoder forward, keeping caches.
    let mut fwd_caches = Vec::with_capacity(n);
    let mut state = LstmState::zeros(h);
    for &id in source {
        let (next, cache) = encoder.l1_fwd.step(embeddings.row(id), &state);
        fwd_caches.push(cache);
        state = next;
    }
    let mut bwd_caches = Vec::with_capacity(n);
    let mut bstate = LstmState::zeros(h);
    for &id in source.iter().rev() {
        let (next, cache) = encoder.l1_bwd.step(embeddings.row(id), &bstate);
        bwd_caches.push(cache);
        bstate = next;
    }
    let mut l2_caches = Vec::with_capacity(n);
    let mut l2_state = LstmState::zeros(h);
    for t in 0..n {
        let mut y = Vec::with_capacity(2 * h);
        // Forward output at t lives in the cache of step t; the backward
        // cell processed position t at step n-1-t.
        y.extend(fwd_caches[t].o.iter().zip(&fwd_caches[t].tanh_c).map(|(o, tc)| o * tc));
        let bc = &bwd_caches[n - 1 - t];
        y.extend(bc.o.iter().zip(&bc.tanh_c).map(|(o, tc)| o * tc));
        let (next, cache) = encoder.l2.step(&y, &l2_state);
        l2_caches.push(cache);
        l2_state = next;
    }
    let ctx_h = l2_state.h;
    let ctx_c = l2_state.c;

    // Decoder forward with teacher forcing.
    let steps = target.len() + 1;
    let mut dec1_caches = Vec::with_capacity(steps);
    let mut dec2_caches = Vec::with_capacity(steps);
    let mut h2s = Vec::with_capacity(steps);
    let mut probs = Vec::with_capacity(steps);
    let mut golds = Vec::with_capacity(steps);
    let mut s1 = LstmState {
        h: ctx_h.clone(),
        c: ctx_c.clone(),
    };
    let mut s2 = s1.clone();
    let mut prev = BOS_ID;
    let mut loss = 0.0;
    for t in 0..steps {
        let gold = if t < target.len() { target[t] } else { EOS_ID };
        let mut x = vec![0.0; h + v_out];
        x[..h].copy_from_slice(&ctx_h);
        x[h + prev] = 1.0;
        let (n1, c1) = decoder.l1.step(&x, &s1);
        let (n2, c2) = decoder.l2.step(&n1.h, &s2);
        let mut logits = decoder.proj_b.clone();
        decoder.proj_w.matvec_add(&n2.h, &mut logits);
        let logp = log_softmax(&logits);
        loss -= logp[gold];
        probs.push(logp.iter().map(|&l| l.exp()).collect::<Vec<f64>>());
        golds.push(gold);
        h2s.push(n2.h.clone());
        dec1_caches.push(c1);
        dec2_caches.push(c2);
        s1 = n1;
        s2 = n2;
        prev = gold;
    }

    // Decoder backward.
    let mut d_ctx_h = vec![0.0; h];
    let mut d_ctx_c = vec![0.0; h];
    let mut dh1_carry = vec![0.0; h];
    let mut dc1_carry = vec![0.0; h];
    let mut dh2_carry = vec![0.0; h];
    let mut dc2_carry = vec![0.0; h];
    for t in (0..steps).rev() {
        let mut du = probs[t].clone();
        du[golds[t]] -= 1.0;
        grads.proj_w.add_outer(&du, &h2s[t]);
        add_into(&mut grads.proj_b, &du);

        let mut dh2 = decoder.proj_w.tr_matvec(&du);
        add_into(&mut dh2, &dh2_carry);
        let (dx2, dh2_prev, dc2_prev) =
            decoder.l2.backward_step(&dec2_caches[t], &dh2, &dc2_carry, &mut grads.dec_l2);
        dh2_carry = dh2_prev;
        dc2_carry = dc2_prev;

        let mut dh1 = dx2;
        add_into(&mut dh1, &dh1_carry);
        let (dx1, dh1_prev, dc1_prev) =
            decoder.l1.backward_step(&dec1_caches[t], &dh1, &dc1_carry, &mut grads.dec_l1);
        dh1_carry = dh1_prev;
        dc1_carry = dc1_prev;
        add_into(&mut d_ctx_h, &dx1[..h]);
    }
    // Initial decoder states were the context.
    add_into(&mut d_ctx_h, &dh1_carry);
    add_into(&mut d_ctx_h, &dh2_carry);
    add_into(&mut d_ctx_c, &dc1_carry);
    add_into(&mut d_ctx_c, &dc2_carry);

    // Encoder second layer backward.
    let mut dy: Vec<Vec<f64>> = vec![Vec::new(); n];
    let mut dh = d_ctx_h;
    let mut dc = d_ctx_c;
    for t in (0..n).rev() {
        let (dx, dh_prev, dc_prev) =
            encoder.l2.backward_step(&l2_caches[t], &dh, &dc, &mut grads.enc_l2);
        dy[t] = dx;
        dh = dh_prev;
        dc = dc_prev;
    }

    // First layer, forward direction.
    let mut dhf = vec![0.0; h];
    let mut dcf = vec![0.0; h];
    for t in (0..n).rev() {
        let mut dht = dy[t][..h].to_vec();
        add_into(&mut dht, &dhf);
        let (_, dh_prev, dc_prev) =
            encoder.l1_fwd.backward_step(&fwd_caches[t], &dht, &dcf, &mut grads.enc_l1_fwd);
        dhf = dh_prev;
        dcf = dc_prev;
    }

    // First layer, backward direction: step s consumed position n-1-s.
    let mut dhb = vec![0.0; h];
    let mut dcb = vec![0.0; h];
    for s in (0..n).rev() {
        let pos = n - 1 - s;
        let mut dht = dy[pos][h..].to_vec();
        add_into(&mut dht, &dhb);
        let (_, dh_prev, dc_prev) =
            encoder.l1_bwd.backward_step(&bwd_caches[s], &dht, &dcb, &mut grads.enc_l1_bwd);
        dhb = dh_prev;
        dcb = dc_prev;
    }

    Ok(loss)
}

/// Mean gradients of [`Seq2SeqModel::sequence_loss`] over a batch, computed
/// as the mean of per-example gradients. Encoder blocks are zeroed when the
/// model's encoder is frozen; norm clipping is the update step's job.
pub fn gradients(
    model: &Seq2SeqModel,
    batch: &[(Vec<usize>, Vec<usize>)],
) -> Result<(ModelGrads, f64)> {
    if batch.is_empty() {
        return Err(Error::invalid("gradient batch is empty"));
    }
    let mut total = ModelGrads::zeros(model);
    let mut loss = 0.0;
    for (source, target) in batch {
        let mut g = ModelGrads::zeros(model);
        loss += accumulate_example(
            &model.input_embeddings,
            &model.encoder,
            &model.decoder,
            model.hidden_dim,
            source,
            target,
            &mut g,
        )?;
        total.add(&g);
    }
    let inv = 1.0 / batch.len() as f64;
    total.scale(inv);
    if model.freeze_encoder {
        total.zero_encoder_blocks();
    }
    Ok((total, loss * inv))
}
