//! Self-describing binary checkpoints.
//!
//! Layout: a 16-byte magic, a little-endian u32 format version, a
//! little-endian u64 header length, a JSON header (dims, scheme, the full
//! vocabularies and their content hashes), then every parameter as
//! little-endian f64 — the fixed input embeddings first, followed by the
//! trainable blocks in the order of [`Seq2SeqModel::blocks`].

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::textcore::Vocabulary;

use super::lstm::{LstmCell, Matrix};
use super::{DecoderParams, EncoderParams, Scheme, Seq2SeqModel};

const MAGIC: &[u8; 16] = b"paraphraser-ckpt";
const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    embedding_dim: usize,
    hidden_dim: usize,
    scheme: Option<Scheme>,
    freeze_encoder: bool,
    input_vocab: Vocabulary,
    output_vocab: Vocabulary,
    input_vocab_hash: String,
    output_vocab_hash: String,
    param_count: u64,
}

fn ckpt_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Checkpoint {
        path: path.display().to_string(),
        message: message.into(),
    }
}

fn param_buffers(model: &Seq2SeqModel) -> Vec<&[f64]> {
    let mut out: Vec<&[f64]> = vec![&model.input_embeddings.data];
    out.extend(model.blocks().into_iter().map(|(_, b)| b));
    out
}

pub fn save_checkpoint(model: &Seq2SeqModel, path: &Path) -> Result<()> {
    let buffers = param_buffers(model);
    let param_count: u64 = buffers.iter().map(|b| b.len() as u64).sum();
    let header = Header {
        format_version: FORMAT_VERSION,
        embedding_dim: model.embedding_dim,
        hidden_dim: model.hidden_dim,
        scheme: model.scheme,
        freeze_encoder: model.freeze_encoder,
        input_vocab: model.input_vocab.clone(),
        output_vocab: model.output_vocab.clone(),
        input_vocab_hash: format!("{:016x}", model.input_vocab.content_hash()),
        output_vocab_hash: format!("{:016x}", model.output_vocab.content_hash()),
        param_count,
    };
    let header_json = serde_json::to_vec(&header).map_err(|e| Error::Json {
        origin: path.display().to_string(),
        source: e,
    })?;

    let mut bytes =
        Vec::with_capacity(16 + 4 + 8 + header_json.len() + param_count as usize * 8);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&header_json);
    for buffer in buffers {
        for v in buffer {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Seq2SeqModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 28 || &bytes[..16] != MAGIC {
        return Err(ckpt_err(path, "not a checkpoint file (bad magic)"));
    }
    let version = u32::from_le_bytes(bytes[16..20].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(ckpt_err(
            path,
            format!("unsupported format version {version}, expected {FORMAT_VERSION}"),
        ));
    }
    let header_len = u64::from_le_bytes(bytes[20..28].try_into().unwrap()) as usize;
    let body_start = 28 + header_len;
    if bytes.len() < body_start {
        return Err(ckpt_err(path, "truncated header"));
    }
    let header: Header =
        serde_json::from_slice(&bytes[28..body_start]).map_err(|e| Error::Json {
            origin: path.display().to_string(),
            source: e,
        })?;

    let in_hash = format!("{:016x}", header.input_vocab.content_hash());
    let out_hash = format!("{:016x}", header.output_vocab.content_hash());
    if in_hash != header.input_vocab_hash || out_hash != header.output_vocab_hash {
        return Err(ckpt_err(path, "vocabulary hash mismatch"));
    }

    let d = header.embedding_dim;
    let h = header.hidden_dim;
    let v_in = header.input_vocab.len();
    let v_out = header.output_vocab.len();
    let mut model = Seq2SeqModel {
        embedding_dim: d,
        hidden_dim: h,
        input_embeddings: Matrix::zeros(v_in, d),
        encoder: EncoderParams {
            l1_fwd: LstmCell::zeros(d, h),
            l1_bwd: LstmCell::zeros(d, h),
            l2: LstmCell::zeros(2 * h, h),
        },
        decoder: DecoderParams {
            l1: LstmCell::zeros(h + v_out, h),
            l2: LstmCell::zeros(h, h),
            proj_w: Matrix::zeros(v_out, h),
            proj_b: vec![0.0; v_out],
        },
        input_vocab: header.input_vocab,
        output_vocab: header.output_vocab,
        freeze_encoder: header.freeze_encoder,
        scheme: header.scheme,
    };

    let expected: usize = {
        let mut n = model.input_embeddings.data.len();
        n += model.blocks().iter().map(|(_, b)| b.len()).sum::<usize>();
        n
    };
    if header.param_count as usize != expected {
        return Err(ckpt_err(
            path,
            format!(
                "parameter count {} does not match dimensions (expected {expected})",
                header.param_count
            ),
        ));
    }
    if bytes.len() != body_start + expected * 8 {
        return Err(ckpt_err(
            path,
            format!(
                "parameter section is {} bytes, expected {}",
                bytes.len() - body_start,
                expected * 8
            ),
        ));
    }

    let mut cursor = body_start;
    let read_into = |buf: &mut [f64], cursor: &mut usize| {
        for v in buf.iter_mut() {
            *v = f64::from_le_bytes(bytes[*cursor..*cursor + 8].try_into().unwrap());
            *cursor += 8;
        }
    };
    read_into(&mut model.input_embeddings.data, &mut cursor);
    for (_, block) in model.blocks_mut() {
        for v in block.iter_mut() {
            *v = f64::from_le_bytes(bytes[cursor..cursor + 8].try_into().unwrap());
            cursor += 8;
        }
    }
    Ok(model)
}

/// Load and additionally require the stored vocabularies to hash-match the
/// given ones.
pub fn load_checkpoint_with_vocabs(
    path: &Path,
    input_vocab: &Vocabulary,
    output_vocab: &Vocabulary,
) -> Result<Seq2SeqModel> {
    let model = load_checkpoint(path)?;
    if model.input_vocab.content_hash() != input_vocab.content_hash()
        || model.output_vocab.content_hash() != output_vocab.content_hash()
    {
        return Err(ckpt_err(path, "checkpoint was trained against different vocabularies"));
    }
    Ok(model)
}
